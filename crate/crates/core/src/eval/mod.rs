//! Downstream evaluation: reconstruction benchmarks, linear probes,
//! resolution sweeps, few-shot curves and grid studies.

pub mod ablate;
pub mod auroc;
pub mod bench;
pub mod probe;
pub mod tasks;

pub use auroc::{auroc, macro_auroc};
pub use bench::{run_generative_benchmark, GenerativeRegime, GenerativeTaskSpec};
pub use probe::{fit_probe, LinearProbe, ProbeConfig};
pub use tasks::{planted_task, resolution_sweep, stratified_subject_split, LabeledSet, PlantedTask, TaskConfig};
