//! Hierarchical masked autoencoder for single-channel physiological
//! waveforms, with the tooling around it: a tape-based autodiff engine,
//! 1D conv U-Net blocks, masked pretraining, synthetic data and DSP,
//! signal-quality screening, linear-probe evaluation and profiling.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod masking;
pub mod model;
pub mod nn;
pub mod profile;
pub mod rng;
pub mod tensor;
pub mod train;

pub use config::RunConfig;
pub use error::{HimaeError, Result};
pub use model::{HimaeConfig, HimaeModel, Variant};
