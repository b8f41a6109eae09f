//! Per-level linear probes on planted tasks whose labels live at short and
//! long time scales.

use himae::eval::tasks::{planted_task, resolution_sweep, stratified_subject_split, PlantedTask, TaskConfig};
use himae::eval::ProbeConfig;
use himae::model::{HimaeConfig, HimaeModel};
use himae::nn::InitPolicy;

fn main() -> himae::Result<()> {
    let model = HimaeModel::new(HimaeConfig::base(), &InitPolicy::new(11))?;
    let rf = model.config().receptive_field();
    let cfg = TaskConfig {
        subjects: 24,
        ..Default::default()
    };
    for task in PlantedTask::ALL {
        let set = planted_task(task, &cfg, 2)?;
        let split = stratified_subject_split(set.data.subjects(), &set.labels, 0.25, 2)?;
        let r = resolution_sweep(&model, &set, &split, &ProbeConfig::default(), true)?;
        println!("{} (planted scale {} samples)", task.name(), task.planted_scale(&cfg));
        for (level, auroc) in &r.curve {
            let (field, _) = rf.level(*level).unwrap_or((0, 0));
            println!("  level {level} (R = {field:>3})  AUROC {auroc:.3}");
        }
        println!("  best level {}", r.best_level);
    }
    Ok(())
}
