//! Probe AUROC as the number of labelled windows per class grows.

use himae::eval::tasks::{few_shot_curve, level_features, planted_task, stratified_subject_split, PlantedTask, TaskConfig};
use himae::eval::ProbeConfig;
use himae::model::{HimaeConfig, HimaeModel};
use himae::nn::InitPolicy;

fn main() -> himae::Result<()> {
    let model = HimaeModel::new(HimaeConfig::small(), &InitPolicy::new(4))?;
    let set = planted_task(PlantedTask::FineTransient, &TaskConfig::default(), 4)?;
    let split = stratified_subject_split(set.data.subjects(), &set.labels, 0.2, 4)?;
    let feats = level_features(&model, &set.data, 1, true, 32)?;
    let curve = few_shot_curve(&feats, &set, &split, &[1, 4, 16, 64], 5, &ProbeConfig::default(), 4)?;
    for p in &curve.points {
        println!("k = {:>3}: AUROC {:.3} +- {:.3}", p.k, p.mean, p.sd);
    }
    println!("Kendall trend {:+.2}", curve.trend);
    Ok(())
}
