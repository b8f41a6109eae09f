//! Reconstruction benchmark of a briefly trained tiny model against the
//! mean, nearest-neighbour and linear fills.

use himae::data::synth::{pretraining_dataset, SynthConfig};
use himae::eval::bench::{run_generative_benchmark, GenerativeRegime, GenerativeTaskSpec};
use himae::model::HimaeConfig;
use himae::train::{pretrain, TrainConfig};

fn main() -> himae::Result<()> {
    let synth = SynthConfig {
        subjects: 24,
        windows_per_subject: 20,
        ..Default::default()
    };
    let data = pretraining_dataset(&synth, 5)?;
    let cfg = TrainConfig {
        steps: 150,
        batch_size: 16,
        ..Default::default()
    };
    let out = pretrain(HimaeConfig::tiny(), cfg, &data, 5)?;
    let held_out = data.subset(&out.split.val)?;
    let spec = GenerativeTaskSpec {
        regimes: GenerativeRegime::ALL.to_vec(),
        missingness: vec![0.3, 0.5, 0.7],
        batch_size: 32,
    };
    println!("{:<18} {:>5} {:>9} {:>9} {:>9} {:>9}", "regime", "miss", "model", "mean", "nearest", "linear");
    for r in run_generative_benchmark(&out.model, &held_out, &spec, 5)? {
        println!(
            "{:<18} {:>5.1} {:>9.5} {:>9.5} {:>9.5} {:>9.5}   R2 {:+.3}",
            r.regime.name(),
            r.missingness,
            r.model.mse,
            r.mean_fill.mse,
            r.nearest_fill.mse,
            r.linear_fill.mse,
            r.model.r2.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
