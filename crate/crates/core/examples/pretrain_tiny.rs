//! Short masked pretraining run on synthetic windows, followed by a
//! checkpoint round trip.

use himae::data::synth::{pretraining_dataset, SynthConfig};
use himae::model::HimaeConfig;
use himae::train::{load_model, model_checkpoint, pretrain, TrainConfig};

fn main() -> himae::Result<()> {
    let synth = SynthConfig {
        subjects: 20,
        windows_per_subject: 16,
        ..Default::default()
    };
    let data = pretraining_dataset(&synth, 1)?;
    let cfg = TrainConfig {
        steps: 60,
        batch_size: 16,
        ..Default::default()
    };
    let out = pretrain(HimaeConfig::tiny(), cfg, &data, 1)?;
    for r in out.state.history.iter().filter(|r| r.val_mse.is_some() || r.step % 10 == 0) {
        println!("step {:>3} lr {:.2e} train {:?} val {:?}", r.step, r.lr, r.train_mse, r.val_mse);
    }
    let path = std::env::temp_dir().join("himae_example_tiny.ckpt");
    let hash = model_checkpoint(&out.model).save(&path)?;
    let restored = load_model(&himae::train::Checkpoint::load(&path)?)?;
    println!("saved {} (sha256 {hash})", path.display());
    println!("restored checksum matches: {}", restored.param_checksum() == out.model.param_checksum());
    Ok(())
}
