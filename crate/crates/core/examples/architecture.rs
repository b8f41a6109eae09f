//! Receptive fields and parameter counts of the model presets.

use himae::model::{HimaeConfig, HimaeModel, Variant};
use himae::nn::InitPolicy;

fn main() -> himae::Result<()> {
    let base = HimaeConfig::base();
    println!("layer          R    J   T_out");
    for l in &base.receptive_field().layers {
        println!("{:<12} {:>4} {:>4} {:>6}", l.name, l.receptive, l.jump, l.output_len);
    }
    println!();
    println!("{:<10} {:>10} {:>10} {:>10}", "variant", "tiny", "small", "base");
    for variant in Variant::ALL {
        let counts: Vec<usize> = [HimaeConfig::tiny(), HimaeConfig::small(), HimaeConfig::base()]
            .into_iter()
            .map(|c| HimaeModel::new(c.with_variant(variant), &InitPolicy::new(0)).map(|m| m.count_parameters()))
            .collect::<himae::Result<_>>()?;
        println!("{:<10} {:>10} {:>10} {:>10}", variant.name(), counts[0], counts[1], counts[2]);
    }
    Ok(())
}
