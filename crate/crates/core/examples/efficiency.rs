//! Parameters, FLOPs, memory and encoder latency of the base model.

use himae::model::{HimaeConfig, HimaeModel};
use himae::nn::InitPolicy;
use himae::profile::{count_flops_scoped, efficiency_report, FlopScope};

fn main() -> himae::Result<()> {
    let model = HimaeModel::new(HimaeConfig::base(), &InitPolicy::new(0))?;
    let report = efficiency_report(&model, Some((8, 5, 1)))?;
    let full = count_flops_scoped(&model, 1, 1000, FlopScope::Autoencoder)?;
    println!("params            {}", report.params);
    println!("encoder GFLOPs    {:.4}", report.gflops);
    println!("autoencoder GFLOPs {:.4}", full.total as f64 / 1e9);
    println!("memory            {:.2} MB", report.memory_mb);
    if let Some(l) = &report.latency {
        println!("latency           {:.2} ms/sample (p95 {:.2}), {:.0} samples/s", l.mean_ms, l.p95_ms, l.throughput);
    }
    Ok(())
}
