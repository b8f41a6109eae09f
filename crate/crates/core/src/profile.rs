//! Parameter, FLOP, memory and latency accounting.
//!
//! FLOPs follow the 2×MAC convention: a convolution or transposed
//! convolution with kernel `k` costs `2·k·C_in·C_out·T_out`. Bias terms are
//! not counted. Elementwise costs per output sample are listed in
//! [`FlopConstants`]. Concatenation and cropping are free. The headline
//! count covers the encoder, which is what runs when embeddings are
//! extracted; the full autoencoder count is reported alongside.

use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::autodiff::{ConvSpec, Mode, OpKind, Tape};
use crate::error::Result;
use crate::model::{HimaeConfig, HimaeModel};
use crate::tensor::{Shape3, Tensor3};

/// Version of the JSON reports written by the CLI.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopConstants {
    pub batch_norm: u64,
    pub gelu: u64,
    pub tanh: u64,
    pub add: u64,
}

impl Default for FlopConstants {
    fn default() -> Self {
        Self {
            batch_norm: 4,
            gelu: 10,
            tanh: 5,
            add: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlopBreakdown {
    pub conv: u64,
    pub conv_transpose: u64,
    pub batch_norm: u64,
    pub activation: u64,
    pub add: u64,
    pub total: u64,
}

pub fn conv_flops(spec: &ConvSpec, t_out: usize) -> u64 {
    2 * (spec.kernel * spec.in_channels * spec.out_channels * t_out) as u64
}

/// `2·m·n` for a dense `m → n` layer.
pub fn linear_flops(m: usize, n: usize) -> u64 {
    2 * (m * n) as u64
}

/// Sums the costs of every op recorded on `tape`.
pub fn tape_flops(tape: &Tape, c: &FlopConstants) -> FlopBreakdown {
    let mut f = FlopBreakdown::default();
    for (kind, shape) in tape.ops() {
        let n = shape.numel() as u64;
        match kind {
            OpKind::Conv1d(spec) => f.conv += conv_flops(&spec, shape.time) * shape.batch as u64,
            OpKind::ConvTranspose1d(spec) => f.conv_transpose += conv_flops(&spec, shape.time) * shape.batch as u64,
            OpKind::BatchNorm => f.batch_norm += c.batch_norm * n,
            OpKind::Gelu => f.activation += c.gelu * n,
            OpKind::Tanh => f.activation += c.tanh * n,
            OpKind::Add => f.add += c.add * n,
            _ => {}
        }
    }
    f.total = f.conv + f.conv_transpose + f.batch_norm + f.activation + f.add;
    f
}

/// Which part of the network a FLOP count covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlopScope {
    /// Encoder only: the pass that produces embeddings at inference.
    Encoder,
    /// Encoder, decoder and output head.
    Autoencoder,
}

/// FLOPs of one eval-mode pass on a `(1, C, L)` input. Depends only on the
/// configuration: the pass runs on zeros.
pub fn count_flops_scoped(model: &HimaeModel, channels: usize, len: usize, scope: FlopScope) -> Result<FlopBreakdown> {
    let mut tape = Tape::new();
    let mut stats = model.bn_stats().to_vec();
    let x = Tensor3::zeros(Shape3::new(1, channels, len));
    model.record(&mut tape, &x, Mode::Eval, &mut stats, scope == FlopScope::Encoder)?;
    Ok(tape_flops(&tape, &FlopConstants::default()))
}

/// Encoder (inference) FLOPs.
pub fn count_flops(model: &HimaeModel, channels: usize, len: usize) -> Result<FlopBreakdown> {
    count_flops_scoped(model, channels, len, FlopScope::Encoder)
}

/// Bytes to hold `params` 32-bit weights.
pub fn memory_footprint(params: u64) -> u64 {
    4 * params
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub batch: usize,
    pub repeats: usize,
    pub warmup: usize,
    /// Per-sample latencies in milliseconds.
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub throughput: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Times `repeats` encoder passes of a `batch`-window input on the calling
/// thread after `warmup` discarded passes.
pub fn bench_latency(model: &HimaeModel, batch: usize, repeats: usize, warmup: usize) -> Result<LatencyReport> {
    let cfg = model.config();
    let shape = Shape3::new(batch.max(1), cfg.input_channels, cfg.input_len);
    let x = Tensor3::from_vec(shape, (0..shape.numel()).map(|i| (i as f64 * 0.01).sin()).collect())?;
    for _ in 0..warmup {
        model.encode(&x)?;
    }
    let mut per_sample = Vec::with_capacity(repeats.max(1));
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        std::hint::black_box(model.encode(&x)?);
        per_sample.push(t.elapsed().as_secs_f64() * 1e3 / shape.batch as f64);
    }
    let mean_ms = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    per_sample.sort_by(f64::total_cmp);
    Ok(LatencyReport {
        batch: shape.batch,
        repeats: per_sample.len(),
        warmup,
        mean_ms,
        p50_ms: quantile(&per_sample, 0.5),
        p95_ms: quantile(&per_sample, 0.95),
        throughput: 1e3 / mean_ms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostInfo {
    pub os: String,
    pub arch: String,
    pub threads: usize,
}

impl HostInfo {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub schema_version: u32,
    pub model: HimaeConfig,
    pub params: u64,
    /// Encoder pass.
    pub flops: u64,
    pub gflops: f64,
    pub flop_breakdown: FlopBreakdown,
    /// Encoder, decoder and head, as used during pretraining.
    pub autoencoder_flops: u64,
    pub flop_convention: String,
    pub flop_constants: FlopConstants,
    pub memory_bytes: u64,
    pub memory_mb: f64,
    pub latency: Option<LatencyReport>,
    pub host: HostInfo,
}

pub const FLOP_CONVENTION: &str =
    "2 x multiply-accumulates; conv and transposed conv 2*k*Cin*Cout*Tout without bias; per output sample: batch norm 4, GELU 10, tanh 5, add 1";

/// Static costs plus, when `latency` is given as `(batch, repeats,
/// warmup)`, measured latency.
pub fn efficiency_report(model: &HimaeModel, latency: Option<(usize, usize, usize)>) -> Result<EfficiencyReport> {
    let cfg = model.config();
    let flops = count_flops(model, cfg.input_channels, cfg.input_len)?;
    let full = count_flops_scoped(model, cfg.input_channels, cfg.input_len, FlopScope::Autoencoder)?;
    let params = model.count_parameters() as u64;
    let memory_bytes = memory_footprint(params);
    let latency = latency.map(|(b, r, w)| bench_latency(model, b, r, w)).transpose()?;
    Ok(EfficiencyReport {
        schema_version: REPORT_SCHEMA_VERSION,
        model: cfg.clone(),
        params,
        flops: flops.total,
        gflops: flops.total as f64 / 1e9,
        flop_breakdown: flops,
        autoencoder_flops: full.total,
        flop_convention: FLOP_CONVENTION.to_string(),
        flop_constants: FlopConstants::default(),
        memory_bytes,
        memory_mb: memory_bytes as f64 / 1e6,
        latency,
        host: HostInfo::current(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_conv_formula() {
        let spec = ConvSpec {
            in_channels: 1,
            out_channels: 16,
            kernel: 5,
            stride: 2,
            padding: 2,
            output_padding: 0,
        };
        assert_eq!(conv_flops(&spec, 500), 80_000);
        assert_eq!(linear_flops(3, 4), 24);
    }

    #[test]
    fn memory_is_four_bytes_per_param() {
        assert_eq!(memory_footprint(1_200_000), 4_800_000);
        assert_eq!(memory_footprint(0), 0);
    }
}
