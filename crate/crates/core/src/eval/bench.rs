//! Reconstruction benchmarks under random, interior and suffix occlusion.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{config_err, Result};
use crate::masking::{self, MaskRegime, PatchMask};
use crate::model::HimaeModel;
use crate::rng::{derive_seed, purpose};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenerativeRegime {
    RandomImputation,
    Interpolation,
    Extrapolation,
}

impl GenerativeRegime {
    pub const ALL: [GenerativeRegime; 3] = [
        GenerativeRegime::RandomImputation,
        GenerativeRegime::Interpolation,
        GenerativeRegime::Extrapolation,
    ];

    pub fn mask_regime(self) -> MaskRegime {
        match self {
            GenerativeRegime::RandomImputation => MaskRegime::Random,
            GenerativeRegime::Interpolation => MaskRegime::Interior,
            GenerativeRegime::Extrapolation => MaskRegime::Suffix,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GenerativeRegime::RandomImputation => "random-imputation",
            GenerativeRegime::Interpolation => "interpolation",
            GenerativeRegime::Extrapolation => "extrapolation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerativeTaskSpec {
    pub regimes: Vec<GenerativeRegime>,
    pub missingness: Vec<f64>,
    pub batch_size: usize,
}

impl Default for GenerativeTaskSpec {
    fn default() -> Self {
        Self {
            regimes: GenerativeRegime::ALL.to_vec(),
            missingness: (1..=9).map(|i| i as f64 / 10.0).collect(),
            batch_size: 32,
        }
    }
}

impl GenerativeTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.missingness.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return config_err(format!("missingness {r} outside (0, 1)"));
        }
        if self.regimes.is_empty() || self.missingness.is_empty() || self.batch_size == 0 {
            return config_err("benchmark grid is empty");
        }
        Ok(())
    }
}

/// Error of one imputation method over the hidden samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub mse: f64,
    pub mae: f64,
    /// Against mean fill; `None` when mean fill is exact.
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeRow {
    pub regime: GenerativeRegime,
    pub missingness: f64,
    pub model: MethodScore,
    pub mean_fill: MethodScore,
    pub nearest_fill: MethodScore,
    pub linear_fill: MethodScore,
}

/// Scores of a prediction and the three fill references. Only hidden
/// samples of `pred` are read.
pub fn score_methods(pred: &Tensor3, x: &Tensor3, mask: &Tensor3) -> Result<[MethodScore; 4]> {
    let mean = masking::mean_fill(x, mask)?;
    let near = masking::nearest_fill(x, mask)?;
    let lin = masking::linear_fill(x, mask)?;
    let base = masking::masked_mse(&mean, x, mask)?;
    let score = |p: &Tensor3| -> Result<MethodScore> {
        let mse = masking::masked_mse(p, x, mask)?;
        Ok(MethodScore {
            mse,
            mae: masking::masked_mae(p, x, mask)?,
            r2: (base > 0.0).then(|| 1.0 - mse / base),
        })
    };
    Ok([score(pred)?, score(&mean)?, score(&near)?, score(&lin)?])
}

/// Masks for every window of a benchmark cell, keyed by the seed, the
/// cell and the window index.
pub fn benchmark_masks(model: &HimaeModel, n: usize, regime: GenerativeRegime, ratio: f64, cell: u64, seed: u64) -> Result<Vec<PatchMask>> {
    let cfg = model.config();
    (0..n)
        .map(|i| {
            masking::sample_mask_seeded(
                cfg.num_patches(),
                cfg.patch_len,
                ratio,
                regime.mask_regime(),
                derive_seed(seed, purpose::BENCH_MASK, cell << 32 | i as u64),
            )
        })
        .collect()
}

/// Reconstruction of every window under the given masks.
pub fn reconstruct_all(model: &HimaeModel, data: &Dataset, masks: &Tensor3, batch: usize) -> Result<Tensor3> {
    let mut out = Tensor3::zeros(data.windows().shape());
    let mut start = 0;
    while start < data.len() {
        let idx: Vec<usize> = (start..(start + batch).min(data.len())).collect();
        let x = data.batch(&idx)?;
        let m = masks.select_batch(&idx)?;
        let r = model.reconstruct(&x, &m)?;
        let width = r.len() / idx.len();
        out.data_mut()[start * width..start * width + r.len()].copy_from_slice(r.data());
        start += batch;
    }
    Ok(out)
}

/// Pooled metrics over the whole held-out set for every grid cell.
pub fn run_generative_benchmark(model: &HimaeModel, data: &Dataset, spec: &GenerativeTaskSpec, seed: u64) -> Result<Vec<GenerativeRow>> {
    spec.validate()?;
    let mut rows = Vec::new();
    for (ri, &regime) in spec.regimes.iter().enumerate() {
        for (mi, &ratio) in spec.missingness.iter().enumerate() {
            let cell = (ri * spec.missingness.len() + mi) as u64;
            let masks = masking::mask_tensor(&benchmark_masks(model, data.len(), regime, ratio, cell, seed)?)?;
            let pred = reconstruct_all(model, data, &masks, spec.batch_size)?;
            let [m, mean, near, lin] = score_methods(&pred, data.windows(), &masks)?;
            rows.push(GenerativeRow {
                regime,
                missingness: ratio,
                model: m,
                mean_fill: mean,
                nearest_fill: near,
                linear_fill: lin,
            });
        }
    }
    Ok(rows)
}

/// Long-format CSV: one line per (regime, missingness, method).
pub fn write_benchmark_csv(rows: &[GenerativeRow], path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["regime", "missingness", "method", "mse", "mae", "r2"])?;
    for r in rows {
        for (name, s) in [
            ("model", r.model),
            ("mean-fill", r.mean_fill),
            ("nearest-fill", r.nearest_fill),
            ("linear-fill", r.linear_fill),
        ] {
            w.write_record([
                r.regime.name().to_string(),
                r.missingness.to_string(),
                name.to_string(),
                s.mse.to_string(),
                s.mae.to_string(),
                s.r2.map_or_else(String::new, |v| v.to_string()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_fill_is_exact_on_ramps() {
        let x = Tensor3::from_signal(&(0..40).map(|i| 0.5 * i as f64 - 3.0).collect::<Vec<_>>()).unwrap();
        let mask = PatchMask {
            patches: vec![false, true, true, false, true, false, true, true, false, false],
            patch_len: 4,
        };
        let m = masking::mask_tensor(&[mask]).unwrap();
        let [_, _, _, lin] = score_methods(&x, &x, &m).unwrap();
        assert!(lin.r2.unwrap() > 1.0 - 1e-12);
        assert!(lin.mse < 1e-24);
    }

    #[test]
    fn missingness_is_validated() {
        let spec = GenerativeTaskSpec {
            missingness: vec![0.5, 1.0],
            ..Default::default()
        };
        assert!(spec.validate().is_err());
    }
}
