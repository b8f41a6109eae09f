//! Grid driver for scaling and ablation studies. Each cell applies its
//! overrides to a base configuration, pretrains with fixed seeds and
//! reports validation and held-out reconstruction metrics.

use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::bench::{reconstruct_all, run_generative_benchmark, GenerativeRegime, GenerativeTaskSpec};
use crate::config::RunConfig;
use crate::data::synth::pretraining_dataset;
use crate::error::{config_err, HimaeError, Result};
use crate::masking;
use crate::train::pretrain;

/// One grid axis, e.g. `mask_ratio=0.5,0.6,0.7`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for GridAxis {
    type Err = HimaeError;

    fn from_str(s: &str) -> Result<Self> {
        let Some((key, values)) = s.split_once('=') else {
            return config_err(format!("grid axis `{s}` is not key=v1,v2,..."));
        };
        // Bracketed lists such as widths=[16,32],[16,32,64] split on "],".
        let values: Vec<String> = if values.trim_start().starts_with('[') {
            values
                .split("],")
                .map(|v| {
                    let v = v.trim();
                    if v.ends_with(']') { v.to_string() } else { format!("{v}]") }
                })
                .collect()
        } else {
            values.split(',').map(|v| v.trim().to_string()).collect()
        };
        if key.trim().is_empty() || values.iter().any(String::is_empty) {
            return config_err(format!("grid axis `{s}` has an empty key or value"));
        }
        Ok(GridAxis {
            key: key.trim().to_string(),
            values,
        })
    }
}

/// Cartesian product of the axes, first axis slowest.
pub fn expand_grid(axes: &[GridAxis]) -> Vec<Vec<(String, String)>> {
    let mut cells = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(cells.len() * axis.values.len());
        for cell in &cells {
            for v in &axis.values {
                let mut c: Vec<(String, String)> = cell.clone();
                c.push((axis.key.clone(), v.clone()));
                next.push(c);
            }
        }
        cells = next;
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: usize,
    pub seed: u64,
    pub settings: Vec<(String, String)>,
    /// `None` when the cell ran; otherwise why it was skipped.
    pub skipped: Option<String>,
    pub params: Option<usize>,
    pub steps: Option<u64>,
    pub val_mse: Option<f64>,
    pub val_mae: Option<f64>,
    pub interp_mse: Option<f64>,
    pub random_mse: Option<f64>,
}

/// Missingness of the held-out interpolation and random-imputation scores.
pub const TEST_MISSINGNESS: f64 = 0.5;

fn run_cell(base: &RunConfig, cell: usize, settings: &[(String, String)], seed: u64) -> Result<CellResult> {
    let mut out = CellResult {
        cell,
        seed,
        settings: settings.to_vec(),
        skipped: None,
        params: None,
        steps: None,
        val_mse: None,
        val_mae: None,
        interp_mse: None,
        random_mse: None,
    };
    let mut cfg = base.clone();
    cfg.seed = seed;
    for (k, v) in settings {
        if let Err(e) = cfg.set(k, v) {
            if e.is_validation() {
                out.skipped = Some(e.to_string());
                return Ok(out);
            }
            return Err(e);
        }
    }
    let data = pretraining_dataset(&cfg.synth, seed)?;
    let outcome = pretrain(cfg.model.clone(), cfg.train.clone(), &data, seed)?;
    let model = &outcome.model;
    let val = outcome.trainer.val_data();
    let masks = outcome.trainer.val_masks();
    let recon = reconstruct_all(model, val, masks, cfg.train.batch_size)?;
    out.params = Some(model.count_parameters());
    out.steps = Some(outcome.state.step);
    out.val_mse = Some(masking::masked_mse(&recon, val.windows(), masks)?);
    out.val_mae = Some(masking::masked_mae(&recon, val.windows(), masks)?);
    let spec = GenerativeTaskSpec {
        regimes: vec![GenerativeRegime::Interpolation, GenerativeRegime::RandomImputation],
        missingness: vec![TEST_MISSINGNESS],
        batch_size: cfg.train.batch_size,
    };
    let rows = run_generative_benchmark(model, val, &spec, seed)?;
    out.interp_mse = Some(rows[0].model.mse);
    out.random_mse = Some(rows[1].model.mse);
    Ok(out)
}

/// Runs every (cell, seed) pair on `workers` threads. Results come back in
/// (cell, seed) order regardless of completion order.
pub fn run_grid(
    base: &RunConfig,
    axes: &[GridAxis],
    seeds: &[u64],
    workers: usize,
    progress: &(dyn Fn(&CellResult) + Sync),
) -> Result<Vec<CellResult>> {
    // Unknown keys fail the whole grid rather than every cell.
    if let Some(axis) = axes.iter().find(|a| !base.has_key(&a.key)) {
        return config_err(format!("unknown configuration key `{}`", axis.key));
    }
    if seeds.is_empty() {
        return config_err("grid needs at least one seed");
    }
    let cells = expand_grid(axes);
    let jobs: Vec<(usize, u64)> = (0..cells.len()).flat_map(|c| seeds.iter().map(move |&s| (c, s))).collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<CellResult>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(cell, seed)) = jobs.get(j) else { break };
                let r = run_cell(base, cell, &cells[cell], seed);
                if let Ok(res) = &r {
                    progress(res);
                }
                results.lock().expect("no worker panicked")[j] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

/// Long-format CSV: one row per (cell, seed); settings as `key=value`
/// joined by `;`.
pub fn write_grid_csv(results: &[CellResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "cell", "seed", "settings", "status", "params", "steps", "val_mse", "val_mae", "interp_mse", "random_mse",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in results {
        let settings: Vec<String> = r.settings.iter().map(|(k, v)| format!("{k}={v}")).collect();
        w.write_record([
            r.cell.to_string(),
            r.seed.to_string(),
            settings.join(";"),
            r.skipped.as_ref().map_or_else(|| "ok".to_string(), |s| format!("skipped: {s}")),
            r.params.map(|p| p.to_string()).unwrap_or_default(),
            r.steps.map(|p| p.to_string()).unwrap_or_default(),
            opt(r.val_mse),
            opt(r.val_mae),
            opt(r.interp_mse),
            opt(r.random_mse),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Median of the finite values, `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing_and_expansion() {
        let a: GridAxis = "mask_ratio=0.5,0.6,0.7".parse().unwrap();
        let b: GridAxis = "widths=[16,32],[16,32,64]".parse().unwrap();
        assert_eq!(b.values, vec!["[16,32]", "[16,32,64]"]);
        let cells = expand_grid(&[a, b]);
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[1], vec![("mask_ratio".into(), "0.5".into()), ("widths".into(), "[16,32,64]".into())]);
    }

    #[test]
    fn infeasible_cells_are_skipped() {
        let base = RunConfig::default();
        let r = run_cell(&base, 0, &[("patch_len".into(), "7".into())], 0).unwrap();
        assert!(r.skipped.unwrap().contains("patch length 7"));
    }

    #[test]
    fn median_of_even_count() {
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), Some(2.5));
    }
}
