//! Patch masks, occlusion, the masked reconstruction loss and R² against
//! simple imputation references.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HimaeError, Result};
use crate::tensor::{Shape3, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskRegime {
    /// Patches drawn uniformly without replacement.
    Random,
    /// One run (or several, see [`sample_contiguous_runs`]) of adjacent
    /// patches at a uniform random start.
    Contiguous,
    /// A single contiguous run that touches neither end of the window.
    Interior,
    /// The trailing patches (extrapolation).
    Suffix,
}

impl MaskRegime {
    /// Regime for optimization step `step` during pretraining: random and
    /// contiguous masking strictly alternate.
    pub fn interleaved(step: u64) -> Self {
        if step % 2 == 0 {
            MaskRegime::Random
        } else {
            MaskRegime::Contiguous
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMask {
    /// `true` marks a hidden patch.
    pub patches: Vec<bool>,
    pub patch_len: usize,
}

impl PatchMask {
    pub fn num_patches(&self) -> usize {
        self.patches.len()
    }

    pub fn masked_patches(&self) -> usize {
        self.patches.iter().filter(|&&m| m).count()
    }

    pub fn len(&self) -> usize {
        self.patches.len() * self.patch_len
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Per-sample mask: sample `i` copies patch `i / P`.
    pub fn expanded(&self) -> Vec<bool> {
        self.patches
            .iter()
            .flat_map(|&m| std::iter::repeat_n(m, self.patch_len))
            .collect()
    }

    pub fn expanded_f64(&self) -> Vec<f64> {
        self.expanded().into_iter().map(|m| if m { 1.0 } else { 0.0 }).collect()
    }
}

/// `round(r * n)` with halves rounded up; must land strictly inside
/// `(0, n)`.
pub fn masked_count(num_patches: usize, ratio: f64) -> Result<usize> {
    let degenerate = |masked| HimaeError::DegenerateMask {
        ratio,
        patches: num_patches,
        masked,
    };
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(degenerate(0));
    }
    let count = (ratio * num_patches as f64 + 0.5).floor() as usize;
    if count == 0 || count >= num_patches {
        return Err(degenerate(count));
    }
    Ok(count)
}

pub fn sample_mask<R: Rng + ?Sized>(
    num_patches: usize,
    patch_len: usize,
    ratio: f64,
    regime: MaskRegime,
    rng: &mut R,
) -> Result<PatchMask> {
    let count = masked_count(num_patches, ratio)?;
    let mut patches = vec![false; num_patches];
    match regime {
        MaskRegime::Random => {
            for i in sample(rng, num_patches, count) {
                patches[i] = true;
            }
        }
        MaskRegime::Contiguous => {
            let start = rng.random_range(0..=num_patches - count);
            patches[start..start + count].fill(true);
        }
        MaskRegime::Interior => {
            if num_patches - count < 2 {
                return Err(HimaeError::DegenerateMask {
                    ratio,
                    patches: num_patches,
                    masked: count,
                });
            }
            let start = rng.random_range(1..=num_patches - count - 1);
            patches[start..start + count].fill(true);
        }
        MaskRegime::Suffix => patches[num_patches - count..].fill(true),
    }
    Ok(PatchMask { patches, patch_len })
}

/// Convenience wrapper drawing from a fresh seeded stream.
pub fn sample_mask_seeded(
    num_patches: usize,
    patch_len: usize,
    ratio: f64,
    regime: MaskRegime,
    seed: u64,
) -> Result<PatchMask> {
    sample_mask(num_patches, patch_len, ratio, regime, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Contiguous masking split into `runs` separated blocks of near-equal
/// length. Gap sizes are a uniformly random composition of the unmasked
/// patches with at least one patch between blocks.
pub fn sample_contiguous_runs<R: Rng + ?Sized>(
    num_patches: usize,
    patch_len: usize,
    ratio: f64,
    runs: usize,
    rng: &mut R,
) -> Result<PatchMask> {
    let count = masked_count(num_patches, ratio)?;
    let free = num_patches - count;
    if runs == 0 || runs > count || free + 1 < runs {
        return Err(HimaeError::Config(format!(
            "cannot place {runs} runs of {count} masked patches among {num_patches}"
        )));
    }
    let extra = free - (runs - 1);
    let mut bars: Vec<usize> = sample(rng, extra + runs, runs).into_vec();
    bars.sort_unstable();
    let mut gaps = Vec::with_capacity(runs + 1);
    let mut prev: isize = -1;
    for &b in &bars {
        gaps.push((b as isize - prev - 1) as usize);
        prev = b as isize;
    }
    gaps.push((extra + runs) - 1 - prev as usize);
    let mut patches = vec![false; num_patches];
    let mut pos = 0;
    for r in 0..runs {
        pos += gaps[r] + usize::from(r > 0);
        let len = count / runs + usize::from(r < count % runs);
        patches[pos..pos + len].fill(true);
        pos += len;
    }
    Ok(PatchMask { patches, patch_len })
}

/// Stacks per-window masks into a `(B, 1, L)` tensor of 0/1 weights.
pub fn mask_tensor(masks: &[PatchMask]) -> Result<Tensor3> {
    let len = masks.first().map(PatchMask::len).unwrap_or(0);
    let mut data = Vec::with_capacity(masks.len() * len);
    for m in masks {
        if m.len() != len {
            return Err(HimaeError::Shape("masks cover different lengths".into()));
        }
        data.extend(m.expanded_f64());
    }
    Tensor3::from_vec(Shape3::new(masks.len(), 1, len), data)
}

fn check_mask(x: &Tensor3, mask: &Tensor3) -> Result<()> {
    let s = x.shape();
    mask.expect_shape(Shape3::new(s.batch, 1, s.time))
}

/// `x * (1 - m')`, broadcasting the mask over channels.
pub fn occlude(x: &Tensor3, mask: &Tensor3) -> Result<Tensor3> {
    check_mask(x, mask)?;
    let s = x.shape();
    let mut out = x.clone();
    for b in 0..s.batch {
        let m = mask.row(b, 0).to_vec();
        for c in 0..s.channels {
            for (v, &mv) in out.row_mut(b, c).iter_mut().zip(&m) {
                *v *= 1.0 - mv;
            }
        }
    }
    Ok(out)
}

/// Single-window occlusion.
pub fn apply_mask(x: &[f64], mask: &PatchMask) -> Result<Vec<f64>> {
    if x.len() != mask.len() {
        return Err(HimaeError::Shape(format!(
            "signal of length {} vs mask covering {}",
            x.len(),
            mask.len()
        )));
    }
    Ok(x.iter().zip(mask.expanded()).map(|(&v, m)| if m { 0.0 } else { v }).collect())
}

fn masked_sums(pred: &Tensor3, target: &Tensor3, mask: &Tensor3, f: impl Fn(f64) -> f64) -> Result<(f64, f64)> {
    pred.expect_shape(target.shape())?;
    check_mask(target, mask)?;
    let s = target.shape();
    let mut total = 0.0;
    for b in 0..s.batch {
        let m = mask.row(b, 0);
        for c in 0..s.channels {
            for ((&p, &t), &mv) in pred.row(b, c).iter().zip(target.row(b, c)).zip(m) {
                if mv != 0.0 {
                    total += mv * f(p - t);
                }
            }
        }
    }
    let denom = mask.sum() * s.channels as f64;
    if denom <= 0.0 {
        return Err(HimaeError::EmptyMask);
    }
    Ok((total, denom))
}

/// `||(x_hat - x) * m'||^2 / (C * sum m')`.
pub fn masked_mse(pred: &Tensor3, target: &Tensor3, mask: &Tensor3) -> Result<f64> {
    let (sse, denom) = masked_sums(pred, target, mask, |d| d * d)?;
    Ok(sse / denom)
}

pub fn masked_mae(pred: &Tensor3, target: &Tensor3, mask: &Tensor3) -> Result<f64> {
    let (sae, denom) = masked_sums(pred, target, mask, f64::abs)?;
    Ok(sae / denom)
}

fn observed_positions(mask_row: &[f64]) -> Vec<usize> {
    mask_row
        .iter()
        .enumerate()
        .filter(|(_, &m)| m == 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Each hidden sample replaced by the mean of the observed samples of the
/// same window and channel.
pub fn mean_fill(x: &Tensor3, mask: &Tensor3) -> Result<Tensor3> {
    check_mask(x, mask)?;
    let s = x.shape();
    let mut out = x.clone();
    for b in 0..s.batch {
        let obs = observed_positions(mask.row(b, 0));
        if obs.is_empty() {
            return Err(HimaeError::Contract("window has no observed samples".into()));
        }
        let m = mask.row(b, 0).to_vec();
        for c in 0..s.channels {
            let row = x.row(b, c);
            let mean = obs.iter().map(|&i| row[i]).sum::<f64>() / obs.len() as f64;
            for (v, &mv) in out.row_mut(b, c).iter_mut().zip(&m) {
                if mv != 0.0 {
                    *v = mean;
                }
            }
        }
    }
    Ok(out)
}

/// Hidden samples copy the closest observed sample (earlier one on ties).
pub fn nearest_fill(x: &Tensor3, mask: &Tensor3) -> Result<Tensor3> {
    fill_with(x, mask, |row, left, right, t| match (left, right) {
        (Some(l), Some(r)) => {
            if t - l <= r - t {
                row[l]
            } else {
                row[r]
            }
        }
        (Some(l), None) => row[l],
        (None, Some(r)) => row[r],
        (None, None) => unreachable!("checked for observed samples"),
    })
}

/// Hidden samples linearly interpolated between the nearest observed
/// neighbours, held flat beyond the ends.
pub fn linear_fill(x: &Tensor3, mask: &Tensor3) -> Result<Tensor3> {
    fill_with(x, mask, |row, left, right, t| match (left, right) {
        (Some(l), Some(r)) => {
            let w = (t - l) as f64 / (r - l) as f64;
            row[l] * (1.0 - w) + row[r] * w
        }
        (Some(l), None) => row[l],
        (None, Some(r)) => row[r],
        (None, None) => unreachable!("checked for observed samples"),
    })
}

fn fill_with(
    x: &Tensor3,
    mask: &Tensor3,
    f: impl Fn(&[f64], Option<usize>, Option<usize>, usize) -> f64,
) -> Result<Tensor3> {
    check_mask(x, mask)?;
    let s = x.shape();
    let mut out = x.clone();
    for b in 0..s.batch {
        let m = mask.row(b, 0).to_vec();
        if observed_positions(&m).is_empty() {
            return Err(HimaeError::Contract("window has no observed samples".into()));
        }
        // nearest observed index to the left / right of every position
        let mut left = vec![None; s.time];
        let mut last = None;
        for t in 0..s.time {
            if m[t] == 0.0 {
                last = Some(t);
            }
            left[t] = last;
        }
        let mut right = vec![None; s.time];
        let mut next = None;
        for t in (0..s.time).rev() {
            if m[t] == 0.0 {
                next = Some(t);
            }
            right[t] = next;
        }
        for c in 0..s.channels {
            let row = x.row(b, c).to_vec();
            for (t, v) in out.row_mut(b, c).iter_mut().enumerate() {
                if m[t] != 0.0 {
                    *v = f(&row, left[t], right[t], t);
                }
            }
        }
    }
    Ok(out)
}

/// `1 - MSE(pred) / MSE(reference)` over hidden samples.
pub fn r_squared_against(pred: &Tensor3, x: &Tensor3, mask: &Tensor3, reference: &Tensor3) -> Result<f64> {
    let model = masked_mse(pred, x, mask)?;
    let base = masked_mse(reference, x, mask)?;
    if base == 0.0 {
        return Err(HimaeError::UndefinedRSquared);
    }
    Ok(1.0 - model / base)
}

/// R² against the per-window, per-channel mean fill.
pub fn r_squared(pred: &Tensor3, x: &Tensor3, mask: &Tensor3) -> Result<f64> {
    let reference = mean_fill(x, mask)?;
    r_squared_against(pred, x, mask, &reference)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_count_at_default_ratio() {
        for seed in 0..20 {
            let m = sample_mask_seeded(200, 5, 0.8, MaskRegime::Random, seed).unwrap();
            assert_eq!(m.masked_patches(), 160);
            assert_eq!(m.len(), 1000);
        }
    }

    #[test]
    fn suffix_masks_tail() {
        let m = sample_mask_seeded(10, 1, 0.3, MaskRegime::Suffix, 0).unwrap();
        let hidden: Vec<usize> = (0..10).filter(|&i| m.patches[i]).collect();
        assert_eq!(hidden, vec![7, 8, 9]);
    }

    #[test]
    fn degenerate_ratios_fail() {
        assert!(masked_count(10, 0.01).is_err());
        assert!(masked_count(10, 0.97).is_err());
        assert!(masked_count(10, 0.0).is_err());
        assert!(masked_count(10, 1.0).is_err());
    }

    #[test]
    fn interior_never_touches_ends() {
        for seed in 0..50 {
            let m = sample_mask_seeded(20, 2, 0.5, MaskRegime::Interior, seed).unwrap();
            assert!(!m.patches[0] && !m.patches[19]);
            assert_eq!(m.masked_patches(), 10);
        }
    }

    #[test]
    fn runs_are_separated() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let m = sample_contiguous_runs(40, 1, 0.5, 3, &mut rng).unwrap();
            assert_eq!(m.masked_patches(), 20);
            let starts = (0..40).filter(|&i| m.patches[i] && (i == 0 || !m.patches[i - 1])).count();
            assert_eq!(starts, 3);
        }
    }

    #[test]
    fn occlusion_and_identity() {
        let x = vec![1.0; 8];
        let m = PatchMask {
            patches: vec![true, false, true, false],
            patch_len: 2,
        };
        assert_eq!(apply_mask(&x, &m).unwrap(), vec![0., 0., 1., 1., 0., 0., 1., 1.]);
        let none = PatchMask {
            patches: vec![false; 4],
            patch_len: 2,
        };
        assert_eq!(apply_mask(&x, &none).unwrap(), x);
    }

    #[test]
    fn mse_of_constant_error() {
        let x = Tensor3::zeros(Shape3::new(1, 1, 6));
        let mask = Tensor3::from_signal(&[0., 1., 1., 0., 1., 0.]).unwrap();
        let pred = Tensor3::from_signal(&[5., 0.5, 0.5, -3., 0.5, 9.]).unwrap();
        assert!((masked_mse(&pred, &x, &mask).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(masked_mse(&x, &x, &mask).unwrap(), 0.0);
    }

    #[test]
    fn r_squared_reference_points() {
        let x = Tensor3::from_signal(&[1., 2., 3., 4., 5., 6.]).unwrap();
        let mask = Tensor3::from_signal(&[0., 1., 0., 1., 1., 0.]).unwrap();
        assert_eq!(r_squared(&x, &x, &mask).unwrap(), 1.0);
        let mf = mean_fill(&x, &mask).unwrap();
        assert!(r_squared(&mf, &x, &mask).unwrap().abs() < 1e-15);
        let bad = x.map(|v| -10.0 * v);
        assert!(r_squared(&bad, &x, &mask).unwrap() < 0.0);
        let flat = Tensor3::full(Shape3::new(1, 1, 6), 2.0);
        assert!(matches!(r_squared(&x, &flat, &mask), Err(HimaeError::UndefinedRSquared)));
    }

    #[test]
    fn linear_fill_recovers_ramps() {
        let x = Tensor3::from_signal(&(0..20).map(|i| 0.1 * i as f64).collect::<Vec<_>>()).unwrap();
        let mut m = vec![0.0; 20];
        m[4..12].fill(1.0);
        let mask = Tensor3::from_signal(&m).unwrap();
        let lf = linear_fill(&x, &mask).unwrap();
        for (a, b) in lf.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let nf = nearest_fill(&x, &mask).unwrap();
        assert_eq!(nf.data()[5], x.data()[3]);
        assert_eq!(nf.data()[11], x.data()[12]);
    }
}
