//! Window quality: amplitude regularization, autocorrelation periodicity,
//! template matching in the cardiac band, harmonic-mean composite.

use serde::{Deserialize, Serialize};

use super::dsp::{self, PeriodicityConfig, Sos, TrimConfig};
use super::synth::canonical_pulse_train;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectStage {
    Constant,
    Amplitude,
    Periodicity,
    Template,
    Score,
}

impl RejectStage {
    pub fn name(self) -> &'static str {
        match self {
            RejectStage::Constant => "constant",
            RejectStage::Amplitude => "amplitude",
            RejectStage::Periodicity => "periodicity",
            RejectStage::Template => "template",
            RejectStage::Score => "score",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SqiConfig {
    pub fs: f64,
    pub trim: TrimConfig,
    pub periodicity: PeriodicityConfig,
    pub band: [f64; 2],
    pub filter_order: usize,
    /// Similarity threshold for windows regular at entry.
    pub tau_regular: f64,
    /// Similarity threshold for windows that needed trimming.
    pub tau_trimmed: f64,
    pub entry_bonus: f64,
    pub accept_threshold: f64,
}

impl Default for SqiConfig {
    fn default() -> Self {
        Self {
            fs: 100.0,
            trim: TrimConfig::default(),
            periodicity: PeriodicityConfig::default(),
            band: [0.1, 2.0],
            filter_order: 2,
            tau_regular: 0.90,
            tau_trimmed: 0.95,
            entry_bonus: 0.05,
            accept_threshold: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqiReport {
    /// Amplitude skewness at entry.
    pub gamma: f64,
    pub trimmed: bool,
    pub sigma_zc: Option<f64>,
    pub period_s: Option<f64>,
    pub coverage: f64,
    pub agreement: f64,
    pub harmonic: f64,
    pub composite: f64,
    pub accepted: bool,
    pub reject_stage: Option<RejectStage>,
}

/// `2ap / (a + p)`, zero when both vanish.
pub fn harmonic_mean(a: f64, p: f64) -> f64 {
    if a + p > 0.0 {
        2.0 * a * p / (a + p)
    } else {
        0.0
    }
}

/// Residual of `x` after least-squares removal of a constant and a linear
/// trend in the sample index.
fn detrend(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let tm = (n - 1.0) / 2.0;
    let xm = dsp::mean(x);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        let d = i as f64 - tm;
        sxy += d * (v - xm);
        sxx += d * d;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    x.iter()
        .enumerate()
        .map(|(i, v)| v - xm - slope * (i as f64 - tm))
        .collect()
}

/// Correlation after removing each segment's linear baseline.
fn baseline_corr(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (detrend(a), detrend(b));
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(&b) {
        num += x * y;
        da += x * x;
        db += y * y;
    }
    if da == 0.0 || db == 0.0 {
        0.0
    } else {
        num / (da * db).sqrt()
    }
}

/// One beat (`round(period * fs)` samples) of the reference morphology,
/// band-passed like the signal it is compared with.
pub fn canonical_template(period_s: f64, fs: f64, sos: &Sos) -> Vec<f64> {
    let beat_len = (period_s * fs).round() as usize;
    let train = canonical_pulse_train(1.0 / period_s, fs, beat_len * 9);
    let filtered = sos.filtfilt(&train);
    filtered[4 * beat_len..5 * beat_len].to_vec()
}

/// Beat-synchronous similarity. Complete-beat placements sit at
/// `phase + k * period`; the phase maximizing their mean correlation is
/// chosen once for the whole window. Each sample takes the non-negative
/// correlation of the placement covering it; samples outside every
/// placement (partial beats at the edges) take the nearest placement's.
pub fn similarity_track(x: &[f64], template: &[f64], period: f64) -> Vec<f64> {
    let n = x.len();
    let m = template.len();
    if m < 2 || m > n {
        return vec![0.0; n];
    }
    let placements = |phase: f64| -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let mut k = 0.0;
        loop {
            let off = (phase + k * period).round() as usize;
            if off + m > n {
                break;
            }
            out.push((off, baseline_corr(&x[off..off + m], template)));
            k += 1.0;
        }
        out
    };
    let steps = (period.round() as usize).clamp(1, n - m + 1);
    let mut best: Option<(f64, Vec<(usize, f64)>)> = None;
    for p in 0..steps {
        let placed = placements(p as f64);
        if placed.is_empty() {
            continue;
        }
        let score = placed.iter().map(|&(_, c)| c).sum::<f64>() / placed.len() as f64;
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, placed));
        }
    }
    let Some((_, placed)) = best else {
        return vec![0.0; n];
    };
    (0..n)
        .map(|t| {
            placed
                .iter()
                .min_by_key(|&&(off, _)| {
                    if t < off {
                        off - t
                    } else if t >= off + m {
                        t + 1 - off - m
                    } else {
                        0
                    }
                })
                .map(|&(_, c)| c.max(0.0))
                .unwrap_or(0.0)
        })
        .collect()
}

fn rejected(gamma: f64, trimmed: bool, stage: RejectStage) -> SqiReport {
    SqiReport {
        gamma,
        trimmed,
        sigma_zc: None,
        period_s: None,
        coverage: 0.0,
        agreement: 0.0,
        harmonic: 0.0,
        composite: 0.0,
        accepted: false,
        reject_stage: Some(stage),
    }
}

pub fn sqi(x: &[f64], cfg: &SqiConfig) -> Result<SqiReport> {
    let sos = Sos::butterworth_bandpass(cfg.band[0], cfg.band[1], cfg.fs, cfg.filter_order)?;
    let Some(z) = dsp::zscore(x) else {
        return Ok(rejected(0.0, false, RejectStage::Constant));
    };
    let trim = dsp::trim_excursions(&z, &cfg.trim);
    let trimmed = trim.iterations > 0;
    let regular_at_entry = trim.gamma_entry <= cfg.trim.gamma_threshold;
    if !trim.regular {
        return Ok(rejected(trim.gamma_entry, trimmed, RejectStage::Amplitude));
    }
    let periodicity = dsp::periodicity_check(&trim.signal, &PeriodicityConfig { fs: cfg.fs, ..cfg.periodicity });
    let mut report = rejected(trim.gamma_entry, trimmed, RejectStage::Periodicity);
    report.sigma_zc = periodicity.sigma_zc;
    report.period_s = periodicity.period_s;
    if !periodicity.passed {
        return Ok(report);
    }
    let rough = periodicity.period_s.expect("passed check has a period") * cfg.fs;
    let period = dsp::refine_period(&trim.signal, rough).unwrap_or(rough) / cfg.fs;
    report.period_s = Some(period);
    let beat_len = (period * cfg.fs).round() as usize;
    if beat_len < 4 || beat_len > x.len() {
        report.reject_stage = Some(RejectStage::Template);
        return Ok(report);
    }
    // pad by a full window so the slow high-pass edge transient stays out
    let filtered = sos.filtfilt_padded(&trim.signal, x.len());
    let template = canonical_template(period, cfg.fs, &sos);
    let q = similarity_track(&filtered, &template, period * cfg.fs);
    let tau = if regular_at_entry { cfg.tau_regular } else { cfg.tau_trimmed };
    let accepted: Vec<f64> = q.iter().copied().filter(|&v| v > tau).collect();
    let coverage = accepted.len() as f64 / q.len() as f64;
    let agreement = accepted.iter().sum::<f64>() / accepted.len().max(1) as f64;
    let harmonic = harmonic_mean(agreement, coverage);
    report.coverage = coverage;
    report.agreement = agreement;
    report.harmonic = harmonic;
    if accepted.is_empty() {
        report.reject_stage = Some(RejectStage::Template);
        return Ok(report);
    }
    report.composite = harmonic + if regular_at_entry { cfg.entry_bonus } else { 0.0 };
    report.accepted = report.composite >= cfg.accept_threshold;
    report.reject_stage = (!report.accepted).then_some(RejectStage::Score);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_mean_values() {
        assert_eq!(harmonic_mean(1.0, 1.0), 1.0);
        assert!((harmonic_mean(0.8, 0.5) - 0.6154).abs() < 5e-5);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
    }

    #[test]
    fn constant_window_rejected() {
        let r = sqi(&[1.0; 1000], &SqiConfig::default()).unwrap();
        assert_eq!(r.reject_stage, Some(RejectStage::Constant));
        assert_eq!(r.composite, 0.0);
    }

    #[test]
    fn canonical_train_scores_high() {
        let x = canonical_pulse_train(1.3, 100.0, 1000);
        let r = sqi(&x, &SqiConfig::default()).unwrap();
        assert!(r.accepted, "{r:?}");
        assert!(r.coverage > 0.9);
    }
}
