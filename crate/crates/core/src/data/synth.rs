//! Synthetic pulse-wave cohorts standing in for a wearable corpus.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::dsp;
use super::Dataset;
use crate::error::{config_err, Result};
use crate::rng::{purpose, stream};

/// Harmonic amplitudes and phases of the reference beat.
pub const CANONICAL_HARMONICS: [(f64, f64); 3] = [(1.0, 0.0), (0.3, -0.6), (0.1, -1.2)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub fs: f64,
    pub window_len: usize,
    pub subjects: usize,
    pub windows_per_subject: usize,
    /// Fundamental frequency range in beats per second.
    pub rate_range: [f64; 2],
    pub second_harmonic: [f64; 2],
    pub third_harmonic: [f64; 2],
    /// Relative depth of the slow rate modulation.
    pub rate_variability: f64,
    pub drift_amplitude: [f64; 2],
    pub drift_freq: [f64; 2],
    pub noise_std: f64,
    /// Probability that a window carries a motion burst.
    pub artifact_rate: f64,
    pub artifact_amplitude: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            fs: 100.0,
            window_len: 1000,
            subjects: 50,
            windows_per_subject: 40,
            rate_range: [0.9, 1.8],
            second_harmonic: [0.2, 0.4],
            third_harmonic: [0.05, 0.15],
            rate_variability: 0.03,
            drift_amplitude: [0.0, 0.3],
            drift_freq: [0.15, 0.35],
            noise_std: 0.05,
            artifact_rate: 0.1,
            artifact_amplitude: [6.0, 10.0],
        }
    }
}

impl SynthConfig {
    /// Noiseless, drift-free, artifact-free pulse trains.
    pub fn clean() -> Self {
        Self {
            rate_variability: 0.0,
            drift_amplitude: [0.0, 0.0],
            noise_std: 0.0,
            artifact_rate: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fs <= 0.0 || self.window_len == 0 || self.subjects == 0 || self.windows_per_subject == 0 {
            return config_err("synthesis needs positive fs, window length, subjects and windows per subject");
        }
        for (name, r) in [
            ("rate_range", self.rate_range),
            ("second_harmonic", self.second_harmonic),
            ("third_harmonic", self.third_harmonic),
            ("drift_amplitude", self.drift_amplitude),
            ("drift_freq", self.drift_freq),
            ("artifact_amplitude", self.artifact_amplitude),
        ] {
            if r[0] > r[1] || r[0] < 0.0 {
                return config_err(format!("{name} must be an ordered non-negative range"));
            }
        }
        if self.rate_range[0] <= 0.0 {
            return config_err("rate_range must be positive");
        }
        if !(0.0..=1.0).contains(&self.artifact_rate) || self.noise_std < 0.0 {
            return config_err("artifact_rate must lie in [0, 1] and noise_std be non-negative");
        }
        Ok(())
    }
}

/// Per-subject physiology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub id: u32,
    pub rate: f64,
    pub harmonics: [(f64, f64); 3],
    pub drift_amplitude: f64,
    pub drift_freq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalWindow {
    pub subject: u32,
    pub index: u32,
    pub samples: Vec<f64>,
    pub artifact: bool,
    pub rate: f64,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

pub fn subject_profile(cfg: &SynthConfig, id: u32, seed: u64) -> SubjectProfile {
    let mut rng = stream(seed, purpose::SYNTH, u64::from(id) << 32 | 0xffff_ffff);
    let rate = uniform(&mut rng, cfg.rate_range);
    let a2 = uniform(&mut rng, cfg.second_harmonic);
    let a3 = uniform(&mut rng, cfg.third_harmonic);
    let p2 = CANONICAL_HARMONICS[1].1 + rng.random_range(-0.3..0.3);
    let p3 = CANONICAL_HARMONICS[2].1 + rng.random_range(-0.3..0.3);
    SubjectProfile {
        id,
        rate,
        harmonics: [(1.0, 0.0), (a2, p2), (a3, p3)],
        drift_amplitude: uniform(&mut rng, cfg.drift_amplitude),
        drift_freq: uniform(&mut rng, cfg.drift_freq),
    }
}

/// `sum_h a_h cos(h * phase + psi_h)` along a phase track.
pub fn pulse_from_phase(phase: &[f64], harmonics: &[(f64, f64)]) -> Vec<f64> {
    phase
        .iter()
        .map(|&p| {
            harmonics
                .iter()
                .enumerate()
                .map(|(h, &(a, psi))| a * ((h + 1) as f64 * p + psi).cos())
                .sum()
        })
        .collect()
}

/// Phase of a pulse train at a constant rate starting at `phase0`.
pub fn constant_phase(rate: f64, fs: f64, len: usize, phase0: f64) -> Vec<f64> {
    (0..len).map(|i| phase0 + 2.0 * PI * rate * i as f64 / fs).collect()
}

/// Noiseless pulse train with the reference morphology.
pub fn canonical_pulse_train(rate: f64, fs: f64, len: usize) -> Vec<f64> {
    pulse_from_phase(&constant_phase(rate, fs, len, 0.0), &CANONICAL_HARMONICS)
}

/// Window `index` of a subject; identical `(profile, index, seed)` give an
/// identical window.
pub fn generate_window(cfg: &SynthConfig, profile: &SubjectProfile, index: u32, seed: u64) -> SignalWindow {
    let mut rng = stream(seed, purpose::SYNTH, u64::from(profile.id) << 32 | u64::from(index));
    let n = cfg.window_len;
    let fs = cfg.fs;
    let rate = profile.rate * (1.0 + rng.random_range(-0.05..0.05));
    let mod_freq = rng.random_range(0.05..0.15);
    let mod_phase = rng.random_range(0.0..2.0 * PI);
    let mut phase = Vec::with_capacity(n);
    let mut acc = rng.random_range(0.0..2.0 * PI);
    for i in 0..n {
        phase.push(acc);
        let t = i as f64 / fs;
        let inst = rate * (1.0 + cfg.rate_variability * (2.0 * PI * mod_freq * t + mod_phase).sin());
        acc += 2.0 * PI * inst / fs;
    }
    let mut x = pulse_from_phase(&phase, &profile.harmonics);
    let drift_phase = rng.random_range(0.0..2.0 * PI);
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).expect("finite sd");
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f64 / fs;
        *v += profile.drift_amplitude * (2.0 * PI * profile.drift_freq * t + drift_phase).sin();
        if cfg.noise_std > 0.0 {
            *v += noise.sample(&mut rng);
        }
    }
    let artifact = cfg.artifact_rate > 0.0 && rng.random_bool(cfg.artifact_rate);
    if artifact {
        inject_burst(&mut x, fs, uniform(&mut rng, cfg.artifact_amplitude), &mut rng);
    }
    SignalWindow {
        subject: profile.id,
        index,
        samples: x,
        artifact,
        rate,
    }
}

/// Adds a one-sided Gaussian bump of height `amplitude` times the window
/// sd, 0.1-0.3 s wide, at a random position.
pub fn inject_burst<R: Rng + ?Sized>(x: &mut [f64], fs: f64, amplitude: f64, rng: &mut R) {
    let sd = dsp::std_dev(x).max(1e-12);
    let n = x.len() as f64;
    let centre = rng.random_range(0.1 * n..0.9 * n);
    let width = rng.random_range(0.1..0.3) * fs;
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    for (i, v) in x.iter_mut().enumerate() {
        let d = (i as f64 - centre) / width;
        *v += sign * amplitude * sd * (-d * d).exp();
    }
}

/// Every window of every subject, subjects in order.
pub fn generate_cohort(cfg: &SynthConfig, seed: u64) -> Result<Vec<SignalWindow>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.subjects * cfg.windows_per_subject);
    for s in 0..cfg.subjects as u32 {
        let profile = subject_profile(cfg, s, seed);
        for w in 0..cfg.windows_per_subject as u32 {
            out.push(generate_window(cfg, &profile, w, seed));
        }
    }
    Ok(out)
}

/// Pretraining preprocessing: band-pass then min-max to `[-1, 1]`.
pub fn preprocess(x: &[f64], fs: f64, band: [f64; 2], order: usize) -> Result<Option<Vec<f64>>> {
    let filtered = dsp::butterworth_bandpass(x, band[0], band[1], fs, order)?;
    Ok(dsp::normalize_to_unit(&filtered))
}

/// Band-passed, normalized single-channel dataset; constant windows are
/// dropped.
pub fn to_dataset(windows: &[SignalWindow], fs: f64, band: [f64; 2], order: usize) -> Result<Dataset> {
    let sos = dsp::Sos::butterworth_bandpass(band[0], band[1], fs, order)?;
    let mut rows = Vec::with_capacity(windows.len());
    let mut subjects = Vec::with_capacity(windows.len());
    for w in windows {
        if let Some(x) = dsp::normalize_to_unit(&sos.filtfilt(&w.samples)) {
            rows.push(x);
            subjects.push(w.subject);
        }
    }
    Dataset::from_windows(&rows, subjects)
}

/// Default pretraining corpus: `subjects * windows_per_subject` windows.
pub fn pretraining_dataset(cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    to_dataset(&generate_cohort(cfg, seed)?, cfg.fs, [0.5, 8.0], 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_window() {
        let cfg = SynthConfig::default();
        let p = subject_profile(&cfg, 3, 11);
        assert_eq!(generate_window(&cfg, &p, 5, 11), generate_window(&cfg, &p, 5, 11));
        assert_ne!(generate_window(&cfg, &p, 5, 11).samples, generate_window(&cfg, &p, 6, 11).samples);
    }

    #[test]
    fn dataset_is_unit_range() {
        let cfg = SynthConfig {
            subjects: 3,
            windows_per_subject: 4,
            ..SynthConfig::default()
        };
        let d = pretraining_dataset(&cfg, 0).unwrap();
        assert_eq!(d.len(), 12);
        assert_eq!(d.window_len(), 1000);
        for b in 0..d.len() {
            let row = d.windows().row(b, 0);
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!((lo, hi), (-1.0, 1.0));
        }
    }
}
