//! Standardization, amplitude statistics, autocorrelation periodicity,
//! Butterworth band-pass and Savitzky–Golay smoothing.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{config_err, Result};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population standard deviation.
pub fn std_dev(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

/// `(x - mean) / sd` with the population sd; `None` for a constant window.
pub fn zscore(x: &[f64]) -> Option<Vec<f64>> {
    if x.is_empty() {
        return None;
    }
    let (m, s) = (mean(x), std_dev(x));
    if s == 0.0 || !s.is_finite() {
        return None;
    }
    Some(x.iter().map(|v| (v - m) / s).collect())
}

/// Population skewness `m3 / m2^1.5`; zero for a constant input.
pub fn skewness(x: &[f64]) -> f64 {
    let m = mean(x);
    let (mut m2, mut m3) = (0.0, 0.0);
    for v in x {
        let d = v - m;
        m2 += d * d;
        m3 += d * d * d;
    }
    let n = x.len() as f64;
    let (m2, m3) = (m2 / n, m3 / n);
    if m2 == 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

/// Skewness of `|x|`.
pub fn amplitude_skewness(x: &[f64]) -> f64 {
    skewness(&x.iter().map(|v| v.abs()).collect::<Vec<_>>())
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(x: &[f64], q: f64) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = (q / 100.0).clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrimConfig {
    pub gamma_threshold: f64,
    pub percentile: f64,
    pub max_iterations: usize,
    /// No sample is clipped below this many standard deviations.
    pub floor: f64,
}

impl Default for TrimConfig {
    fn default() -> Self {
        Self {
            gamma_threshold: 2.0,
            percentile: 99.0,
            max_iterations: 5,
            floor: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrimOutcome {
    pub signal: Vec<f64>,
    pub gamma_entry: f64,
    pub gamma: f64,
    pub iterations: usize,
    /// `gamma <= threshold` at the end.
    pub regular: bool,
}

/// Clips `|x|` at `max(percentile, floor)` and re-standardizes while the
/// amplitude skewness stays above threshold.
pub fn trim_excursions(x: &[f64], cfg: &TrimConfig) -> TrimOutcome {
    let gamma_entry = amplitude_skewness(x);
    let mut signal = x.to_vec();
    let mut gamma = gamma_entry;
    let mut iterations = 0;
    while gamma > cfg.gamma_threshold && iterations < cfg.max_iterations {
        let abs: Vec<f64> = signal.iter().map(|v| v.abs()).collect();
        let limit = percentile(&abs, cfg.percentile).max(cfg.floor);
        if abs.iter().all(|&a| a <= limit) {
            break;
        }
        for v in &mut signal {
            *v = v.clamp(-limit, limit);
        }
        iterations += 1;
        match zscore(&signal) {
            Some(z) => signal = z,
            None => break,
        }
        gamma = amplitude_skewness(&signal);
    }
    TrimOutcome {
        signal,
        gamma_entry,
        gamma,
        iterations,
        regular: gamma <= cfg.gamma_threshold,
    }
}

/// Biased autocorrelation `r[k] = sum_t x_t x_{t+k}` for `k <= max_lag`,
/// normalized so `r[0] = 1`.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let max_lag = max_lag.min(n.saturating_sub(1));
    let mut r: Vec<f64> = (0..=max_lag)
        .map(|k| x[..n - k].iter().zip(&x[k..]).map(|(a, b)| a * b).sum())
        .collect();
    let r0 = r[0];
    if r0 > 0.0 {
        for v in &mut r {
            *v /= r0;
        }
    }
    r
}

/// Fractional lags where `r` changes sign, linearly interpolated.
pub fn zero_crossings(r: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 0..r.len().saturating_sub(1) {
        let (a, b) = (r[k], r[k + 1]);
        if a == 0.0 {
            if k > 0 && r[k - 1] * b < 0.0 {
                out.push(k as f64);
            }
        } else if a * b < 0.0 {
            out.push(k as f64 + a / (a - b));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeriodicityConfig {
    pub fs: f64,
    pub max_lag_s: f64,
    pub max_sigma_zc: f64,
    pub min_intervals: usize,
    /// Plausible fundamental range in Hz implied by the crossing spacing.
    pub rate_range: [f64; 2],
}

impl Default for PeriodicityConfig {
    fn default() -> Self {
        Self {
            fs: 100.0,
            max_lag_s: 3.0,
            max_sigma_zc: 0.1,
            min_intervals: 4,
            rate_range: [0.5, 3.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Periodicity {
    /// Dispersion of crossing gaps in seconds; `None` with fewer than two
    /// crossings.
    pub sigma_zc: Option<f64>,
    pub intervals: usize,
    /// Twice the mean crossing gap, in seconds.
    pub period_s: Option<f64>,
    pub passed: bool,
}

pub fn periodicity_check(x: &[f64], cfg: &PeriodicityConfig) -> Periodicity {
    let max_lag = (cfg.max_lag_s * cfg.fs).round() as usize;
    let zc = zero_crossings(&autocorrelation(x, max_lag));
    let gaps: Vec<f64> = zc.windows(2).map(|w| w[1] - w[0]).collect();
    if gaps.is_empty() {
        return Periodicity {
            sigma_zc: None,
            intervals: 0,
            period_s: None,
            passed: false,
        };
    }
    let sigma = std_dev(&gaps) / cfg.fs;
    let period = 2.0 * mean(&gaps) / cfg.fs;
    let rate = 1.0 / period;
    let passed = gaps.len() >= cfg.min_intervals
        && sigma <= cfg.max_sigma_zc
        && rate >= cfg.rate_range[0]
        && rate <= cfg.rate_range[1];
    Periodicity {
        sigma_zc: Some(sigma),
        intervals: gaps.len(),
        period_s: Some(period),
        passed,
    }
}

/// Fraction of the energy of `x` left unexplained by a least-squares fit
/// of a constant, a linear trend and `harmonics` harmonics of a period of
/// `period` samples.
pub fn harmonic_residual(x: &[f64], period: f64, harmonics: usize) -> f64 {
    let n = x.len();
    let cols = 2 + 2 * harmonics;
    let w = 2.0 * PI / period;
    let tm = (n as f64 - 1.0) / 2.0;
    let basis = DMatrix::from_fn(n, cols, |t, c| {
        let tt = t as f64;
        match c {
            0 => 1.0,
            1 => (tt - tm) / n as f64,
            _ => {
                let h = ((c - 2) / 2 + 1) as f64;
                if c % 2 == 0 {
                    (h * w * tt).cos()
                } else {
                    (h * w * tt).sin()
                }
            }
        }
    });
    let y = nalgebra::DVector::from_column_slice(x);
    let bt = basis.transpose();
    let total = y.norm_squared();
    if total == 0.0 {
        return 0.0;
    }
    match (&bt * &basis).cholesky() {
        Some(ch) => {
            let coef = ch.solve(&(&bt * &y));
            (y - basis * coef).norm_squared() / total
        }
        None => 1.0,
    }
}

/// Period (in samples) within `guess * [0.85, 1.15]` that best explains
/// `x` as a three-harmonic waveform on a linear baseline: a coarse grid,
/// then golden-section refinement around the best grid point.
pub fn refine_period(x: &[f64], guess: f64) -> Option<f64> {
    if guess < 2.0 || x.len() < 8 {
        return None;
    }
    let (lo, hi) = (0.85 * guess, 1.15 * guess);
    let grid = 60;
    let f = |p: f64| harmonic_residual(x, p, 3);
    let step = (hi - lo) / grid as f64;
    let best = (0..=grid)
        .map(|i| lo + i as f64 * step)
        .min_by(|a, b| f(*a).total_cmp(&f(*b)))?;
    let (mut a, mut b) = ((best - step).max(lo), (best + step).min(hi));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..40 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    Some((a + b) / 2.0)
}

/// Affine min-max map onto `[-1, 1]`; `None` for a constant input.
pub fn normalize_to_unit(x: &[f64]) -> Option<Vec<f64>> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if x.is_empty() || hi <= lo || !(hi - lo).is_finite() {
        return None;
    }
    if lo == -1.0 && hi == 1.0 {
        return Some(x.to_vec());
    }
    Some(x.iter().map(|v| (v - lo) / (hi - lo) * 2.0 - 1.0).collect())
}

/// Second-order section `b0 + b1 z^-1 + b2 z^-2 over 1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        (self.b[0] + z1 * self.b[1] + z2 * self.b[2]) / (self.a[0] + z1 * self.a[1] + z2 * self.a[2])
    }

    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let (a1, a2) = (self.a[1], self.a[2]);
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }
}

/// A cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    /// Digital Butterworth band-pass: analog prototype, low-to-band-pass
    /// transform at prewarped edges, bilinear map. Each section has its
    /// zeros at `z = 1` and `z = -1` and unit gain at the band centre.
    pub fn butterworth_bandpass(low: f64, high: f64, fs: f64, order: usize) -> Result<Sos> {
        if !(low > 0.0 && low < high && high < fs / 2.0) || order == 0 {
            return config_err(format!(
                "band-pass needs 0 < low < high < fs/2 and order >= 1, got [{low}, {high}] at fs={fs}, order {order}"
            ));
        }
        let k = 2.0 * fs;
        let w1 = k * (PI * low / fs).tan();
        let w2 = k * (PI * high / fs).tan();
        let (w0, bw) = ((w1 * w2).sqrt(), w2 - w1);
        let mut poles = Vec::with_capacity(2 * order);
        for i in 1..=order {
            let theta = PI * (2 * i + order - 1) as f64 / (2 * order) as f64;
            let p = Complex64::from_polar(1.0, theta);
            let half = p * bw / 2.0;
            let root = (half * half - w0 * w0).sqrt();
            for s in [half + root, half - root] {
                poles.push((k + s) / (k - s));
            }
        }
        let mut upper: Vec<Complex64> = poles.iter().copied().filter(|z| z.im > 1e-12).collect();
        let mut real: Vec<f64> = poles.iter().filter(|z| z.im.abs() <= 1e-12).map(|z| z.re).collect();
        upper.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
        real.sort_by(f64::total_cmp);
        let mut denominators: Vec<[f64; 3]> = upper.iter().map(|z| [1.0, -2.0 * z.re, z.norm_sqr()]).collect();
        for pair in real.chunks(2) {
            let (p, q) = (pair[0], *pair.get(1).unwrap_or(&0.0));
            denominators.push([1.0, -(p + q), p * q]);
        }
        let omega0 = 2.0 * (w0 / k).atan();
        let sections = denominators
            .into_iter()
            .map(|a| {
                let raw = Biquad { b: [1.0, 0.0, -1.0], a };
                let g = 1.0 / raw.response(omega0).norm();
                Biquad {
                    b: [g, 0.0, -g],
                    a,
                }
            })
            .collect();
        Ok(Sos { sections })
    }

    pub fn response(&self, omega: f64) -> Complex64 {
        self.sections.iter().map(|s| s.response(omega)).product()
    }

    /// Causal filtering (direct form II transposed) from the given states.
    fn run(&self, x: &[f64], zi: &[[f64; 2]]) -> Vec<f64> {
        let mut y = x.to_vec();
        for (s, z0) in self.sections.iter().zip(zi) {
            let [b0, b1, b2] = s.b;
            let [_, a1, a2] = s.a;
            let (mut z1, mut z2) = (z0[0], z0[1]);
            for v in &mut y {
                let input = *v;
                let out = b0 * input + z1;
                z1 = b1 * input - a1 * out + z2;
                z2 = b2 * input - a2 * out;
                *v = out;
            }
        }
        y
    }

    /// Section states in steady state for a unit step.
    fn step_states(&self) -> Vec<[f64; 2]> {
        let mut level = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let dc = (s.b[0] + s.b[1] + s.b[2]) / (s.a[0] + s.a[1] + s.a[2]);
                let y = dc * level;
                let state = [y - s.b[0] * level, s.b[2] * level - s.a[2] * y];
                level = y;
                state
            })
            .collect()
    }

    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        self.run(x, &vec![[0.0; 2]; self.sections.len()])
    }

    /// Zero-phase forward-backward filtering with odd-extension padding
    /// and steady-state initial conditions.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        self.filtfilt_padded(x, 3 * (2 * self.sections.len() + 1))
    }

    /// [`Sos::filtfilt`] with an explicit pad length (capped at `n - 1`).
    pub fn filtfilt_padded(&self, x: &[f64], pad: usize) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = pad.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        let unit = self.step_states();
        let scaled = |v: f64| unit.iter().map(|z| [z[0] * v, z[1] * v]).collect::<Vec<_>>();
        let mut y = self.run(&ext, &scaled(ext[0]));
        y.reverse();
        let mut y = self.run(&y, &scaled(y[0]));
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

pub fn butterworth_bandpass(x: &[f64], low: f64, high: f64, fs: f64, order: usize) -> Result<Vec<f64>> {
    Ok(Sos::butterworth_bandpass(low, high, fs, order)?.filtfilt(x))
}

/// Rows of the local least-squares hat matrix: row `j` evaluates the
/// degree-`order` fit over a window of `window` samples at position `j`.
pub fn savgol_weights(window: usize, order: usize) -> Result<Vec<Vec<f64>>> {
    if window % 2 == 0 || window <= order {
        return config_err(format!("Savitzky-Golay needs an odd window above the order, got {window}/{order}"));
    }
    let h = (window / 2) as f64;
    let v = DMatrix::from_fn(window, order + 1, |i, d| (i as f64 - h).powi(d as i32));
    let vt = v.transpose();
    let gram_inv = (&vt * &v)
        .try_inverse()
        .ok_or_else(|| crate::error::HimaeError::Config("singular Savitzky-Golay system".into()))?;
    let hat = &v * gram_inv * vt;
    Ok((0..window).map(|j| hat.row(j).iter().copied().collect()).collect())
}

/// Local polynomial smoothing; the edges use the fit of the first/last
/// full window.
pub fn savitzky_golay(x: &[f64], window: usize, order: usize) -> Result<Vec<f64>> {
    let rows = savgol_weights(window, order)?;
    let n = x.len();
    if n < window {
        return config_err(format!("signal of {n} samples is shorter than the window {window}"));
    }
    let h = window / 2;
    let dot = |row: &[f64], seg: &[f64]| row.iter().zip(seg).map(|(a, b)| a * b).sum::<f64>();
    Ok((0..n)
        .map(|t| {
            if t < h {
                dot(&rows[t], &x[..window])
            } else if t + h >= n {
                dot(&rows[window - (n - t)], &x[n - window..])
            } else {
                dot(&rows[h], &x[t - h..=t + h])
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(f: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect()
    }

    #[test]
    fn zscore_by_hand() {
        assert_eq!(zscore(&[0.0, 2.0]).unwrap(), vec![-1.0, 1.0]);
        assert!(zscore(&[3.0, 3.0, 3.0]).is_none());
    }

    #[test]
    fn normalize_endpoints() {
        assert_eq!(normalize_to_unit(&[0.0, 5.0, 10.0]).unwrap(), vec![-1.0, 0.0, 1.0]);
        let x = vec![-1.0, 0.3, 1.0];
        assert_eq!(normalize_to_unit(&x).unwrap(), x);
        assert!(normalize_to_unit(&[2.0, 2.0]).is_none());
    }

    #[test]
    fn sinusoid_is_periodic() {
        let p = periodicity_check(&sine(1.2, 100.0, 1000), &PeriodicityConfig::default());
        assert!(p.passed, "{p:?}");
        assert!(p.sigma_zc.unwrap() < 1e-3);
        assert!((p.period_s.unwrap() - 1.0 / 1.2).abs() < 0.01);
    }

    #[test]
    fn poles_inside_unit_circle() {
        for order in 1..=4 {
            let sos = Sos::butterworth_bandpass(0.5, 8.0, 100.0, order).unwrap();
            assert_eq!(sos.sections.len(), order);
            for s in &sos.sections {
                for p in s.poles() {
                    assert!(p.norm() < 1.0);
                }
            }
        }
    }

    #[test]
    fn invalid_band() {
        assert!(Sos::butterworth_bandpass(2.0, 1.0, 100.0, 2).is_err());
        assert!(Sos::butterworth_bandpass(1.0, 60.0, 100.0, 2).is_err());
    }

    #[test]
    fn savgol_center_row() {
        let rows = savgol_weights(5, 2).unwrap();
        let want = [-3.0, 12.0, 17.0, 12.0, -3.0].map(|v| v / 35.0);
        for (a, b) in rows[2].iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
