//! Linear logistic probes on frozen features.
//!
//! Gradient descent on the L2-regularized logistic loss. When the feature
//! dimension exceeds the sample count the iterates are tracked in the span
//! of the training rows (`w = Xᵀa`), which is the same trajectory at
//! `O(n²)` per step instead of `O(nd)`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::auroc::auroc;
use crate::error::{config_err, HimaeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub l2: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            max_iters: 5000,
            tol: 1e-6,
            standardize: true,
        }
    }
}

/// Per-column affine map fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    /// Zero-variance columns are only centred.
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let mut scale = Array1::ones(x.ncols());
        for (j, col) in x.axis_iter(Axis(1)).enumerate() {
            let var = col.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n;
            if var > 1e-24 {
                scale[j] = var.sqrt();
            }
        }
        Self { mean, scale }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: Array1::zeros(dim),
            scale: Array1::ones(dim),
        }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.scale
    }
}

/// Fitted probe: `score = w·standardize(x) + b`.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    pub weights: Array1<f64>,
    pub bias: f64,
    pub standardizer: Standardizer,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

impl LinearProbe {
    pub fn scores(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.weights.len() {
            return Err(HimaeError::Shape(format!(
                "probe expects {} features, got {}",
                self.weights.len(),
                x.ncols()
            )));
        }
        let z = self.standardizer.apply(x);
        Ok((z.dot(&self.weights) + self.bias).to_vec())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Largest eigenvalue of a symmetric PSD matrix.
fn top_eigenvalue(k: &Array2<f64>) -> f64 {
    let n = k.nrows();
    let mut v = Array1::from_iter((0..n).map(|i| 1.0 + (i % 7) as f64 * 0.1));
    let mut lambda = 0.0;
    for _ in 0..200 {
        let w = k.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w) / v.dot(&v);
        v = w / norm;
        if (next - lambda).abs() <= 1e-10 * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Fits a binary logistic probe on `x` (rows are samples).
pub fn fit_probe(x: ArrayView2<f64>, labels: &[bool], cfg: &ProbeConfig) -> Result<LinearProbe> {
    let (n, d) = x.dim();
    if n != labels.len() {
        return Err(HimaeError::Shape(format!("{n} rows for {} labels", labels.len())));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == n {
        return Err(HimaeError::UndefinedAuroc("training split holds a single class".into()));
    }
    if !(cfg.l2 >= 0.0) || cfg.max_iters == 0 {
        return config_err("probe needs l2 >= 0 and max_iters >= 1");
    }
    let standardizer = if cfg.standardize {
        Standardizer::fit(x)
    } else {
        Standardizer::identity(d)
    };
    let z = standardizer.apply(x);
    let y = Array1::from_iter(labels.iter().map(|&l| if l { 1.0 } else { 0.0 }));
    let nf = n as f64;
    let lam = cfg.l2;

    // Gram form: the bias is an unregularized constant feature.
    let gram = d > n;
    let k = if gram { z.dot(&z.t()) } else { z.t().dot(&z) };
    let mut aug = k.clone();
    if gram {
        aug += 1.0;
    }
    // Lipschitz constant of the gradient: λmax(XᵀX)/(4n) + λ, with the
    // constant column included.
    let lip = if gram {
        top_eigenvalue(&aug)
    } else {
        let mut full = Array2::zeros((d + 1, d + 1));
        full.slice_mut(ndarray::s![..d, ..d]).assign(&k);
        let colsum = z.sum_axis(Axis(0));
        full.slice_mut(ndarray::s![..d, d]).assign(&colsum);
        full.slice_mut(ndarray::s![d, ..d]).assign(&colsum);
        full[[d, d]] = nf;
        top_eigenvalue(&full)
    } / (4.0 * nf)
        + lam;
    let eta = 1.0 / lip;

    let mut bias = 0.0;
    let mut iterations = 0;
    let mut grad_norm;
    let weights;
    if gram {
        let mut a = Array1::<f64>::zeros(n);
        let mut margin = Array1::<f64>::zeros(n);
        loop {
            let r = Array1::from_iter(margin.iter().zip(&y).map(|(&m, &t)| (sigmoid(m + bias) - t) / nf));
            let ga = &r + &(lam * &a);
            let gb = r.sum();
            // ‖Xᵀg_a‖² = g_aᵀ K g_a.
            grad_norm = (ga.dot(&k.dot(&ga)) + gb * gb).max(0.0).sqrt();
            if grad_norm < cfg.tol || iterations == cfg.max_iters {
                break;
            }
            a = a - eta * &ga;
            bias -= eta * gb;
            margin = k.dot(&a);
            iterations += 1;
        }
        weights = z.t().dot(&a);
    } else {
        let mut w = Array1::<f64>::zeros(d);
        loop {
            let m = z.dot(&w);
            let r = Array1::from_iter(m.iter().zip(&y).map(|(&m, &t)| (sigmoid(m + bias) - t) / nf));
            let gw = z.t().dot(&r) + lam * &w;
            let gb = r.sum();
            grad_norm = (gw.dot(&gw) + gb * gb).sqrt();
            if grad_norm < cfg.tol || iterations == cfg.max_iters {
                break;
            }
            w = w - eta * &gw;
            bias -= eta * gb;
            iterations += 1;
        }
        weights = w;
    }
    Ok(LinearProbe {
        weights,
        bias,
        standardizer,
        iterations,
        grad_norm,
        converged: grad_norm < cfg.tol,
    })
}

/// Test AUROC of a probe fitted on the train rows.
#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub probe: LinearProbe,
    pub test_scores: Vec<f64>,
    pub auroc: f64,
}

pub fn train_and_score(
    x_train: ArrayView2<f64>,
    y_train: &[bool],
    x_test: ArrayView2<f64>,
    y_test: &[bool],
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    let probe = fit_probe(x_train, y_train, cfg)?;
    let test_scores = probe.scores(x_test)?;
    let auroc = auroc(&test_scores, y_test)?;
    Ok(ProbeResult {
        probe,
        test_scores,
        auroc,
    })
}

/// One-vs-rest probes for `classes` labels; returns macro AUROC.
pub fn train_and_score_multiclass(
    x_train: ArrayView2<f64>,
    y_train: &[usize],
    x_test: ArrayView2<f64>,
    y_test: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
) -> Result<f64> {
    let mut scores = vec![vec![0.0; classes]; y_test.len()];
    for c in 0..classes {
        let yt: Vec<bool> = y_train.iter().map(|&y| y == c).collect();
        let probe = fit_probe(x_train, &yt, cfg)?;
        for (row, s) in scores.iter_mut().zip(probe.scores(x_test)?) {
            row[c] = s;
        }
    }
    super::auroc::macro_auroc(&scores, y_test, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_toy_has_auroc_one() {
        let x = Array2::from_shape_fn((40, 3), |(i, j)| if j == 0 { i as f64 - 19.5 } else { ((i * 7 + j) % 5) as f64 });
        let y: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let r = train_and_score(x.view(), &y, x.view(), &y, &ProbeConfig::default()).unwrap();
        assert_eq!(r.auroc, 1.0);
    }

    #[test]
    fn gram_and_primal_agree() {
        // d > n takes the Gram path; padding with zero columns keeps the
        // optimum but forces it.
        let n = 12;
        let x = Array2::from_shape_fn((n, 3), |(i, j)| ((i * 31 + j * 17) % 11) as f64 / 3.0 - 1.5);
        let y: Vec<bool> = (0..n).map(|i| (i * 5) % 3 == 0).collect();
        let cfg = ProbeConfig {
            standardize: false,
            max_iters: 20000,
            l2: 1e-2,
            ..Default::default()
        };
        let p = fit_probe(x.view(), &y, &cfg).unwrap();
        let mut wide = Array2::zeros((n, 20));
        wide.slice_mut(ndarray::s![.., ..3]).assign(&x);
        let q = fit_probe(wide.view(), &y, &cfg).unwrap();
        for j in 0..3 {
            assert!((p.weights[j] - q.weights[j]).abs() < 1e-5, "{} {}", p.weights[j], q.weights[j]);
        }
        assert!((p.bias - q.bias).abs() < 1e-5);
    }

    #[test]
    fn single_class_training_fails() {
        let x = Array2::zeros((4, 2));
        assert!(matches!(
            fit_probe(x.view(), &[true; 4], &ProbeConfig::default()),
            Err(HimaeError::UndefinedAuroc(_))
        ));
    }
}
