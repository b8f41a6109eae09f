use serde::{Deserialize, Serialize};

use crate::error::{HimaeError, Result};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global-norm clipping threshold; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 1e-3,
            grad_clip: Some(1.0),
        }
    }
}

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub m: Vec<Tensor3>,
    pub v: Vec<Tensor3>,
    pub t: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

impl AdamW {
    pub fn new(config: AdamWConfig, shapes: impl IntoIterator<Item = crate::tensor::Shape3>) -> Self {
        let m: Vec<Tensor3> = shapes.into_iter().map(Tensor3::zeros).collect();
        Self {
            config,
            v: m.clone(),
            m,
            t: 0,
        }
    }

    /// One update at learning rate `lr`. Parameters and gradients pair up
    /// by position. A non-finite gradient aborts before anything changes;
    /// the error names the parameter by position.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor3>,
        grads: &[Tensor3],
        lr: f64,
    ) -> Result<StepInfo> {
        if grads.len() != self.m.len() {
            return Err(HimaeError::Shape(format!(
                "{} gradients for {} optimizer slots",
                grads.len(),
                self.m.len()
            )));
        }
        let mut sq = 0.0;
        for (i, g) in grads.iter().enumerate() {
            g.expect_shape(self.m[i].shape())?;
            if let Some(j) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(HimaeError::NonFiniteGradient {
                    name: format!("#{i}"),
                    index: j,
                });
            }
            sq += g.data().iter().map(|v| v * v).sum::<f64>();
        }
        let grad_norm = sq.sqrt();
        let scale = match self.config.grad_clip {
            Some(c) if grad_norm > c => c / grad_norm,
            _ => 1.0,
        };
        let c = self.config;
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let decay = 1.0 - lr * c.weight_decay;
        let mut count = 0;
        for (i, p) in params.into_iter().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = grads[i].data();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g[j] * scale;
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w = *w * decay - lr * m_hat / (v_hat.sqrt() + c.eps);
            }
            count += 1;
        }
        if count != grads.len() {
            return Err(HimaeError::Shape(format!("{count} parameters for {} gradients", grads.len())));
        }
        Ok(StepInfo {
            grad_norm,
            clipped: scale < 1.0,
        })
    }
}

/// Linear warmup to `base_lr` over the first `warmup_steps`, then a half
/// cosine down to zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub base_lr: f64,
}

impl Schedule {
    pub fn new(total_steps: u64, warmup_fraction: f64, base_lr: f64) -> Self {
        let warmup = ((warmup_fraction * total_steps as f64).round() as u64).clamp(1, total_steps.max(1));
        Self {
            total_steps,
            warmup_steps: warmup,
            base_lr,
        }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let (s, w) = (self.total_steps, self.warmup_steps);
        if step <= w {
            return self.base_lr * step as f64 / w as f64;
        }
        if step >= s {
            return 0.0;
        }
        let progress = (step - w) as f64 / (s - w) as f64;
        self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    /// Rate used by optimization step `i` (0-based): the first update
    /// already moves at `base / warmup`.
    pub fn lr_for_update(&self, i: u64) -> f64 {
        self.lr_at(i + 1)
    }
}
