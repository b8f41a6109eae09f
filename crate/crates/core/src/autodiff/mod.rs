//! Reverse-mode automatic differentiation over [`Tensor3`] values.
//!
//! A [`Tape`] records every forward op in execution order, so node indices
//! are already a topological order and backward is a single reverse sweep.
//! Each node keeps its output value plus whatever forward context its
//! backward rule needs (normalized activations for batch norm, masks for the
//! loss).

pub mod conv;

use serde::{Deserialize, Serialize};

pub use conv::ConvSpec;

use crate::error::{HimaeError, Result};
use crate::tensor::{Shape3, Tensor3};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchNormConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Running per-channel statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormStats {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor3,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Gelu(Var),
    Tanh(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Concat(Var, Var),
    CropTime(Var),
    MaskedMse {
        pred: Var,
        target: Tensor3,
        mask: Tensor3,
        denom: f64,
    },
    Sum(Var),
}

/// Public view of a recorded operation, for cost accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Conv1d(ConvSpec),
    ConvTranspose1d(ConvSpec),
    BatchNorm,
    Gelu,
    Tanh,
    Add,
    Mul,
    Concat,
    CropTime,
    MaskedMse,
    Sum,
}

#[derive(Debug)]
struct Node {
    value: Tensor3,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Exact GELU, `x * Phi(x)`.
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

fn gelu_grad(x: f64) -> f64 {
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    normal_cdf(x) + x * pdf
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor3, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Every recorded node's kind and output shape, in recording order.
    pub fn ops(&self) -> impl Iterator<Item = (OpKind, Shape3)> + '_ {
        self.nodes.iter().map(|n| {
            let kind = match &n.op {
                Op::Leaf => OpKind::Leaf,
                Op::Conv1d { spec, .. } => OpKind::Conv1d(*spec),
                Op::ConvTranspose1d { spec, .. } => OpKind::ConvTranspose1d(*spec),
                Op::BatchNorm { .. } => OpKind::BatchNorm,
                Op::Gelu(_) => OpKind::Gelu,
                Op::Tanh(_) => OpKind::Tanh,
                Op::Add(..) => OpKind::Add,
                Op::Mul(..) => OpKind::Mul,
                Op::Concat(..) => OpKind::Concat,
                Op::CropTime(_) => OpKind::CropTime,
                Op::MaskedMse { .. } => OpKind::MaskedMse,
                Op::Sum(_) => OpKind::Sum,
            };
            (kind, n.value.shape())
        })
    }

    pub fn leaf(&mut self, value: Tensor3) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor3 {
        &self.nodes[v.0].value
    }

    fn channel_vector(&self, v: Var, channels: usize, what: &str) -> Result<&[f64]> {
        let t = self.value(v);
        if t.len() != channels {
            return Err(HimaeError::Config(format!(
                "{what} has {} entries, expected {channels}",
                t.len()
            )));
        }
        Ok(t.data())
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let bias = match b {
            Some(b) => Some(self.channel_vector(b, spec.out_channels, "bias")?),
            None => None,
        };
        let y = conv::conv1d_forward(self.value(x), self.value(w), bias, &spec)?;
        Ok(self.push(y, Op::Conv1d { x, w, b, spec }))
    }

    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let bias = match b {
            Some(b) => Some(self.channel_vector(b, spec.out_channels, "bias")?),
            None => None,
        };
        let y = conv::conv_transpose1d_forward(self.value(x), self.value(w), bias, &spec)?;
        Ok(self.push(y, Op::ConvTranspose1d { x, w, b, spec }))
    }

    /// Per-channel normalization over batch and time. In train mode the
    /// batch statistics normalize and `stats` is updated (unbiased variance,
    /// exponential averaging); in eval mode only `stats` is read.
    pub fn batch_norm1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats,
        mode: Mode,
        cfg: BatchNormConfig,
    ) -> Result<Var> {
        let shape = self.value(x).shape();
        let channels = shape.channels;
        if stats.channels() != channels {
            return Err(HimaeError::Config(format!(
                "batch norm tracks {} channels, input has {channels}",
                stats.channels()
            )));
        }
        let g = self.channel_vector(gamma, channels, "gamma")?.to_vec();
        let be = self.channel_vector(beta, channels, "beta")?.to_vec();
        let xv = self.value(x);
        let n = shape.batch * shape.time;
        let (mean, inv_std) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(HimaeError::DegenerateBatch(n));
                }
                let mut mean = vec![0.0; channels];
                let mut var = vec![0.0; channels];
                for c in 0..channels {
                    let mut s = 0.0;
                    for b in 0..shape.batch {
                        s += xv.row(b, c).iter().sum::<f64>();
                    }
                    let m = s / n as f64;
                    let mut ss = 0.0;
                    for b in 0..shape.batch {
                        ss += xv.row(b, c).iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                    }
                    mean[c] = m;
                    var[c] = ss / n as f64;
                }
                let unbias = n as f64 / (n - 1) as f64;
                for c in 0..channels {
                    stats.running_mean[c] = (1.0 - cfg.momentum) * stats.running_mean[c] + cfg.momentum * mean[c];
                    stats.running_var[c] =
                        (1.0 - cfg.momentum) * stats.running_var[c] + cfg.momentum * var[c] * unbias;
                }
                let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + cfg.eps).sqrt()).collect();
                (mean, inv)
            }
            Mode::Eval => (
                stats.running_mean.clone(),
                stats.running_var.iter().map(|v| 1.0 / (v + cfg.eps).sqrt()).collect(),
            ),
        };
        let mut xhat = Tensor3::zeros(shape);
        let mut y = Tensor3::zeros(shape);
        for b in 0..shape.batch {
            for c in 0..channels {
                let src = xv.row(b, c);
                let (m, is) = (mean[c], inv_std[c]);
                for (t, &v) in src.iter().enumerate() {
                    let h = (v - m) * is;
                    let i = xhat.index(b, c, t);
                    xhat.data_mut()[i] = h;
                    y.data_mut()[i] = g[c] * h + be[c];
                }
            }
        }
        Ok(self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: mode == Mode::Train,
            },
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(gelu);
        self.push(y, Op::Gelu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(f64::tanh);
        self.push(y, Op::Tanh(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| p * q)?;
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = Tensor3::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Concat(a, b)))
    }

    /// Keeps the leading `len` samples; a no-op (no node) when already `len`.
    pub fn crop_time(&mut self, x: Var, len: usize) -> Result<Var> {
        if self.value(x).shape().time == len {
            return Ok(x);
        }
        let y = self.value(x).crop_time(len)?;
        Ok(self.push(y, Op::CropTime(x)))
    }

    /// Squared error summed over samples whose `mask` entry is 1, divided
    /// by `channels * sum(mask)`. `mask` is `(batch, 1, time)`.
    pub fn masked_mse(&mut self, pred: Var, target: &Tensor3, mask: &Tensor3) -> Result<Var> {
        let p = self.value(pred);
        p.expect_shape(target.shape())?;
        let s = p.shape();
        mask.expect_shape(Shape3::new(s.batch, 1, s.time))?;
        let masked: f64 = mask.sum();
        if masked <= 0.0 {
            return Err(HimaeError::EmptyMask);
        }
        let denom = masked * s.channels as f64;
        let mut total = 0.0;
        for b in 0..s.batch {
            let m = mask.row(b, 0);
            for c in 0..s.channels {
                for ((&pv, &tv), &mv) in p.row(b, c).iter().zip(target.row(b, c)).zip(m) {
                    let d = (pv - tv) * mv;
                    total += d * d;
                }
            }
        }
        Ok(self.push(
            Tensor3::scalar(total / denom),
            Op::MaskedMse {
                pred,
                target: target.clone(),
                mask: mask.clone(),
                denom,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor3::scalar(self.value(x).sum());
        self.push(y, Op::Sum(x))
    }

    /// Propagates d(root)/d(node) back to every node. Only leaf gradients
    /// are kept in the result; interior ones are released as the sweep
    /// passes them.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(HimaeError::Contract(format!(
                "backward needs a scalar root, got shape {}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor3>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor3::scalar(1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor3, grads: &mut [Option<Tensor3>]) -> Result<()> {
        let mut acc = |v: Var, delta: Tensor3| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, spec } => {
                let xv = self.value(*x);
                acc(*x, conv::conv1d_input_grad(g, self.value(*w), spec, xv.shape().time)?);
                acc(*w, conv::conv1d_weight_grad(xv, g, spec)?);
                if let Some(b) = b {
                    let shape = self.value(*b).shape();
                    acc(*b, Tensor3::from_vec(shape, conv::bias_grad(g))?);
                }
            }
            Op::ConvTranspose1d { x, w, b, spec } => {
                acc(*x, conv::conv_transpose1d_input_grad(g, self.value(*w), spec)?);
                acc(*w, conv::conv_transpose1d_weight_grad(self.value(*x), g, spec)?);
                if let Some(b) = b {
                    let shape = self.value(*b).shape();
                    acc(*b, Tensor3::from_vec(shape, conv::bias_grad(g))?);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let s = g.shape();
                let gv = self.value(*gamma).data();
                let n = (s.batch * s.time) as f64;
                let mut dgamma = vec![0.0; s.channels];
                let mut dbeta = vec![0.0; s.channels];
                for b in 0..s.batch {
                    for c in 0..s.channels {
                        for (&gy, &h) in g.row(b, c).iter().zip(xhat.row(b, c)) {
                            dgamma[c] += gy * h;
                            dbeta[c] += gy;
                        }
                    }
                }
                let mut dx = Tensor3::zeros(s);
                for b in 0..s.batch {
                    for c in 0..s.channels {
                        let scale = gv[c] * inv_std[c];
                        let out = dx.row_mut(b, c);
                        if *batch_stats {
                            let (mean_g, mean_gh) = (dbeta[c] / n, dgamma[c] / n);
                            for ((o, &gy), &h) in out.iter_mut().zip(g.row(b, c)).zip(xhat.row(b, c)) {
                                *o = scale * (gy - mean_g - h * mean_gh);
                            }
                        } else {
                            for (o, &gy) in out.iter_mut().zip(g.row(b, c)) {
                                *o = scale * gy;
                            }
                        }
                    }
                }
                acc(*x, dx);
                let gshape = self.value(*gamma).shape();
                acc(*gamma, Tensor3::from_vec(gshape, dgamma)?);
                let bshape = self.value(*beta).shape();
                acc(*beta, Tensor3::from_vec(bshape, dbeta)?);
            }
            Op::Gelu(x) => {
                acc(*x, self.value(*x).zip_map(g, |v, gy| gy * gelu_grad(v))?);
            }
            Op::Tanh(x) => {
                acc(*x, node.value.zip_map(g, |y, gy| gy * (1.0 - y * y))?);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Mul(a, b) => {
                acc(*a, self.value(*b).zip_map(g, |q, gy| q * gy)?);
                acc(*b, self.value(*a).zip_map(g, |p, gy| p * gy)?);
            }
            Op::Concat(a, b) => {
                let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                let mut ga = Tensor3::zeros(sa);
                let mut gb = Tensor3::zeros(sb);
                let (na, nb) = (sa.channels * sa.time, sb.channels * sb.time);
                for i in 0..sa.batch {
                    let src = g.item(i);
                    ga.data_mut()[i * na..(i + 1) * na].copy_from_slice(&src[..na]);
                    gb.data_mut()[i * nb..(i + 1) * nb].copy_from_slice(&src[na..]);
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::CropTime(x) => {
                let s = self.value(*x).shape();
                let mut gx = Tensor3::zeros(s);
                let len = g.shape().time;
                for b in 0..s.batch {
                    for c in 0..s.channels {
                        gx.row_mut(b, c)[..len].copy_from_slice(g.row(b, c));
                    }
                }
                acc(*x, gx);
            }
            Op::MaskedMse {
                pred,
                target,
                mask,
                denom,
            } => {
                let up = g.data()[0];
                let p = self.value(*pred);
                let s = p.shape();
                let mut gp = Tensor3::zeros(s);
                let k = 2.0 * up / denom;
                for b in 0..s.batch {
                    let m = mask.row(b, 0);
                    for c in 0..s.channels {
                        let (pr, tr) = (p.row(b, c), target.row(b, c));
                        for (t, o) in gp.row_mut(b, c).iter_mut().enumerate() {
                            if m[t] != 0.0 {
                                *o = k * m[t] * (pr[t] - tr[t]);
                            }
                        }
                    }
                }
                acc(*pred, gp);
            }
            Op::Sum(x) => {
                let s = self.value(*x).shape();
                acc(*x, Tensor3::full(s, g.data()[0]));
            }
        }
        Ok(())
    }
}

/// Leaf gradients from one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor3>>,
    shapes: Vec<Shape3>,
}

impl Gradients {
    /// Gradient for `v`, or zeros of the right shape when `v` did not
    /// influence the root.
    pub fn get(&self, v: Var) -> Tensor3 {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor3::zeros(self.shapes[v.0]))
    }

    pub fn take(&mut self, v: Var) -> Tensor3 {
        self.grads[v.0].take().unwrap_or_else(|| Tensor3::zeros(self.shapes[v.0]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_and_tanh_fixed_points() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor3::scalar(0.0));
        let g = tape.gelu(x);
        let t = tape.tanh(x);
        assert_eq!(tape.value(g).data()[0], 0.0);
        assert_eq!(tape.value(t).data()[0], 0.0);
    }

    #[test]
    fn linear_map_gradient_is_input() {
        let mut tape = Tape::new();
        let xs = Tensor3::from_signal(&[1.5, -2.0, 0.25]).unwrap();
        let w = tape.leaf(Tensor3::from_signal(&[0.3, 0.1, -0.7]).unwrap());
        let x = tape.leaf(xs.clone());
        let p = tape.mul(w, x).unwrap();
        let loss = tape.sum(p);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w), xs);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor3::from_signal(&[1.0, 2.0]).unwrap());
        assert!(matches!(tape.backward(x), Err(HimaeError::Contract(_))));
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor3::from_signal(&[1.0, 2.0]).unwrap());
        let unused = tape.leaf(Tensor3::from_signal(&[3.0]).unwrap());
        let s = tape.sum(a);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(unused).data(), &[0.0]);
    }

    fn bn_leaves(tape: &mut Tape, x: &[f64], gamma: f64, beta: f64) -> (Var, Var, Var) {
        let x = tape.leaf(Tensor3::from_signal(x).unwrap());
        let g = tape.leaf(Tensor3::from_vec(Shape3::new(1, 1, 1), vec![gamma]).unwrap());
        let b = tape.leaf(Tensor3::from_vec(Shape3::new(1, 1, 1), vec![beta]).unwrap());
        (x, g, b)
    }

    #[test]
    fn batch_norm_standardizes_two_points() {
        let mut tape = Tape::new();
        let (x, g, b) = bn_leaves(&mut tape, &[1.0, 3.0], 1.0, 0.0);
        let mut stats = BatchNormStats::new(1);
        let cfg = BatchNormConfig {
            eps: 1e-14,
            momentum: 0.1,
        };
        let y = tape.batch_norm1d(x, g, b, &mut stats, Mode::Train, cfg).unwrap();
        let out = tape.value(y).data();
        assert!((out[0] + 1.0).abs() < 1e-9 && (out[1] - 1.0).abs() < 1e-9);
        // running mean moves 10% toward 2, running var toward unbiased 2.
        assert!((stats.running_mean[0] - 0.2).abs() < 1e-12);
        assert!((stats.running_var[0] - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_constant_channel_is_zero() {
        let mut tape = Tape::new();
        let (x, g, b) = bn_leaves(&mut tape, &[4.0, 4.0, 4.0], 1.0, 0.0);
        let mut stats = BatchNormStats::new(1);
        let y = tape
            .batch_norm1d(x, g, b, &mut stats, Mode::Train, BatchNormConfig::default())
            .unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_norm_eval_is_affine_in_running_stats() {
        let mut tape = Tape::new();
        let (x, g, b) = bn_leaves(&mut tape, &[0.5], 2.0, 1.0);
        let mut stats = BatchNormStats::new(1);
        let cfg = BatchNormConfig {
            eps: 0.0,
            momentum: 0.1,
        };
        let y = tape.batch_norm1d(x, g, b, &mut stats, Mode::Eval, cfg).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0]);
        assert_eq!(stats, BatchNormStats::new(1));
    }

    #[test]
    fn batch_norm_rejects_single_sample_in_training() {
        let mut tape = Tape::new();
        let (x, g, b) = bn_leaves(&mut tape, &[1.0], 1.0, 0.0);
        let mut stats = BatchNormStats::new(1);
        let r = tape.batch_norm1d(x, g, b, &mut stats, Mode::Train, BatchNormConfig::default());
        assert!(matches!(r, Err(HimaeError::DegenerateBatch(1))));
    }

    #[test]
    fn masked_mse_ignores_observed_positions() {
        let target = Tensor3::zeros(Shape3::new(1, 1, 4));
        let mask = Tensor3::from_signal(&[0.0, 1.0, 1.0, 0.0]).unwrap();
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor3::from_signal(&[9.0, 2.0, 2.0, -9.0]).unwrap());
        let l = tape.masked_mse(p, &target, &mask).unwrap();
        assert_eq!(tape.value(l).data()[0], 4.0);
        let g = tape.backward(l).unwrap().get(p);
        assert_eq!(g.data()[0], 0.0);
        assert_eq!(g.data()[3], 0.0);
        assert_eq!(g.data()[1], 2.0);
        let empty = Tensor3::zeros(Shape3::new(1, 1, 4));
        assert!(matches!(tape.masked_mse(p, &target, &empty), Err(HimaeError::EmptyMask)));
    }
}
