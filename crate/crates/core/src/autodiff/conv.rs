//! 1D convolution kernels shared by the forward ops and their backward rules.
//!
//! Everything is lowered onto one GEMM per call: the batch is folded into the
//! column dimension of an im2col buffer of shape `(in * k, batch * t_out)`.
//! A transposed convolution is the input-gradient kernel of the matching
//! forward convolution, so it reuses the same two routines.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::error::{HimaeError, Result};
use crate::tensor::{Shape3, Tensor3};

/// Hyperparameters of one 1D convolution or transposed convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Only meaningful for transposed convolutions; must stay below `stride`.
    pub output_padding: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            output_padding: 0,
        }
    }

    pub fn with_output_padding(mut self, output_padding: usize) -> Self {
        self.output_padding = output_padding;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(HimaeError::Config(format!(
                "kernel, stride and channel counts must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// `floor((t_in + 2p - k) / s) + 1`.
    pub fn output_len(&self, t_in: usize) -> Result<usize> {
        self.validate()?;
        let padded = t_in + 2 * self.padding;
        if padded < self.kernel {
            return Err(HimaeError::InputTooShort(format!(
                "length {t_in} with padding {} is shorter than kernel {}",
                self.padding, self.kernel
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    /// `(t_in - 1) * s - 2p + k + op`.
    pub fn transposed_output_len(&self, t_in: usize) -> Result<usize> {
        self.validate()?;
        if self.output_padding >= self.stride {
            return Err(HimaeError::Config(format!(
                "output padding {} must be smaller than stride {}",
                self.output_padding, self.stride
            )));
        }
        if t_in == 0 {
            return Err(HimaeError::InputTooShort("empty input".into()));
        }
        let grown = (t_in - 1) * self.stride + self.kernel + self.output_padding;
        if grown <= 2 * self.padding {
            return Err(HimaeError::InputTooShort(format!(
                "transposed output of length {t_in} vanishes under padding {}",
                self.padding
            )));
        }
        Ok(grown - 2 * self.padding)
    }

    /// Shape of the forward-conv weight, `(out, in, k)`.
    pub fn weight_shape(&self) -> Shape3 {
        Shape3::new(self.out_channels, self.in_channels, self.kernel)
    }

    /// Shape of the transposed-conv weight, `(in, out, k)`.
    pub fn transposed_weight_shape(&self) -> Shape3 {
        Shape3::new(self.in_channels, self.out_channels, self.kernel)
    }

    /// The forward convolution whose input gradient is this transposed conv.
    fn adjoint_view(&self) -> Self {
        Self {
            in_channels: self.out_channels,
            out_channels: self.in_channels,
            ..*self
        }
    }

    pub fn macs(&self, t_out: usize) -> u64 {
        (self.kernel * self.in_channels * self.out_channels * t_out) as u64
    }
}

/// Valid output range `[lo, hi)` for tap `kk`: positions where
/// `t * s + kk - p` lands inside `[0, t_in)`.
#[inline]
fn tap_range(kk: usize, spec: &ConvSpec, t_in: usize, t_out: usize) -> (usize, usize) {
    let s = spec.stride;
    let lo = if spec.padding > kk {
        (spec.padding - kk).div_ceil(s)
    } else {
        0
    };
    let reach = t_in + spec.padding;
    let hi = if reach > kk {
        ((reach - kk - 1) / s + 1).min(t_out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Fills `col` (rows `in * k`, columns `batch * t_out`).
fn im2col(x: &Tensor3, spec: &ConvSpec, t_out: usize, col: &mut [f64]) {
    let Shape3 {
        batch,
        channels,
        time: t_in,
    } = x.shape();
    let width = batch * t_out;
    let s = spec.stride;
    for ci in 0..channels {
        for kk in 0..spec.kernel {
            let row = &mut col[(ci * spec.kernel + kk) * width..(ci * spec.kernel + kk + 1) * width];
            let (lo, hi) = tap_range(kk, spec, t_in, t_out);
            for b in 0..batch {
                let src = x.row(b, ci);
                let dst = &mut row[b * t_out..(b + 1) * t_out];
                dst[..lo].fill(0.0);
                dst[hi..].fill(0.0);
                if hi > lo {
                    let start = lo * s + kk - spec.padding;
                    if s == 1 {
                        dst[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (j, d) in dst[lo..hi].iter_mut().enumerate() {
                            *d = src[start + j * s];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `col` back onto an input-shaped tensor.
fn col2im(col: &[f64], spec: &ConvSpec, t_out: usize, dx: &mut Tensor3) {
    let Shape3 {
        batch,
        channels,
        time: t_in,
    } = dx.shape();
    let width = batch * t_out;
    let s = spec.stride;
    for ci in 0..channels {
        for kk in 0..spec.kernel {
            let row = &col[(ci * spec.kernel + kk) * width..(ci * spec.kernel + kk + 1) * width];
            let (lo, hi) = tap_range(kk, spec, t_in, t_out);
            if hi <= lo {
                continue;
            }
            let start = lo * s + kk - spec.padding;
            for b in 0..batch {
                let src = &row[b * t_out..(b + 1) * t_out];
                let dst = dx.row_mut(b, ci);
                for (j, v) in src[lo..hi].iter().enumerate() {
                    dst[start + j * s] += v;
                }
            }
        }
    }
}

/// `(B, C, T)` to a `(C, B*T)` matrix.
fn to_channel_major(x: &Tensor3) -> Vec<f64> {
    let Shape3 {
        batch,
        channels,
        time,
    } = x.shape();
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            out[c * batch * time + b * time..c * batch * time + (b + 1) * time].copy_from_slice(x.row(b, c));
        }
    }
    out
}

fn from_channel_major(m: &[f64], shape: Shape3) -> Tensor3 {
    let mut out = Tensor3::zeros(shape);
    let Shape3 {
        batch,
        channels,
        time,
    } = shape;
    for b in 0..batch {
        for c in 0..channels {
            out.row_mut(b, c)
                .copy_from_slice(&m[c * batch * time + b * time..c * batch * time + (b + 1) * time]);
        }
    }
    out
}

fn view(data: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("matrix view matches buffer")
}

fn view_mut(data: &mut [f64], rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("matrix view matches buffer")
}

fn check_conv_inputs(x: &Tensor3, w: &Tensor3, bias: Option<&[f64]>, spec: &ConvSpec) -> Result<()> {
    if x.shape().channels != spec.in_channels {
        return Err(HimaeError::Config(format!(
            "input has {} channels, conv expects {}",
            x.shape().channels,
            spec.in_channels
        )));
    }
    if w.shape() != spec.weight_shape() {
        return Err(HimaeError::Config(format!(
            "conv weight is {}, expected {}",
            w.shape(),
            spec.weight_shape()
        )));
    }
    if let Some(b) = bias {
        if b.len() != spec.out_channels {
            return Err(HimaeError::Config(format!(
                "bias has {} entries, expected {}",
                b.len(),
                spec.out_channels
            )));
        }
    }
    Ok(())
}

fn add_bias(y: &mut Tensor3, bias: &[f64]) {
    let Shape3 { batch, channels, .. } = y.shape();
    for b in 0..batch {
        for c in 0..channels {
            let v = bias[c];
            y.row_mut(b, c).iter_mut().for_each(|o| *o += v);
        }
    }
}

/// Cross-correlation with zero padding; weights are `(out, in, k)`.
pub fn conv1d_forward(x: &Tensor3, w: &Tensor3, bias: Option<&[f64]>, spec: &ConvSpec) -> Result<Tensor3> {
    check_conv_inputs(x, w, bias, spec)?;
    let t_out = spec.output_len(x.shape().time)?;
    let batch = x.shape().batch;
    let rows = spec.in_channels * spec.kernel;
    let width = batch * t_out;
    let mut col = vec![0.0; rows * width];
    im2col(x, spec, t_out, &mut col);
    let mut out = vec![0.0; spec.out_channels * width];
    general_mat_mul(
        1.0,
        &view(w.data(), spec.out_channels, rows),
        &view(&col, rows, width),
        0.0,
        &mut view_mut(&mut out, spec.out_channels, width),
    );
    let mut y = from_channel_major(&out, Shape3::new(batch, spec.out_channels, t_out));
    if let Some(b) = bias {
        add_bias(&mut y, b);
    }
    Ok(y)
}

/// Gradient of `conv1d_forward` with respect to its input: the exact linear
/// adjoint of the forward map, producing a tensor of length `t_in`.
pub fn conv1d_input_grad(dy: &Tensor3, w: &Tensor3, spec: &ConvSpec, t_in: usize) -> Result<Tensor3> {
    let Shape3 {
        batch,
        channels,
        time: t_out,
    } = dy.shape();
    if channels != spec.out_channels || w.shape() != spec.weight_shape() {
        return Err(HimaeError::Shape(format!(
            "upstream gradient {} does not match conv {:?}",
            dy.shape(),
            spec
        )));
    }
    if spec.output_len(t_in)? != t_out {
        return Err(HimaeError::Shape(format!(
            "input length {t_in} does not produce output length {t_out}"
        )));
    }
    let rows = spec.in_channels * spec.kernel;
    let width = batch * t_out;
    let dy_m = to_channel_major(dy);
    let mut dcol = vec![0.0; rows * width];
    general_mat_mul(
        1.0,
        &view(w.data(), spec.out_channels, rows).t(),
        &view(&dy_m, spec.out_channels, width),
        0.0,
        &mut view_mut(&mut dcol, rows, width),
    );
    let mut dx = Tensor3::zeros(Shape3::new(batch, spec.in_channels, t_in));
    col2im(&dcol, spec, t_out, &mut dx);
    Ok(dx)
}

/// Gradient of `conv1d_forward` with respect to its `(out, in, k)` weight.
pub fn conv1d_weight_grad(x: &Tensor3, dy: &Tensor3, spec: &ConvSpec) -> Result<Tensor3> {
    let t_out = spec.output_len(x.shape().time)?;
    if dy.shape() != Shape3::new(x.shape().batch, spec.out_channels, t_out) {
        return Err(HimaeError::Shape(format!(
            "upstream gradient {} does not match conv output",
            dy.shape()
        )));
    }
    let batch = x.shape().batch;
    let rows = spec.in_channels * spec.kernel;
    let width = batch * t_out;
    let mut col = vec![0.0; rows * width];
    im2col(x, spec, t_out, &mut col);
    let dy_m = to_channel_major(dy);
    let mut dw = Tensor3::zeros(spec.weight_shape());
    general_mat_mul(
        1.0,
        &view(&dy_m, spec.out_channels, width),
        &view(&col, rows, width).t(),
        0.0,
        &mut view_mut(dw.data_mut(), spec.out_channels, rows),
    );
    Ok(dw)
}

/// Sum of the upstream gradient over batch and time, per channel.
pub fn bias_grad(dy: &Tensor3) -> Vec<f64> {
    let Shape3 { batch, channels, .. } = dy.shape();
    let mut g = vec![0.0; channels];
    for b in 0..batch {
        for (c, gc) in g.iter_mut().enumerate() {
            *gc += dy.row(b, c).iter().sum::<f64>();
        }
    }
    g
}

/// Transposed convolution (scatter-add); weights are `(in, out, k)`.
pub fn conv_transpose1d_forward(x: &Tensor3, w: &Tensor3, bias: Option<&[f64]>, spec: &ConvSpec) -> Result<Tensor3> {
    if x.shape().channels != spec.in_channels {
        return Err(HimaeError::Config(format!(
            "input has {} channels, transposed conv expects {}",
            x.shape().channels,
            spec.in_channels
        )));
    }
    if w.shape() != spec.transposed_weight_shape() {
        return Err(HimaeError::Config(format!(
            "transposed conv weight is {}, expected {}",
            w.shape(),
            spec.transposed_weight_shape()
        )));
    }
    if let Some(b) = bias {
        if b.len() != spec.out_channels {
            return Err(HimaeError::Config(format!(
                "bias has {} entries, expected {}",
                b.len(),
                spec.out_channels
            )));
        }
    }
    let t_out = spec.transposed_output_len(x.shape().time)?;
    let mut y = conv1d_input_grad(x, w, &spec.adjoint_view(), t_out)?;
    if let Some(b) = bias {
        add_bias(&mut y, b);
    }
    Ok(y)
}

/// Input gradient of the transposed convolution: the forward convolution.
pub fn conv_transpose1d_input_grad(dy: &Tensor3, w: &Tensor3, spec: &ConvSpec) -> Result<Tensor3> {
    conv1d_forward(dy, w, None, &spec.adjoint_view())
}

/// Weight gradient of the transposed convolution, shaped `(in, out, k)`.
pub fn conv_transpose1d_weight_grad(x: &Tensor3, dy: &Tensor3, spec: &ConvSpec) -> Result<Tensor3> {
    conv1d_weight_grad(dy, x, &spec.adjoint_view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct loop reference: out[b,o,t] = sum_{i,j} w[o,i,j] x[b,i,t*s+j-p].
    fn naive_conv(x: &Tensor3, w: &Tensor3, spec: &ConvSpec) -> Tensor3 {
        let t_out = spec.output_len(x.shape().time).unwrap();
        let mut y = Tensor3::zeros(Shape3::new(x.shape().batch, spec.out_channels, t_out));
        for b in 0..x.shape().batch {
            for o in 0..spec.out_channels {
                for t in 0..t_out {
                    let mut acc = 0.0;
                    for i in 0..spec.in_channels {
                        for j in 0..spec.kernel {
                            let pos = (t * spec.stride + j) as isize - spec.padding as isize;
                            if pos >= 0 && (pos as usize) < x.shape().time {
                                acc += w.at(o, i, j) * x.at(b, i, pos as usize);
                            }
                        }
                    }
                    y.set(b, o, t, acc);
                }
            }
        }
        y
    }

    fn random(shape: Shape3, rng: &mut ChaCha8Rng) -> Tensor3 {
        Tensor3::from_vec(shape, (0..shape.numel()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let x = Tensor3::from_signal(&[1., 2., 3., 4.]).unwrap();
        let w = Tensor3::from_signal(&[1.]).unwrap();
        let y = conv1d_forward(&x, &w, Some(&[0.0]), &ConvSpec::new(1, 1, 1, 1, 0)).unwrap();
        assert_eq!(y.data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn padded_window_sum() {
        let x = Tensor3::from_signal(&[1., 2., 3.]).unwrap();
        let w = Tensor3::from_signal(&[1., 1., 1.]).unwrap();
        let y = conv1d_forward(&x, &w, Some(&[0.0]), &ConvSpec::new(1, 1, 3, 1, 1)).unwrap();
        assert_eq!(y.data(), &[3., 6., 5.]);
    }

    #[test]
    fn output_length_formulas() {
        assert_eq!(ConvSpec::new(1, 16, 5, 2, 2).output_len(1000).unwrap(), 500);
        let up = ConvSpec::new(256, 128, 5, 2, 2).with_output_padding(1);
        assert_eq!(up.transposed_output_len(32).unwrap(), 64);
        assert!(matches!(
            ConvSpec::new(1, 1, 5, 1, 0).output_len(3),
            Err(HimaeError::InputTooShort(_))
        ));
        assert!(matches!(
            ConvSpec::new(1, 1, 5, 2, 2).with_output_padding(2).transposed_output_len(4),
            Err(HimaeError::Config(_))
        ));
    }

    #[test]
    fn single_tap_scatter() {
        let x = Tensor3::from_signal(&[1.]).unwrap();
        let w = Tensor3::from_signal(&[1., 1., 1.]).unwrap();
        let y = conv_transpose1d_forward(&x, &w, Some(&[0.0]), &ConvSpec::new(1, 1, 3, 1, 0)).unwrap();
        assert_eq!(y.data(), &[1., 1., 1.]);
    }

    #[test]
    fn gemm_path_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, s, p, t) in &[(5, 2, 2, 17), (5, 1, 2, 9), (1, 2, 0, 8), (3, 3, 0, 11), (4, 2, 2, 10)] {
            let spec = ConvSpec::new(3, 4, k, s, p);
            let x = random(Shape3::new(2, 3, t), &mut rng);
            let w = random(spec.weight_shape(), &mut rng);
            let fast = conv1d_forward(&x, &w, None, &spec).unwrap();
            let slow = naive_conv(&x, &w, &spec);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_is_adjoint_of_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(k, s, p, op, t) in &[(5, 2, 2, 1, 7), (3, 1, 1, 0, 6), (4, 3, 1, 2, 5)] {
            let spec = ConvSpec::new(3, 2, k, s, p).with_output_padding(op);
            // transposed conv in->out uses the (in, out, k) weight, i.e. the
            // forward conv out->in weight.
            let w = random(spec.transposed_weight_shape(), &mut rng);
            let t_long = spec.transposed_output_len(t).unwrap();
            let x = random(Shape3::new(2, 2, t_long), &mut rng);
            let y = random(Shape3::new(2, 3, t), &mut rng);
            let fwd_spec = ConvSpec::new(2, 3, k, s, p);
            let cx = conv1d_forward(&x, &w, None, &fwd_spec).unwrap();
            let ty = conv_transpose1d_forward(&y, &w, None, &spec).unwrap();
            let lhs = cx.dot(&y).unwrap();
            let rhs = x.dot(&ty).unwrap();
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }
}
