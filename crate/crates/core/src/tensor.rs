//! Dense rank-3 tensors laid out as `(batch, channels, time)` in row-major
//! order. Convolution weights reuse the same container as
//! `(out_channels, in_channels, kernel)`.

use serde::{Deserialize, Serialize};

use crate::error::{HimaeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape3 {
    pub batch: usize,
    pub channels: usize,
    pub time: usize,
}

impl Shape3 {
    pub const fn new(batch: usize, channels: usize, time: usize) -> Self {
        Self {
            batch,
            channels,
            time,
        }
    }

    pub const fn numel(&self) -> usize {
        self.batch * self.channels * self.time
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.batch, self.channels, self.time]
    }
}

impl std::fmt::Display for Shape3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.batch, self.channels, self.time)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    data: Vec<f64>,
    shape: Shape3,
}

impl Tensor3 {
    pub fn zeros(shape: Shape3) -> Self {
        Self {
            data: vec![0.0; shape.numel()],
            shape,
        }
    }

    pub fn full(shape: Shape3, value: f64) -> Self {
        Self {
            data: vec![value; shape.numel()],
            shape,
        }
    }

    pub fn from_vec(shape: Shape3, data: Vec<f64>) -> Result<Self> {
        if shape.batch == 0 || shape.channels == 0 || shape.time == 0 {
            return Err(HimaeError::Shape(format!(
                "every dimension must be positive, got {shape}"
            )));
        }
        if data.len() != shape.numel() {
            return Err(HimaeError::Shape(format!(
                "{} values cannot fill shape {shape}",
                data.len()
            )));
        }
        Ok(Self { data, shape })
    }

    /// A `(1, 1, n)` tensor holding a single sequence.
    pub fn from_signal(values: &[f64]) -> Result<Self> {
        Self::from_vec(Shape3::new(1, 1, values.len()), values.to_vec())
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            data: vec![value],
            shape: Shape3::new(1, 1, 1),
        }
    }

    /// Stacks single-channel windows of equal length into `(n, 1, len)`.
    pub fn stack_windows<S: AsRef<[f64]>>(windows: &[S]) -> Result<Self> {
        let first = windows
            .first()
            .ok_or_else(|| HimaeError::Shape("cannot stack zero windows".into()))?;
        let len = first.as_ref().len();
        let mut data = Vec::with_capacity(windows.len() * len);
        for w in windows {
            let w = w.as_ref();
            if w.len() != len {
                return Err(HimaeError::Shape(format!(
                    "window lengths differ: {} vs {len}",
                    w.len()
                )));
            }
            data.extend_from_slice(w);
        }
        Self::from_vec(Shape3::new(windows.len(), 1, len), data)
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, t: usize) -> usize {
        (b * self.shape.channels + c) * self.shape.time + t
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, t: usize) -> f64 {
        self.data[self.index(b, c, t)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, t: usize, value: f64) {
        let i = self.index(b, c, t);
        self.data[i] = value;
    }

    /// Contiguous time series for one `(batch, channel)` pair.
    pub fn row(&self, b: usize, c: usize) -> &[f64] {
        let start = self.index(b, c, 0);
        &self.data[start..start + self.shape.time]
    }

    pub fn row_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let start = self.index(b, c, 0);
        let t = self.shape.time;
        &mut self.data[start..start + t]
    }

    /// All channels of one batch element, `channels * time` values.
    pub fn item(&self, b: usize) -> &[f64] {
        let n = self.shape.channels * self.shape.time;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            shape: self.shape,
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_shape(other.shape)?;
        Ok(Self {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            shape: self.shape,
        })
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.expect_shape(other.shape)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn expect_shape(&self, shape: Shape3) -> Result<()> {
        if self.shape != shape {
            return Err(HimaeError::Shape(format!(
                "expected {shape}, got {}",
                self.shape
            )));
        }
        Ok(())
    }

    /// Keeps the first `len` time steps of every row.
    pub fn crop_time(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.shape.time {
            return Err(HimaeError::Shape(format!(
                "cannot crop time axis of length {} to {len}",
                self.shape.time
            )));
        }
        let shape = Shape3::new(self.shape.batch, self.shape.channels, len);
        let mut data = Vec::with_capacity(shape.numel());
        for b in 0..self.shape.batch {
            for c in 0..self.shape.channels {
                data.extend_from_slice(&self.row(b, c)[..len]);
            }
        }
        Ok(Self { data, shape })
    }

    /// Stacks channels of `a` then `b`; batch and time must agree.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        if a.shape.batch != b.shape.batch || a.shape.time != b.shape.time {
            return Err(HimaeError::Shape(format!(
                "concat needs equal batch and time, got {} and {}",
                a.shape, b.shape
            )));
        }
        let shape = Shape3::new(
            a.shape.batch,
            a.shape.channels + b.shape.channels,
            a.shape.time,
        );
        let mut data = Vec::with_capacity(shape.numel());
        for i in 0..a.shape.batch {
            data.extend_from_slice(a.item(i));
            data.extend_from_slice(b.item(i));
        }
        Ok(Self { data, shape })
    }

    /// Selects a subset of batch elements, in the given order.
    pub fn select_batch(&self, indices: &[usize]) -> Result<Self> {
        let per = self.shape.channels * self.shape.time;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            if i >= self.shape.batch {
                return Err(HimaeError::Shape(format!(
                    "batch index {i} out of range for {}",
                    self.shape
                )));
            }
            data.extend_from_slice(self.item(i));
        }
        Self::from_vec(
            Shape3::new(indices.len(), self.shape.channels, self.shape.time),
            data,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor3::from_vec(Shape3::new(2, 2, 2), vec![0.0; 7]).is_err());
        assert!(Tensor3::from_vec(Shape3::new(0, 2, 2), vec![]).is_err());
    }

    #[test]
    fn concat_stacks_channels_in_order() {
        let a = Tensor3::full(Shape3::new(2, 2, 3), 1.0);
        let b = Tensor3::full(Shape3::new(2, 3, 3), 2.0);
        let c = Tensor3::concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), Shape3::new(2, 5, 3));
        assert_eq!(c.row(1, 1), &[1.0; 3]);
        assert_eq!(c.row(1, 2), &[2.0; 3]);
        let short = Tensor3::full(Shape3::new(2, 3, 4), 2.0);
        assert!(Tensor3::concat_channels(&a, &short).is_err());
    }

    #[test]
    fn crop_keeps_leading_samples() {
        let t = Tensor3::from_vec(Shape3::new(1, 2, 3), vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let c = t.crop_time(2).unwrap();
        assert_eq!(c.data(), &[1., 2., 4., 5.]);
    }
}
