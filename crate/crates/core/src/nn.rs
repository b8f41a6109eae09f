//! HiMAE building blocks: the residual encoder block, the skip decoder
//! block, the plain-CNN stages used by the ablation, plus parameter storage,
//! initialization and counting.
//!
//! Padding convention for every kernel size: forward convs use `p = k / 2`
//! and transposed convs use `p = (k - 1) / 2` with `op = s - 1`. For odd `k`
//! this gives exact `ceil(T / s)` downsampling and exact mirrored
//! upsampling; even kernels overshoot by at most one sample, which the tail
//! crop removes. With `k = 5, s = 2` these are the `p = 2, op = 1` layers of
//! the reference architecture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchNormConfig, BatchNormStats, ConvSpec, Mode, Tape, Var};
use crate::error::{HimaeError, Result};
use crate::tensor::{Shape3, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor3,
    /// Fan-in used by the initializer; zero for batch-norm affine terms.
    pub fan_in: usize,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    BnGamma,
    BnBeta,
}

/// Ordered set of trainable tensors. Order is creation order and defines
/// both the RNG draw order at init and the checkpoint layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    fn add(&mut self, name: String, shape: Shape3, fan_in: usize, kind: ParamKind) -> ParamId {
        let fill = if kind == ParamKind::BnGamma { 1.0 } else { 0.0 };
        self.params.push(Param {
            name,
            value: Tensor3::full(shape, fill),
            fan_in,
            kind,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn values(&self) -> Vec<&Tensor3> {
        self.params.iter().map(|p| &p.value).collect()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor3> {
        self.params.iter_mut().map(|p| &mut p.value)
    }

    /// Number of trainable scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Replaces every value from `(name, tensor)` pairs; names and shapes
    /// must match this store exactly.
    pub fn load_values(&mut self, values: Vec<(String, Tensor3)>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(HimaeError::Format(format!(
                "expected {} parameter tensors, found {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, (name, v)) in self.params.iter_mut().zip(values) {
            if p.name != name || p.value.shape() != v.shape() {
                return Err(HimaeError::Format(format!(
                    "parameter `{name}` {} does not match `{}` {}",
                    v.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = v;
        }
        Ok(())
    }

    pub fn initialize(&mut self, policy: &InitPolicy) {
        let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
        for p in &mut self.params {
            match p.kind {
                ParamKind::BnGamma => p.value.data_mut().fill(1.0),
                ParamKind::BnBeta => p.value.data_mut().fill(0.0),
                ParamKind::Weight | ParamKind::Bias => {
                    let bound = fan_in_bound(p.fan_in);
                    match policy.scheme {
                        InitScheme::FanInUniform => {
                            for v in p.value.data_mut() {
                                *v = rng.random_range(-bound..=bound);
                            }
                        }
                        InitScheme::HeNormal => {
                            if p.kind == ParamKind::Bias {
                                p.value.data_mut().fill(0.0);
                            } else {
                                let sd = (2.0 / p.fan_in as f64).sqrt();
                                let normal = Normal::new(0.0, sd).expect("positive sd");
                                for v in p.value.data_mut() {
                                    *v = normal.sample(&mut rng);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `sqrt(1 / fan_in)`, the uniform bound for weights and biases.
pub fn fan_in_bound(fan_in: usize) -> f64 {
    (1.0 / fan_in as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Weights and biases from `U(-b, b)`, `b = sqrt(1 / fan_in)`.
    #[default]
    FanInUniform,
    /// Weights from `N(0, 2 / fan_in)`, zero biases.
    HeNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitPolicy {
    pub scheme: InitScheme,
    pub seed: u64,
}

impl InitPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            scheme: InitScheme::FanInUniform,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: ConvSpec,
    pub transposed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: usize,
}

/// Allocates parameters and batch-norm state in a fixed order.
#[derive(Debug, Default)]
pub struct LayerBuilder {
    pub store: ParamStore,
    pub stats: Vec<BatchNormStats>,
}

impl LayerBuilder {
    pub fn conv(&mut self, name: &str, spec: ConvSpec) -> ConvLayer {
        let fan_in = spec.in_channels * spec.kernel;
        let weight = self
            .store
            .add(format!("{name}.weight"), spec.weight_shape(), fan_in, ParamKind::Weight);
        let bias = self.store.add(
            format!("{name}.bias"),
            Shape3::new(1, spec.out_channels, 1),
            fan_in,
            ParamKind::Bias,
        );
        ConvLayer {
            weight,
            bias,
            spec,
            transposed: false,
        }
    }

    pub fn conv_transpose(&mut self, name: &str, spec: ConvSpec) -> ConvLayer {
        // fan-in of a transposed conv counts the (out, k) slice each input
        // channel's weight spans, matching the usual framework default.
        let fan_in = spec.out_channels * spec.kernel;
        let weight = self.store.add(
            format!("{name}.weight"),
            spec.transposed_weight_shape(),
            fan_in,
            ParamKind::Weight,
        );
        let bias = self.store.add(
            format!("{name}.bias"),
            Shape3::new(1, spec.out_channels, 1),
            fan_in,
            ParamKind::Bias,
        );
        ConvLayer {
            weight,
            bias,
            spec,
            transposed: true,
        }
    }

    pub fn batch_norm(&mut self, name: &str, channels: usize) -> BnLayer {
        let shape = Shape3::new(1, channels, 1);
        let gamma = self.store.add(format!("{name}.gamma"), shape, 0, ParamKind::BnGamma);
        let beta = self.store.add(format!("{name}.beta"), shape, 0, ParamKind::BnBeta);
        self.stats.push(BatchNormStats::new(channels));
        BnLayer {
            gamma,
            beta,
            stats: self.stats.len() - 1,
        }
    }
}

/// Forward-pass context: the tape, parameter leaves (indexed by
/// [`ParamId`]), and the batch-norm running statistics.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub params: &'a [Var],
    pub stats: &'a mut [BatchNormStats],
    pub mode: Mode,
    pub bn: BatchNormConfig,
}

impl Ctx<'_> {
    pub fn conv(&mut self, layer: &ConvLayer, x: Var) -> Result<Var> {
        let (w, b) = (self.params[layer.weight.0], self.params[layer.bias.0]);
        if layer.transposed {
            self.tape.conv_transpose1d(x, w, Some(b), layer.spec)
        } else {
            self.tape.conv1d(x, w, Some(b), layer.spec)
        }
    }

    pub fn bn(&mut self, layer: &BnLayer, x: Var) -> Result<Var> {
        let (g, b) = (self.params[layer.gamma.0], self.params[layer.beta.0]);
        self.tape
            .batch_norm1d(x, g, b, &mut self.stats[layer.stats], self.mode, self.bn)
    }

    pub fn time_len(&self, x: Var) -> usize {
        self.tape.value(x).shape().time
    }

    /// Tail crop to `len`; fails if `x` is shorter.
    pub fn fit(&mut self, x: Var, len: usize) -> Result<Var> {
        let have = self.time_len(x);
        if have < len {
            return Err(HimaeError::Contract(format!(
                "activation of length {have} cannot be cropped to {len}"
            )));
        }
        self.tape.crop_time(x, len)
    }
}

/// `ceil(t / s)`: the length every stride-`s` stage produces.
pub fn downsampled_len(t: usize, stride: usize) -> usize {
    t.div_ceil(stride)
}

pub fn down_spec(in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> ConvSpec {
    ConvSpec::new(in_ch, out_ch, kernel, stride, kernel / 2)
}

pub fn up_spec(in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> ConvSpec {
    ConvSpec::new(in_ch, out_ch, kernel, stride, (kernel - 1) / 2).with_output_padding(stride - 1)
}

/// conv(k, s) + BN + GELU, conv(k, 1) + BN, projection conv(1, s) + BN on
/// the shortcut, add, GELU. Without a shortcut the block is the same main
/// path with the final GELU applied directly.
#[derive(Debug, Clone)]
pub struct EncoderConvBlock {
    pub conv1: ConvLayer,
    pub bn1: BnLayer,
    pub conv2: ConvLayer,
    pub bn2: BnLayer,
    pub shortcut: Option<(ConvLayer, BnLayer)>,
    pub stride: usize,
}

impl EncoderConvBlock {
    pub fn build(b: &mut LayerBuilder, name: &str, in_w: usize, out_w: usize, kernel: usize, stride: usize, shortcut: bool) -> Self {
        let conv1 = b.conv(&format!("{name}.conv1"), down_spec(in_w, out_w, kernel, stride));
        let bn1 = b.batch_norm(&format!("{name}.bn1"), out_w);
        let conv2 = b.conv(&format!("{name}.conv2"), down_spec(out_w, out_w, kernel, 1));
        let bn2 = b.batch_norm(&format!("{name}.bn2"), out_w);
        let shortcut = shortcut.then(|| {
            let c = b.conv(&format!("{name}.proj"), ConvSpec::new(in_w, out_w, 1, stride, 0));
            let n = b.batch_norm(&format!("{name}.proj_bn"), out_w);
            (c, n)
        });
        Self {
            conv1,
            bn1,
            conv2,
            bn2,
            shortcut,
            stride,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let target = downsampled_len(ctx.time_len(x), self.stride);
        let h = ctx.conv(&self.conv1, x)?;
        let h = ctx.fit(h, target)?;
        let h = ctx.bn(&self.bn1, h)?;
        let h = ctx.tape.gelu(h);
        let h = ctx.conv(&self.conv2, h)?;
        let h = ctx.fit(h, target)?;
        let mut h = ctx.bn(&self.bn2, h)?;
        if let Some((proj, proj_bn)) = &self.shortcut {
            let s = ctx.conv(proj, x)?;
            let s = ctx.fit(s, target)?;
            let s = ctx.bn(proj_bn, s)?;
            h = ctx.tape.add(h, s)?;
        }
        Ok(ctx.tape.gelu(h))
    }
}

/// Transposed conv upsampling, tail crop to the skip length, concat
/// `[upsampled ; skip]`, then two conv(k, 1) + BN + GELU layers.
#[derive(Debug, Clone)]
pub struct DecoderSkipBlock {
    pub up: ConvLayer,
    pub conv1: ConvLayer,
    pub bn1: BnLayer,
    pub conv2: ConvLayer,
    pub bn2: BnLayer,
    pub uses_skip: bool,
}

impl DecoderSkipBlock {
    pub fn build(b: &mut LayerBuilder, name: &str, in_w: usize, out_w: usize, kernel: usize, stride: usize, uses_skip: bool) -> Self {
        let up = b.conv_transpose(&format!("{name}.up"), up_spec(in_w, out_w, kernel, stride));
        let mid = if uses_skip { 2 * out_w } else { out_w };
        let conv1 = b.conv(&format!("{name}.conv1"), down_spec(mid, out_w, kernel, 1));
        let bn1 = b.batch_norm(&format!("{name}.bn1"), out_w);
        let conv2 = b.conv(&format!("{name}.conv2"), down_spec(out_w, out_w, kernel, 1));
        let bn2 = b.batch_norm(&format!("{name}.bn2"), out_w);
        Self {
            up,
            conv1,
            bn1,
            conv2,
            bn2,
            uses_skip,
        }
    }

    /// `skip` is the same-level encoder output; its length is the target
    /// length even when the skip itself is not concatenated.
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var, skip: Var) -> Result<Var> {
        let target = ctx.time_len(skip);
        if target == 0 {
            return Err(HimaeError::Contract("empty skip connection".into()));
        }
        let h = ctx.conv(&self.up, x)?;
        let mut h = ctx.fit(h, target)?;
        if self.uses_skip {
            h = ctx.tape.concat_channels(h, skip)?;
        }
        let h = ctx.conv(&self.conv1, h)?;
        let h = ctx.fit(h, target)?;
        let h = ctx.bn(&self.bn1, h)?;
        let h = ctx.tape.gelu(h);
        let h = ctx.conv(&self.conv2, h)?;
        let h = ctx.fit(h, target)?;
        let h = ctx.bn(&self.bn2, h)?;
        Ok(ctx.tape.gelu(h))
    }
}

/// One strided conv + BN + GELU (plain-CNN encoder stage).
#[derive(Debug, Clone)]
pub struct PlainDownStage {
    pub conv: ConvLayer,
    pub bn: BnLayer,
    pub stride: usize,
}

impl PlainDownStage {
    pub fn build(b: &mut LayerBuilder, name: &str, in_w: usize, out_w: usize, kernel: usize, stride: usize) -> Self {
        Self {
            conv: b.conv(&format!("{name}.conv"), down_spec(in_w, out_w, kernel, stride)),
            bn: b.batch_norm(&format!("{name}.bn"), out_w),
            stride,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let target = downsampled_len(ctx.time_len(x), self.stride);
        let h = ctx.conv(&self.conv, x)?;
        let h = ctx.fit(h, target)?;
        let h = ctx.bn(&self.bn, h)?;
        Ok(ctx.tape.gelu(h))
    }
}

/// One transposed conv + BN + GELU (plain-CNN decoder stage).
#[derive(Debug, Clone)]
pub struct PlainUpStage {
    pub up: ConvLayer,
    pub bn: BnLayer,
}

impl PlainUpStage {
    pub fn build(b: &mut LayerBuilder, name: &str, in_w: usize, out_w: usize, kernel: usize, stride: usize) -> Self {
        Self {
            up: b.conv_transpose(&format!("{name}.up"), up_spec(in_w, out_w, kernel, stride)),
            bn: b.batch_norm(&format!("{name}.bn"), out_w),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var, target: usize) -> Result<Var> {
        let h = ctx.conv(&self.up, x)?;
        let h = ctx.fit(h, target)?;
        let h = ctx.bn(&self.bn, h)?;
        Ok(ctx.tape.gelu(h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_encoder(in_w: usize, out_w: usize, t: usize) -> Shape3 {
        let mut b = LayerBuilder::default();
        let block = EncoderConvBlock::build(&mut b, "enc", in_w, out_w, 5, 2, true);
        b.store.initialize(&InitPolicy::new(0));
        let mut tape = Tape::new();
        let params: Vec<Var> = b.store.values().into_iter().map(|v| tape.leaf(v.clone())).collect();
        let x = tape.leaf(Tensor3::full(Shape3::new(1, in_w, t), 0.3));
        let mut ctx = Ctx {
            tape: &mut tape,
            params: &params,
            stats: &mut b.stats,
            mode: Mode::Eval,
            bn: BatchNormConfig::default(),
        };
        let y = block.forward(&mut ctx, x).unwrap();
        tape.value(y).shape()
    }

    #[test]
    fn encoder_block_shapes() {
        assert_eq!(run_encoder(1, 16, 1000), Shape3::new(1, 16, 500));
        assert_eq!(run_encoder(16, 32, 500), Shape3::new(1, 32, 250));
        assert_eq!(run_encoder(64, 128, 125), Shape3::new(1, 128, 63));
    }

    fn run_decoder(in_w: usize, out_w: usize, t: usize, skip_len: usize) -> Shape3 {
        let mut b = LayerBuilder::default();
        let block = DecoderSkipBlock::build(&mut b, "dec", in_w, out_w, 5, 2, true);
        b.store.initialize(&InitPolicy::new(0));
        let mut tape = Tape::new();
        let params: Vec<Var> = b.store.values().into_iter().map(|v| tape.leaf(v.clone())).collect();
        let x = tape.leaf(Tensor3::full(Shape3::new(1, in_w, t), 0.1));
        let skip = tape.leaf(Tensor3::full(Shape3::new(1, out_w, skip_len), -0.1));
        let mut ctx = Ctx {
            tape: &mut tape,
            params: &params,
            stats: &mut b.stats,
            mode: Mode::Eval,
            bn: BatchNormConfig::default(),
        };
        let y = block.forward(&mut ctx, x, skip).unwrap();
        tape.value(y).shape()
    }

    #[test]
    fn decoder_block_crops_to_skip() {
        assert_eq!(run_decoder(256, 128, 32, 63), Shape3::new(1, 128, 63));
        assert_eq!(run_decoder(32, 16, 250, 500), Shape3::new(1, 16, 500));
    }

    #[test]
    fn single_conv_count() {
        let mut b = LayerBuilder::default();
        b.conv("c", ConvSpec::new(1, 16, 5, 1, 2));
        assert_eq!(b.store.count(), 96);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let build = || {
            let mut b = LayerBuilder::default();
            EncoderConvBlock::build(&mut b, "e", 16, 32, 5, 2, true);
            b.store.initialize(&InitPolicy::new(42));
            b.store
        };
        let (a, c) = (build(), build());
        assert_eq!(a, c);
        let bound = (1.0f64 / (5.0 * 16.0)).sqrt();
        assert_eq!(fan_in_bound(80), bound);
        let w = a.by_name("e.conv1.weight").unwrap();
        assert!(w.value.data().iter().all(|v| v.abs() <= bound));
        assert!(a.by_name("e.bn1.gamma").unwrap().value.data().iter().all(|&v| v == 1.0));
        assert!(a.by_name("e.bn1.beta").unwrap().value.data().iter().all(|&v| v == 0.0));
    }
}
