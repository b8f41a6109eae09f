//! The assembled encoder-decoder, its ablated variants, embedding-pyramid
//! extraction and the receptive-field calculator.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{BatchNormConfig, BatchNormStats, Mode, Tape, Var};
use crate::error::{config_err, HimaeError, Result};
use crate::nn::{
    downsampled_len, up_spec, ConvLayer, Ctx, DecoderSkipBlock, EncoderConvBlock, InitPolicy, LayerBuilder,
    ParamStore, PlainDownStage, PlainUpStage,
};
use crate::tensor::{Shape3, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Residual encoder blocks with projection shortcuts, skip-concat decoder.
    #[default]
    Full,
    /// Same two-conv blocks without shortcuts or skip concatenation.
    NoSkip,
    /// One strided conv per encoder stage, one transposed conv per decoder
    /// stage.
    PlainCnn,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoSkip, Variant::PlainCnn];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSkip => "no-skip",
            Variant::PlainCnn => "plain-cnn",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = HimaeError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no-skip" | "noskip" => Ok(Variant::NoSkip),
            "plain-cnn" | "cnn" => Ok(Variant::PlainCnn),
            other => config_err(format!("unknown variant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HimaeConfig {
    pub widths: Vec<usize>,
    pub input_channels: usize,
    pub input_len: usize,
    pub patch_len: usize,
    pub kernel: usize,
    pub stride: usize,
    pub variant: Variant,
}

impl Default for HimaeConfig {
    fn default() -> Self {
        Self::base()
    }
}

impl HimaeConfig {
    fn with_widths(widths: &[usize]) -> Self {
        Self {
            widths: widths.to_vec(),
            input_channels: 1,
            input_len: 1000,
            patch_len: 5,
            kernel: 5,
            stride: 2,
            variant: Variant::Full,
        }
    }

    pub fn tiny() -> Self {
        Self::with_widths(&[16, 32, 64])
    }

    pub fn small() -> Self {
        Self::with_widths(&[16, 32, 64, 128])
    }

    /// Five stages, 16 to 256 channels, `k = 5`, `s = 2`, `P = 5`,
    /// `L = 1000`.
    pub fn base() -> Self {
        Self::with_widths(&[16, 32, 64, 128, 256])
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    /// Smallest accepted input length, `stride^depth`.
    pub fn min_len(&self) -> usize {
        self.stride.saturating_pow(self.depth() as u32).max(1)
    }

    pub fn num_patches(&self) -> usize {
        self.input_len / self.patch_len
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return config_err("widths must be non-empty and positive");
        }
        if self.input_channels == 0 || self.kernel == 0 || self.stride == 0 {
            return config_err("input channels, kernel and stride must be positive");
        }
        if self.patch_len == 0 || self.input_len % self.patch_len != 0 {
            return config_err(format!(
                "patch length {} must divide input length {}",
                self.patch_len, self.input_len
            ));
        }
        if self.input_len < self.min_len() {
            return Err(HimaeError::InputTooShort(format!(
                "length {} is below {} required by depth {}",
                self.input_len,
                self.min_len(),
                self.depth()
            )));
        }
        Ok(())
    }

    /// Time length of every encoder level for an input of length `len`.
    pub fn level_lengths(&self, len: usize) -> Vec<usize> {
        let mut t = len;
        self.widths
            .iter()
            .map(|_| {
                t = downsampled_len(t, self.stride);
                t
            })
            .collect()
    }

    pub fn receptive_field(&self) -> ReceptiveField {
        receptive_field(self)
    }
}

/// One convolution in the encoder's main path with its cumulative
/// receptive field `R` and jump `J`, both in input samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RfLayer {
    pub name: String,
    pub level: usize,
    pub kernel: usize,
    pub stride: usize,
    pub output_len: usize,
    pub receptive: usize,
    pub jump: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReceptiveField {
    pub layers: Vec<RfLayer>,
}

impl ReceptiveField {
    /// `(R, J)` of the embedding at encoder level `level` (1-based).
    pub fn level(&self, level: usize) -> Option<(usize, usize)> {
        self.layers
            .iter()
            .rev()
            .find(|l| l.level == level)
            .map(|l| (l.receptive, l.jump))
    }
}

/// `R_l = R_{l-1} + (k - 1) J_{l-1}`, `J_l = J_{l-1} s_l`, from `R = J = 1`.
/// The 1x1 projection shortcut never widens the field, so only the main
/// path is listed.
pub fn receptive_field(config: &HimaeConfig) -> ReceptiveField {
    let (mut r, mut j) = (1usize, 1usize);
    let mut t = config.input_len;
    let mut layers = Vec::new();
    let convs: &[(usize, &str)] = match config.variant {
        Variant::PlainCnn => &[(0, "conv")],
        _ => &[(0, "conv1"), (1, "conv2")],
    };
    for level in 1..=config.depth() {
        t = downsampled_len(t, config.stride);
        for &(i, label) in convs {
            let stride = if i == 0 { config.stride } else { 1 };
            r += (config.kernel - 1) * j;
            j *= stride;
            layers.push(RfLayer {
                name: format!("Enc{level}-{label}"),
                level,
                kernel: config.kernel,
                stride,
                output_len: t,
                receptive: r,
                jump: j,
            });
        }
    }
    ReceptiveField { layers }
}

#[derive(Debug, Clone)]
enum EncoderStage {
    Residual(EncoderConvBlock),
    Plain(PlainDownStage),
}

#[derive(Debug, Clone)]
enum DecoderStage {
    Skip(DecoderSkipBlock),
    Plain(PlainUpStage),
}

/// Per-level encoder outputs, finest first.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPyramid {
    pub levels: Vec<Tensor3>,
    /// `(R, J)` per level.
    pub fields: Vec<(usize, usize)>,
}

impl EmbeddingPyramid {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Level `level`, 1-based.
    pub fn level(&self, level: usize) -> Option<&Tensor3> {
        level.checked_sub(1).and_then(|i| self.levels.get(i))
    }
}

/// Leaves and outputs of one forward pass recorded on a tape.
#[derive(Debug)]
pub struct ForwardGraph {
    pub params: Vec<Var>,
    pub input: Var,
    pub levels: Vec<Var>,
    pub recon: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct HimaeModel {
    config: HimaeConfig,
    store: ParamStore,
    stats: Vec<BatchNormStats>,
    encoder: Vec<EncoderStage>,
    decoder: Vec<DecoderStage>,
    head: ConvLayer,
    bn: BatchNormConfig,
}

impl HimaeModel {
    pub fn new(config: HimaeConfig, init: &InitPolicy) -> Result<Self> {
        config.validate()?;
        let mut b = LayerBuilder::default();
        let (k, s) = (config.kernel, config.stride);
        let w = &config.widths;
        let mut encoder = Vec::with_capacity(w.len());
        let mut in_w = config.input_channels;
        for (i, &out_w) in w.iter().enumerate() {
            let name = format!("enc{}", i + 1);
            encoder.push(match config.variant {
                Variant::Full => EncoderStage::Residual(EncoderConvBlock::build(&mut b, &name, in_w, out_w, k, s, true)),
                Variant::NoSkip => EncoderStage::Residual(EncoderConvBlock::build(&mut b, &name, in_w, out_w, k, s, false)),
                Variant::PlainCnn => EncoderStage::Plain(PlainDownStage::build(&mut b, &name, in_w, out_w, k, s)),
            });
            in_w = out_w;
        }
        let mut decoder = Vec::with_capacity(w.len().saturating_sub(1));
        for j in (1..w.len()).rev() {
            let name = format!("dec{j}");
            decoder.push(match config.variant {
                Variant::Full => DecoderStage::Skip(DecoderSkipBlock::build(&mut b, &name, w[j], w[j - 1], k, s, true)),
                Variant::NoSkip => DecoderStage::Skip(DecoderSkipBlock::build(&mut b, &name, w[j], w[j - 1], k, s, false)),
                Variant::PlainCnn => DecoderStage::Plain(PlainUpStage::build(&mut b, &name, w[j], w[j - 1], k, s)),
            });
        }
        let head = b.conv_transpose("head", up_spec(w[0], config.input_channels, k, s));
        b.store.initialize(init);
        Ok(Self {
            config,
            store: b.store,
            stats: b.stats,
            encoder,
            decoder,
            head,
            bn: BatchNormConfig::default(),
        })
    }

    pub fn config(&self) -> &HimaeConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn bn_stats(&self) -> &[BatchNormStats] {
        &self.stats
    }

    pub fn bn_stats_mut(&mut self) -> &mut [BatchNormStats] {
        &mut self.stats
    }

    pub fn bn_config(&self) -> BatchNormConfig {
        self.bn
    }

    /// Trainable scalars: conv weights and biases plus BN affine terms.
    pub fn count_parameters(&self) -> usize {
        self.store.count()
    }

    /// SHA-256 over parameter names and little-endian values.
    pub fn param_checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in self.store.iter() {
            h.update(p.name.as_bytes());
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    fn check_input(&self, x: &Tensor3) -> Result<()> {
        let s = x.shape();
        if s.channels != self.config.input_channels {
            return Err(HimaeError::Shape(format!(
                "input has {} channels, model expects {}",
                s.channels, self.config.input_channels
            )));
        }
        if s.time < self.config.min_len() {
            return Err(HimaeError::InputTooShort(format!(
                "length {} is below {} required by depth {}",
                s.time,
                self.config.min_len(),
                self.config.depth()
            )));
        }
        Ok(())
    }

    /// Records a forward pass on `tape`. With `encoder_only` the decoder is
    /// skipped and `recon` is `None`.
    pub fn record(
        &self,
        tape: &mut Tape,
        x: &Tensor3,
        mode: Mode,
        stats: &mut [BatchNormStats],
        encoder_only: bool,
    ) -> Result<ForwardGraph> {
        self.check_input(x)?;
        let params: Vec<Var> = self.store.iter().map(|p| tape.leaf(p.value.clone())).collect();
        let input = tape.leaf(x.clone());
        let mut ctx = Ctx {
            tape,
            params: &params,
            stats,
            mode,
            bn: self.bn,
        };
        let mut levels = Vec::with_capacity(self.encoder.len());
        let mut h = input;
        for stage in &self.encoder {
            h = match stage {
                EncoderStage::Residual(b) => b.forward(&mut ctx, h)?,
                EncoderStage::Plain(b) => b.forward(&mut ctx, h)?,
            };
            levels.push(h);
        }
        let recon = if encoder_only {
            None
        } else {
            for (i, stage) in self.decoder.iter().enumerate() {
                let skip = levels[levels.len() - 2 - i];
                h = match stage {
                    DecoderStage::Skip(b) => b.forward(&mut ctx, h, skip)?,
                    DecoderStage::Plain(b) => {
                        let target = ctx.time_len(skip);
                        b.forward(&mut ctx, h, target)?
                    }
                };
            }
            let out = ctx.conv(&self.head, h)?;
            let out = ctx.fit(out, x.shape().time)?;
            Some(ctx.tape.tanh(out))
        };
        Ok(ForwardGraph {
            params,
            input,
            levels,
            recon,
        })
    }

    fn pyramid(&self, tape: &Tape, levels: &[Var]) -> EmbeddingPyramid {
        let rf = self.config.receptive_field();
        EmbeddingPyramid {
            levels: levels.iter().map(|&v| tape.value(v).clone()).collect(),
            fields: (1..=levels.len()).map(|l| rf.level(l).unwrap_or((0, 0))).collect(),
        }
    }

    /// Full forward pass. Train mode normalizes with batch statistics and
    /// updates the running statistics.
    pub fn forward(&mut self, x: &Tensor3, mode: Mode) -> Result<(Tensor3, EmbeddingPyramid)> {
        let mut tape = Tape::new();
        let mut stats = std::mem::take(&mut self.stats);
        let g = self.record(&mut tape, x, mode, &mut stats, false);
        self.stats = stats;
        let g = g?;
        let recon = tape.value(g.recon.expect("decoder ran")).clone();
        Ok((recon, self.pyramid(&tape, &g.levels)))
    }

    /// Eval-mode forward; never mutates the model.
    pub fn forward_eval(&self, x: &Tensor3) -> Result<(Tensor3, EmbeddingPyramid)> {
        let mut tape = Tape::new();
        let mut stats = self.stats.clone();
        let g = self.record(&mut tape, x, Mode::Eval, &mut stats, false)?;
        let recon = tape.value(g.recon.expect("decoder ran")).clone();
        Ok((recon, self.pyramid(&tape, &g.levels)))
    }

    /// Eval-mode encoder pass returning every level.
    pub fn encode(&self, x: &Tensor3) -> Result<EmbeddingPyramid> {
        let mut tape = Tape::new();
        let mut stats = self.stats.clone();
        let g = self.record(&mut tape, x, Mode::Eval, &mut stats, true)?;
        Ok(self.pyramid(&tape, &g.levels))
    }

    /// The full `(B, width_l, T_l)` feature map of level `level` (1-based).
    pub fn extract_embeddings(&self, x: &Tensor3, level: usize) -> Result<Tensor3> {
        if level == 0 || level > self.config.depth() {
            return config_err(format!("level {level} outside 1..={}", self.config.depth()));
        }
        let mut pyramid = self.encode(x)?;
        Ok(pyramid.levels.swap_remove(level - 1))
    }

    /// Reconstruction of `x` from its occluded copy `x * (1 - mask)`.
    /// `mask` is `(B, 1, T)` with 1 on hidden samples.
    pub fn reconstruct(&self, x: &Tensor3, mask: &Tensor3) -> Result<Tensor3> {
        let occluded = crate::masking::occlude(x, mask)?;
        Ok(self.forward_eval(&occluded)?.0)
    }

    /// Masked reconstruction loss and per-parameter gradients in store
    /// order. Train mode updates batch-norm running statistics.
    pub fn loss_and_grads(&mut self, x: &Tensor3, mask: &Tensor3, mode: Mode) -> Result<(f64, Vec<Tensor3>)> {
        let occluded = crate::masking::occlude(x, mask)?;
        let mut tape = Tape::new();
        let mut stats = std::mem::take(&mut self.stats);
        let g = self.record(&mut tape, &occluded, mode, &mut stats, false);
        self.stats = stats;
        let g = g?;
        let loss = tape.masked_mse(g.recon.expect("decoder ran"), x, mask)?;
        let value = tape.value(loss).data()[0];
        let mut grads = tape.backward(loss)?;
        Ok((value, g.params.iter().map(|&p| grads.take(p)).collect()))
    }

    /// Eval-mode masked loss without gradients.
    pub fn masked_loss(&self, x: &Tensor3, mask: &Tensor3) -> Result<f64> {
        let recon = self.reconstruct(x, mask)?;
        crate::masking::masked_mse(&recon, x, mask)
    }

    /// Output shapes the decoder is expected to produce for `(B, C, len)`.
    pub fn expected_shape(&self, batch: usize, len: usize) -> Shape3 {
        Shape3::new(batch, self.config.input_channels, len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn receptive_field_matches_reference_table() {
        let rf = HimaeConfig::base().receptive_field();
        let got: Vec<(usize, usize)> = rf.layers.iter().map(|l| (l.receptive, l.jump)).collect();
        assert_eq!(
            got,
            vec![(5, 2), (13, 2), (21, 4), (37, 4), (53, 8), (85, 8), (117, 16), (181, 16), (245, 32), (373, 32)]
        );
        assert_eq!(rf.layers[0].name, "Enc1-conv1");
        assert_eq!(rf.level(3), Some((85, 8)));
    }

    #[test]
    fn stride_one_closed_form() {
        let mut c = HimaeConfig::base();
        c.stride = 1;
        c.widths = vec![8; 3];
        let rf = c.receptive_field();
        for (n, l) in rf.layers.iter().enumerate() {
            assert_eq!((l.receptive, l.jump), (1 + 4 * (n + 1), 1));
        }
    }

    #[test]
    fn pyramid_and_reconstruction_shapes() {
        let model = HimaeModel::new(HimaeConfig::base(), &InitPolicy::new(1)).unwrap();
        let x = Tensor3::zeros(Shape3::new(2, 1, 1000));
        let (recon, pyr) = model.forward_eval(&x).unwrap();
        assert_eq!(recon.shape(), Shape3::new(2, 1, 1000));
        let lens: Vec<usize> = pyr.levels.iter().map(|l| l.shape().time).collect();
        assert_eq!(lens, vec![500, 250, 125, 63, 32]);
        assert!(recon.all_finite() && recon.max_abs() <= 1.0);
    }

    #[test]
    fn level_range_is_checked() {
        let model = HimaeModel::new(HimaeConfig::tiny(), &InitPolicy::new(1)).unwrap();
        let x = Tensor3::zeros(Shape3::new(1, 1, 1000));
        assert!(model.extract_embeddings(&x, 0).is_err());
        assert!(model.extract_embeddings(&x, 4).is_err());
        assert_eq!(model.extract_embeddings(&x, 1).unwrap().shape(), Shape3::new(1, 16, 500));
    }

    #[test]
    fn short_input_is_rejected() {
        let model = HimaeModel::new(HimaeConfig::base(), &InitPolicy::new(1)).unwrap();
        let x = Tensor3::zeros(Shape3::new(1, 1, 16));
        assert!(matches!(model.forward_eval(&x), Err(HimaeError::InputTooShort(_))));
    }
}
