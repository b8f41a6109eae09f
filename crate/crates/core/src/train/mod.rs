//! Masked-autoencoder pretraining.

pub mod checkpoint;
pub mod optim;

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchNormStats, Mode};
use crate::data::{subject_split, Dataset, Split};
use crate::error::{config_err, HimaeError, Result};
use crate::masking::{mask_tensor, sample_contiguous_runs, sample_mask, MaskRegime, PatchMask};
use crate::model::{HimaeConfig, HimaeModel};
use crate::nn::InitPolicy;
use crate::rng::{derive_seed, purpose, stream};
use crate::tensor::{Shape3, Tensor3};

pub use checkpoint::{sha256_hex, Checkpoint};
pub use optim::{AdamW, AdamWConfig, Schedule, StepInfo};

/// Which regime each optimization step masks with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskPolicy {
    /// Random on even steps, contiguous on odd steps.
    Interleaved,
    Random,
    Contiguous,
}

impl MaskPolicy {
    pub fn regime(self, step: u64) -> MaskRegime {
        match self {
            MaskPolicy::Interleaved => MaskRegime::interleaved(step),
            MaskPolicy::Random => MaskRegime::Random,
            MaskPolicy::Contiguous => MaskRegime::Contiguous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Step cap.
    pub steps: u64,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub warmup_fraction: f64,
    pub mask_ratio: f64,
    pub masking: MaskPolicy,
    /// Blocks per contiguous mask.
    pub contiguous_runs: usize,
    pub val_fraction: f64,
    /// Random-regime ratio of the fixed validation masks.
    pub val_mask_ratio: f64,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    /// Steps between validations; defaults to one epoch.
    pub eval_every: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            optimizer: AdamWConfig::default(),
            warmup_fraction: 0.1,
            mask_ratio: 0.8,
            masking: MaskPolicy::Interleaved,
            contiguous_runs: 1,
            val_fraction: 0.1,
            val_mask_ratio: 0.8,
            patience: 3,
            eval_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return config_err("batch_size must be positive");
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return config_err(format!("warmup_fraction {} outside (0, 1)", self.warmup_fraction));
        }
        if self.optimizer.lr <= 0.0 || self.optimizer.weight_decay < 0.0 {
            return config_err("learning rate must be positive and weight decay non-negative");
        }
        if self.contiguous_runs == 0 {
            return config_err("contiguous_runs must be at least 1");
        }
        if self.eval_every == Some(0) {
            return config_err("eval_every must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub lr: f64,
    pub train_mse: Option<f64>,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed optimization steps.
    pub step: u64,
    pub best_val: Option<f64>,
    pub best_step: u64,
    pub stagnant: usize,
    pub stopped_early: bool,
    pub history: Vec<LossRecord>,
}

#[derive(Debug, Clone, PartialEq)]
struct Snapshot {
    params: Vec<Tensor3>,
    stats: Vec<BatchNormStats>,
}

/// Owns the model, optimizer and schedule. All randomness is keyed by
/// `(seed, step)` so the state in a checkpoint is enough to resume.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: HimaeModel,
    opt: AdamW,
    config: TrainConfig,
    seed: u64,
    schedule: Schedule,
    train: Dataset,
    val: Dataset,
    val_masks: Tensor3,
    state: TrainState,
    best: Option<Snapshot>,
}

fn data_hash(d: &Dataset) -> String {
    let mut bytes = Vec::with_capacity(d.windows().len() * 8 + d.len() * 4);
    for v in d.windows().data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for s in d.subjects() {
        bytes.extend_from_slice(&s.to_le_bytes());
    }
    sha256_hex(&bytes)
}

impl Trainer {
    pub fn new(model_config: HimaeConfig, config: TrainConfig, train: Dataset, val: Dataset, seed: u64) -> Result<Self> {
        let init = InitPolicy::new(derive_seed(seed, purpose::INIT, 0));
        let model = HimaeModel::new(model_config, &init)?;
        Trainer::with_model(model, config, train, val, seed)
    }

    /// Continues from an existing model (fresh optimizer state).
    pub fn with_model(model: HimaeModel, config: TrainConfig, train: Dataset, val: Dataset, seed: u64) -> Result<Self> {
        config.validate()?;
        let mc = model.config().clone();
        for (name, d) in [("training", &train), ("validation", &val)] {
            if d.is_empty() {
                return config_err(format!("{name} set is empty"));
            }
            if d.window_len() != mc.input_len || d.channels() != mc.input_channels {
                return Err(HimaeError::Shape(format!(
                    "{name} windows are {}x{}, model expects {}x{}",
                    d.channels(),
                    d.window_len(),
                    mc.input_channels,
                    mc.input_len
                )));
            }
        }
        if train.len() < config.batch_size {
            return config_err(format!(
                "batch size {} exceeds the {} training windows",
                config.batch_size,
                train.len()
            ));
        }
        let val_masks = Trainer::val_masks_for(&model, &config, val.len(), seed)?;
        let opt = AdamW::new(config.optimizer, model.params().iter().map(|p| p.value.shape()));
        let schedule = Schedule::new(config.steps, config.warmup_fraction, config.optimizer.lr);
        let mut t = Trainer {
            model,
            opt,
            schedule,
            seed,
            train,
            val,
            val_masks,
            state: TrainState {
                step: 0,
                best_val: None,
                best_step: 0,
                stagnant: 0,
                stopped_early: false,
                history: Vec::new(),
            },
            best: None,
            config,
        };
        let v0 = t.validation_mse()?;
        t.state.history.push(LossRecord {
            step: 0,
            lr: 0.0,
            train_mse: None,
            val_mse: Some(v0),
        });
        t.state.best_val = Some(v0);
        t.best = Some(t.snapshot());
        Ok(t)
    }

    pub fn model(&self) -> &HimaeModel {
        &self.model
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn val_data(&self) -> &Dataset {
        &self.val
    }

    /// Fixed validation masks, one row per validation window.
    pub fn val_masks(&self) -> &Tensor3 {
        &self.val_masks
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn steps_per_epoch(&self) -> u64 {
        (self.train.len() / self.config.batch_size) as u64
    }

    fn eval_interval(&self) -> u64 {
        self.config.eval_every.unwrap_or_else(|| self.steps_per_epoch())
    }

    pub fn finished(&self) -> bool {
        self.state.stopped_early || self.state.step >= self.config.steps
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            params: self.model.params().iter().map(|p| p.value.clone()).collect(),
            stats: self.model.bn_stats().to_vec(),
        }
    }

    /// Masked MSE over the validation set with its fixed masks.
    pub fn validation_mse(&self) -> Result<f64> {
        masked_mse_over(&self.model, &self.val, &self.val_masks, self.config.batch_size)
    }

    /// Indices and masks consumed by optimization step `step`.
    pub fn batch_plan(&self, step: u64) -> Result<(Vec<usize>, Tensor3)> {
        let spe = self.steps_per_epoch();
        let (epoch, pos) = (step / spe, (step % spe) as usize);
        let mut perm: Vec<usize> = (0..self.train.len()).collect();
        perm.shuffle(&mut stream(self.seed, purpose::SHUFFLE, epoch));
        let b = self.config.batch_size;
        let idx = perm[pos * b..(pos + 1) * b].to_vec();
        let mc = self.model.config();
        let regime = self.config.masking.regime(step);
        let mut rng = stream(self.seed, purpose::TRAIN_MASK, step);
        let masks = (0..b)
            .map(|_| {
                if regime == MaskRegime::Contiguous && self.config.contiguous_runs > 1 {
                    sample_contiguous_runs(
                        mc.num_patches(),
                        mc.patch_len,
                        self.config.mask_ratio,
                        self.config.contiguous_runs,
                        &mut rng,
                    )
                } else {
                    sample_mask(mc.num_patches(), mc.patch_len, self.config.mask_ratio, regime, &mut rng)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((idx, mask_tensor(&masks)?))
    }

    /// One optimization step; validates at interval boundaries.
    pub fn step(&mut self) -> Result<f64> {
        if self.finished() {
            return Err(HimaeError::Contract("training already finished".into()));
        }
        let i = self.state.step;
        let (idx, mask) = self.batch_plan(i)?;
        let x = self.train.batch(&idx)?;
        let (loss, grads) = self.model.loss_and_grads(&x, &mask, Mode::Train)?;
        let lr = self.schedule.lr_for_update(i);
        let names: Vec<String> = self.model.params().iter().map(|p| p.name.clone()).collect();
        self.opt
            .step(self.model.params_mut().values_mut(), &grads, lr)
            .map_err(|e| match e {
                HimaeError::NonFiniteGradient { name, index } => HimaeError::NonFiniteGradient {
                    name: name
                        .trim_start_matches('#')
                        .parse::<usize>()
                        .ok()
                        .and_then(|k| names.get(k).cloned())
                        .unwrap_or(name),
                    index,
                },
                other => other,
            })?;
        self.state.step += 1;
        let mut record = LossRecord {
            step: self.state.step,
            lr,
            train_mse: Some(loss),
            val_mse: None,
        };
        if self.state.step % self.eval_interval() == 0 || self.state.step == self.config.steps {
            let v = self.validation_mse()?;
            record.val_mse = Some(v);
            if self.state.best_val.is_none_or(|b| v < b) {
                self.state.best_val = Some(v);
                self.state.best_step = self.state.step;
                self.state.stagnant = 0;
                self.best = Some(self.snapshot());
            } else {
                self.state.stagnant += 1;
                if self.state.stagnant >= self.config.patience {
                    self.state.stopped_early = true;
                }
            }
        }
        self.state.history.push(record);
        Ok(loss)
    }

    /// Steps until the cap, early stopping, or `limit` total steps.
    pub fn run(&mut self, limit: Option<u64>) -> Result<()> {
        while !self.finished() && limit.is_none_or(|l| self.state.step < l) {
            self.step()?;
        }
        Ok(())
    }

    /// The model with the best validation parameters restored.
    pub fn best_model(&self) -> HimaeModel {
        let mut model = self.model.clone();
        if let Some(best) = &self.best {
            for (dst, src) in model.params_mut().values_mut().zip(&best.params) {
                *dst = src.clone();
            }
            model.bn_stats_mut().clone_from_slice(&best.stats);
        }
        model
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let meta = serde_json::json!({
            "model": self.model.config(),
            "train": self.config,
            "seed": self.seed,
            "optimizer_t": self.opt.t,
            "state": self.state,
            "data": {"train": data_hash(&self.train), "val": data_hash(&self.val)},
        });
        let mut tensors = model_tensors(&self.model, "");
        for (p, (m, v)) in self.model.params().iter().zip(self.opt.m.iter().zip(&self.opt.v)) {
            tensors.push((format!("adam.m.{}", p.name), m.clone()));
            tensors.push((format!("adam.v.{}", p.name), v.clone()));
        }
        if let Some(best) = &self.best {
            for (p, v) in self.model.params().iter().zip(&best.params) {
                tensors.push((format!("best.param.{}", p.name), v.clone()));
            }
            tensors.extend(stats_tensors(&best.stats, "best."));
        }
        Ok(Checkpoint { meta, tensors })
    }

    /// Rebuilds a trainer from a checkpoint and the same data it was
    /// created with.
    pub fn resume(ck: &Checkpoint, train: Dataset, val: Dataset) -> Result<Self> {
        let meta = &ck.meta;
        let config: TrainConfig = serde_json::from_value(meta["train"].clone())?;
        let seed = meta["seed"]
            .as_u64()
            .ok_or_else(|| HimaeError::Format("checkpoint lacks a seed".into()))?;
        if meta["data"]["train"] != data_hash(&train) || meta["data"]["val"] != data_hash(&val) {
            return config_err("resume data differs from the data the checkpoint was trained on");
        }
        let model = load_model(ck)?;
        let mut t = Trainer {
            opt: AdamW::new(config.optimizer, model.params().iter().map(|p| p.value.shape())),
            schedule: Schedule::new(config.steps, config.warmup_fraction, config.optimizer.lr),
            val_masks: Tensor3::zeros(Shape3::new(1, 1, 1)),
            state: serde_json::from_value(meta["state"].clone())?,
            best: None,
            model,
            config,
            seed,
            train,
            val,
        };
        t.val_masks = Trainer::val_masks_for(&t.model, &t.config, t.val.len(), seed)?;
        t.opt.t = meta["optimizer_t"].as_u64().unwrap_or(0);
        for (i, p) in t.model.params().iter().enumerate() {
            t.opt.m[i] = required(ck, &format!("adam.m.{}", p.name))?.clone();
            t.opt.v[i] = required(ck, &format!("adam.v.{}", p.name))?.clone();
        }
        if ck.tensors.iter().any(|(n, _)| n.starts_with("best.")) {
            let params = t
                .model
                .params()
                .iter()
                .map(|p| required(ck, &format!("best.param.{}", p.name)).cloned())
                .collect::<Result<_>>()?;
            let stats = read_stats(ck, t.model.bn_stats().len(), "best.")?;
            t.best = Some(Snapshot { params, stats });
        }
        Ok(t)
    }

    fn val_masks_for(model: &HimaeModel, config: &TrainConfig, n: usize, seed: u64) -> Result<Tensor3> {
        let mc = model.config();
        let masks: Vec<PatchMask> = (0..n)
            .map(|j| {
                let mut rng = stream(seed, purpose::VAL_MASK, j as u64);
                sample_mask(mc.num_patches(), mc.patch_len, config.val_mask_ratio, MaskRegime::Random, &mut rng)
            })
            .collect::<Result<_>>()?;
        mask_tensor(&masks)
    }
}

fn required<'a>(ck: &'a Checkpoint, name: &str) -> Result<&'a Tensor3> {
    ck.tensor(name)
        .ok_or_else(|| HimaeError::Format(format!("checkpoint lacks tensor `{name}`")))
}

fn stats_tensors(stats: &[BatchNormStats], prefix: &str) -> Vec<(String, Tensor3)> {
    let mut out = Vec::with_capacity(stats.len() * 2);
    for (i, s) in stats.iter().enumerate() {
        let c = s.running_mean.len();
        let shape = Shape3::new(1, 1, c);
        out.push((
            format!("{prefix}bn.{i}.mean"),
            Tensor3::from_vec(shape, s.running_mean.clone()).expect("positive channel count"),
        ));
        out.push((
            format!("{prefix}bn.{i}.var"),
            Tensor3::from_vec(shape, s.running_var.clone()).expect("positive channel count"),
        ));
    }
    out
}

fn read_stats(ck: &Checkpoint, n: usize, prefix: &str) -> Result<Vec<BatchNormStats>> {
    (0..n)
        .map(|i| {
            Ok(BatchNormStats {
                running_mean: required(ck, &format!("{prefix}bn.{i}.mean"))?.data().to_vec(),
                running_var: required(ck, &format!("{prefix}bn.{i}.var"))?.data().to_vec(),
            })
        })
        .collect()
}

fn model_tensors(model: &HimaeModel, prefix: &str) -> Vec<(String, Tensor3)> {
    let mut out: Vec<(String, Tensor3)> = model
        .params()
        .iter()
        .map(|p| (format!("{prefix}param.{}", p.name), p.value.clone()))
        .collect();
    out.extend(stats_tensors(model.bn_stats(), prefix));
    out
}

/// A checkpoint holding only a model's configuration and weights.
pub fn model_checkpoint(model: &HimaeModel) -> Checkpoint {
    Checkpoint {
        meta: serde_json::json!({ "model": model.config() }),
        tensors: model_tensors(model, ""),
    }
}

/// Restores the model stored in any checkpoint (trainer or model-only).
pub fn load_model(ck: &Checkpoint) -> Result<HimaeModel> {
    let config: HimaeConfig = serde_json::from_value(ck.meta["model"].clone())?;
    let mut model = HimaeModel::new(config, &InitPolicy::new(0))?;
    let values = model
        .params()
        .iter()
        .map(|p| Ok((p.name.clone(), required(ck, &format!("param.{}", p.name))?.clone())))
        .collect::<Result<Vec<_>>>()?;
    model.params_mut().load_values(values)?;
    let stats = read_stats(ck, model.bn_stats().len(), "")?;
    for (dst, src) in model.bn_stats_mut().iter_mut().zip(stats) {
        if dst.running_mean.len() != src.running_mean.len() || dst.running_var.len() != src.running_var.len() {
            return Err(HimaeError::Format("batch-norm statistics have the wrong width".into()));
        }
        *dst = src;
    }
    Ok(model)
}

/// Masked MSE of `model` over `data` with per-window masks `(N, 1, L)`,
/// pooled over every hidden sample.
pub fn masked_mse_over(model: &HimaeModel, data: &Dataset, masks: &Tensor3, batch: usize) -> Result<f64> {
    let (mut sse, mut count) = (0.0, 0.0);
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(batch.max(1)) {
        let x = data.batch(chunk)?;
        let m = masks.select_batch(chunk)?;
        let denom = m.sum() * x.shape().channels as f64;
        if denom == 0.0 {
            continue;
        }
        sse += model.masked_loss(&x, &m)? * denom;
        count += denom;
    }
    if count == 0.0 {
        return Err(HimaeError::EmptyMask);
    }
    Ok(sse / count)
}

pub fn write_loss_csv(history: &[LossRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "lr", "train_mse", "val_mse"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in history {
        w.write_record([r.step.to_string(), r.lr.to_string(), opt(r.train_mse), opt(r.val_mse)])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// Best-validation model.
    pub model: HimaeModel,
    pub state: TrainState,
    pub split: Split,
    pub trainer: Trainer,
}

/// Subject-disjoint split, then train to the step cap or early stop.
pub fn pretrain(model_config: HimaeConfig, config: TrainConfig, data: &Dataset, seed: u64) -> Result<PretrainOutcome> {
    let split = subject_split(data.subjects(), config.val_fraction, seed)?;
    let train = data.subset(&split.train)?;
    let val = data.subset(&split.val)?;
    let mut trainer = Trainer::new(model_config, config, train, val, seed)?;
    trainer.run(None)?;
    Ok(PretrainOutcome {
        model: trainer.best_model(),
        state: trainer.state().clone(),
        split,
        trainer,
    })
}
