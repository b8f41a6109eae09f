//! Run configuration: one nested document covering every module, loaded
//! from TOML or JSON and adjusted with dotted `key=value` overrides.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::Path;

use crate::data::sqi::SqiConfig;
use crate::data::synth::SynthConfig;
use crate::error::{config_err, HimaeError, Result};
use crate::eval::bench::GenerativeTaskSpec;
use crate::eval::probe::ProbeConfig;
use crate::eval::tasks::{PlantedTask, TaskConfig};
use crate::model::HimaeConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub test_fraction: f64,
    /// Time-average each level before probing; flattened otherwise.
    pub mean_pool: bool,
    pub tasks: Vec<PlantedTask>,
    pub few_shot_k: Vec<usize>,
    pub few_shot_repeats: usize,
    /// Level probed by `fewshot`; the deepest when unset.
    pub level: Option<usize>,
    /// Checkpoint with the frozen encoder; a freshly initialized model
    /// when unset.
    pub checkpoint: Option<String>,
    /// Windows held out for the generative benchmark.
    pub bench_windows: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            mean_pool: true,
            tasks: vec![PlantedTask::FineTransient, PlantedTask::CoarseRhythm],
            few_shot_k: vec![1, 2, 4, 8, 16, 32, 64],
            few_shot_repeats: 5,
            level: None,
            checkpoint: None,
            bench_windows: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileConfig {
    pub batch: usize,
    pub repeats: usize,
    pub warmup: usize,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            batch: 1,
            repeats: 20,
            warmup: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: HimaeConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub sqi: SqiConfig,
    pub task: TaskConfig,
    pub probe: ProbeConfig,
    pub bench: GenerativeTaskSpec,
    pub eval: EvalConfig,
    pub profile: ProfileConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: HimaeConfig::base(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            sqi: SqiConfig::default(),
            task: TaskConfig::default(),
            probe: ProbeConfig::default(),
            bench: GenerativeTaskSpec::default(),
            eval: EvalConfig::default(),
            profile: ProfileConfig::default(),
        }
    }
}

/// Short names accepted by `--set` and grid specifications.
const ALIASES: [(&str, &str); 12] = [
    ("mask_ratio", "train.mask_ratio"),
    ("steps", "train.steps"),
    ("batch_size", "train.batch_size"),
    ("lr", "train.optimizer.lr"),
    ("weight_decay", "train.optimizer.weight_decay"),
    ("variant", "model.variant"),
    ("widths", "model.widths"),
    ("patch_len", "model.patch_len"),
    ("kernel", "model.kernel"),
    ("stride", "model.stride"),
    ("subjects", "synth.subjects"),
    ("windows_per_subject", "synth.windows_per_subject"),
];

pub fn resolve_key(key: &str) -> String {
    ALIASES
        .iter()
        .find(|(a, _)| *a == key)
        .map_or_else(|| key.to_string(), |(_, full)| full.to_string())
}

/// Parses an override value: JSON literal when it parses, bare string
/// otherwise.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn preset_widths(name: &str) -> Result<Vec<usize>> {
    match name {
        "tiny" => Ok(HimaeConfig::tiny().widths),
        "small" => Ok(HimaeConfig::small().widths),
        "base" => Ok(HimaeConfig::base().widths),
        other => config_err(format!("unknown model preset `{other}`")),
    }
}

impl RunConfig {
    pub fn from_str_with_format(text: &str, json: bool) -> Result<Self> {
        let cfg: RunConfig = if json {
            serde_json::from_str(text).map_err(|e| HimaeError::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| HimaeError::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `.json` files are parsed as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HimaeError::Config(format!("cannot read {}: {e}", path.display())))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::from_str_with_format(&text, json)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| HimaeError::Config(e.to_string()))
    }

    /// Applies `key=value`. Keys are dotted paths into the document (or
    /// aliases); `model.preset` / `preset` selects a width preset.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let key = resolve_key(key.trim());
        if key == "preset" || key == "model.preset" {
            self.model.widths = preset_widths(raw.trim())?;
            return self.validate();
        }
        let mut doc = serde_json::to_value(&*self)?;
        let mut node = &mut doc;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            node = match node.get_mut(*part) {
                Some(child) if i + 1 < parts.len() => child,
                Some(child) => {
                    *child = parse_value(raw.trim());
                    break;
                }
                None => return config_err(format!("unknown configuration key `{key}`")),
            };
        }
        let next: RunConfig =
            serde_json::from_value(doc).map_err(|e| HimaeError::Config(format!("bad value for `{key}`: {e}")))?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    /// Whether `key` (or its alias) names a settable field.
    pub fn has_key(&self, key: &str) -> bool {
        let key = resolve_key(key.trim());
        if key == "preset" || key == "model.preset" {
            return true;
        }
        let Ok(doc) = serde_json::to_value(self) else { return false };
        key.split('.').try_fold(&doc, |node, part| node.get(part)).is_some()
    }

    /// Applies `key=value` strings in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| HimaeError::Config(format!("override `{o}` is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        self.task.validate()?;
        self.bench.validate()?;
        if self.synth.window_len != self.model.input_len {
            return config_err(format!(
                "synth.window_len {} differs from model.input_len {}",
                self.synth.window_len, self.model.input_len
            ));
        }
        if !(self.eval.test_fraction > 0.0 && self.eval.test_fraction < 1.0) {
            return config_err("eval.test_fraction must lie in (0, 1)");
        }
        if self.profile.repeats == 0 || self.profile.batch == 0 {
            return config_err("profile.repeats and profile.batch must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_str_with_format(&text, false).unwrap(), cfg);
    }

    #[test]
    fn overrides_and_aliases() {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(&["mask_ratio=0.6", "model.variant=no-skip", "preset=tiny", "eval.level=2"])
            .unwrap();
        assert_eq!(cfg.train.mask_ratio, 0.6);
        assert_eq!(cfg.model.variant, crate::model::Variant::NoSkip);
        assert_eq!(cfg.model.widths, vec![16, 32, 64]);
        assert_eq!(cfg.eval.level, Some(2));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("train.nope", "1").is_err());
        assert!(cfg.set("model.patch_len", "7").is_err());
        assert!(RunConfig::from_str_with_format("[train]\nbogus = 1\n", false).is_err());
        assert_eq!(cfg, RunConfig::default());
    }
}
