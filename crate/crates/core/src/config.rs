//! Run configuration and its text format.
//!
//! A config file holds one `key = value` pair per line. Keys are dotted
//! (`train.iterations`); blank lines and lines starting with `#` are
//! ignored, as is anything after a ` #` on a value line. Every key is
//! optional and falls back to its default. Unknown keys, repeated keys
//! and unparsable values are reported with file, line and column.
//!
//! | key | default |
//! |-----|---------|
//! | `seed` | 0 |
//! | `sim.agents`, `sim.frames`, `sim.height`, `sim.width` | 6, 60, 32, 32 |
//! | `sim.noise_rate`, `sim.confusion_rate`, `sim.jitter` | 0.15, 0.1, 0.5 |
//! | `sim.noise_sources`, `sim.noise_radius` | 3, 3.0 |
//! | `sim.min_box`, `sim.max_box` | 5, 8 |
//! | `sim.appearance_dim`, `sim.feature_noise` | 16, 0.05 |
//! | `model.feature_channels`, `model.hidden`, `model.kernel_size` | 6, 8, 3 |
//! | `model.activation` (`softplus`, `sigmoid`, `elu_plus_one`, `biased_relu`) | softplus |
//! | `model.relu_eps`, `model.head_bias` | 1e-6, -3.0 |
//! | `train.learning_rate`, `train.batch_size`, `train.iterations` | 1e-3, 4, 2000 |
//! | `train.decay_factor`, `train.decay_interval`, `train.clip_norm` | 0.1, 800, 5.0 |
//! | `train.window`, `train.checkpoint_every` | 0, 0 |
//! | `infer.mode` (`threshold`, `bernoulli`), `infer.event_threshold` | threshold, 0.5 |
//! | `filter.ratio_threshold` | 0.5 |
//! | `tracker.appearance_threshold`, `tracker.motion_threshold` | 0.8, 0.3 |
//! | `tracker.pairs`, `tracker.center_threshold` | 3, 0.5 |
//! | `pipeline.variants` (comma list) | timeindep,sync,syncasync |
//! | `pipeline.train_scenarios`, `pipeline.train_seed_offset` | 8, 1000 |
//! | `pipeline.test_scenarios`, `pipeline.test_seed_offset` | 20, 0 |

use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::DEFAULT_RATIO_THRESHOLD;
use crate::io::read_text;
use crate::model::{ModelConfig, ModelVariant};
use crate::nn::IntensityActivation;
use crate::pointprocess::DEFAULT_EVENT_THRESHOLD;
use crate::simulate::SimConfig;
use crate::tracker::TrackerConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferMode {
    Threshold,
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub variants: Vec<ModelVariant>,
    pub train_scenarios: usize,
    pub train_seed_offset: u64,
    pub test_scenarios: usize,
    pub test_seed_offset: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            variants: ModelVariant::ALL.to_vec(),
            train_scenarios: 8,
            train_seed_offset: 1000,
            test_scenarios: 20,
            test_seed_offset: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub sim: SimConfig,
    pub model: ModelConfig,
    /// `train.seed` is derived from `seed` and not read from files.
    pub train: TrainConfig,
    pub infer_mode: InferMode,
    pub event_threshold: f64,
    pub ratio_threshold: f64,
    pub tracker: TrackerConfig,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            sim: SimConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            infer_mode: InferMode::Threshold,
            event_threshold: DEFAULT_EVENT_THRESHOLD,
            ratio_threshold: DEFAULT_RATIO_THRESHOLD,
            tracker: TrackerConfig::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

fn parse_value<T: FromStr>(value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("cannot parse {value:?} as {}", std::any::type_name::<T>()))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.tracker.validate()?;
        if !(self.event_threshold >= 0.0 && self.event_threshold.is_finite()) {
            return Err(Error::config(format!(
                "event threshold must be non-negative, got {}",
                self.event_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.ratio_threshold) {
            return Err(Error::config(format!(
                "ratio threshold must be in [0, 1], got {}",
                self.ratio_threshold
            )));
        }
        if self.pipeline.variants.is_empty() {
            return Err(Error::config("pipeline needs at least one variant"));
        }
        if self.pipeline.train_scenarios == 0 || self.pipeline.test_scenarios == 0 {
            return Err(Error::config("pipeline needs training and test scenarios"));
        }
        Ok(())
    }

    /// Sets one key; the error message describes the problem with the value
    /// or names an unknown key.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value;
        match key {
            "seed" => self.seed = parse_value(v)?,
            "sim.agents" => self.sim.agents = parse_value(v)?,
            "sim.frames" => self.sim.frames = parse_value(v)?,
            "sim.height" => self.sim.height = parse_value(v)?,
            "sim.width" => self.sim.width = parse_value(v)?,
            "sim.noise_rate" => self.sim.noise_rate = parse_value(v)?,
            "sim.confusion_rate" => self.sim.confusion_rate = parse_value(v)?,
            "sim.jitter" => self.sim.jitter = parse_value(v)?,
            "sim.noise_sources" => self.sim.noise_sources = parse_value(v)?,
            "sim.noise_radius" => self.sim.noise_radius = parse_value(v)?,
            "sim.min_box" => self.sim.min_box = parse_value(v)?,
            "sim.max_box" => self.sim.max_box = parse_value(v)?,
            "sim.appearance_dim" => self.sim.appearance_dim = parse_value(v)?,
            "sim.feature_noise" => self.sim.feature_noise = parse_value(v)?,
            "model.feature_channels" => self.model.feature_channels = parse_value(v)?,
            "model.hidden" => self.model.hidden = parse_value(v)?,
            "model.kernel_size" => self.model.kernel_size = parse_value(v)?,
            "model.head_bias" => self.model.head_bias = parse_value(v)?,
            "model.activation" => {
                self.model.activation = match v {
                    "softplus" => IntensityActivation::Softplus,
                    "sigmoid" => IntensityActivation::Sigmoid,
                    "elu_plus_one" => IntensityActivation::EluPlusOne,
                    "biased_relu" => IntensityActivation::BiasedRelu { eps: 1e-6 },
                    _ => return Err(format!("unknown activation {v:?}")),
                }
            }
            "model.relu_eps" => {
                let eps = parse_value(v)?;
                match &mut self.model.activation {
                    IntensityActivation::BiasedRelu { eps: e } => *e = eps,
                    _ => return Err("model.relu_eps needs model.activation = biased_relu first".to_string()),
                }
            }
            "train.learning_rate" => self.train.learning_rate = parse_value(v)?,
            "train.batch_size" => self.train.batch_size = parse_value(v)?,
            "train.iterations" => self.train.iterations = parse_value(v)?,
            "train.decay_factor" => self.train.decay_factor = parse_value(v)?,
            "train.decay_interval" => self.train.decay_interval = parse_value(v)?,
            "train.clip_norm" => self.train.clip_norm = parse_value(v)?,
            "train.window" => self.train.window = parse_value(v)?,
            "train.checkpoint_every" => self.train.checkpoint_every = parse_value(v)?,
            "infer.mode" => {
                self.infer_mode = match v {
                    "threshold" => InferMode::Threshold,
                    "bernoulli" => InferMode::Bernoulli,
                    _ => return Err(format!("unknown inference mode {v:?}")),
                }
            }
            "infer.event_threshold" => self.event_threshold = parse_value(v)?,
            "filter.ratio_threshold" => self.ratio_threshold = parse_value(v)?,
            "tracker.appearance_threshold" => self.tracker.appearance_threshold = parse_value(v)?,
            "tracker.motion_threshold" => self.tracker.motion_threshold = parse_value(v)?,
            "tracker.pairs" => self.tracker.pairs = parse_value(v)?,
            "tracker.center_threshold" => self.tracker.center_threshold = parse_value(v)?,
            "pipeline.variants" => {
                self.pipeline.variants = v
                    .split(',')
                    .map(|s| s.trim().parse::<ModelVariant>().map_err(|e| e.to_string()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "pipeline.train_scenarios" => self.pipeline.train_scenarios = parse_value(v)?,
            "pipeline.train_seed_offset" => self.pipeline.train_seed_offset = parse_value(v)?,
            "pipeline.test_scenarios" => self.pipeline.test_scenarios = parse_value(v)?,
            "pipeline.test_seed_offset" => self.pipeline.test_seed_offset = parse_value(v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Applies the `key = value` lines of `text` on top of the defaults and
    /// validates the result. `src` names the source in errors.
    pub fn parse(text: &str, src: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let body = raw.split(" #").next().unwrap_or("");
            let trimmed = body.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let key_col = body.len() - body.trim_start().len() + 1;
            let Some(eq) = body.find('=') else {
                return Err(Error::parse(src, line, key_col, "expected `key = value`"));
            };
            let key = body[..eq].trim();
            let after = &body[eq + 1..];
            let value = after.trim();
            let value_col = eq + 2 + (after.len() - after.trim_start().len());
            if key.is_empty() {
                return Err(Error::parse(src, line, key_col, "missing key before `=`"));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::parse(src, line, key_col, format!("key {key:?} set twice")));
            }
            cfg.set(key, value).map_err(|msg| {
                let col = if msg.starts_with("unknown key") {
                    key_col
                } else {
                    value_col
                };
                Error::parse(src, line, col, msg)
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        RunConfig::parse(&read_text(path)?, &path.display().to_string())
    }
}
