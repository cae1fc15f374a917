//! Flat `key = value` run configuration. Every run is fully described by this
//! text plus the dataset; the same text is echoed into checkpoints so a saved
//! model carries its own geometry.

use micseg_model::net::variant_names;
use micseg_model::{ModelConfig, ValueSource};

use crate::error::{Result, TrainError};

pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_CHECKPOINT_EVERY: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Registry name of the model variant to train.
    pub variant: String,
    pub lr: f64,
    pub epochs: usize,
    /// Resume snapshots are written every this many epochs.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            variant: "dual".to_owned(),
            lr: DEFAULT_LR,
            epochs: DEFAULT_EPOCHS,
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "patch",
    "base_channels",
    "stages",
    "blocks_per_stage",
    "window",
    "head_dim",
    "classes",
    "value_source",
    "variant",
    "lr",
    "epochs",
    "checkpoint_every",
];

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| TrainError::Config(format!("bad value '{value}' for key '{key}'")))
}

impl TrainConfig {
    /// Parse the flat text format: one `key = value` per line, `#` comments,
    /// blank lines ignored, unknown keys rejected. Unset keys keep defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                TrainError::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "seed" => cfg.model.seed = parse_as(key, value)?,
                "patch" => cfg.model.patch = parse_as(key, value)?,
                "base_channels" => cfg.model.base_channels = parse_as(key, value)?,
                "stages" => cfg.model.stages = parse_as(key, value)?,
                "blocks_per_stage" => cfg.model.blocks_per_stage = parse_as(key, value)?,
                "window" => cfg.model.window = parse_as(key, value)?,
                "head_dim" => cfg.model.head_dim = parse_as(key, value)?,
                "classes" => cfg.model.classes = parse_as(key, value)?,
                "value_source" => cfg.model.value_source = ValueSource::parse(value)?,
                "variant" => {
                    if !variant_names().contains(&value) {
                        return Err(TrainError::Config(format!(
                            "unknown variant '{value}'; known: {}",
                            variant_names().join(", ")
                        )));
                    }
                    cfg.variant = value.to_owned();
                }
                "lr" => cfg.lr = parse_as(key, value)?,
                "epochs" => cfg.epochs = parse_as(key, value)?,
                "checkpoint_every" => cfg.checkpoint_every = parse_as(key, value)?,
                unknown => {
                    return Err(TrainError::Config(format!(
                        "unknown key '{unknown}'; known keys: {}",
                        KNOWN_KEYS.join(", ")
                    )));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(TrainError::Config(format!(
                "lr must be positive and finite, got {}",
                self.lr
            )));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(TrainError::Config(
                "checkpoint_every must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text())` reproduces the config exactly.
    pub fn to_text(&self) -> String {
        format!(
            "seed = {}\n\
             patch = {}\n\
             base_channels = {}\n\
             stages = {}\n\
             blocks_per_stage = {}\n\
             window = {}\n\
             head_dim = {}\n\
             classes = {}\n\
             value_source = {}\n\
             variant = {}\n\
             lr = {}\n\
             epochs = {}\n\
             checkpoint_every = {}\n",
            self.model.seed,
            self.model.patch,
            self.model.base_channels,
            self.model.stages,
            self.model.blocks_per_stage,
            self.model.window,
            self.model.head_dim,
            self.model.classes,
            self.model.value_source.as_str(),
            self.variant,
            self.lr,
            self.epochs,
            self.checkpoint_every,
        )
    }
}
