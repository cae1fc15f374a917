pub use crate::attn::params::ValueSource;

use crate::error::{ModelError, Result};

/// Architecture hyperparameters for the dual-stream network.
///
/// Stage s (0-based) runs on a lattice of edge E/(patch·2ˢ) with
/// base_channels·2ˢ channels; heads at a stage are channels/head_dim.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Patch edge at the stem; must be a power of two.
    pub patch: usize,
    /// Channels after the stem.
    pub base_channels: usize,
    /// Encoder stage count; the decoder mirrors stages 0..stages−1.
    pub stages: usize,
    /// (swin, cross) block pairs per stage.
    pub blocks_per_stage: usize,
    /// Window edge for all windowed attention.
    pub window: usize,
    /// Channels per attention head.
    pub head_dim: usize,
    /// Segmentation classes including background.
    pub classes: usize,
    /// Which stream supplies values in cross-attention.
    pub value_source: ValueSource,
    /// Root seed for parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            patch: 4,
            base_channels: 24,
            stages: 3,
            blocks_per_stage: 1,
            window: 4,
            head_dim: 8,
            classes: 8,
            value_source: ValueSource::B,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || !self.patch.is_power_of_two() {
            return Err(ModelError::Config(format!(
                "patch edge {} must be a power of two",
                self.patch
            )));
        }
        if self.stages == 0 || self.blocks_per_stage == 0 || self.window == 0 {
            return Err(ModelError::Config(
                "stages, blocks per stage, and window must be positive".into(),
            ));
        }
        if self.classes < 2 {
            return Err(ModelError::Config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.base_channels % self.patch != 0 || self.base_channels / self.patch == 0 {
            return Err(ModelError::Config(format!(
                "base channels {} must be a positive multiple of patch {} so the \
                 full-resolution expansion can halve channels at every doubling",
                self.base_channels, self.patch
            )));
        }
        for s in 0..self.stages {
            let c = self.channels_at(s);
            if c % self.head_dim != 0 {
                return Err(ModelError::HeadDivisibility {
                    channels: c,
                    head_dim: self.head_dim,
                });
            }
        }
        Ok(())
    }

    /// Volume extents must be divisible by this for every lattice in the U
    /// shape to window cleanly.
    pub fn pad_multiple(&self) -> usize {
        self.patch * (1 << (self.stages - 1)) * self.window
    }

    pub fn check_extents(&self, extents: &[usize; 3]) -> Result<()> {
        let m = self.pad_multiple();
        for &e in extents {
            if e == 0 || e % m != 0 {
                return Err(ModelError::Divisibility {
                    extent: e,
                    multiple: m,
                    context: "input volume",
                });
            }
        }
        Ok(())
    }

    pub fn channels_at(&self, stage: usize) -> usize {
        self.base_channels << stage
    }

    pub fn heads_at(&self, stage: usize) -> usize {
        self.channels_at(stage) / self.head_dim
    }

    /// Per-stream channels after the full-resolution expansion.
    pub fn final_channels(&self) -> usize {
        self.base_channels / self.patch
    }

    /// Number of expand steps from the stage-0 lattice back to voxels.
    pub fn final_expansions(&self) -> usize {
        self.patch.trailing_zeros() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.pad_multiple(), 64);
        assert_eq!(cfg.channels_at(2), 96);
        assert_eq!(cfg.heads_at(0), 3);
        assert_eq!(cfg.final_channels(), 6);
        assert_eq!(cfg.final_expansions(), 2);
    }

    #[test]
    fn non_power_of_two_patch_rejected() {
        let cfg = ModelConfig {
            patch: 3,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn head_divisibility_enforced_per_stage() {
        let cfg = ModelConfig {
            base_channels: 20,
            patch: 4,
            head_dim: 8,
            ..ModelConfig::default()
        };
        assert!(matches!(
            cfg.validate().unwrap_err(),
            ModelError::HeadDivisibility { .. }
        ));
    }

    #[test]
    fn extent_check_names_the_multiple() {
        let cfg = ModelConfig::default();
        assert!(cfg.check_extents(&[64, 64, 64]).is_ok());
        assert!(matches!(
            cfg.check_extents(&[64, 48, 64]).unwrap_err(),
            ModelError::Divisibility {
                extent: 48,
                multiple: 64,
                ..
            }
        ));
    }
}
