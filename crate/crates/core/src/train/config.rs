use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{LossWeights, Norm};
use crate::nn::{DiscriminatorConfig, GeneratorConfig, Provenance};
use crate::raster::{RasterParams, Variant};

/// Generator hyperparameters that do not depend on the image size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorArch {
    pub base_width: usize,
    /// Defaults to `log2(image_size)`, a 1×1 bottleneck.
    pub depth: Option<usize>,
    pub dropout_rate: f64,
    pub per_channel_heads: bool,
}

impl Default for GeneratorArch {
    fn default() -> Self {
        Self {
            base_width: 64,
            depth: None,
            dropout_rate: 0.5,
            per_channel_heads: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorArch {
    pub num_scales: usize,
    pub base_width: usize,
}

impl Default for DiscriminatorArch {
    fn default() -> Self {
        let d = DiscriminatorConfig::default();
        Self {
            num_scales: d.num_scales,
            base_width: d.base_width,
        }
    }
}

/// Every knob of the objective and the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub image_size: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3_start: f64,
    pub lambda3_end: f64,
    pub color_norm: Norm,
    pub variant: Variant,
    pub raster: RasterParams,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Steps between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: u64,
    /// Random left-right flips of whole pairs.
    pub flip: bool,
    pub generator: GeneratorArch,
    pub discriminator: DiscriminatorArch,
    pub identity_extractor: Provenance,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            lambda1: 100.0,
            lambda2: 10.0,
            lambda3_start: 0.1,
            lambda3_end: 0.5,
            color_norm: Norm::L1,
            variant: Variant::S,
            raster: RasterParams::default(),
            learning_rate: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            epochs: 20,
            seed: 0,
            checkpoint_every: 1000,
            flip: true,
            generator: GeneratorArch::default(),
            discriminator: DiscriminatorArch::default(),
            identity_extractor: Provenance::SeededRandom { seed: 7 },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be ≥ 1".into());
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.lambda3_start < 0.0 || self.lambda3_end < 0.0 {
            return bad("lambda3 schedule endpoints must be ≥ 0".into());
        }
        if self.raster.radius == 0 || self.raster.line_width == 0 {
            return bad("raster radius and line width must be ≥ 1".into());
        }
        self.weights(self.lambda3_start).validate()?;
        self.generator_config().validate()?;
        self.discriminator_config().validate()
    }

    pub fn weights(&self, lambda3: f64) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3,
            color_norm: self.color_norm,
            conditioning_variant: self.variant,
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        let base = GeneratorConfig::for_size(self.image_size);
        GeneratorConfig {
            base_width: self.generator.base_width,
            depth: self.generator.depth.unwrap_or(base.depth),
            dropout_rate: self.generator.dropout_rate,
            per_channel_heads: self.generator.per_channel_heads,
            ..base
        }
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            in_channels: 3 + 1 + 3,
            num_scales: self.discriminator.num_scales,
            base_width: self.discriminator.base_width,
        }
    }
}

/// Identity-loss weight for `epoch`: linear from `lambda3_start` at epoch 0
/// to `lambda3_end` at the final epoch.
pub fn lambda3_at(epoch: usize, config: &TrainConfig) -> Result<f64> {
    if epoch >= config.epochs {
        return Err(Error::InvalidConfig(format!(
            "epoch {epoch} outside 0..{}",
            config.epochs
        )));
    }
    if config.epochs == 1 {
        return Ok(config.lambda3_start);
    }
    let t = epoch as f64 / (config.epochs - 1) as f64;
    Ok(config.lambda3_start + t * (config.lambda3_end - config.lambda3_start))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let cfg = TrainConfig::default();
        assert_eq!(lambda3_at(0, &cfg).unwrap(), 0.1);
        assert!((lambda3_at(19, &cfg).unwrap() - 0.5).abs() < 1e-15);
        // Conceptual midpoint 9.5 lies between epochs 9 and 10.
        let mid = (lambda3_at(9, &cfg).unwrap() + lambda3_at(10, &cfg).unwrap()) / 2.0;
        assert!((mid - 0.3).abs() < 1e-12);
        assert!(lambda3_at(20, &cfg).is_err());
    }

    #[test]
    fn schedule_is_monotone() {
        let cfg = TrainConfig::default();
        let vals: Vec<f64> = (0..cfg.epochs).map(|e| lambda3_at(e, &cfg).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[0] < w[1]));
        assert!(vals.iter().all(|v| (0.1..=0.5 + 1e-12).contains(v)));
    }

    #[test]
    fn rejects_invalid_values() {
        assert!(TrainConfig::default().validate().is_ok());
        for cfg in [
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { lambda1: -1.0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
