//! Patch discriminator: a fully convolutional stack whose output is a grid
//! of raw scores, one per overlapping input patch.
//!
//! No normalization layers are used, so each score depends only on the
//! pixels inside its receptive field.

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use super::layers::{leaky_relu, Conv, ConvSpec};
use super::params::{ParamBuilder, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    /// Conditioning image + conditioning map + candidate image channels.
    pub in_channels: usize,
    /// Count of stride-2 convolutions.
    pub num_scales: usize,
    pub base_width: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            in_channels: 7,
            num_scales: 3,
            base_width: 64,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_scales == 0 || self.base_width == 0 || self.in_channels == 0 {
            return Err(Error::InvalidConfig(
                "discriminator sizes must be positive".into(),
            ));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_width << level.min(3)
    }

    /// Side length of the score grid for a square input. Each stride-2
    /// layer maps `s ↦ s / 2`, each stride-1 4×4 layer maps `s ↦ s - 1`.
    pub fn grid_size(&self, input: usize) -> usize {
        let mut s = input;
        for _ in 0..self.num_scales {
            s /= 2;
        }
        s.saturating_sub(2)
    }

    /// Receptive field of one score, in input pixels.
    pub fn receptive_field(&self) -> usize {
        let mut r = 1 + 3 + 3;
        for _ in 0..self.num_scales {
            r = (r - 1) * 2 + 4;
        }
        r
    }
}

pub struct Discriminator {
    config: DiscriminatorConfig,
    layers: Vec<Conv>,
    params: ParamStore,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64, device: &Device) -> Result<Self> {
        config.validate()?;
        let mut pb = ParamBuilder::new(seed, device);
        let mut layers = Vec::new();
        let mut c_in = config.in_channels;
        for l in 0..config.num_scales {
            let c_out = config.width(l);
            layers.push(Conv::new(&mut pb, &format!("conv{l}"), ConvSpec::down(c_in, c_out))?);
            c_in = c_out;
        }
        let c_out = config.width(config.num_scales);
        layers.push(Conv::new(&mut pb, "conv_wide", ConvSpec::same_ish(c_in, c_out))?);
        layers.push(Conv::new(&mut pb, "score", ConvSpec::same_ish(c_out, 1))?);
        Ok(Self {
            config,
            layers,
            params: pb.finish(),
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Raw (pre-sigmoid) patch scores `(N, 1, S, S)` for the channel-wise
    /// concatenation of `cond_input` and `candidate`.
    pub fn forward(&self, cond_input: &Tensor, candidate: &Tensor) -> Result<Tensor> {
        let x = Tensor::cat(&[cond_input, candidate], 1)
            .map_err(|e| Error::Shape(format!("discriminator inputs: {e}")))?;
        if x.dim(1)? != self.config.in_channels {
            return Err(Error::Shape(format!(
                "discriminator expects {} channels, got {}",
                self.config.in_channels,
                x.dim(1)?
            )));
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i != last {
                h = leaky_relu(&h)?;
            }
        }
        Ok(h)
    }
}

/// The scalar decision reported in logs: mean sigmoid patch score.
pub fn decision(scores: &Tensor) -> Result<f64> {
    let p = candle_nn::ops::sigmoid(scores)?.mean_all()?;
    Ok(p.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;

    fn cfg() -> DiscriminatorConfig {
        DiscriminatorConfig {
            base_width: 8,
            ..DiscriminatorConfig::default()
        }
    }

    #[test]
    fn default_receptive_field_is_70() {
        assert_eq!(DiscriminatorConfig::default().receptive_field(), 70);
    }

    #[test]
    fn zero_parameters_give_chance_decision() {
        let d = Discriminator::new(cfg(), 3, &Device::Cpu).unwrap();
        d.params().fill_zero().unwrap();
        let c = Tensor::ones((2, 4, 64, 64), DType::F32, &Device::Cpu).unwrap();
        let y = Tensor::ones((2, 3, 64, 64), DType::F32, &Device::Cpu).unwrap();
        let s = d.forward(&c, &y).unwrap();
        assert_eq!(s.abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap(), 0.0);
        assert_eq!(decision(&s).unwrap(), 0.5);
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let d = Discriminator::new(cfg(), 3, &Device::Cpu).unwrap();
        let c = Tensor::ones((1, 3, 64, 64), DType::F32, &Device::Cpu).unwrap();
        let y = Tensor::ones((1, 3, 64, 64), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(d.forward(&c, &y), Err(Error::Shape(_))));
    }
}
