//! U-shaped encoder-decoder generator.
//!
//! Encoder level `l` halves the resolution with a 4×4 stride-2 convolution;
//! decoder level `l` mirrors it with a transposed convolution and is
//! concatenated with encoder level `l - 1`. The output passes through `tanh`
//! so every sample lies in `[-1, 1]`. The only stochasticity is dropout in
//! the innermost decoder levels, driven by an explicit seed.

use candle_core::{Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{dropout, instance_norm, leaky_relu, Conv, ConvSpec};
use super::params::{ParamBuilder, ParamStore};
use crate::error::{Error, Result};

/// Number of innermost decoder levels that apply dropout.
pub const DROPOUT_LEVELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub image_size: usize,
    /// Image channels plus the conditioning map.
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    pub dropout_rate: f64,
    /// Produce each output channel with its own single-channel head on the
    /// shared trunk instead of one joint head.
    pub per_channel_heads: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::for_size(64)
    }
}

impl GeneratorConfig {
    /// Default architecture for a square image: one level per halving down
    /// to a 1×1 bottleneck.
    pub fn for_size(image_size: usize) -> Self {
        Self {
            image_size,
            in_channels: 4,
            out_channels: 3,
            base_width: 64,
            depth: image_size.max(1).ilog2() as usize,
            dropout_rate: 0.5,
            per_channel_heads: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !self.image_size.is_power_of_two() {
            return bad(format!("image_size {} is not a power of two", self.image_size));
        }
        if self.depth < 3 {
            return bad(format!("generator depth {} < 3", self.depth));
        }
        if self.depth > self.image_size.ilog2() as usize {
            return bad(format!(
                "depth {} leaves no spatial extent at image_size {}",
                self.depth, self.image_size
            ));
        }
        if self.in_channels < 2 || self.out_channels == 0 || self.base_width == 0 {
            return bad("generator channel counts must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1]", self.dropout_rate));
        }
        Ok(())
    }

    /// Feature width of encoder level `l`, capped at eight times the base.
    fn width(&self, level: usize) -> usize {
        self.base_width << level.min(3)
    }
}

pub struct Generator {
    config: GeneratorConfig,
    down: Vec<Conv>,
    /// `up[l]` maps decoder level `l + 1` to level `l`'s resolution; index 0
    /// is unused because the heads produce full resolution.
    up: Vec<Conv>,
    heads: Vec<Conv>,
    params: ParamStore,
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64, device: &Device) -> Result<Self> {
        config.validate()?;
        let mut pb = ParamBuilder::new(seed, device);
        let n = config.depth;
        let mut down = Vec::with_capacity(n);
        for l in 0..n {
            let c_in = if l == 0 { config.in_channels } else { config.width(l - 1) };
            down.push(Conv::new(&mut pb, &format!("down{l}"), ConvSpec::down(c_in, config.width(l)))?);
        }
        let mut up = Vec::with_capacity(n);
        for l in 1..n {
            let c_in = if l == n - 1 { config.width(l) } else { 2 * config.width(l) };
            up.push(Conv::new(&mut pb, &format!("up{l}"), ConvSpec::up(c_in, config.width(l - 1)))?);
        }
        let head_in = 2 * config.width(0);
        let heads = if config.per_channel_heads {
            (0..config.out_channels)
                .map(|c| Conv::new(&mut pb, &format!("head{c}"), ConvSpec::up(head_in, 1)))
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![Conv::new(&mut pb, "head", ConvSpec::up(head_in, config.out_channels))?]
        };
        Ok(Self {
            config,
            down,
            up,
            heads,
            params: pb.finish(),
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Translates `image` `(N, C, H, W)` under conditioning `cond`
    /// `(N, 1, H, W)`. `dropout_seed = None` disables dropout and makes the
    /// pass deterministic.
    pub fn forward(&self, image: &Tensor, cond: &Tensor, dropout_seed: Option<u64>) -> Result<Tensor> {
        let (n, _, h, w) = image.dims4()?;
        let (cn, _, ch, cw) = cond.dims4()?;
        if (n, h, w) != (cn, ch, cw) {
            return Err(Error::Shape(format!(
                "image {:?} and conditioning {:?} disagree",
                image.dims(),
                cond.dims()
            )));
        }
        if h != self.config.image_size || w != self.config.image_size {
            return Err(Error::Shape(format!(
                "generator expects {0}x{0} inputs, got {h}x{w}",
                self.config.image_size
            )));
        }
        let x = Tensor::cat(&[image, cond], 1)?;
        if x.dim(1)? != self.config.in_channels {
            return Err(Error::Shape(format!(
                "generator expects {} input channels, got {}",
                self.config.in_channels,
                x.dim(1)?
            )));
        }
        let depth = self.config.depth;
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);

        let mut skips = Vec::with_capacity(depth);
        let mut h = self.down[0].forward(&x)?;
        skips.push(h.clone());
        for l in 1..depth {
            h = self.down[l].forward(&leaky_relu(&h)?)?;
            if l < depth - 1 {
                h = instance_norm(&h)?;
            }
            skips.push(h.clone());
        }

        for l in (1..depth).rev() {
            h = self.up[l - 1].forward(&h.relu()?)?;
            h = instance_norm(&h)?;
            if let Some(rng) = rng.as_mut() {
                if l + DROPOUT_LEVELS >= depth {
                    h = dropout(&h, self.config.dropout_rate, rng)?;
                }
            }
            h = Tensor::cat(&[&h, &skips[l - 1]], 1)?;
        }

        let h = h.relu()?;
        let out = if self.heads.len() == 1 {
            self.heads[0].forward(&h)?
        } else {
            let per_channel = self
                .heads
                .iter()
                .map(|head| head.forward(&h))
                .collect::<Result<Vec<_>>>()?;
            Tensor::cat(&per_channel, 1)?
        };
        Ok(out.tanh()?)
    }
}
