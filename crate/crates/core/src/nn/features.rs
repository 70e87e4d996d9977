//! Frozen feature extractors for the identity-preserving loss.

use std::fmt;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::leaky_relu;
use super::params::load_tensors;
use crate::error::{Error, Result};

/// Where an extractor's weights came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    SeededRandom { seed: u64 },
    Pretrained { path: PathBuf },
    Identity,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::SeededRandom { seed } => write!(f, "seeded-random({seed})"),
            Provenance::Pretrained { path } => write!(f, "pretrained({})", path.display()),
            Provenance::Identity => f.write_str("identity"),
        }
    }
}

/// A fixed mapping from images to feature maps. Implementations never
/// expose trainable variables, so gradients flow through them to the input
/// but never update them.
pub trait FeatureExtractor {
    fn extract(&self, image: &Tensor) -> Result<Tensor>;
    fn provenance(&self) -> Provenance;
}

/// Returns its input unchanged.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn extract(&self, image: &Tensor) -> Result<Tensor> {
        Ok(image.clone())
    }

    fn provenance(&self) -> Provenance {
        Provenance::Identity
    }
}

/// Stack of 4×4 stride-2 convolutions with leaky ReLU activations.
#[derive(Debug, Clone)]
pub struct ConvFeatureExtractor {
    layers: Vec<(Tensor, Tensor)>,
    provenance: Provenance,
}

pub const DEFAULT_EXTRACTOR_WIDTHS: [usize; 3] = [16, 32, 64];

impl ConvFeatureExtractor {
    /// He-initialized random weights from `seed`.
    pub fn seeded(seed: u64, in_channels: usize, widths: &[usize], device: &Device) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(widths.len());
        let mut c_in = in_channels;
        for &c_out in widths {
            let fan_in = (c_in * 16) as f32;
            let dist = Normal::new(0.0f32, (2.0 / fan_in).sqrt()).expect("positive std");
            let w: Vec<f32> = (0..c_out * c_in * 16).map(|_| dist.sample(&mut rng)).collect();
            let b: Vec<f32> = (0..c_out).map(|_| 0.1 * dist.sample(&mut rng)).collect();
            layers.push((
                Tensor::from_vec(w, (c_out, c_in, 4, 4), device)?,
                Tensor::from_vec(b, c_out, device)?,
            ));
            c_in = c_out;
        }
        Ok(Self {
            layers,
            provenance: Provenance::SeededRandom { seed },
        })
    }

    /// Loads `conv{i}.weight` / `conv{i}.bias` tensors from a safetensors file.
    pub fn from_safetensors(path: &Path, device: &Device) -> Result<Self> {
        let tensors = load_tensors(path, device)?;
        let mut layers = Vec::new();
        while let Some(w) = tensors.get(&format!("conv{}.weight", layers.len())) {
            let i = layers.len();
            let b = tensors.get(&format!("conv{i}.bias")).ok_or_else(|| Error::Checkpoint {
                path: path.to_path_buf(),
                message: format!("missing conv{i}.bias"),
            })?;
            layers.push((w.to_dtype(candle_core::DType::F32)?, b.to_dtype(candle_core::DType::F32)?));
        }
        if layers.is_empty() {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                message: "no conv0.weight tensor".into(),
            });
        }
        Ok(Self {
            layers,
            provenance: Provenance::Pretrained {
                path: path.to_path_buf(),
            },
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |(w, _)| w.dims()[0])
    }
}

impl FeatureExtractor for ConvFeatureExtractor {
    fn extract(&self, image: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = image.dims4()?;
        let expected_c = self.layers[0].0.dims()[1];
        let min = 1usize << self.layers.len();
        if c != expected_c || h % min != 0 || w % min != 0 {
            return Err(Error::Shape(format!(
                "extractor needs {expected_c} channels and sides divisible by {min}, got {c}x{h}x{w}"
            )));
        }
        let mut x = image.clone();
        for (weight, bias) in &self.layers {
            let w = weight.to_dtype(x.dtype())?;
            let b = bias.to_dtype(x.dtype())?.reshape((1, (), 1, 1))?;
            x = leaky_relu(&x.conv2d(&w, 1, 2, 1, 1)?.broadcast_add(&b)?)?;
        }
        Ok(x)
    }

    fn provenance(&self) -> Provenance {
        self.provenance.clone()
    }
}
