use candle_core::{Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamBuilder;
use crate::error::Result;

const INIT_STD: f64 = 0.02;
const NORM_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f64 = 0.2;

/// 2-D convolution or transposed convolution with an optional bias.
#[derive(Debug, Clone)]
pub struct Conv {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
    transposed: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub transposed: bool,
}

impl ConvSpec {
    pub fn down(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: 4,
            stride: 2,
            padding: 1,
            transposed: false,
        }
    }

    pub fn up(in_channels: usize, out_channels: usize) -> Self {
        Self {
            transposed: true,
            ..Self::down(in_channels, out_channels)
        }
    }

    pub fn same_ish(in_channels: usize, out_channels: usize) -> Self {
        Self {
            stride: 1,
            ..Self::down(in_channels, out_channels)
        }
    }
}

impl Conv {
    pub fn new(pb: &mut ParamBuilder, name: &str, spec: ConvSpec) -> Result<Self> {
        let shape = if spec.transposed {
            [spec.in_channels, spec.out_channels, spec.kernel, spec.kernel]
        } else {
            [spec.out_channels, spec.in_channels, spec.kernel, spec.kernel]
        };
        let weight = pb.normal(&format!("{name}.weight"), &shape, INIT_STD)?;
        let bias = Some(pb.zeros(&format!("{name}.bias"), &[spec.out_channels])?);
        Ok(Self {
            weight,
            bias,
            stride: spec.stride,
            padding: spec.padding,
            transposed: spec.transposed,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = if self.transposed {
            x.conv_transpose2d(self.weight.as_tensor(), self.padding, 0, self.stride, 1)?
        } else {
            x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?
        };
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.as_tensor().reshape((1, (), 1, 1))?)?),
            None => Ok(y),
        }
    }
}

pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::leaky_relu(x, LEAKY_SLOPE)?)
}

/// Per-sample, per-channel normalization over the spatial dimensions,
/// without affine parameters.
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim((2, 3))?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim((2, 3))?;
    Ok(centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?)
}

/// Inverted dropout with a mask drawn from `rng`.
pub fn dropout(x: &Tensor, rate: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if rate <= 0.0 {
        return Ok(x.clone());
    }
    if rate >= 1.0 {
        return Ok(x.zeros_like()?);
    }
    let keep = 1.0 - rate;
    let scale = (1.0 / keep) as f32;
    let mask: Vec<f32> = (0..x.elem_count())
        .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
        .collect();
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
    Ok((x * mask)?)
}
