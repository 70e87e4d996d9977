//! Training objectives.
//!
//! All image losses take `(N, C, H, W)` tensors. Reconstruction losses come
//! in two forms: an unnormalized *core* (raw sums or root-sum-squares, per
//! sample, averaged over the batch) and a normalized value dividing the core
//! by the number of elements inside each norm. The normalized values keep the
//! loss weights meaningful at any resolution; the cores are what the gradient
//! structure statements are phrased in.
//!
//! The color loss evaluates one norm per channel and sums them, so the
//! gradient with respect to a channel depends only on that channel's
//! residual. The joint pixel L2 loss shares one root across channels and
//! does not have that property; [`cross_channel_gradient_probe`] measures the
//! difference.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::FeatureExtractor;
use crate::raster::Variant;

/// Probability clamp for binary cross entropy.
pub const BCE_EPS: f64 = 1e-7;
/// Central finite-difference step used by the gradient probe.
pub const PROBE_STEP: f64 = 1e-4;
/// Residual shift applied to the perturbed channel by the gradient probe.
pub const PROBE_SHIFT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    L1,
    L2,
}

/// Mean binary cross entropy of a probability grid against a constant
/// target, with predictions clamped to `[ε, 1 - ε]`.
pub fn bce(prediction: &Tensor, target: f64) -> Result<Tensor> {
    let p = prediction.clamp(BCE_EPS, 1.0 - BCE_EPS)?;
    let loss = if target >= 0.5 {
        p.log()?.neg()?
    } else {
        p.affine(-1.0, 1.0)?.log()?.neg()?
    };
    Ok(loss.mean_all()?)
}

/// Dual-discriminator objective: each discriminator's real/fake BCE pair is
/// halved. `d1_*` judge the x→y direction, `d2_*` the y→x direction. All
/// inputs are probabilities; fakes must already be detached from the
/// generator.
pub fn adversarial_d_loss(
    d1_real: &Tensor,
    d1_fake: &Tensor,
    d2_real: &Tensor,
    d2_fake: &Tensor,
) -> Result<Tensor> {
    let d1 = ((bce(d1_real, 1.0)? + bce(d1_fake, 0.0)?)? * 0.5)?;
    let d2 = ((bce(d2_real, 1.0)? + bce(d2_fake, 0.0)?)? * 0.5)?;
    Ok((d1 + d2)?)
}

/// Non-saturating generator objective: generated samples are pushed toward
/// the "real" label under both discriminators.
pub fn adversarial_g_loss(d1_fake: &Tensor, d2_fake: &Tensor) -> Result<Tensor> {
    Ok((bce(d1_fake, 1.0)? + bce(d2_fake, 1.0)?)?)
}

fn residual(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    if pred.rank() != 4 {
        return Err(Error::Shape(format!(
            "expected (N, C, H, W) images, got {:?}",
            pred.dims()
        )));
    }
    Ok((target - pred)?)
}

/// Unnormalized joint reconstruction loss: per sample, `Σ|r|` over every
/// element (L1) or `√Σ r²` over every element (L2); batch mean.
pub fn pixel_loss_core(pred: &Tensor, target: &Tensor, norm: Norm) -> Result<Tensor> {
    let r = residual(pred, target)?;
    let per_sample = match norm {
        Norm::L1 => r.abs()?.sum((1, 2, 3))?,
        Norm::L2 => r.sqr()?.sum((1, 2, 3))?.sqrt()?,
    };
    Ok(per_sample.mean(0)?)
}

/// [`pixel_loss_core`] divided by `C·H·W`.
pub fn pixel_loss(pred: &Tensor, target: &Tensor, norm: Norm) -> Result<Tensor> {
    let (_, c, h, w) = pred.dims4()?;
    Ok((pixel_loss_core(pred, target, norm)? / (c * h * w) as f64)?)
}

/// Unnormalized color loss: per sample, the sum over channels of each
/// channel's own `Σ|r_c|` (L1) or `√Σ r_c²` (L2); batch mean.
pub fn color_loss_core(pred: &Tensor, target: &Tensor, norm: Norm) -> Result<Tensor> {
    let r = residual(pred, target)?;
    let per_channel = match norm {
        Norm::L1 => r.abs()?.sum((2, 3))?,
        Norm::L2 => r.sqr()?.sum((2, 3))?.sqrt()?,
    };
    Ok(per_channel.sum(1)?.mean(0)?)
}

/// [`color_loss_core`] divided by `H·W`, i.e. the sum of per-channel
/// normalized norms.
pub fn color_loss(pred: &Tensor, target: &Tensor, norm: Norm) -> Result<Tensor> {
    let (_, _, h, w) = pred.dims4()?;
    Ok((color_loss_core(pred, target, norm)? / (h * w) as f64)?)
}

/// Reconstruction loss selector for [`cross_channel_gradient_probe`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeLoss {
    Pixel(Norm),
    Color(Norm),
}

impl ProbeLoss {
    fn core(self, pred: &Tensor, target: &Tensor) -> Result<f64> {
        let v = match self {
            ProbeLoss::Pixel(n) => pixel_loss_core(pred, target, n)?,
            ProbeLoss::Color(n) => color_loss_core(pred, target, n)?,
        };
        Ok(v.to_dtype(DType::F64)?.to_scalar::<f64>()?)
    }
}

/// Central-difference derivative of the loss core with respect to the first
/// pixel of `channel` in sample 0.
fn channel_derivative(loss: ProbeLoss, pred: &Tensor, target: &Tensor, channel: usize) -> Result<f64> {
    let basis = one_hot_like(pred, channel)?;
    let plus = (pred + (&basis * PROBE_STEP)?)?;
    let minus = (pred - (&basis * PROBE_STEP)?)?;
    Ok((loss.core(&plus, target)? - loss.core(&minus, target)?) / (2.0 * PROBE_STEP))
}

fn one_hot_like(t: &Tensor, channel: usize) -> Result<Tensor> {
    let mut data = vec![0f64; t.elem_count()];
    let (_, _, h, w) = t.dims4()?;
    data[channel * h * w] = 1.0;
    Ok(Tensor::from_vec(data, t.shape(), t.device())?)
}

fn channel_mask(t: &Tensor, channel: usize) -> Result<Tensor> {
    let (n, c, h, w) = t.dims4()?;
    let mut data = vec![0f64; n * c * h * w];
    for s in 0..n {
        let start = (s * c + channel) * h * w;
        data[start..start + h * w].fill(1.0);
    }
    Ok(Tensor::from_vec(data, t.shape(), t.device())?)
}

/// How much the gradient of `loss` with respect to `channel_measured` moves
/// when the residual of `channel_perturbed` grows by [`PROBE_SHIFT`].
///
/// Zero means the measured channel's gradient is isolated from the perturbed
/// channel. Evaluation is in `f64` on the unnormalized core. L2 losses are
/// rejected where the norm containing the measured element has a zero
/// residual, since the root is not differentiable there.
pub fn cross_channel_gradient_probe(
    loss: ProbeLoss,
    pred: &Tensor,
    target: &Tensor,
    channel_perturbed: usize,
    channel_measured: usize,
) -> Result<f64> {
    let pred = pred.to_dtype(DType::F64)?;
    let target = target.to_dtype(DType::F64)?;
    residual(&pred, &target)?;
    let channels = pred.dim(1)?;
    if channel_perturbed >= channels || channel_measured >= channels {
        return Err(Error::Shape(format!(
            "probe channels ({channel_perturbed}, {channel_measured}) out of range for {channels} channels"
        )));
    }
    // Moving pred down by the shift grows target - pred by the same amount.
    let shifted = (&pred - (channel_mask(&pred, channel_perturbed)? * PROBE_SHIFT)?)?;

    if let ProbeLoss::Pixel(Norm::L2) | ProbeLoss::Color(Norm::L2) = loss {
        for p in [&pred, &shifted] {
            let r = (&target - p)?.sqr()?.get(0)?;
            let energy = match loss {
                ProbeLoss::Color(_) => r.get(channel_measured)?.sum_all()?,
                _ => r.sum_all()?,
            }
            .to_scalar::<f64>()?;
            if energy.sqrt() <= PROBE_STEP {
                return Err(Error::InvalidConfig(
                    "L2 gradient probe evaluated at a zero residual (not differentiable)".into(),
                ));
            }
        }
    }

    let before = channel_derivative(loss, &pred, &target, channel_measured)?;
    let after = channel_derivative(loss, &shifted, &target, channel_measured)?;
    Ok(after - before)
}

/// Something that maps `(image, conditioning)` to an image. Closures and
/// the generator both qualify.
pub trait Translate {
    fn translate(&self, image: &Tensor, cond: &Tensor) -> Result<Tensor>;
}

impl<F> Translate for F
where
    F: Fn(&Tensor, &Tensor) -> Result<Tensor>,
{
    fn translate(&self, image: &Tensor, cond: &Tensor) -> Result<Tensor> {
        self(image, cond)
    }
}

impl Translate for crate::nn::Generator {
    fn translate(&self, image: &Tensor, cond: &Tensor) -> Result<Tensor> {
        self.forward(image, cond, None)
    }
}

pub fn mean_abs_diff(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok((a - b)?.abs()?.mean_all()?)
}

/// Per-direction cycle terms `(x-cycle, y-cycle)` given the first-pass
/// translations. The same translator is used for the return trip.
pub fn cycle_terms(
    x: &Tensor,
    y: &Tensor,
    fake_y: &Tensor,
    fake_x: &Tensor,
    s_x: &Tensor,
    s_y: &Tensor,
    generator: &impl Translate,
) -> Result<(Tensor, Tensor)> {
    let rec_x = generator.translate(fake_y, s_x)?;
    let rec_y = generator.translate(fake_x, s_y)?;
    Ok((mean_abs_diff(x, &rec_x)?, mean_abs_diff(y, &rec_y)?))
}

/// `mean|x - G(G(x, S_y), S_x)| + mean|y - G(G(y, S_x), S_y)|`.
pub fn cycle_loss(
    x: &Tensor,
    y: &Tensor,
    s_x: &Tensor,
    s_y: &Tensor,
    generator: &impl Translate,
) -> Result<Tensor> {
    let fake_y = generator.translate(x, s_y)?;
    let fake_x = generator.translate(y, s_x)?;
    let (cx, cy) = cycle_terms(x, y, &fake_y, &fake_x, s_x, s_y, generator)?;
    Ok((cx + cy)?)
}

/// Per-direction identity terms `(F(y) vs F(ŷ), F(x) vs F(x̂))`.
pub fn identity_terms(
    x: &Tensor,
    y: &Tensor,
    generated_xy: &Tensor,
    generated_yx: &Tensor,
    extractor: &dyn FeatureExtractor,
) -> Result<(Tensor, Tensor)> {
    let xy = mean_abs_diff(&extractor.extract(y)?, &extractor.extract(generated_xy)?)?;
    let yx = mean_abs_diff(&extractor.extract(x)?, &extractor.extract(generated_yx)?)?;
    Ok((xy, yx))
}

/// Feature-space L1 between real and generated images in both directions.
pub fn identity_loss(
    x: &Tensor,
    y: &Tensor,
    generated_xy: &Tensor,
    generated_yx: &Tensor,
    extractor: &dyn FeatureExtractor,
) -> Result<Tensor> {
    let (a, b) = identity_terms(x, y, generated_xy, generated_yx, extractor)?;
    Ok((a + b)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Color loss weight.
    pub lambda1: f64,
    /// Cycle loss weight.
    pub lambda2: f64,
    /// Identity loss weight.
    pub lambda3: f64,
    pub color_norm: Norm,
    pub conditioning_variant: Variant,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 100.0,
            lambda2: 10.0,
            lambda3: 0.1,
            color_norm: Norm::L1,
            conditioning_variant: Variant::S,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be a finite value ≥ 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Generator-side loss components, before weighting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub adv_g: f64,
    pub color: f64,
    pub cycle: f64,
    pub identity: f64,
}

/// `adv + λ₁·color + λ₂·cycle + λ₃·identity`.
pub fn total_generator_loss(parts: &LossParts, weights: &LossWeights) -> Result<f64> {
    weights.validate()?;
    Ok(parts.adv_g
        + weights.lambda1 * parts.color
        + weights.lambda2 * parts.cycle
        + weights.lambda3 * parts.identity)
}

/// Tensor form of [`total_generator_loss`], used for backpropagation.
pub fn weighted_total(
    adv_g: &Tensor,
    color: &Tensor,
    cycle: &Tensor,
    identity: &Tensor,
    weights: &LossWeights,
) -> Result<Tensor> {
    let t = (adv_g + (color * weights.lambda1)?)?;
    let t = (t + (cycle * weights.lambda2)?)?;
    Ok((t + (identity * weights.lambda3)?)?)
}

/// Components attributable to one translation direction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DirectionTerms {
    pub adv_g: f64,
    pub adv_d: f64,
    pub color: f64,
    pub cycle: f64,
    pub identity: f64,
}

/// Everything logged for one training step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adv_g: f64,
    pub adv_d: f64,
    pub color: f64,
    pub cycle: f64,
    pub identity: f64,
    pub total: f64,
    pub lambda3: f64,
    /// x→y (conditioned on `S_y`, judged by D1).
    pub xy: DirectionTerms,
    /// y→x (conditioned on `S_x`, judged by D2).
    pub yx: DirectionTerms,
}

impl LossBreakdown {
    pub fn parts(&self) -> LossParts {
        LossParts {
            adv_g: self.adv_g,
            color: self.color,
            cycle: self.cycle,
            identity: self.identity,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.adv_g,
            self.adv_d,
            self.color,
            self.cycle,
            self.identity,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
