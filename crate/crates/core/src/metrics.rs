//! Image-quality metrics: MSE, PSNR, Inception Score, FID, and the per-pair
//! Fréchet distance between embedded feature curves (FRD).

use std::fmt::Write as _;
use std::path::PathBuf;

use candle_core::{Device, Tensor};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_tensor::Image;
use crate::nn::features::DEFAULT_EXTRACTOR_WIDTHS;
use crate::nn::params::load_tensors;
use crate::nn::{ConvFeatureExtractor, FeatureExtractor};

/// PSNR reported for identical images.
pub const PSNR_SENTINEL_DB: f64 = 100.0;
const PEAK: f64 = 255.0;

fn check_same(a: &Image, b: &Image) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean squared difference of two images in the `[0, 255]` domain.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_SENTINEL_DB
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Mean and standard deviation over `splits` contiguous chunks of
/// `exp(E[KL(p(y|x) || p(y))])`.
pub fn inception_score(probabilities: &[Vec<f64>], splits: usize) -> Result<(f64, f64)> {
    if probabilities.is_empty() {
        return Err(Error::InvalidConfig("inception score of an empty set".into()));
    }
    if splits == 0 || splits > probabilities.len() {
        return Err(Error::InvalidConfig(format!(
            "splits must lie in 1..={}, got {splits}",
            probabilities.len()
        )));
    }
    let classes = probabilities[0].len();
    for (i, p) in probabilities.iter().enumerate() {
        let sum: f64 = p.iter().sum();
        if p.len() != classes || p.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidConfig(format!(
                "probability vector {i} is malformed (length {}, sum {sum})",
                p.len()
            )));
        }
    }
    let n = probabilities.len();
    let scores: Vec<f64> = (0..splits)
        .map(|s| {
            let chunk = &probabilities[s * n / splits..(s + 1) * n / splits];
            let mut marginal = vec![0.0; classes];
            for p in chunk {
                for (m, v) in marginal.iter_mut().zip(p) {
                    *m += v / chunk.len() as f64;
                }
            }
            let mean_kl = chunk
                .iter()
                .map(|p| {
                    p.iter()
                        .zip(&marginal)
                        .filter(|(&v, _)| v > 0.0)
                        .map(|(&v, &m)| v * (v / m).ln())
                        .sum::<f64>()
                })
                .sum::<f64>()
                / chunk.len() as f64;
            mean_kl.exp()
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Sample mean and unbiased covariance, symmetrized.
pub fn gaussian_stats(features: &[Vec<f64>]) -> Result<GaussianStats> {
    if features.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "covariance needs at least 2 vectors, got {}",
            features.len()
        )));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::Shape("feature vectors differ in length".into()));
    }
    let n = features.len();
    let data = DMatrix::from_fn(n, dim, |i, j| features[i][j]);
    let mu = data.row_mean().transpose();
    let centered = DMatrix::from_fn(n, dim, |i, j| data[(i, j)] - mu[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let sigma = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianStats { mu, sigma })
}

/// Eigenvalues of a symmetric matrix with negatives and numerically
/// negligible values (below `max · dim · ε`) set to zero.
fn clipped_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let mut eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let floor = max * m.nrows() as f64 * f64::EPSILON;
    for v in eig.eigenvalues.iter_mut() {
        if *v < floor {
            *v = 0.0;
        }
    }
    eig
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = clipped_eigen(m);
    let root = eig.eigenvalues.map(f64::sqrt);
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// `‖μx − μy‖² + Tr(Σx + Σy − 2(ΣxΣy)^½)`, clamped at 0.
///
/// The trace of `(ΣxΣy)^½` is taken as the trace of the square root of the
/// symmetric matrix `Σx^½ Σy Σx^½`, which has the same eigenvalues.
pub fn fid(x: &GaussianStats, y: &GaussianStats) -> Result<f64> {
    if x.dim() != y.dim() || x.sigma.shape() != (x.dim(), x.dim()) || y.sigma.shape() != (y.dim(), y.dim()) {
        return Err(Error::Shape(format!("FID of {}-d and {}-d statistics", x.dim(), y.dim())));
    }
    let diff = (&x.mu - &y.mu).norm_squared();
    let sx = psd_sqrt(&x.sigma);
    let inner = &sx * &y.sigma * &sx;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = clipped_eigen(&inner).eigenvalues.iter().map(|v| v.sqrt()).sum();
    let value = diff + x.sigma.trace() + y.sigma.trace() - 2.0 * cross;
    Ok(value.max(0.0))
}

/// Discrete Fréchet distance under an arbitrary pointwise distance.
pub fn discrete_frechet_by<T>(a: &[T], b: &[T], d: impl Fn(&T, &T) -> f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidConfig("Fréchet distance of an empty sequence".into()));
    }
    let mut prev = vec![0.0f64; b.len()];
    let mut cur = vec![0.0f64; b.len()];
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            let cost = d(ai, bj);
            let reach = match (i, j) {
                (0, 0) => cost,
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => prev[j].min(cur[j - 1]).min(prev[j - 1]),
            };
            cur[j] = cost.max(reach);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[b.len() - 1])
}

/// Discrete Fréchet distance of two scalar curves under `|a − b|`.
pub fn discrete_frechet(a: &[f64], b: &[f64]) -> Result<f64> {
    discrete_frechet_by(a, b, |x, y| (x - y).abs())
}

/// Mean over pairs of the Fréchet distance between feature curves.
pub fn frd_from_features(real: &[Vec<f64>], generated: &[Vec<f64>]) -> Result<f64> {
    if real.len() != generated.len() || real.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "FRD needs equal nonzero counts, got {} real and {} generated",
            real.len(),
            generated.len()
        )));
    }
    let mut sum = 0.0;
    for (r, g) in real.iter().zip(generated) {
        sum += discrete_frechet(r, g)?;
    }
    Ok(sum / real.len() as f64)
}

pub fn frd(real: &[Image], generated: &[Image], embedder: &Embedder) -> Result<f64> {
    frd_from_features(&embedder.embed(real)?, &embedder.embed(generated)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    /// Frozen random weights drawn from `seed`.
    SeededRandom,
    /// Safetensors file at `path` with `conv{i}.weight/bias` and
    /// `head.weight/bias`.
    PretrainedClassifier,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    pub seed: u64,
    pub path: Option<PathBuf>,
    /// Length of the feature vector (and number of classes for IS).
    pub dim: usize,
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::SeededRandom,
            seed: 1234,
            path: None,
            dim: 1000,
        }
    }
}

/// Frozen convolutional trunk, global average pooling, and a linear head.
/// The head output is the feature vector; its softmax is the class
/// distribution used by the Inception Score.
pub struct Embedder {
    trunk: ConvFeatureExtractor,
    head_w: Tensor,
    head_b: Tensor,
    device: Device,
}

impl Embedder {
    pub fn new(spec: &EmbedderSpec, device: &Device) -> Result<Self> {
        if spec.dim == 0 {
            return Err(Error::Embedder("embedding dimension must be ≥ 1".into()));
        }
        match spec.kind {
            EmbedderKind::SeededRandom => {
                let seed = spec.seed;
                let trunk = ConvFeatureExtractor::seeded(seed, 3, &DEFAULT_EXTRACTOR_WIDTHS, device)?;
                let c = trunk.out_channels();
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x4ead));
                let dist = Normal::new(0.0f32, (1.0 / c as f32).sqrt()).expect("positive std");
                let w: Vec<f32> = (0..spec.dim * c).map(|_| dist.sample(&mut rng)).collect();
                let b: Vec<f32> = (0..spec.dim).map(|_| 0.1 * dist.sample(&mut rng)).collect();
                Ok(Self {
                    trunk,
                    head_w: Tensor::from_vec(w, (spec.dim, c), device)?,
                    head_b: Tensor::from_vec(b, spec.dim, device)?,
                    device: device.clone(),
                })
            }
            EmbedderKind::PretrainedClassifier => {
                let path = spec
                    .path
                    .as_deref()
                    .ok_or_else(|| Error::Embedder("pretrained-classifier embedder needs a `path`".into()))?;
                if !path.exists() {
                    return Err(Error::Embedder(format!(
                        "pretrained embedder weights not found at {}; use the seeded-random embedder instead \
                         (--set embedder.kind=seeded-random)",
                        path.display()
                    )));
                }
                let trunk = ConvFeatureExtractor::from_safetensors(path, device)?;
                let tensors = load_tensors(path, device)?;
                let get = |k: &str| {
                    tensors
                        .get(k)
                        .cloned()
                        .ok_or_else(|| Error::Embedder(format!("{} lacks `{k}`", path.display())))
                };
                let head_w = get("head.weight")?.to_dtype(candle_core::DType::F32)?;
                let head_b = get("head.bias")?.to_dtype(candle_core::DType::F32)?;
                if head_w.dims() != [spec.dim, trunk.out_channels()] || head_b.dims() != [spec.dim] {
                    return Err(Error::Embedder(format!(
                        "head shape {:?} does not map {} channels to {} outputs",
                        head_w.dims(),
                        trunk.out_channels(),
                        spec.dim
                    )));
                }
                Ok(Self {
                    trunk,
                    head_w,
                    head_b,
                    device: device.clone(),
                })
            }
        }
    }

    fn logits(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(16) {
            let refs: Vec<&Image> = chunk.iter().collect();
            let x = Image::stack(&refs, &self.device)?;
            let pooled = self.trunk.extract(&x)?.mean((2, 3))?;
            let logits = pooled.matmul(&self.head_w.t()?)?.broadcast_add(&self.head_b)?;
            for row in logits.to_vec2::<f32>()? {
                out.push(row.into_iter().map(f64::from).collect());
            }
        }
        Ok(out)
    }

    /// Feature vectors of images in `[-1, 1]`.
    pub fn embed(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        self.logits(images)
    }

    /// Softmax class distributions.
    pub fn probabilities(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        Ok(self.logits(images)?.into_iter().map(|l| softmax(&l)).collect())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|v| v / sum).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub identifier: String,
    pub mse: f64,
    pub psnr: f64,
    pub frd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mse: f64,
    pub psnr: f64,
    pub is_mean: f64,
    pub is_std: f64,
    /// `NaN` when fewer than two pairs are evaluated.
    pub fid: f64,
    pub frd: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<PairMetrics>,
    pub aggregate: Aggregate,
}

const ROW_HEADER: &str = "identifier,mse,psnr,frd";
const FOOTER_MARKER: &str = "#aggregate";

impl MetricReport {
    /// Per-pair rows, then a `#aggregate` line and `name,value` lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{ROW_HEADER}");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.identifier, r.mse, r.psnr, r.frd);
        }
        let a = &self.aggregate;
        let _ = writeln!(out, "{FOOTER_MARKER}");
        for (k, v) in [
            ("mse", a.mse),
            ("psnr", a.psnr),
            ("is_mean", a.is_mean),
            ("is_std", a.is_std),
            ("fid", a.fid),
            ("frd", a.frd),
        ] {
            let _ = writeln!(out, "{k},{v}");
        }
        let _ = writeln!(out, "N,{}", a.n);
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == ROW_HEADER => {}
            _ => return Err(Error::parse(0, format!("expected header `{ROW_HEADER}`"))),
        }
        let num = |i: usize, s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::parse(i, format!("bad number `{s}`: {e}")))
        };
        let mut rows = Vec::new();
        for (i, line) in lines.by_ref() {
            if line == FOOTER_MARKER {
                break;
            }
            let f: Vec<&str> = line.rsplitn(4, ',').collect();
            let [frd, psnr, mse, identifier] = f[..] else {
                return Err(Error::parse(i, format!("row needs 4 fields: `{line}`")));
            };
            rows.push(PairMetrics {
                identifier: identifier.to_string(),
                mse: num(i, mse)?,
                psnr: num(i, psnr)?,
                frd: num(i, frd)?,
            });
        }
        let mut agg = Aggregate {
            mse: f64::NAN,
            psnr: f64::NAN,
            is_mean: f64::NAN,
            is_std: f64::NAN,
            fid: f64::NAN,
            frd: f64::NAN,
            n: 0,
        };
        for (i, line) in lines {
            let (k, v) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(i, format!("footer line `{line}`")))?;
            match k {
                "mse" => agg.mse = num(i, v)?,
                "psnr" => agg.psnr = num(i, v)?,
                "is_mean" => agg.is_mean = num(i, v)?,
                "is_std" => agg.is_std = num(i, v)?,
                "fid" => agg.fid = num(i, v)?,
                "frd" => agg.frd = num(i, v)?,
                "N" => agg.n = v.parse().map_err(|e| Error::parse(i, format!("bad count `{v}`: {e}")))?,
                other => return Err(Error::parse(i, format!("unknown aggregate `{other}`"))),
            }
        }
        Ok(Self { rows, aggregate: agg })
    }
}

/// One evaluated pair: ground truth and generated image, both in `[-1, 1]`.
pub struct EvalSample {
    pub identifier: String,
    pub real: Image,
    pub generated: Image,
}

/// Scores a set of translations. Images are first quantized to the 8-bit
/// export grid so the numbers match what the saved files would give.
pub fn evaluate_samples(samples: &[EvalSample], embedder: &Embedder, is_splits: usize) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("nothing to evaluate".into()));
    }
    let to8 = |img: &Image| img.quantized();
    let real8: Vec<Image> = samples.iter().map(|s| to8(&s.real)).collect();
    let gen8: Vec<Image> = samples.iter().map(|s| to8(&s.generated)).collect();
    let real_in: Vec<Image> = real8.iter().map(Image::to_signed).collect();
    let gen_in: Vec<Image> = gen8.iter().map(Image::to_signed).collect();
    let real_feat = embedder.embed(&real_in)?;
    let gen_feat = embedder.embed(&gen_in)?;

    let mut rows = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let m = mse(&real8[i], &gen8[i]).map_err(|e| Error::Pair {
            pair: s.identifier.clone(),
            source: Box::new(e),
        })?;
        rows.push(PairMetrics {
            identifier: s.identifier.clone(),
            mse: m,
            psnr: psnr_from_mse(m),
            frd: discrete_frechet(&real_feat[i], &gen_feat[i])?,
        });
    }
    let n = rows.len();
    let mean = |f: fn(&PairMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n as f64;
    let probs: Vec<Vec<f64>> = gen_feat.iter().map(|l| softmax(l)).collect();
    let (is_mean, is_std) = inception_score(&probs, is_splits.min(n))?;
    let fid = if n >= 2 {
        fid(&gaussian_stats(&real_feat)?, &gaussian_stats(&gen_feat)?)?
    } else {
        f64::NAN
    };
    let aggregate = Aggregate {
        mse: mean(|r| r.mse),
        psnr: mean(|r| r.psnr),
        is_mean,
        is_std,
        fid,
        frd: mean(|r| r.frd),
        n,
    };
    Ok(MetricReport { rows, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// All monotone couplings by recursion; exponential but exact.
    fn brute_frechet(a: &[f64], b: &[f64]) -> f64 {
        fn go(a: &[f64], b: &[f64], i: usize, j: usize) -> f64 {
            let here = (a[i] - b[j]).abs();
            if i + 1 == a.len() && j + 1 == b.len() {
                return here;
            }
            let mut best = f64::INFINITY;
            if i + 1 < a.len() {
                best = best.min(go(a, b, i + 1, j));
            }
            if j + 1 < b.len() {
                best = best.min(go(a, b, i, j + 1));
            }
            if i + 1 < a.len() && j + 1 < b.len() {
                best = best.min(go(a, b, i + 1, j + 1));
            }
            here.max(best)
        }
        go(a, b, 0, 0)
    }

    fn flat(c: usize, h: usize, w: usize, v: f32) -> Image {
        Image::filled(c, h, w, v)
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&flat(3, 4, 4, 7.0), &flat(3, 4, 4, 7.0)).unwrap(), 0.0);
        assert_eq!(mse(&flat(3, 4, 4, 0.0), &flat(3, 4, 4, 255.0)).unwrap(), 65025.0);
        let mut half = flat(1, 2, 2, 0.0);
        half.set(0, 0, 0, 1.0);
        half.set(0, 0, 1, 1.0);
        assert_eq!(mse(&flat(1, 2, 2, 0.0), &half).unwrap(), 0.5);
        assert!(mse(&flat(1, 2, 2, 0.0), &flat(1, 2, 3, 0.0)).is_err());
    }

    #[test]
    fn psnr_examples() {
        assert!(psnr_from_mse(65025.0).abs() < 1e-12);
        let oracle = 20.0 * 255f64.log10();
        assert!((psnr_from_mse(1.0) - oracle).abs() < 1e-12);
        assert!((psnr_from_mse(1.0) - 48.1308).abs() < 1e-4);
        assert_eq!(psnr(&flat(1, 2, 2, 3.0), &flat(1, 2, 2, 3.0)).unwrap(), PSNR_SENTINEL_DB);
    }

    #[test]
    fn psnr_decreases_with_mse() {
        let vals: Vec<f64> = (1..200).map(|k| psnr_from_mse(k as f64 * 0.37)).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn inception_score_examples() {
        let same = vec![vec![0.2, 0.3, 0.5]; 6];
        let (m, s) = inception_score(&same, 1).unwrap();
        assert!((m - 1.0).abs() < 1e-12 && s == 0.0);

        // One-hot over 4 classes: KL(e_k || uniform) = ln 4 for every sample.
        let onehot: Vec<Vec<f64>> = (0..4).map(|k| (0..4).map(|j| f64::from(j == k)).collect()).collect();
        let expected = (4f64.ln()).exp();
        assert!((inception_score(&onehot, 1).unwrap().0 - expected).abs() < 1e-12);

        assert!((inception_score(&onehot[..1], 1).unwrap().0 - 1.0).abs() < 1e-12);
        assert!(inception_score(&[], 1).is_err());
        assert!(inception_score(&[vec![0.5, 0.6]], 1).is_err());
        assert!(inception_score(&same, 0).is_err());
    }

    #[test]
    fn gaussian_stats_examples() {
        let s = gaussian_stats(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(s.mu.as_slice(), &[1.0, 1.0]);
        assert_eq!(s.sigma, DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 2.0]));
        let z = gaussian_stats(&vec![vec![1.5, -2.0, 3.0]; 4]).unwrap();
        assert!(z.sigma.iter().all(|&v| v == 0.0));
        assert!(gaussian_stats(&[vec![1.0]]).is_err());
    }

    #[test]
    fn covariance_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dist = Normal::new(0.0, 2.0).unwrap();
        let data: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| dist.sample(&mut rng)).collect()).collect();
        let s = gaussian_stats(&data).unwrap();
        let n = data.len() as f64;
        let mean: Vec<f64> = (0..3).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        for a in 0..3 {
            assert!((s.mu[a] - mean[a]).abs() < 1e-12);
            for b in 0..3 {
                let c = data.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n - 1.0);
                assert!((s.sigma[(a, b)] - c).abs() < 1e-10);
            }
        }
    }

    fn random_stats(seed: u64, n: usize, dim: usize) -> GaussianStats {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.5, 1.5).unwrap();
        let data: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| dist.sample(&mut rng)).collect()).collect();
        gaussian_stats(&data).unwrap()
    }

    #[test]
    fn fid_examples() {
        for (n, dim) in [(10, 4), (5, 12), (40, 64)] {
            let s = random_stats(n as u64, n, dim);
            assert!(fid(&s, &s).unwrap() <= 1e-8, "{n}x{dim}");
        }
        let a = random_stats(1, 8, 3);
        let mut b = a.clone();
        b.mu[0] += 1.0;
        assert!((fid(&a, &b).unwrap() - 1.0).abs() < 1e-8);

        let one = |mu: f64, var: f64| GaussianStats {
            mu: DVector::from_element(1, mu),
            sigma: DMatrix::from_element(1, 1, var),
        };
        assert!((fid(&one(0.0, 4.0), &one(0.0, 9.0)).unwrap() - 1.0).abs() < 1e-8);
        assert!(fid(&one(0.0, 4.0), &random_stats(1, 4, 2)).is_err());
    }

    #[test]
    fn fid_is_symmetric() {
        let a = random_stats(5, 9, 5);
        let b = random_stats(6, 7, 5);
        assert!((fid(&a, &b).unwrap() - fid(&b, &a).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn frechet_examples() {
        assert_eq!(discrete_frechet(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(discrete_frechet(&[0.0], &[7.0]).unwrap(), 7.0);
        assert_eq!(brute_frechet(&[0.0, 1.0, 0.0], &[0.0, 0.0, 0.0]), 1.0);
        assert_eq!(discrete_frechet(&[0.0, 1.0, 0.0], &[0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert!(discrete_frechet(&[], &[1.0]).is_err());
    }

    #[test]
    fn frd_examples() {
        let real = vec![vec![0.0, 1.0, 2.0, 1.0], vec![3.0, 3.0, 0.0, -1.0]];
        let generated = vec![vec![0.5, 0.0, 2.0, 2.0], vec![3.0, 1.0, 1.0, -1.0]];
        let expected = (brute_frechet(&real[0], &generated[0]) + brute_frechet(&real[1], &generated[1])) / 2.0;
        assert_eq!(frd_from_features(&real, &generated).unwrap(), expected);
        assert_eq!(frd_from_features(&real, &real).unwrap(), 0.0);
        assert_eq!(
            frd_from_features(&real[..1], &generated[..1]).unwrap(),
            discrete_frechet(&real[0], &generated[0]).unwrap()
        );
        assert!(frd_from_features(&real, &generated[..1]).is_err());
    }

    proptest! {
        #[test]
        fn frechet_matches_brute_force(
            a in prop::collection::vec(-5.0f64..5.0, 1..=6),
            b in prop::collection::vec(-5.0f64..5.0, 1..=6),
        ) {
            let dp = discrete_frechet(&a, &b).unwrap();
            prop_assert_eq!(dp, brute_frechet(&a, &b));
            prop_assert_eq!(dp, discrete_frechet(&b, &a).unwrap());
            let ends = (a[0] - b[0]).abs().max((a[a.len() - 1] - b[b.len() - 1]).abs());
            prop_assert!(dp >= ends);
            prop_assert_eq!(discrete_frechet(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn frd_ignores_pair_order(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dist = Normal::new(0.0, 1.0).unwrap();
            let mut curve = || (0..5).map(|_| dist.sample(&mut rng)).collect::<Vec<f64>>();
            let real: Vec<_> = (0..4).map(|_| curve()).collect();
            let generated: Vec<_> = (0..4).map(|_| curve()).collect();
            let forward = frd_from_features(&real, &generated).unwrap();
            let rr: Vec<_> = real.iter().rev().cloned().collect();
            let gr: Vec<_> = generated.iter().rev().cloned().collect();
            prop_assert!((forward - frd_from_features(&rr, &gr).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn embedder_is_deterministic_and_normalized() {
        let spec = EmbedderSpec {
            seed: 9,
            dim: 10,
            ..Default::default()
        };
        let e1 = Embedder::new(&spec, &Device::Cpu).unwrap();
        let e2 = Embedder::new(&spec, &Device::Cpu).unwrap();
        let img = Image::new(3, 16, 16, (0..768).map(|i| ((i % 17) as f32 / 8.0) - 1.0).collect()).unwrap();
        let imgs = [img.clone(), img.map(|v| -v)];
        assert_eq!(e1.embed(&imgs).unwrap(), e2.embed(&imgs).unwrap());
        for p in e1.probabilities(&imgs).unwrap() {
            assert_eq!(p.len(), 10);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn missing_pretrained_asset_suggests_fallback() {
        let spec = EmbedderSpec {
            kind: EmbedderKind::PretrainedClassifier,
            path: Some("/nonexistent/weights.safetensors".into()),
            ..Default::default()
        };
        let err = Embedder::new(&spec, &Device::Cpu).err().unwrap();
        assert!(err.to_string().contains("seeded-random"), "{err}");
    }

    #[test]
    fn self_comparison_report() {
        let embedder = Embedder::new(&EmbedderSpec::default(), &Device::Cpu).unwrap();
        let samples: Vec<EvalSample> = (0..4)
            .map(|k| {
                let img = Image::new(
                    3,
                    16,
                    16,
                    (0..768).map(|i| (((i * (k + 3)) % 29) as f32 / 14.0) - 1.0).collect(),
                )
                .unwrap();
                EvalSample {
                    identifier: format!("p{k}"),
                    real: img.clone(),
                    generated: img,
                }
            })
            .collect();
        let report = evaluate_samples(&samples, &embedder, 1).unwrap();
        assert_eq!(report.aggregate.mse, 0.0);
        assert_eq!(report.aggregate.frd, 0.0);
        assert_eq!(report.aggregate.psnr, PSNR_SENTINEL_DB);
        assert!(report.aggregate.fid <= 1e-6, "{}", report.aggregate.fid);
        assert_eq!(report.aggregate.n, 4);
        let parsed = MetricReport::from_csv(&report.to_csv()).unwrap();
        assert_eq!(parsed.rows, report.rows);
        assert_eq!(parsed.aggregate.n, 4);
        assert_eq!(parsed.aggregate.fid, report.aggregate.fid);
    }
}
