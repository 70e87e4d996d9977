//! The alternating optimization loop.
//!
//! Each step translates the batch in both directions once, updates both
//! discriminators on the detached translations, then updates the generator
//! on the weighted sum of adversarial, color, cycle, and identity terms.
//! Every random decision (initialization, epoch order, flips, dropout masks)
//! is derived from the run seed and the step or epoch index, so a resumed
//! run replays exactly what an uninterrupted one would have done.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::{lambda3_at, TrainConfig};
use crate::dataset::{Corpus, GesturePair, TrainingExample};
use crate::error::{Error, Result};
use crate::image_tensor::Image;
use crate::loss::{
    adversarial_d_loss, bce, color_loss, cycle_terms, identity_terms, scalar, total_generator_loss,
    weighted_total, DirectionTerms, LossBreakdown, LossParts,
};
use crate::nn::features::DEFAULT_EXTRACTOR_WIDTHS;
use crate::nn::{ConvFeatureExtractor, Discriminator, FeatureExtractor, Generator, IdentityExtractor, Provenance};
use crate::raster::ConditioningMap;

const TAG_INIT_G: u64 = 1;
const TAG_INIT_D1: u64 = 2;
const TAG_INIT_D2: u64 = 3;
const TAG_EPOCH_ORDER: u64 = 10;
const TAG_FLIP: u64 = 11;
const TAG_DROPOUT: u64 = 12;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable seed for a labelled sub-stream of the run seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(base), |h, &p| splitmix(h ^ splitmix(p)))
}

pub fn build_extractor(provenance: &Provenance, device: &Device) -> Result<Box<dyn FeatureExtractor>> {
    Ok(match provenance {
        Provenance::SeededRandom { seed } => Box::new(ConvFeatureExtractor::seeded(
            *seed,
            3,
            &DEFAULT_EXTRACTOR_WIDTHS,
            device,
        )?),
        Provenance::Pretrained { path } => Box::new(ConvFeatureExtractor::from_safetensors(path, device)?),
        Provenance::Identity => Box::new(IdentityExtractor),
    })
}

/// A minibatch of pairs: `(N, 3, H, W)` images and `(N, 1, H, W)` maps.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub y: Tensor,
    pub cond_x: Tensor,
    pub cond_y: Tensor,
}

impl Batch {
    pub fn from_examples(examples: &[TrainingExample], device: &Device) -> Result<Self> {
        let xs: Vec<&Image> = examples.iter().map(|e| &e.x).collect();
        let ys: Vec<&Image> = examples.iter().map(|e| &e.y).collect();
        let cx: Vec<Image> = examples.iter().map(|e| e.cond_x.to_image()).collect();
        let cy: Vec<Image> = examples.iter().map(|e| e.cond_y.to_image()).collect();
        Ok(Self {
            x: Image::stack(&xs, device)?,
            y: Image::stack(&ys, device)?,
            cond_x: Image::stack(&cx.iter().collect::<Vec<_>>(), device)?,
            cond_y: Image::stack(&cy.iter().collect::<Vec<_>>(), device)?,
        })
    }
}

/// First-pass translations `ŷ = G([x, S_y])` and `x̂ = G([y, S_x])`.
pub struct Fakes {
    pub fake_y: Tensor,
    pub fake_x: Tensor,
}

/// Discriminator objective and its two halves.
pub struct DiscriminatorObjective {
    pub total: Tensor,
    pub d1: Tensor,
    pub d2: Tensor,
}

pub struct GeneratorObjective {
    pub total: Tensor,
    pub xy: DirectionTerms,
    pub yx: DirectionTerms,
}

/// Networks, optimizer moments, and counters of a training run.
pub struct TrainState {
    pub(crate) config: TrainConfig,
    pub(crate) device: Device,
    pub(crate) generator: Generator,
    pub(crate) d1: Discriminator,
    pub(crate) d2: Discriminator,
    pub(crate) extractor: Box<dyn FeatureExtractor>,
    pub(crate) opt_g: Adam,
    pub(crate) opt_d: Adam,
    pub(crate) step: u64,
    pub(crate) epoch: usize,
    pub(crate) epoch_loss_sum: f64,
    pub(crate) epoch_loss_count: u64,
    freeze_discriminators: bool,
}

impl TrainState {
    pub fn new(config: TrainConfig, device: &Device) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let generator = Generator::new(config.generator_config(), derive_seed(seed, &[TAG_INIT_G]), device)?;
        let d1 = Discriminator::new(config.discriminator_config(), derive_seed(seed, &[TAG_INIT_D1]), device)?;
        let d2 = Discriminator::new(config.discriminator_config(), derive_seed(seed, &[TAG_INIT_D2]), device)?;
        let extractor = build_extractor(&config.identity_extractor, device)?;
        let opt_g = Adam::new(
            generator.params().iter().map(|(n, v)| (n.to_string(), v)),
            config.learning_rate,
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
        )?;
        let d_params = d1
            .params()
            .iter()
            .map(|(n, v)| (format!("d1.{n}"), v))
            .chain(d2.params().iter().map(|(n, v)| (format!("d2.{n}"), v)));
        let opt_d = Adam::new(
            d_params,
            config.learning_rate,
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
        )?;
        Ok(Self {
            config,
            device: device.clone(),
            generator,
            d1,
            d2,
            extractor,
            opt_g,
            opt_d,
            step: 0,
            epoch: 0,
            epoch_loss_sum: 0.0,
            epoch_loss_count: 0,
            freeze_discriminators: false,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn discriminators(&self) -> (&Discriminator, &Discriminator) {
        (&self.d1, &self.d2)
    }

    pub fn extractor(&self) -> &dyn FeatureExtractor {
        self.extractor.as_ref()
    }

    /// Completed optimizer steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn optimizer_steps(&self) -> (u64, u64) {
        (self.opt_g.steps(), self.opt_d.steps())
    }

    /// Skip discriminator updates (their parameters stay fixed).
    pub fn set_discriminators_frozen(&mut self, frozen: bool) {
        self.freeze_discriminators = frozen;
    }

    fn d_vars(&self) -> impl Iterator<Item = &candle_core::Var> {
        self.d1.params().vars().chain(self.d2.params().vars())
    }

    fn dropout_seed(&self, step: u64, call: u64) -> u64 {
        derive_seed(self.config.seed, &[TAG_DROPOUT, step, call])
    }

    pub fn generate_fakes(&self, batch: &Batch, step: u64) -> Result<Fakes> {
        Ok(Fakes {
            fake_y: self
                .generator
                .forward(&batch.x, &batch.cond_y, Some(self.dropout_seed(step, 0)))?,
            fake_x: self
                .generator
                .forward(&batch.y, &batch.cond_x, Some(self.dropout_seed(step, 1)))?,
        })
    }

    /// Both discriminators on real targets and on detached translations.
    pub fn discriminator_objective(&self, batch: &Batch, fakes: &Fakes) -> Result<DiscriminatorObjective> {
        let cond_xy = Tensor::cat(&[&batch.x, &batch.cond_y], 1)?;
        let cond_yx = Tensor::cat(&[&batch.y, &batch.cond_x], 1)?;
        let prob = |t: Tensor| -> Result<Tensor> { Ok(candle_nn::ops::sigmoid(&t)?) };
        let d1_real = prob(self.d1.forward(&cond_xy, &batch.y)?)?;
        let d1_fake = prob(self.d1.forward(&cond_xy, &fakes.fake_y.detach())?)?;
        let d2_real = prob(self.d2.forward(&cond_yx, &batch.x)?)?;
        let d2_fake = prob(self.d2.forward(&cond_yx, &fakes.fake_x.detach())?)?;
        let d1 = ((bce(&d1_real, 1.0)? + bce(&d1_fake, 0.0)?)? * 0.5)?;
        let d2 = ((bce(&d2_real, 1.0)? + bce(&d2_fake, 0.0)?)? * 0.5)?;
        let total = adversarial_d_loss(&d1_real, &d1_fake, &d2_real, &d2_fake)?;
        Ok(DiscriminatorObjective { total, d1, d2 })
    }

    pub fn generator_objective(
        &self,
        batch: &Batch,
        fakes: &Fakes,
        lambda3: f64,
        step: u64,
    ) -> Result<GeneratorObjective> {
        let weights = self.config.weights(lambda3);
        let cond_xy = Tensor::cat(&[&batch.x, &batch.cond_y], 1)?;
        let cond_yx = Tensor::cat(&[&batch.y, &batch.cond_x], 1)?;
        let adv_xy = bce(&candle_nn::ops::sigmoid(&self.d1.forward(&cond_xy, &fakes.fake_y)?)?, 1.0)?;
        let adv_yx = bce(&candle_nn::ops::sigmoid(&self.d2.forward(&cond_yx, &fakes.fake_x)?)?, 1.0)?;
        let color_xy = color_loss(&fakes.fake_y, &batch.y, weights.color_norm)?;
        let color_yx = color_loss(&fakes.fake_x, &batch.x, weights.color_norm)?;

        let calls = std::cell::Cell::new(2u64);
        let return_trip = |image: &Tensor, cond: &Tensor| -> Result<Tensor> {
            let call = calls.get();
            calls.set(call + 1);
            self.generator.forward(image, cond, Some(self.dropout_seed(step, call)))
        };
        let (cycle_xy, cycle_yx) = cycle_terms(
            &batch.x,
            &batch.y,
            &fakes.fake_y,
            &fakes.fake_x,
            &batch.cond_x,
            &batch.cond_y,
            &return_trip,
        )?;
        let (id_xy, id_yx) = identity_terms(
            &batch.x,
            &batch.y,
            &fakes.fake_y,
            &fakes.fake_x,
            self.extractor.as_ref(),
        )?;

        let total = weighted_total(
            &(&adv_xy + &adv_yx)?,
            &(&color_xy + &color_yx)?,
            &(&cycle_xy + &cycle_yx)?,
            &(&id_xy + &id_yx)?,
            &weights,
        )?;
        let terms = |adv: &Tensor, color: &Tensor, cycle: &Tensor, id: &Tensor| -> Result<DirectionTerms> {
            Ok(DirectionTerms {
                adv_g: scalar(adv)?,
                adv_d: 0.0,
                color: scalar(color)?,
                cycle: scalar(cycle)?,
                identity: scalar(id)?,
            })
        };
        Ok(GeneratorObjective {
            total,
            xy: terms(&adv_xy, &color_xy, &cycle_xy, &id_xy)?,
            yx: terms(&adv_yx, &color_yx, &cycle_yx, &id_yx)?,
        })
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self, batch: &Batch, lambda3: f64) -> Result<LossBreakdown> {
        let step = self.step + 1;
        let fakes = self.generate_fakes(batch, step)?;

        let d = self.discriminator_objective(batch, &fakes)?;
        let adv_d = scalar(&d.total)?;
        if !adv_d.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!("discriminator loss {adv_d}"),
            });
        }
        if !self.freeze_discriminators {
            let grads = d.total.backward()?;
            let vars: Vec<_> = self.d_vars().cloned().collect();
            self.opt_d.step(vars.iter(), &grads)?;
        }

        let g = self.generator_objective(batch, &fakes, lambda3, step)?;
        let mut xy = g.xy;
        let mut yx = g.yx;
        xy.adv_d = scalar(&d.d1)?;
        yx.adv_d = scalar(&d.d2)?;
        let parts = LossParts {
            adv_g: xy.adv_g + yx.adv_g,
            color: xy.color + yx.color,
            cycle: xy.cycle + yx.cycle,
            identity: xy.identity + yx.identity,
        };
        let weights = self.config.weights(lambda3);
        let breakdown = LossBreakdown {
            adv_g: parts.adv_g,
            adv_d,
            color: parts.color,
            cycle: parts.cycle,
            identity: parts.identity,
            total: total_generator_loss(&parts, &weights)?,
            lambda3,
            xy,
            yx,
        };
        if !breakdown.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!("{breakdown:?}"),
            });
        }
        let grads = g.total.backward()?;
        self.opt_g.step(self.generator.params().vars(), &grads)?;
        self.step = step;
        Ok(breakdown)
    }
}

/// One generator forward pass for inference. `image` is in `[-1, 1]`.
pub fn translate(
    state: &TrainState,
    image: &Image,
    target: &ConditioningMap,
    dropout_seed: Option<u64>,
) -> Result<Image> {
    let size = state.config.image_size;
    if image.shape() != (3, size, size) {
        return Err(Error::Shape(format!(
            "model expects a 3x{size}x{size} image, got {:?}",
            image.shape()
        )));
    }
    if (target.width(), target.height()) != (size, size) {
        return Err(Error::Shape(format!(
            "model expects a {size}x{size} conditioning map, got {}x{}",
            target.width(),
            target.height()
        )));
    }
    if target.variant() != state.config.variant {
        return Err(Error::InvalidConfig(format!(
            "model was trained on {} maps, got {}",
            state.config.variant,
            target.variant()
        )));
    }
    let x = image.to_tensor(&state.device)?;
    let c = target.to_image().to_tensor(&state.device)?;
    Image::from_tensor(&state.generator.forward(&x, &c, dropout_seed)?)
}

/// One logged step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub color: f64,
    pub cycle: f64,
    pub identity: f64,
    pub total: f64,
    pub lambda3: f64,
}

impl StepRecord {
    pub fn new(step: u64, b: &LossBreakdown) -> Self {
        Self {
            step,
            adv_g: b.adv_g,
            adv_d: b.adv_d,
            color: b.color,
            cycle: b.cycle,
            identity: b.identity,
            total: b.total,
            lambda3: b.lambda3,
        }
    }
}

pub const LOSS_CSV_HEADER: &str = "step,adv_g,adv_d,color,cycle,identity,total,lambda3";

pub fn read_loss_csv(path: &Path) -> Result<Vec<StepRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Where checkpoints and `losses.csv` go; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
    /// Stop after this global step even if epochs remain.
    pub max_steps: Option<u64>,
    /// Print one `progress` line per epoch.
    pub verbose: bool,
}

pub struct FitOutcome {
    pub state: TrainState,
    pub history: Vec<StepRecord>,
    pub checkpoints: Vec<PathBuf>,
}

pub fn steps_per_epoch(pairs: usize, batch_size: usize) -> u64 {
    pairs.div_ceil(batch_size) as u64
}

/// Runs `epochs × steps_per_epoch` steps from a fresh state.
pub fn fit(config: TrainConfig, corpus: &Corpus, pairs: &[&GesturePair], options: &FitOptions) -> Result<FitOutcome> {
    let state = TrainState::new(config, &Device::Cpu)?;
    resume(state, corpus, pairs, options)
}

/// Continues `state` to the end of its schedule (or `max_steps`).
pub fn resume(
    mut state: TrainState,
    corpus: &Corpus,
    pairs: &[&GesturePair],
    options: &FitOptions,
) -> Result<FitOutcome> {
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("training needs at least one pair".into()));
    }
    let config = state.config.clone();
    let spe = steps_per_epoch(pairs.len(), config.batch_size);
    let total_steps = spe * config.epochs as u64;
    let stop = options.max_steps.map_or(total_steps, |m| m.min(total_steps));

    let mut log = match &options.out_dir {
        Some(dir) => Some(LossLog::open(dir, state.step == 0)?),
        None => None,
    };
    let mut history = Vec::new();
    let mut checkpoints = Vec::new();
    let mut order: Option<(usize, Vec<usize>)> = None;

    while state.step < stop {
        let step = state.step + 1;
        let epoch = ((step - 1) / spe) as usize;
        let position = ((step - 1) % spe) as usize;
        if order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut idx: Vec<usize> = (0..pairs.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
                config.seed,
                &[TAG_EPOCH_ORDER, epoch as u64],
            )));
            order = Some((epoch, idx));
        }
        let idx = &order.as_ref().expect("epoch order").1;
        let chunk = &idx[position * config.batch_size..((position + 1) * config.batch_size).min(pairs.len())];
        let examples = chunk
            .iter()
            .map(|&i| {
                let flip = config.flip
                    && ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[TAG_FLIP, epoch as u64, i as u64]))
                        .random::<bool>();
                corpus.load_example(pairs[i], flip, config.image_size, config.variant, config.raster)
            })
            .collect::<Result<Vec<_>>>()?;
        let batch = Batch::from_examples(&examples, &state.device)?;
        let lambda3 = lambda3_at(epoch, &config)?;

        let breakdown = match state.train_step(&batch, lambda3) {
            Ok(b) => b,
            Err(Error::NonFinite { step, detail }) => {
                let mut detail = detail;
                if let Some(dir) = &options.out_dir {
                    if let Some(log) = log.as_mut() {
                        log.flush()?;
                    }
                    let snap = dir.join(format!("nonfinite-step-{step:08}"));
                    state.save(&snap)?;
                    detail.push_str(&format!("; snapshot at {}", snap.display()));
                }
                return Err(Error::NonFinite { step, detail });
            }
            Err(e) => return Err(e),
        };
        state.epoch = epoch;
        let record = StepRecord::new(step, &breakdown);
        if let Some(log) = log.as_mut() {
            log.append(&record)?;
        }
        history.push(record);
        state.epoch_loss_sum += breakdown.total;
        state.epoch_loss_count += 1;

        if position as u64 == spe - 1 {
            if options.verbose {
                println!(
                    "progress epoch={} mean_total={:.6} lambda3={:.4}",
                    epoch,
                    state.epoch_loss_sum / state.epoch_loss_count as f64,
                    lambda3
                );
            }
            state.epoch_loss_sum = 0.0;
            state.epoch_loss_count = 0;
        }

        if let Some(dir) = &options.out_dir {
            let due = config.checkpoint_every > 0 && step % config.checkpoint_every == 0;
            if due || step == stop {
                let path = checkpoint_path(dir, step);
                if let Err(e) = state.save(&path) {
                    if let Some(log) = log.as_mut() {
                        log.flush()?;
                    }
                    return Err(e);
                }
                checkpoints.push(path);
            }
        }
    }
    if let Some(log) = log.as_mut() {
        log.flush()?;
    }
    Ok(FitOutcome {
        state,
        history,
        checkpoints,
    })
}

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join("checkpoints").join(format!("step-{step:08}"))
}

/// Appends rows to `losses.csv`, writing the header only for a new run.
struct LossLog {
    file: fs::File,
    path: PathBuf,
}

impl LossLog {
    fn open(dir: &Path, fresh: bool) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("losses.csv");
        let mut file = fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(!fresh)
            .truncate(fresh)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        if fresh {
            writeln!(file, "{LOSS_CSV_HEADER}").map_err(|e| Error::io(&path, e))?;
        }
        Ok(Self { file, path })
    }

    fn append(&mut self, r: &StepRecord) -> Result<()> {
        writeln!(
            self.file,
            "{},{},{},{},{},{},{},{}",
            r.step, r.adv_g, r.adv_d, r.color, r.cycle, r.identity, r.total, r.lambda3
        )
        .map_err(|e| Error::io(&self.path, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}
