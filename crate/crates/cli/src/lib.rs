//! Command-line front end: `train`, `translate`, `evaluate`, `rasterize`,
//! and `make-synthetic-corpus`, all driven by one TOML file.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::Device;
use clap::{Parser, Subcommand, ValueEnum};
use gesturegan::dataset::{Corpus, GesturePair};
use gesturegan::image_tensor::write_atomic;
use gesturegan::metrics::{evaluate_samples, Embedder, EvalSample, MetricReport};
use gesturegan::pose::parse_annotations;
use gesturegan::raster::rasterize;
use gesturegan::synthetic::{generate, SyntheticCorpus};
use gesturegan::train::{derive_seed, resume, translate, CheckpointManifest, FitOptions, FitOutcome, TrainState};
use gesturegan::{Error, Image, Result, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::AppConfig;

/// Sub-stream tag for evaluation and translation dropout masks.
const TAG_INFERENCE: u64 = 40;
const TAG_RANDOM_TARGET: u64 = 41;

#[derive(Debug, Parser)]
#[command(name = "gesturegan", version, about = "Skeleton-conditioned hand gesture translation")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `train.seed` (`synthetic.seed` for `make-synthetic-corpus`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `out_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides `corpus.manifest`.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Overrides `corpus.annotations`.
    #[arg(long, global = true)]
    pub annotations: Option<PathBuf>,
    /// Any config key, e.g. `--set train.batch_size=4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on the configured corpus.
    Train {
        /// Stop after this many global steps.
        #[arg(long)]
        max_steps: Option<u64>,
        /// Continue from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Translate one corpus image toward a target pose.
    Translate {
        /// Checkpoint directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Source image identifier from the manifest.
        #[arg(long)]
        image: String,
        /// Image identifier whose pose is the target.
        #[arg(long, required_unless_present = "random_target", conflicts_with = "random_target")]
        target: Option<String>,
        /// Draw the target from the test split using the run seed.
        #[arg(long)]
        random_target: bool,
    },
    /// Translate every pair of a split and write `metrics.csv`.
    Evaluate {
        /// Checkpoint directory written by `train`.
        #[arg(long, required_unless_present = "oracle", conflicts_with = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Use the ground-truth target as the "generated" image.
        #[arg(long)]
        oracle: bool,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
    },
    /// Write one grayscale conditioning map per annotation record.
    Rasterize {
        /// Defaults to `train.variant`.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
    },
    /// Write a procedural corpus (images, manifest, annotations).
    MakeSyntheticCorpus,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

fn user(message: impl Into<String>) -> Error {
    Error::InvalidConfig(message.into())
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        })
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

/// Folds the global flags into the resolved configuration.
pub fn resolve_config(cli: &Cli) -> Result<AppConfig> {
    let mut overrides = cli.overrides.clone();
    let quoted = |p: &Path| format!("{:?}", p.to_string_lossy());
    if let Some(seed) = cli.seed {
        let key = match cli.command {
            Command::MakeSyntheticCorpus => "synthetic.seed",
            _ => "train.seed",
        };
        overrides.push(format!("{key}={seed}"));
    }
    if let Some(out) = &cli.out {
        overrides.push(format!("out_dir={}", quoted(out)));
    }
    if let Some(m) = &cli.manifest {
        overrides.push(format!("corpus.manifest={}", quoted(m)));
    }
    if let Some(a) = &cli.annotations {
        overrides.push(format!("corpus.annotations={}", quoted(a)));
    }
    AppConfig::resolve(cli.config.as_deref(), &overrides)
}

pub fn load_corpus(config: &AppConfig) -> Result<Corpus> {
    let manifest = config.manifest()?;
    let annotations = config.annotations()?;
    require_file(manifest)?;
    require_file(annotations)?;
    Corpus::load(manifest, annotations)
}

fn split_pairs_named<'a>(config: &AppConfig, pairs: &'a [GesturePair], which: SplitName) -> Result<Vec<&'a GesturePair>> {
    let split = config.split(pairs)?;
    let indices = match which {
        SplitName::Train => &split.train,
        SplitName::Test => &split.test,
    };
    split.select(pairs, indices)
}

/// Trains and writes checkpoints, `losses.csv`, `split.json`, and the
/// resolved `config.toml` into the output directory.
pub fn cmd_train(config: &AppConfig, max_steps: Option<u64>, resume_from: Option<&Path>) -> Result<FitOutcome> {
    let corpus = load_corpus(config)?;
    let pairs = corpus.pairs();
    let split = config.split(&pairs)?;
    let train = split.select(&pairs, &split.train)?;
    if train.is_empty() {
        return Err(user("the training split is empty"));
    }
    let state = match resume_from {
        Some(dir) => {
            let state = TrainState::load(dir, &Device::Cpu)?;
            if state.config() != &config.train {
                return Err(Error::Checkpoint {
                    path: dir.to_path_buf(),
                    message: "training configuration differs from the checkpoint's".into(),
                });
            }
            state
        }
        None => TrainState::new(config.train.clone(), &Device::Cpu)?,
    };
    ensure_dir(&config.out_dir)?;
    write_atomic(&config.out_dir.join("config.toml"), config.to_toml()?.as_bytes())?;
    split.save(&config.out_dir.join("split.json"))?;
    let options = FitOptions {
        out_dir: Some(config.out_dir.clone()),
        max_steps,
        verbose: true,
    };
    let outcome = resume(state, &corpus, &train, &options)?;
    println!(
        "trained steps={} checkpoints={}",
        outcome.state.step(),
        outcome.checkpoints.len()
    );
    Ok(outcome)
}

/// Loads a checkpoint after checking it was trained with the settings that
/// decide the network's shape and its inputs.
pub fn load_matching_checkpoint(config: &AppConfig, dir: &Path) -> Result<TrainState> {
    let manifest = CheckpointManifest::read(dir)?;
    let ours = &config.train;
    let theirs = &manifest.config;
    let mut differences = Vec::new();
    if ours.image_size != theirs.image_size {
        differences.push(format!("image_size {} vs {}", ours.image_size, theirs.image_size));
    }
    if ours.variant != theirs.variant {
        differences.push(format!("variant {} vs {}", ours.variant, theirs.variant));
    }
    if ours.raster != theirs.raster {
        differences.push("raster parameters".to_string());
    }
    if ours.generator_config() != manifest.generator {
        differences.push("generator architecture".to_string());
    }
    if !differences.is_empty() {
        return Err(Error::Checkpoint {
            path: dir.to_path_buf(),
            message: format!("does not match the configuration: {}", differences.join(", ")),
        });
    }
    TrainState::load(dir, &Device::Cpu)
}

/// Paths written by [`cmd_translate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslateOutput {
    pub target: String,
    pub generated: PathBuf,
    pub side_by_side: PathBuf,
}

pub fn choose_random_target(config: &AppConfig, pairs: &[GesturePair], image: &str) -> Result<String> {
    let test = split_pairs_named(config, pairs, SplitName::Test)?;
    let own: Vec<&&GesturePair> = test.iter().filter(|p| p.source.image == image).collect();
    let pool: Vec<&GesturePair> = if own.is_empty() {
        test.clone()
    } else {
        own.into_iter().copied().collect()
    };
    if pool.is_empty() {
        return Err(user("the test split is empty; cannot draw a random target"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.train.seed, &[TAG_RANDOM_TARGET]));
    Ok(pool[rng.random_range(0..pool.len())].target.image.clone())
}

pub fn cmd_translate(
    config: &AppConfig,
    checkpoint: &Path,
    image: &str,
    target: Option<&str>,
) -> Result<TranslateOutput> {
    let corpus = load_corpus(config)?;
    let state = load_matching_checkpoint(config, checkpoint)?;
    let size = config.train.image_size;
    let source = corpus
        .record(image)
        .ok_or_else(|| user(format!("image `{image}` is not in the manifest")))?;
    let target = match target {
        Some(t) => t.to_string(),
        None => choose_random_target(config, &corpus.pairs(), image)?,
    };
    let target_record = corpus
        .record(&target)
        .ok_or_else(|| user(format!("target `{target}` is not in the manifest")))?;
    let side = size as u32;
    let map = rasterize(&target_record.pose.scaled(side, side)?, config.train.variant, config.train.raster);
    let x = corpus.image(&source.image, size)?;
    let dropout = config
        .evaluate
        .dropout
        .then(|| derive_seed(config.train.seed, &[TAG_INFERENCE, u64::MAX]));
    let generated = translate(&state, &x, &map, dropout)?.quantized();

    let dir = config.out_dir.join("translate");
    ensure_dir(&dir)?;
    let gray = map.to_image().map(|v| (255.0 * v).round());
    let cond_rgb = Image::new(3, size, size, gray.data().repeat(3))?;
    let panel = Image::hconcat(&[&x.to_unsigned(), &cond_rgb, &generated])?;
    let out = TranslateOutput {
        target,
        generated: dir.join("generated.png"),
        side_by_side: dir.join("side_by_side.png"),
    };
    generated.save_png(&out.generated)?;
    panel.save_png(&out.side_by_side)?;
    println!("target={}", out.target);
    Ok(out)
}

/// Where evaluated images come from.
pub enum Generated<'a> {
    /// The ground-truth target itself.
    Oracle,
    Checkpoint(&'a Path),
}

pub fn cmd_evaluate(config: &AppConfig, source: Generated<'_>, which: SplitName) -> Result<MetricReport> {
    let corpus = load_corpus(config)?;
    let embedder = Embedder::new(&config.embedder, &Device::Cpu)?;
    let state = match source {
        Generated::Oracle => None,
        Generated::Checkpoint(dir) => Some(load_matching_checkpoint(config, dir)?),
    };
    let pairs = corpus.pairs();
    let selected = split_pairs_named(config, &pairs, which)?;
    if selected.is_empty() {
        return Err(user("the selected split is empty"));
    }
    let size = config.train.image_size;
    let mut samples = Vec::with_capacity(selected.len());
    for (i, pair) in selected.iter().enumerate() {
        let with_id = |e: Error| Error::Pair {
            pair: pair.id(),
            source: Box::new(e),
        };
        let example = corpus
            .load_example(pair, false, size, config.train.variant, config.train.raster)
            .map_err(with_id)?;
        let generated = match &state {
            None => example.y.clone(),
            Some(state) => {
                let dropout = config
                    .evaluate
                    .dropout
                    .then(|| derive_seed(config.train.seed, &[TAG_INFERENCE, i as u64]));
                translate(state, &example.x, &example.cond_y, dropout).map_err(with_id)?
            }
        };
        samples.push(EvalSample {
            identifier: pair.id(),
            real: example.y,
            generated,
        });
    }
    let report = evaluate_samples(&samples, &embedder, config.evaluate.is_splits)?;
    ensure_dir(&config.out_dir)?;
    write_atomic(&config.out_dir.join("metrics.csv"), report.to_csv().as_bytes())?;
    let a = &report.aggregate;
    println!(
        "evaluated N={} mse={} psnr={} is={}±{} fid={} frd={}",
        a.n, a.mse, a.psnr, a.is_mean, a.is_std, a.fid, a.frd
    );
    Ok(report)
}

/// `<identifier>_<variant>.png` with path separators flattened.
pub fn raster_file_name(identifier: &str, variant: Variant) -> String {
    let stem: String = identifier
        .chars()
        .map(|c| if matches!(c, '/' | '\\' | ':') { '_' } else { c })
        .collect();
    let stem = stem.strip_suffix(".png").unwrap_or(&stem);
    format!("{stem}_{variant}.png")
}

pub fn cmd_rasterize(config: &AppConfig, variant: Option<Variant>) -> Result<Vec<PathBuf>> {
    let annotations = config.annotations()?;
    require_file(annotations)?;
    let text = fs::read_to_string(annotations).map_err(|e| Error::Io {
        path: annotations.to_path_buf(),
        source: e,
    })?;
    let records = parse_annotations(&text)?;
    let variant = variant.unwrap_or(config.train.variant);
    let dir = config.out_dir.join("rasterized");
    ensure_dir(&dir)?;
    let mut written = Vec::with_capacity(records.len());
    for (id, pose) in &records {
        let map = rasterize(pose, variant, config.train.raster);
        let pixels: Vec<f32> = map.to_gray8().into_iter().map(f32::from).collect();
        let img = Image::new(1, map.height(), map.width(), pixels)?;
        let path = dir.join(raster_file_name(id, variant));
        img.save_png(&path)?;
        written.push(path);
    }
    println!("rasterized {} records as {}", written.len(), variant);
    Ok(written)
}

pub fn cmd_make_synthetic_corpus(config: &AppConfig) -> Result<SyntheticCorpus> {
    let out = generate(&config.synthetic, &config.out_dir)?;
    println!("manifest={}", out.manifest.display());
    println!("annotations={}", out.annotations.display());
    Ok(out)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let config = resolve_config(cli)?;
    match &cli.command {
        Command::Train { max_steps, resume } => cmd_train(&config, *max_steps, resume.as_deref()).map(drop),
        Command::Translate {
            checkpoint,
            image,
            target,
            ..
        } => cmd_translate(&config, checkpoint, image, target.as_deref()).map(drop),
        Command::Evaluate {
            checkpoint,
            oracle,
            split,
        } => {
            let source = match (oracle, checkpoint) {
                (true, _) => Generated::Oracle,
                (false, Some(dir)) => Generated::Checkpoint(dir),
                (false, None) => return Err(user("evaluate needs --checkpoint or --oracle")),
            };
            cmd_evaluate(&config, source, *split).map(drop)
        }
        Command::Rasterize { variant } => cmd_rasterize(&config, *variant).map(drop),
        Command::MakeSyntheticCorpus => cmd_make_synthetic_corpus(&config).map(drop),
    }
}

/// Parses arguments, runs the command, and returns the process exit code:
/// 0 on success, 1 for user errors, 2 for internal failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                1
            } else {
                2
            }
        }
    }
}
