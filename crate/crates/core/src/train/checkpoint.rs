//! Checkpoint directories: one safetensors file per network and optimizer
//! plus a JSON manifest with the configuration and counters.

use std::fs;
use std::path::{Path, PathBuf};

use candle_core::Device;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::engine::TrainState;
use crate::error::{Error, Result};
use crate::nn::params::{load_tensors, save_tensors};
use crate::nn::{DiscriminatorConfig, GeneratorConfig, Provenance};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config: TrainConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub identity_extractor: Provenance,
    pub step: u64,
    pub epoch: usize,
    pub seed: u64,
    pub optimizer_g_steps: u64,
    pub optimizer_d_steps: u64,
    pub epoch_loss_sum: f64,
    pub epoch_loss_count: u64,
}

impl CheckpointManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint {
            path,
            message: e.to_string(),
        })
    }
}

fn partial_dir(dir: &Path) -> PathBuf {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    dir.with_file_name(format!(".{name}.partial"))
}

impl TrainState {
    pub fn manifest(&self) -> CheckpointManifest {
        CheckpointManifest {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            generator: self.generator.config().clone(),
            discriminator: self.d1.config().clone(),
            identity_extractor: self.extractor.provenance(),
            step: self.step,
            epoch: self.epoch,
            seed: self.config.seed,
            optimizer_g_steps: self.opt_g.steps(),
            optimizer_d_steps: self.opt_d.steps(),
            epoch_loss_sum: self.epoch_loss_sum,
            epoch_loss_count: self.epoch_loss_count,
        }
    }

    /// Writes the checkpoint into a scratch directory and renames it into
    /// place, replacing any previous checkpoint at `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        if let Some(parent) = dir.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let tmp = partial_dir(dir);
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        self.generator.params().save(&tmp.join("generator.safetensors"))?;
        self.d1.params().save(&tmp.join("d1.safetensors"))?;
        self.d2.params().save(&tmp.join("d2.safetensors"))?;
        save_tensors(&self.opt_g.moments(), &tmp.join("optim_g.safetensors"))?;
        save_tensors(&self.opt_d.moments(), &tmp.join("optim_d.safetensors"))?;
        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        let manifest_path = tmp.join(MANIFEST_FILE);
        fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
    }

    pub fn load(dir: &Path, device: &Device) -> Result<Self> {
        let manifest = CheckpointManifest::read(dir)?;
        let fail = |message: String| Error::Checkpoint {
            path: dir.to_path_buf(),
            message,
        };
        if manifest.format_version != FORMAT_VERSION {
            return Err(fail(format!("unsupported format version {}", manifest.format_version)));
        }
        if manifest.generator != manifest.config.generator_config()
            || manifest.discriminator != manifest.config.discriminator_config()
        {
            return Err(fail("network configuration disagrees with the training config".into()));
        }
        let mut state = TrainState::new(manifest.config.clone(), device)?;
        if state.extractor.provenance() != manifest.identity_extractor {
            return Err(fail(format!(
                "identity extractor recorded as {}, config builds {}",
                manifest.identity_extractor,
                state.extractor.provenance()
            )));
        }
        state.generator.params().load(&dir.join("generator.safetensors"), device)?;
        state.d1.params().load(&dir.join("d1.safetensors"), device)?;
        state.d2.params().load(&dir.join("d2.safetensors"), device)?;
        let og = dir.join("optim_g.safetensors");
        state
            .opt_g
            .restore(&load_tensors(&og, device)?, manifest.optimizer_g_steps, &og)?;
        let od = dir.join("optim_d.safetensors");
        state
            .opt_d
            .restore(&load_tensors(&od, device)?, manifest.optimizer_d_steps, &od)?;
        state.step = manifest.step;
        state.epoch = manifest.epoch;
        state.epoch_loss_sum = manifest.epoch_loss_sum;
        state.epoch_loss_count = manifest.epoch_loss_count;
        Ok(state)
    }
}
