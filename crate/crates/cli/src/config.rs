//! The single TOML configuration file and its command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use gesturegan::dataset::{split_pairs, GesturePair, Split, SplitSpec};
use gesturegan::metrics::EmbedderSpec;
use gesturegan::synthetic::SyntheticSpec;
use gesturegan::{Error, Result, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusPaths {
    pub manifest: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
}

/// How the canonical pair list is divided. Unset counts default to a fifth
/// of the pairs for testing and the rest for training.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub seed: u64,
    pub train_pairs: Option<usize>,
    pub test_pairs: Option<usize>,
}

impl SplitConfig {
    pub fn spec(&self, universe: usize) -> SplitSpec {
        let test = self
            .test_pairs
            .unwrap_or(if universe >= 2 { (universe / 5).max(1) } else { 0 });
        SplitSpec {
            seed: self.seed,
            test_pairs: test,
            train_pairs: self.train_pairs.unwrap_or(universe.saturating_sub(test)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Number of splits for the Inception Score.
    pub is_splits: usize,
    /// Keep the generator's dropout active (seeded) when translating.
    pub dropout: bool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            is_splits: 1,
            dropout: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub out_dir: PathBuf,
    pub corpus: CorpusPaths,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub embedder: EmbedderSpec,
    pub evaluate: EvaluateConfig,
    pub synthetic: SyntheticSpec,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs/default"),
            corpus: CorpusPaths::default(),
            split: SplitConfig::default(),
            train: TrainConfig::default(),
            embedder: EmbedderSpec::default(),
            evaluate: EvaluateConfig::default(),
            synthetic: SyntheticSpec::default(),
        }
    }
}

fn bad(message: impl Into<String>) -> Error {
    Error::InvalidConfig(message.into())
}

/// Parses `value` as a TOML literal, falling back to a bare string so that
/// `--set train.variant=Khat` works without quotes.
fn literal(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

/// Sets a dotted key inside a TOML table, creating intermediate tables.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| bad(format!("override `{assignment}` is not KEY=VALUE")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(bad(format!("override key `{key}` is malformed")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| bad(format!("`{part}` in override `{key}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), literal(value.trim()));
    Ok(())
}

impl AppConfig {
    /// Defaults, then the file (if any), then each `KEY=VALUE` override.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.to_path_buf(),
                    source: e,
                })?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| bad(format!("{}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: AppConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| bad(e.to_string()))?;
        config.train.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| bad(format!("cannot serialize config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| bad(e.to_string()))
    }

    pub fn manifest(&self) -> Result<&Path> {
        self.corpus
            .manifest
            .as_deref()
            .ok_or_else(|| bad("no corpus manifest configured (corpus.manifest or --manifest)"))
    }

    pub fn annotations(&self) -> Result<&Path> {
        self.corpus
            .annotations
            .as_deref()
            .ok_or_else(|| bad("no annotation file configured (corpus.annotations or --annotations)"))
    }

    /// The split stored in the output directory, or a fresh one.
    pub fn split(&self, pairs: &[GesturePair]) -> Result<Split> {
        let path = self.out_dir.join("split.json");
        if path.exists() {
            let split = Split::load(&path)?;
            if split.universe == pairs.len() && split.seed == self.split.seed {
                return Ok(split);
            }
        }
        split_pairs(pairs, &self.split.spec(pairs.len()))
    }
}
