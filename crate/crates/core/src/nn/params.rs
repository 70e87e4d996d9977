use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Named trainable tensors of one network, in registration order.
#[derive(Debug, Default)]
pub struct ParamStore {
    entries: Vec<(String, Var)>,
}

impl ParamStore {
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn vars(&self) -> impl Iterator<Item = &Var> {
        self.entries.iter().map(|(_, v)| v)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar parameter count.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn fill_zero(&self) -> Result<()> {
        for (_, v) in &self.entries {
            v.set(&v.zeros_like()?)?;
        }
        Ok(())
    }

    pub fn to_map(&self) -> BTreeMap<String, Tensor> {
        self.entries
            .iter()
            .map(|(n, v)| (n.clone(), v.as_tensor().clone()))
            .collect()
    }

    /// Copies values from `tensors` into the store; every parameter must be
    /// present with a matching shape.
    pub fn assign(&self, tensors: &HashMap<String, Tensor>, origin: &Path) -> Result<()> {
        for (name, var) in &self.entries {
            let t = tensors.get(name).ok_or_else(|| Error::Checkpoint {
                path: origin.to_path_buf(),
                message: format!("missing tensor `{name}`"),
            })?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint {
                    path: origin.to_path_buf(),
                    message: format!(
                        "tensor `{name}` has shape {:?}, network expects {:?}",
                        t.dims(),
                        var.dims()
                    ),
                });
            }
            var.set(&t.to_dtype(var.dtype())?)?;
        }
        if tensors.len() != self.entries.len() {
            return Err(Error::Checkpoint {
                path: origin.to_path_buf(),
                message: format!(
                    "file holds {} tensors, network has {}",
                    tensors.len(),
                    self.entries.len()
                ),
            });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_tensors(&self.to_map(), path)
    }

    pub fn load(&self, path: &Path, device: &Device) -> Result<()> {
        self.assign(&load_tensors(path, device)?, path)
    }
}

/// Seeded parameter factory. Weights are drawn from N(0, 0.02²), biases are
/// zero.
pub struct ParamBuilder {
    rng: ChaCha8Rng,
    device: Device,
    store: ParamStore,
}

impl ParamBuilder {
    pub fn new(seed: u64, device: &Device) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            device: device.clone(),
            store: ParamStore::default(),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0f32, std as f32).expect("positive std");
        let data: Vec<f32> = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        let t = Tensor::from_vec(data, shape, &self.device)?;
        self.register(name, Var::from_tensor(&t)?)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<Var> {
        let t = Tensor::zeros(shape, DType::F32, &self.device)?;
        self.register(name, Var::from_tensor(&t)?)
    }

    fn register(&mut self, name: &str, var: Var) -> Result<Var> {
        if self.store.entries.iter().any(|(n, _)| n == name) {
            return Err(Error::InvalidConfig(format!("duplicate parameter `{name}`")));
        }
        self.store.entries.push((name.to_string(), var.clone()));
        Ok(var)
    }

    pub fn finish(self) -> ParamStore {
        self.store
    }
}

pub fn save_tensors(tensors: &BTreeMap<String, Tensor>, path: &Path) -> Result<()> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.partial"));
    let as_hash: HashMap<&str, Tensor> = tensors.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    candle_core::safetensors::save(&as_hash, &tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_tensors(path: &Path, device: &Device) -> Result<HashMap<String, Tensor>> {
    candle_core::safetensors::load(path, device).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
