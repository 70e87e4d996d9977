use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::error::{Error, Result};

/// Adam with bias correction. Moments are kept per named parameter so they
/// can be checkpointed alongside the weights.
#[derive(Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: u64,
    names: Vec<String>,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new<'a>(
        params: impl IntoIterator<Item = (String, &'a Var)>,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Result<Self> {
        let mut names = Vec::new();
        let mut first = Vec::new();
        let mut second = Vec::new();
        for (name, var) in params {
            names.push(name);
            first.push(var.as_tensor().zeros_like()?);
            second.push(var.as_tensor().zeros_like()?);
        }
        Ok(Self {
            lr,
            beta1,
            beta2,
            eps,
            steps: 0,
            names,
            first,
            second,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to `params`, which must be given in construction
    /// order. Parameters without a gradient are left untouched.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a Var>, grads: &GradStore) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        let correct1 = 1.0 - self.beta1.powi(t);
        let correct2 = 1.0 - self.beta2.powi(t);
        let mut count = 0;
        for (i, var) in params.into_iter().enumerate() {
            count += 1;
            let Some(grad) = grads.get(var.as_tensor()) else {
                continue;
            };
            let grad = grad.detach();
            let m = ((&self.first[i] * self.beta1)? + (&grad * (1.0 - self.beta1))?)?;
            let v = ((&self.second[i] * self.beta2)? + (grad.sqr()? * (1.0 - self.beta2))?)?;
            let m_hat = (&m / correct1)?;
            let v_hat = (&v / correct2)?;
            let update = (m_hat / (v_hat.sqrt()? + self.eps)?)?;
            let next = (var.as_tensor().detach() - (update * self.lr)?)?;
            var.set(&next)?;
            self.first[i] = m;
            self.second[i] = v;
        }
        debug_assert_eq!(count, self.names.len());
        Ok(())
    }

    pub fn moments(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (i, name) in self.names.iter().enumerate() {
            out.insert(format!("m.{name}"), self.first[i].clone());
            out.insert(format!("v.{name}"), self.second[i].clone());
        }
        out
    }

    /// Restores moments and the step counter, checking every shape against
    /// the current ones.
    pub fn restore(&mut self, tensors: &HashMap<String, Tensor>, steps: u64, origin: &Path) -> Result<()> {
        let fail = |message: String| Error::Checkpoint {
            path: origin.to_path_buf(),
            message,
        };
        if tensors.len() != 2 * self.names.len() {
            return Err(fail(format!(
                "optimizer file holds {} tensors, expected {}",
                tensors.len(),
                2 * self.names.len()
            )));
        }
        for (i, name) in self.names.iter().enumerate() {
            for (prefix, slot) in [("m", &mut self.first[i]), ("v", &mut self.second[i])] {
                let key = format!("{prefix}.{name}");
                let t = tensors.get(&key).ok_or_else(|| fail(format!("missing `{key}`")))?;
                if t.dims() != slot.dims() {
                    return Err(fail(format!(
                        "`{key}` has shape {:?}, parameter has {:?}",
                        t.dims(),
                        slot.dims()
                    )));
                }
                *slot = t.clone();
            }
        }
        self.steps = steps;
        Ok(())
    }
}
