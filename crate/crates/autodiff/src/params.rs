use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AutodiffError, Result};
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Matrix,
    pub v: Matrix,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Matrix,
    pub grad: Matrix,
    pub adam: AdamState,
}

impl Param {
    fn new(value: Matrix) -> Self {
        let dim = value.dim();
        Self {
            value,
            grad: Array2::zeros(dim),
            adam: AdamState {
                m: Array2::zeros(dim),
                v: Array2::zeros(dim),
                step: 0,
            },
        }
    }
}

/// Named trainable matrices with their gradients and Adam moments.
///
/// Iteration order is the lexicographic order of names so that
/// checksums and checkpoints do not depend on insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a parameter, resetting its optimiser state.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.params.insert(name.into(), Param::new(value));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Matrix> {
        self.params.get(name).map(|p| &p.grad)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries over all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn byte_size(&self) -> usize {
        self.num_scalars() * std::mem::size_of::<f64>()
    }

    pub(crate) fn accumulate_grad(&mut self, name: &str, grad: &Matrix) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))?;
        if p.grad.dim() != grad.dim() {
            return Err(AutodiffError::Shape {
                op: "accumulate_grad",
                lhs: p.grad.dim(),
                rhs: grad.dim(),
            });
        }
        p.grad += grad;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Bias-corrected Adam update of every parameter, then zeroes gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        for p in self.params.values_mut() {
            let st = &mut p.adam;
            st.step += 1;
            let t = st.step as i32;
            let c1 = 1.0 - cfg.beta1.powi(t);
            let c2 = 1.0 - cfg.beta2.powi(t);
            ndarray::Zip::from(&mut p.value)
                .and(&mut p.grad)
                .and(&mut st.m)
                .and(&mut st.v)
                .for_each(|w, g, m, v| {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * *g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * *g * *g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                    *g = 0.0;
                });
        }
    }

    /// Short hex digest of names, shapes and bit patterns of all values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, p) in &self.params {
            h.update(name.as_bytes());
            h.update((p.value.nrows() as u64).to_le_bytes());
            h.update((p.value.ncols() as u64).to_le_bytes());
            for v in p.value.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint(
            self.params
                .iter()
                .map(|(name, p)| {
                    let entry = CheckpointEntry {
                        shape: [p.value.nrows(), p.value.ncols()],
                        values: p.value.iter().copied().collect(),
                    };
                    (name.clone(), entry)
                })
                .collect(),
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut store = Self::new();
        for (name, entry) in &ckpt.0 {
            let [r, c] = entry.shape;
            let value = Array2::from_shape_vec((r, c), entry.values.clone()).map_err(|e| {
                AutodiffError::Checkpoint(format!("`{name}`: {e}"))
            })?;
            store.insert(name.clone(), value);
        }
        Ok(store)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())
            .map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| AutodiffError::Checkpoint(e.to_string()))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(&ckpt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointEntry {
    shape: [usize; 2],
    values: Vec<f64>,
}

/// JSON checkpoint: parameter name to shape and row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Checkpoint(BTreeMap<String, CheckpointEntry>);
