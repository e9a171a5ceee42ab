use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::Axis;
use crate::contrast::{DiscriminatorKind, EstimatorKind};
use crate::encoders::{EncoderKind, ReadoutKind};
use crate::error::{Error, Result};
use crate::samplers::SamplerKind;
use crate::trainer::FrameworkSpec;

/// Ranges of modules and hyperparameters to sample from. Fields not listed
/// come from `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub encoder: Vec<EncoderKind>,
    pub readout: Vec<ReadoutKind>,
    pub sampler: Vec<SamplerKind>,
    pub discriminator: Vec<DiscriminatorKind>,
    pub estimator: Vec<EstimatorKind>,
    pub emb_dim: Vec<usize>,
    pub layers: Vec<usize>,
    pub lr: Vec<f64>,
    pub base: FrameworkSpec,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::ALL.to_vec(),
            readout: vec![ReadoutKind::Mean, ReadoutKind::Sum],
            sampler: SamplerKind::ALL.to_vec(),
            discriminator: DiscriminatorKind::ALL.to_vec(),
            estimator: EstimatorKind::ALL.to_vec(),
            emb_dim: vec![64, 128],
            layers: vec![1, 2, 3, 4],
            lr: vec![0.01],
            base: FrameworkSpec::default(),
        }
    }
}

impl SearchSpace {
    pub fn load(path: &Path) -> Result<Self> {
        let file = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::data(&file, "open", e.to_string()))?;
        let space: Self = serde_json::from_str(&text)
            .map_err(|e| Error::data(&file, format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
        space.validate().map_err(|e| Error::data(&file, "space", e.to_string()))?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("encoder", self.encoder.is_empty()),
            ("readout", self.readout.is_empty()),
            ("sampler", self.sampler.is_empty()),
            ("discriminator", self.discriminator.is_empty()),
            ("estimator", self.estimator.is_empty()),
            ("emb_dim", self.emb_dim.is_empty()),
            ("layers", self.layers.is_empty()),
            ("lr", self.lr.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Harness(format!("empty search space: no values for {name}")));
        }
        if let Some(l) = self.layers.iter().find(|l| !(1..=4).contains(*l)) {
            return Err(Error::Harness(format!("layers must be in 1..=4, got {l}")));
        }
        if self.emb_dim.contains(&0) || self.lr.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Harness("emb_dim and lr must be positive".into()));
        }
        Ok(())
    }

    /// Distinct instantiation names of `axis`, in listed order.
    pub fn axis_values(&self, axis: Axis) -> Vec<String> {
        let names: Vec<String> = match axis {
            Axis::Encoder => self.encoder.iter().map(ToString::to_string).collect(),
            Axis::Readout => self.readout.iter().map(ToString::to_string).collect(),
            Axis::Sampler => self.sampler.iter().map(ToString::to_string).collect(),
            Axis::Discriminator => self.discriminator.iter().map(ToString::to_string).collect(),
            Axis::Estimator => self.estimator.iter().map(ToString::to_string).collect(),
        };
        let mut out: Vec<String> = Vec::new();
        for n in names {
            if !out.contains(&n) {
                out.push(n);
            }
        }
        out
    }

    /// A uniform draw from the product of the ranges, with a fresh model seed.
    pub fn sample<R: RngCore>(&self, rng: &mut R) -> Result<FrameworkSpec> {
        self.validate()?;
        let mut s = self.base.clone();
        s.encoder.kind = *self.encoder.choose(rng).expect("validated");
        s.encoder.readout = *self.readout.choose(rng).expect("validated");
        s.sampler.kind = *self.sampler.choose(rng).expect("validated");
        s.discriminator = *self.discriminator.choose(rng).expect("validated");
        s.estimator = *self.estimator.choose(rng).expect("validated");
        s.encoder.emb_dim = *self.emb_dim.choose(rng).expect("validated");
        s.encoder.layers = *self.layers.choose(rng).expect("validated");
        s.lr = *self.lr.choose(rng).expect("validated");
        s.seed = rng.random();
        Ok(s)
    }
}
