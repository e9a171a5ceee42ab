//! Controlled random search, rank and combination analysis, presets and
//! profiling.

mod comb;
mod exec;
mod pairs;
mod presets;
mod profile;
mod ranking;
mod records;
mod search;
mod space;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::trainer::FrameworkSpec;

pub use comb::{best_pool_comb, best_pool_single, pool_size, CombEntry, CombTable};
pub use exec::{execute_batch, run_experiment, split_for, ExecOptions, ExecSummary, RunOutcome};
pub use pairs::generate_controlled_pairs;
pub use presets::{preset, preset_jsonl, PresetRow, PRESET_NAMES};
pub use profile::{profile_modules, EncoderProfile, ProfileOptions, ProfileTable, SamplerProfile};
pub use ranking::{competition_ranks, rank_pairs, MeanRank, RankRow, RankingTable, TIE_THRESHOLD};
pub use records::{read_configs, read_results, record_key, write_configs, write_results, ResultRecord, ResultRow, Status, RESULT_HEADER};
pub use search::{best_model_search, SearchResult};
pub use space::SearchSpace;

/// A module axis of the framework.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Encoder,
    Readout,
    Sampler,
    Discriminator,
    Estimator,
}

impl Axis {
    pub const ALL: [Axis; 5] = [Axis::Encoder, Axis::Readout, Axis::Sampler, Axis::Discriminator, Axis::Estimator];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Encoder => "encoder",
            Axis::Readout => "readout",
            Axis::Sampler => "sampler",
            Axis::Discriminator => "discriminator",
            Axis::Estimator => "estimator",
        }
    }

    /// Instantiation name of this axis in `spec`.
    pub fn value(self, spec: &FrameworkSpec) -> String {
        match self {
            Axis::Encoder => spec.encoder.kind.to_string(),
            Axis::Readout => spec.encoder.readout.to_string(),
            Axis::Sampler => spec.sampler.kind.to_string(),
            Axis::Discriminator => spec.discriminator.to_string(),
            Axis::Estimator => spec.estimator.to_string(),
        }
    }

    pub fn set(self, spec: &mut FrameworkSpec, value: &str) -> Result<()> {
        match self {
            Axis::Encoder => spec.encoder.kind = value.parse()?,
            Axis::Readout => spec.encoder.readout = value.parse()?,
            Axis::Sampler => spec.sampler.kind = value.parse()?,
            Axis::Discriminator => spec.discriminator = value.parse()?,
            Axis::Estimator => spec.estimator = value.parse()?,
        }
        Ok(())
    }

    fn blank(self, v: &mut serde_json::Value) {
        let slot = match self {
            Axis::Encoder => v.pointer_mut("/encoder/kind"),
            Axis::Readout => v.pointer_mut("/encoder/readout"),
            Axis::Sampler => v.pointer_mut("/sampler/kind"),
            Axis::Discriminator => v.pointer_mut("/discriminator"),
            Axis::Estimator => v.pointer_mut("/estimator"),
        };
        if let Some(s) = slot {
            *s = serde_json::Value::Null;
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disc" => Ok(Axis::Discriminator),
            "est" => Ok(Axis::Estimator),
            _ => Axis::ALL
                .into_iter()
                .find(|a| a.name() == s)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown module axis {s:?}"))),
        }
    }
}

/// One run of the search: a spec bound to a dataset, optionally a member of
/// a controlled group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub spec: FrameworkSpec,
    #[serde(default)]
    pub dataset: String,
    #[serde(default)]
    pub pair_id: Option<String>,
    #[serde(default)]
    pub varied_module: Option<String>,
}

impl ExperimentConfig {
    pub fn new(spec: FrameworkSpec, dataset: impl Into<String>) -> Self {
        Self {
            spec,
            dataset: dataset.into(),
            pair_id: None,
            varied_module: None,
        }
    }

    /// SHA-256 of the canonical JSON with the varied axis nulled; equal for
    /// every member of a controlled group.
    pub fn blanked_hash(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(axis) = &self.varied_module {
            axis.parse::<Axis>()?.blank(&mut v);
        }
        let digest = Sha256::digest(serde_json::to_string(&v)?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
