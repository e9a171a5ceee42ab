use serde::{Deserialize, Serialize};

use crate::contrast::{DiscriminatorKind as D, EstimatorKind as Est};
use crate::encoders::{EncoderKind as E, ReadoutKind as R};
use crate::error::{Error, Result};
use crate::samplers::SamplerKind as S;
use crate::trainer::FrameworkSpec;

pub const PRESET_NAMES: [&str; 8] = ["deepwalk", "line", "gae", "dgi", "mvgrl", "infograph", "graphcl", "gca"];

pub fn preset(name: &str) -> Result<FrameworkSpec> {
    let (e, r, s, d, est) = match name {
        "deepwalk" => (E::Lookup, R::None, S::Deepwalk, D::Inner, Est::Jsd),
        "line" => (E::Lookup, R::None, S::Line, D::Inner, Est::Jsd),
        "gae" => (E::Gcn, R::None, S::Line, D::Inner, Est::Jsd),
        "dgi" => (E::Gcn, R::Mean, S::Dgi, D::Bilinear, Est::Jsd),
        "mvgrl" => (E::Gcn, R::Jknet, S::Mvgrl, D::Inner, Est::Jsd),
        "infograph" => (E::Gin, R::Sum, S::Dgi, D::Inner, Est::Jsd),
        "graphcl" => (E::Gin, R::Sum, S::Graphcl, D::Inner, Est::Infonce),
        "gca" => (E::Gcn, R::None, S::Gca, D::Inner, Est::Infonce),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "unknown preset {name:?}; expected one of {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(FrameworkSpec::new(e, r, s, d, est))
}

/// The module tuple of a preset, as stored in the golden file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresetRow {
    pub name: String,
    pub encoder: E,
    pub readout: R,
    pub sampler: S,
    pub discriminator: D,
    pub estimator: Est,
}

impl PresetRow {
    pub fn of(name: &str) -> Result<Self> {
        let s = preset(name)?;
        Ok(Self {
            name: name.to_string(),
            encoder: s.encoder.kind,
            readout: s.encoder.readout,
            sampler: s.sampler.kind,
            discriminator: s.discriminator,
            estimator: s.estimator,
        })
    }
}

/// One JSON line per preset, in `PRESET_NAMES` order.
pub fn preset_jsonl() -> String {
    let mut out = String::new();
    for name in PRESET_NAMES {
        let row = PresetRow::of(name).expect("listed preset");
        out.push_str(&serde_json::to_string(&row).expect("plain struct"));
        out.push('\n');
    }
    out
}
