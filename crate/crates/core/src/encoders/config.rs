use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Lookup,
    Mlp,
    Gcn,
    Gat,
    Gin,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 5] = [
        EncoderKind::Lookup,
        EncoderKind::Mlp,
        EncoderKind::Gcn,
        EncoderKind::Gat,
        EncoderKind::Gin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Lookup => "lookup",
            EncoderKind::Mlp => "mlp",
            EncoderKind::Gcn => "gcn",
            EncoderKind::Gat => "gat",
            EncoderKind::Gin => "gin",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutKind {
    Mean,
    Sum,
    Jknet,
    None,
}

impl ReadoutKind {
    pub const ALL: [ReadoutKind; 4] = [ReadoutKind::Mean, ReadoutKind::Sum, ReadoutKind::Jknet, ReadoutKind::None];

    pub fn name(self) -> &'static str {
        match self {
            ReadoutKind::Mean => "mean",
            ReadoutKind::Sum => "sum",
            ReadoutKind::Jknet => "jknet",
            ReadoutKind::None => "none",
        }
    }
}

macro_rules! named {
    ($ty:ty, $what:literal) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                Self::ALL
                    .into_iter()
                    .find(|k| k.name() == s)
                    .ok_or_else(|| Error::InvalidArgument(format!(concat!("unknown ", $what, " {:?}"), s)))
            }
        }
    };
}

named!(EncoderKind, "encoder");
named!(ReadoutKind, "readout");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub layers: usize,
    pub emb_dim: usize,
    pub readout: ReadoutKind,
    #[serde(default)]
    pub projection_head: bool,
}

impl EncoderConfig {
    pub fn new(kind: EncoderKind, readout: ReadoutKind, emb_dim: usize, layers: usize) -> Self {
        Self {
            kind,
            layers,
            emb_dim,
            readout,
            projection_head: false,
        }
    }

    /// Layer count that shapes parameters; a lookup table is one layer.
    pub fn effective_layers(&self) -> usize {
        if self.kind == EncoderKind::Lookup {
            1
        } else {
            self.layers
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.layers) {
            return Err(Error::InvalidArgument(format!("layers must be in 1..=4, got {}", self.layers)));
        }
        if self.emb_dim == 0 {
            return Err(Error::InvalidArgument("emb_dim must be positive".into()));
        }
        Ok(())
    }
}
