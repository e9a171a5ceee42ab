//! Discriminators and mutual-information estimators.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use gclab_autodiff::{Matrix, ParamStore, Reduce, Tape, Var};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::encoders::glorot;
use crate::error::{Error, Result};
use crate::rng;
use crate::samplers::{ContrastBatch, Negatives, SampleRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscriminatorKind {
    Inner,
    Bilinear,
}

impl DiscriminatorKind {
    pub const ALL: [DiscriminatorKind; 2] = [DiscriminatorKind::Inner, DiscriminatorKind::Bilinear];

    pub fn name(self) -> &'static str {
        match self {
            DiscriminatorKind::Inner => "inner",
            DiscriminatorKind::Bilinear => "bilinear",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Jsd,
    Infonce,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 2] = [EstimatorKind::Jsd, EstimatorKind::Infonce];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Jsd => "jsd",
            EstimatorKind::Infonce => "infonce",
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

named!(DiscriminatorKind, "discriminator");
named!(EstimatorKind, "estimator");

pub const BILINEAR_PARAM: &str = "disc.w";

/// Adds `disc.w` (`d x d`) for the bilinear discriminator.
pub fn init_discriminator(kind: DiscriminatorKind, dim: usize, seed: u64, store: &mut ParamStore) {
    if kind == DiscriminatorKind::Bilinear {
        store.insert(BILINEAR_PARAM, glorot(&mut rng::stream(seed, 0xd15c), dim, dim));
    }
}

fn check_dims(t: &Tape, a: Var, c: Var) -> Result<()> {
    if t.shape(a).1 != t.shape(c).1 {
        return Err(Error::InvalidArgument(format!(
            "discriminator dimension mismatch: {} vs {}",
            t.shape(a).1,
            t.shape(c).1
        )));
    }
    Ok(())
}

/// Row-wise scores `f(a_i, c_i)`, `P x 1`.
pub fn score(t: &mut Tape, kind: DiscriminatorKind, store: &ParamStore, anchors: Var, contexts: Var) -> Result<Var> {
    check_dims(t, anchors, contexts)?;
    let a = match kind {
        DiscriminatorKind::Inner => anchors,
        DiscriminatorKind::Bilinear => {
            let w = t.param(store, BILINEAR_PARAM)?;
            t.matmul(anchors, w)?
        }
    };
    let prod = t.mul(a, contexts)?;
    Ok(t.reduce_sum(prod, Reduce::Cols))
}

/// All-pairs scores `f(a_i, c_j)`, `U x C`.
pub fn score_matrix(t: &mut Tape, kind: DiscriminatorKind, store: &ParamStore, anchors: Var, contexts: Var) -> Result<Var> {
    check_dims(t, anchors, contexts)?;
    let a = match kind {
        DiscriminatorKind::Inner => anchors,
        DiscriminatorKind::Bilinear => {
            let w = t.param(store, BILINEAR_PARAM)?;
            t.matmul(anchors, w)?
        }
    };
    let ct = t.transpose(contexts);
    Ok(t.matmul(a, ct)?)
}

#[derive(Debug, Clone)]
pub enum NegativeScores {
    /// `P x N` scores of each pair's own negatives.
    Explicit(Var),
    /// `U x C` anchor-by-candidate scores; `mask` holds 0 for a negative and
    /// `-inf` for an excluded entry.
    InBatch { scores: Var, mask: Matrix, anchor_of_pair: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct ScoredBatch {
    /// `P x 1`.
    pub positive: Var,
    pub negatives: NegativeScores,
}

/// `mean_p logsigmoid(f+) + mean_{p,i} logsigmoid(-f-)`.
pub fn estimate_jsd(t: &mut Tape, batch: &ScoredBatch) -> Result<Var> {
    let p = t.shape(batch.positive).0;
    if p == 0 {
        return Err(Error::InvalidArgument("jsd: empty batch".into()));
    }
    let NegativeScores::Explicit(neg) = batch.negatives else {
        return Err(Error::InvalidArgument("jsd needs explicit negatives".into()));
    };
    let pos = t.log_sigmoid(batch.positive);
    let pos = t.reduce_mean(pos, Reduce::All);
    if t.shape(neg).1 == 0 {
        return Ok(pos);
    }
    let flipped = t.scale(neg, -1.0);
    let ls = t.log_sigmoid(flipped);
    let negm = t.reduce_mean(ls, Reduce::All);
    Ok(t.add(pos, negm)?)
}

/// `mean_p [f+ - log(e^{f+} + sum_i e^{f-_i})]`.
pub fn estimate_infonce(t: &mut Tape, batch: &ScoredBatch) -> Result<Var> {
    let p = t.shape(batch.positive).0;
    if p == 0 {
        return Err(Error::InvalidArgument("infonce: empty batch".into()));
    }
    let neg_lse = match &batch.negatives {
        NegativeScores::Explicit(neg) => {
            if t.shape(*neg).1 == 0 {
                None
            } else {
                Some(t.logsumexp_rows(*neg))
            }
        }
        NegativeScores::InBatch {
            scores,
            mask,
            anchor_of_pair,
        } => {
            if t.shape(*scores) != mask.dim() {
                return Err(Error::InvalidArgument("infonce: mask shape differs from scores".into()));
            }
            if anchor_of_pair.len() != p {
                return Err(Error::InvalidArgument("infonce: one anchor index per pair required".into()));
            }
            if mask.ncols() == 0 {
                None
            } else {
                let m = t.constant(mask.clone());
                let masked = t.add(*scores, m)?;
                let per_anchor = t.logsumexp_rows(masked);
                Some(t.gather_rows(per_anchor, anchor_of_pair.clone())?)
            }
        }
    };
    let diff = match neg_lse {
        None => t.sub(batch.positive, batch.positive)?,
        Some(lse) => {
            let both = t.concat_cols(&[batch.positive, lse])?;
            let total = t.logsumexp_rows(both);
            t.sub(batch.positive, total)?
        }
    };
    Ok(t.reduce_mean(diff, Reduce::All))
}

pub fn estimate(t: &mut Tape, kind: EstimatorKind, batch: &ScoredBatch) -> Result<Var> {
    match kind {
        EstimatorKind::Jsd => estimate_jsd(t, batch),
        EstimatorKind::Infonce => estimate_infonce(t, batch),
    }
}

/// Anchors, candidates and the negative mask of an in-batch contrast.
#[derive(Debug, Clone, PartialEq)]
pub struct InBatchLayout {
    pub anchors: Vec<SampleRef>,
    pub anchor_of_pair: Vec<usize>,
    pub candidates: Vec<SampleRef>,
    pub mask: Matrix,
}

impl InBatchLayout {
    /// Negatives per anchor after masking.
    pub fn negative_counts(&self) -> Vec<usize> {
        self.mask.rows().into_iter().map(|r| r.iter().filter(|v| v.is_finite()).count()).collect()
    }
}

/// Candidates are the distinct positives, then the anchors when the batch
/// asks for them, then the batch's extra samples. Each anchor excludes
/// itself and every positive it is paired with.
pub fn in_batch_layout(batch: &ContrastBatch) -> Result<InBatchLayout> {
    let Negatives::InBatch { include_anchors, extra } = &batch.negatives else {
        return Err(Error::InvalidArgument("batch uses explicit negatives".into()));
    };
    let mut anchor_index: HashMap<SampleRef, usize> = HashMap::new();
    let mut anchors = Vec::new();
    let mut anchor_of_pair = Vec::with_capacity(batch.pairs.len());
    let mut positives: Vec<BTreeSet<SampleRef>> = Vec::new();
    for (a, p) in &batch.pairs {
        let u = *anchor_index.entry(*a).or_insert_with(|| {
            anchors.push(*a);
            positives.push(BTreeSet::new());
            anchors.len() - 1
        });
        positives[u].insert(*p);
        anchor_of_pair.push(u);
    }

    let mut cand_index: HashMap<SampleRef, usize> = HashMap::new();
    let mut candidates = Vec::new();
    let mut add = |r: SampleRef| {
        cand_index.entry(r).or_insert_with(|| {
            candidates.push(r);
            candidates.len() - 1
        });
    };
    batch.pairs.iter().for_each(|(_, p)| add(*p));
    if *include_anchors {
        anchors.iter().for_each(|a| add(*a));
    }
    extra.iter().for_each(|r| add(*r));

    let mut mask = Array2::zeros((anchors.len(), candidates.len()));
    for (u, a) in anchors.iter().enumerate() {
        if let Some(&c) = cand_index.get(a) {
            mask[[u, c]] = f64::NEG_INFINITY;
        }
        for p in &positives[u] {
            mask[[u, cand_index[p]]] = f64::NEG_INFINITY;
        }
    }
    Ok(InBatchLayout {
        anchors,
        anchor_of_pair,
        candidates,
        mask,
    })
}
