//! Anchor/context sampling and the graph views contexts live in.
//!
//! Every sampler returns a [`ContrastBatch`]: a list of [`View`]s plus
//! anchor/positive pairs and, depending on the estimator, either explicit
//! negatives per pair or the in-batch marker.

mod augment;
mod views;
mod walks;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use gclab_autodiff::Matrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

pub use augment::{augment_graph, augment_with_ids, sample_gca, sample_graphcl, AugmentationSpec, Strategy};
pub use views::{ppr_diffusion, sample_dgi, sample_mvgrl, shuffle_features};
pub use walks::{random_walks, sample_deepwalk, sample_line, window_pairs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewKind {
    Original,
    FeatureShuffled,
    Diffusion,
    Augmented,
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub kind: ViewKind,
    pub graph: Graph,
    /// Dense propagation matrix replacing the normalised adjacency.
    pub dense_override: Option<Arc<Matrix>>,
    /// Graph index the view was derived from.
    pub source: usize,
    pub augmentation: Option<AugmentationSpec>,
    /// For each view node, the source-graph node it stands for.
    pub node_ids: Vec<usize>,
}

impl View {
    pub fn original(graph: Graph, source: usize) -> Self {
        let node_ids = (0..graph.num_nodes()).collect();
        Self {
            kind: ViewKind::Original,
            graph,
            dense_override: None,
            source,
            augmentation: None,
            node_ids,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scope {
    Node,
    Graph,
}

/// A sample: a node of a view, or a whole view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleRef {
    pub scope: Scope,
    pub view: usize,
    /// Node index; always 0 for graph scope.
    pub index: usize,
}

impl SampleRef {
    pub fn node(view: usize, index: usize) -> Self {
        Self {
            scope: Scope::Node,
            view,
            index,
        }
    }

    pub fn graph(view: usize) -> Self {
        Self {
            scope: Scope::Graph,
            view,
            index: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeMode {
    /// `N` negatives drawn per pair.
    Explicit(usize),
    InBatch,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Negatives {
    Explicit(Vec<Vec<SampleRef>>),
    /// Candidates are every distinct positive context, the anchors too when
    /// `include_anchors`, and `extra`. An anchor's negatives are the
    /// candidates other than itself and its own positives.
    InBatch { include_anchors: bool, extra: Vec<SampleRef> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastBatch {
    pub views: Vec<View>,
    pub pairs: Vec<(SampleRef, SampleRef)>,
    pub negatives: Negatives,
    pub negatives_per_positive: usize,
}

impl ContrastBatch {
    pub fn check(&self) -> Result<()> {
        let ok = |r: &SampleRef| {
            r.view < self.views.len()
                && match r.scope {
                    Scope::Node => r.index < self.views[r.view].num_nodes(),
                    Scope::Graph => r.index == 0,
                }
        };
        if let Some(p) = self.pairs.iter().find(|(a, b)| !ok(a) || !ok(b)) {
            return Err(Error::Sampler(format!("invalid pair {p:?}")));
        }
        match &self.negatives {
            Negatives::Explicit(lists) => {
                if lists.len() != self.pairs.len() {
                    return Err(Error::Sampler("one negative list per pair required".into()));
                }
                for l in lists {
                    if l.len() != self.negatives_per_positive {
                        return Err(Error::Sampler(format!(
                            "negative list of length {} where {} expected",
                            l.len(),
                            self.negatives_per_positive
                        )));
                    }
                    if let Some(r) = l.iter().find(|r| !ok(r)) {
                        return Err(Error::Sampler(format!("invalid negative {r:?}")));
                    }
                }
            }
            Negatives::InBatch { extra, .. } => {
                if let Some(r) = extra.iter().find(|r| !ok(r)) {
                    return Err(Error::Sampler(format!("invalid negative {r:?}")));
                }
            }
        }
        Ok(())
    }

    /// Keeps a uniform random subset of at most `max_pairs` pairs, preserving
    /// their order and any explicit negatives attached to them.
    pub fn cap_pairs<R: Rng>(&mut self, max_pairs: usize, rng: &mut R) {
        if self.pairs.len() <= max_pairs {
            return;
        }
        let mut keep = rand::seq::index::sample(rng, self.pairs.len(), max_pairs).into_vec();
        keep.sort_unstable();
        self.pairs = keep.iter().map(|&i| self.pairs[i]).collect();
        if let Negatives::Explicit(lists) = &mut self.negatives {
            *lists = keep.iter().map(|&i| std::mem::take(&mut lists[i])).collect();
        }
    }

    /// Concatenates batches, shifting view indices.
    fn merge(parts: Vec<ContrastBatch>) -> Result<ContrastBatch> {
        let mut iter = parts.into_iter();
        let mut out = iter.next().ok_or_else(|| Error::Sampler("no positive pairs".into()))?;
        for mut part in iter {
            let shift = out.views.len();
            let mv = |r: SampleRef| SampleRef { view: r.view + shift, ..r };
            out.views.append(&mut part.views);
            out.pairs.extend(part.pairs.into_iter().map(|(a, b)| (mv(a), mv(b))));
            match (&mut out.negatives, part.negatives) {
                (Negatives::Explicit(a), Negatives::Explicit(b)) => {
                    a.extend(b.into_iter().map(|l| l.into_iter().map(mv).collect()));
                }
                (Negatives::InBatch { extra: a, include_anchors: x }, Negatives::InBatch { extra: b, include_anchors: y }) if *x == y => {
                    a.extend(b.into_iter().map(mv));
                }
                _ => return Err(Error::Sampler("cannot merge batches with different negative modes".into())),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Line,
    Deepwalk,
    Dgi,
    Mvgrl,
    Gca,
    Graphcl,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 6] = [
        SamplerKind::Line,
        SamplerKind::Deepwalk,
        SamplerKind::Dgi,
        SamplerKind::Mvgrl,
        SamplerKind::Gca,
        SamplerKind::Graphcl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Line => "line",
            SamplerKind::Deepwalk => "deepwalk",
            SamplerKind::Dgi => "dgi",
            SamplerKind::Mvgrl => "mvgrl",
            SamplerKind::Gca => "gca",
            SamplerKind::Graphcl => "graphcl",
        }
    }

    /// Whether anchors are whole graphs rather than nodes.
    pub fn uses_graph_anchors(self) -> bool {
        matches!(self, SamplerKind::Dgi | SamplerKind::Mvgrl | SamplerKind::Graphcl)
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown sampler {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub window: usize,
    /// Teleport probability of the diffusion view.
    pub alpha: f64,
    pub aug_rate: f64,
    /// Explicit negatives per positive.
    pub negatives: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Line,
            walks_per_node: 5,
            walk_length: 30,
            window: 5,
            alpha: 0.2,
            aug_rate: 0.2,
            negatives: 1,
        }
    }
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }
}

/// Diffusion matrices keyed by graph index, computed on first use.
#[derive(Debug, Default)]
pub struct DiffusionCache {
    entries: HashMap<(usize, u64), Arc<Matrix>>,
}

impl DiffusionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, id: usize, g: &Graph, alpha: f64) -> Result<Arc<Matrix>> {
        if let Some(s) = self.entries.get(&(id, alpha.to_bits())) {
            return Ok(s.clone());
        }
        let s = Arc::new(ppr_diffusion(g, alpha)?);
        self.entries.insert((id, alpha.to_bits()), s.clone());
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Runs the configured sampler on one batch. `graphs` pairs each graph with
/// its dataset index; view sources are reported as dataset indices.
/// Node-level samplers run per graph and their batches are concatenated;
/// graphs that yield no pairs are skipped.
pub fn sample(
    cfg: &SamplerConfig,
    graphs: &[(usize, &Graph)],
    mode: NegativeMode,
    seed: u64,
    cache: &mut DiffusionCache,
) -> Result<ContrastBatch> {
    if graphs.is_empty() {
        return Err(Error::Sampler("empty batch".into()));
    }
    let refs: Vec<&Graph> = graphs.iter().map(|(_, g)| *g).collect();
    let ids: Vec<usize> = graphs.iter().map(|(i, _)| *i).collect();
    let mut batch = match cfg.kind {
        SamplerKind::Dgi => sample_dgi(&refs, mode, seed)?,
        SamplerKind::Mvgrl => {
            let diffusions = graphs
                .iter()
                .map(|(i, g)| cache.get(*i, g, cfg.alpha))
                .collect::<Result<Vec<_>>>()?;
            views::mvgrl_with(&refs, diffusions, mode, seed)?
        }
        SamplerKind::Graphcl => sample_graphcl(&refs, cfg.aug_rate, mode, seed)?,
        SamplerKind::Line | SamplerKind::Deepwalk | SamplerKind::Gca => {
            let mut parts = Vec::new();
            let mut last_err = None;
            for (pos, g) in refs.iter().enumerate() {
                let s = crate::rng::derive(seed, pos as u64);
                let part = match cfg.kind {
                    SamplerKind::Line => sample_line(g, mode, s),
                    SamplerKind::Deepwalk => sample_deepwalk(g, cfg.walks_per_node, cfg.walk_length, cfg.window, mode, s),
                    _ => sample_gca(g, cfg.aug_rate, mode, s),
                };
                match part {
                    Ok(mut p) => {
                        for v in &mut p.views {
                            v.source = pos;
                        }
                        parts.push(p);
                    }
                    Err(e) => last_err = Some(e),
                }
            }
            if parts.is_empty() {
                return Err(last_err.unwrap_or_else(|| Error::Sampler("no positive pairs".into())));
            }
            ContrastBatch::merge(parts)?
        }
    };
    for v in &mut batch.views {
        v.source = ids[v.source];
    }
    batch.check()?;
    Ok(batch)
}

/// Uniform draws (with replacement) from `pool`.
pub(crate) fn draw<R: Rng>(rng: &mut R, pool: &[SampleRef], n: usize) -> Vec<SampleRef> {
    (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}

/// Negatives for `pairs`: `n` uniform draws from `pool` per pair, or the
/// in-batch marker.
pub(crate) fn negatives_for<R: Rng>(
    rng: &mut R,
    mode: NegativeMode,
    pairs: &[(SampleRef, SampleRef)],
    pool: &[SampleRef],
    include_anchors: bool,
    extra: Vec<SampleRef>,
) -> Result<(Negatives, usize)> {
    match mode {
        NegativeMode::InBatch => Ok((Negatives::InBatch { include_anchors, extra }, 0)),
        NegativeMode::Explicit(n) => {
            if pool.is_empty() && n > 0 {
                return Err(Error::Sampler("no candidates for negative sampling".into()));
            }
            Ok((Negatives::Explicit(pairs.iter().map(|_| draw(rng, pool, n)).collect()), n))
        }
    }
}
