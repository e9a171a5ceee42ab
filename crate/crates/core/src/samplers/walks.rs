use rand::Rng;

use super::{negatives_for, ContrastBatch, NegativeMode, SampleRef, View};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng;

/// Neighbouring nodes as anchor and positive: both orientations of every
/// edge. Negatives are uniform over all nodes.
pub fn sample_line(g: &Graph, mode: NegativeMode, seed: u64) -> Result<ContrastBatch> {
    if g.num_edges() == 0 {
        return Err(Error::Sampler("no positive pairs: graph has no edges".into()));
    }
    let pairs: Vec<_> = g
        .edges()
        .iter()
        .flat_map(|&(u, v)| [(SampleRef::node(0, u), SampleRef::node(0, v)), (SampleRef::node(0, v), SampleRef::node(0, u))])
        .collect();
    node_batch(g, pairs, mode, seed)
}

/// `walks_per_node` rounds of uniform random walks, one walk per start node
/// per round. A walk stops early at an isolated node.
pub fn random_walks(g: &Graph, walks_per_node: usize, walk_length: usize, seed: u64) -> Vec<Vec<usize>> {
    let adj = g.adjacency_lists();
    let mut r = rng::stream(seed, 0xa1c);
    let mut walks = Vec::with_capacity(walks_per_node * g.num_nodes());
    for _ in 0..walks_per_node {
        for start in 0..g.num_nodes() {
            let mut walk = Vec::with_capacity(walk_length);
            walk.push(start);
            let mut cur = start;
            while walk.len() < walk_length && !adj[cur].is_empty() {
                cur = adj[cur][r.random_range(0..adj[cur].len())];
                walk.push(cur);
            }
            walks.push(walk);
        }
    }
    walks
}

/// Ordered (center, context) pairs at distance `1..=window` within a walk.
/// A node revisited inside the window is not paired with itself.
pub fn window_pairs(walk: &[usize], window: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, &center) in walk.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(walk.len() - 1);
        for (j, &ctx) in walk.iter().enumerate().take(hi + 1).skip(lo) {
            if j != i && ctx != center {
                out.push((center, ctx));
            }
        }
    }
    out
}

/// Skip-gram co-occurrences over random walks.
pub fn sample_deepwalk(
    g: &Graph,
    walks_per_node: usize,
    walk_length: usize,
    window: usize,
    mode: NegativeMode,
    seed: u64,
) -> Result<ContrastBatch> {
    if walk_length < 2 || window < 1 {
        return Err(Error::InvalidArgument(format!(
            "deepwalk needs walk_length >= 2 and window >= 1, got {walk_length} and {window}"
        )));
    }
    let pairs: Vec<_> = random_walks(g, walks_per_node, walk_length, seed)
        .iter()
        .flat_map(|w| window_pairs(w, window))
        .map(|(a, b)| (SampleRef::node(0, a), SampleRef::node(0, b)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Sampler("no positive pairs: walks never left their start node".into()));
    }
    node_batch(g, pairs, mode, seed)
}

fn node_batch(g: &Graph, pairs: Vec<(SampleRef, SampleRef)>, mode: NegativeMode, seed: u64) -> Result<ContrastBatch> {
    let pool: Vec<_> = (0..g.num_nodes()).map(|i| SampleRef::node(0, i)).collect();
    let mut r = rng::stream(seed, 0x4e6);
    let (negatives, n) = negatives_for(&mut r, mode, &pairs, &pool, false, Vec::new())?;
    Ok(ContrastBatch {
        views: vec![View::original(g.clone(), 0)],
        pairs,
        negatives,
        negatives_per_positive: n,
    })
}
