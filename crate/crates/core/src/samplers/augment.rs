use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{draw, ContrastBatch, NegativeMode, Negatives, SampleRef, View, ViewKind};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    EdgeDrop,
    AttrMask,
    NodeDrop,
    Subgraph,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::EdgeDrop, Strategy::AttrMask, Strategy::NodeDrop, Strategy::Subgraph];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub strategy: Strategy,
    pub rate: f64,
    pub seed: u64,
}

pub fn augment_graph(g: &Graph, spec: &AugmentationSpec) -> Result<Graph> {
    augment_with_ids(g, spec).map(|(g, _)| g)
}

/// Applies one augmentation and also returns, for each node of the result,
/// the node of `g` it came from.
pub fn augment_with_ids(g: &Graph, spec: &AugmentationSpec) -> Result<(Graph, Vec<usize>)> {
    if !(0.0..=1.0).contains(&spec.rate) {
        return Err(Error::InvalidArgument(format!("augmentation rate {} outside [0, 1]", spec.rate)));
    }
    let n = g.num_nodes();
    let identity = || (0..n).collect::<Vec<_>>();
    let mut r = rng::stream(spec.seed, 0xa06);
    match spec.strategy {
        Strategy::EdgeDrop => {
            let kept: Vec<_> = g.edges().iter().copied().filter(|_| !r.random_bool(spec.rate)).collect();
            let out = Graph::new(n, kept, g.features().cloned(), g.node_labels().map(<[usize]>::to_vec))?;
            Ok((out, identity()))
        }
        Strategy::AttrMask => {
            let mut f = g.feature_matrix();
            for c in 0..f.ncols() {
                if r.random_bool(spec.rate) {
                    for v in f.column_mut(c) {
                        *v = r.sample(StandardNormal);
                    }
                }
            }
            Ok((g.clone().with_features(f)?, identity()))
        }
        Strategy::NodeDrop => {
            let mut kept: Vec<usize> = (0..n).filter(|_| !r.random_bool(spec.rate)).collect();
            if kept.is_empty() && n > 0 {
                kept.push(r.random_range(0..n));
            }
            Ok((g.induced_subgraph(&kept), kept))
        }
        Strategy::Subgraph => {
            let target = (((1.0 - spec.rate) * n as f64).ceil() as usize).clamp(n.min(1), n);
            let kept = grow_subgraph(g, target, &mut r);
            Ok((g.induced_subgraph(&kept), kept))
        }
    }
}

/// Grows a node set from a random start by repeatedly adding a random
/// frontier node. Jumps to a random unvisited node when the component is
/// exhausted. Returned ids are ascending.
fn grow_subgraph<R: Rng>(g: &Graph, target: usize, r: &mut R) -> Vec<usize> {
    let n = g.num_nodes();
    if target >= n {
        return (0..n).collect();
    }
    let adj = g.adjacency_lists();
    let mut inside = vec![false; n];
    let mut in_frontier = vec![false; n];
    let mut frontier: Vec<usize> = Vec::new();
    let mut kept = Vec::with_capacity(target);
    while kept.len() < target {
        let next = if frontier.is_empty() {
            let outside: Vec<usize> = (0..n).filter(|&i| !inside[i]).collect();
            outside[r.random_range(0..outside.len())]
        } else {
            frontier.swap_remove(r.random_range(0..frontier.len()))
        };
        inside[next] = true;
        kept.push(next);
        for &nb in &adj[next] {
            if !inside[nb] && !in_frontier[nb] {
                in_frontier[nb] = true;
                frontier.push(nb);
            }
        }
    }
    kept.sort_unstable();
    kept
}

fn augmented_view(g: &Graph, spec: AugmentationSpec, source: usize) -> Result<View> {
    let (graph, node_ids) = augment_with_ids(g, &spec)?;
    Ok(View {
        kind: ViewKind::Augmented,
        graph,
        dense_override: None,
        source,
        augmentation: Some(spec),
        node_ids,
    })
}

/// Two views of one graph, each from a single strategy drawn from edge
/// dropping and attribute masking. Node `i` of the first view is paired with
/// node `i` of the second; every other node of either view is a negative.
pub fn sample_gca(g: &Graph, rate: f64, mode: NegativeMode, seed: u64) -> Result<ContrastBatch> {
    let n = g.num_nodes();
    if n == 0 {
        return Err(Error::Sampler("no positive pairs: graph has no nodes".into()));
    }
    let mut r = rng::stream(seed, 0x6ca);
    let mut views = Vec::with_capacity(2);
    for _ in 0..2 {
        let strategy = [Strategy::EdgeDrop, Strategy::AttrMask][r.random_range(0..2)];
        let spec = AugmentationSpec {
            strategy,
            rate,
            seed: r.random(),
        };
        views.push(augmented_view(g, spec, 0)?);
    }
    let pairs: Vec<_> = (0..n).map(|i| (SampleRef::node(0, i), SampleRef::node(1, i))).collect();
    let (negatives, per) = match mode {
        NegativeMode::InBatch => (
            Negatives::InBatch {
                include_anchors: true,
                extra: Vec::new(),
            },
            0,
        ),
        NegativeMode::Explicit(k) => {
            if n < 2 && k > 0 {
                return Err(Error::Sampler("gca needs two nodes for negatives".into()));
            }
            // 2n - 2 candidates: skip the anchor (0, i) and positive (1, i)
            let lists = (0..n)
                .map(|i| {
                    (0..k)
                        .map(|_| {
                            let j = r.random_range(0..2 * n - 2);
                            let (view, mut idx) = (j / (n - 1), j % (n - 1));
                            if idx >= i {
                                idx += 1;
                            }
                            SampleRef::node(view, idx)
                        })
                        .collect()
                })
                .collect();
            (Negatives::Explicit(lists), k)
        }
    };
    Ok(ContrastBatch {
        views,
        pairs,
        negatives,
        negatives_per_positive: per,
    })
}

/// Two augmented views per graph, each with a strategy drawn uniformly from
/// all four. The first view's summary is the anchor, the second's the
/// positive; second views of the other graphs are the negatives.
pub fn sample_graphcl(graphs: &[&Graph], rate: f64, mode: NegativeMode, seed: u64) -> Result<ContrastBatch> {
    if graphs.len() < 2 {
        return Err(Error::Sampler("GraphCL requires multi-graph batches".into()));
    }
    let k = graphs.len();
    let mut r = rng::stream(seed, 0x6c1);
    let mut first = Vec::with_capacity(k);
    let mut second = Vec::with_capacity(k);
    for (i, g) in graphs.iter().enumerate() {
        for out in [&mut first, &mut second] {
            let spec = AugmentationSpec {
                strategy: Strategy::ALL[r.random_range(0..4)],
                rate,
                seed: r.random(),
            };
            out.push(augmented_view(g, spec, i)?);
        }
    }
    let mut views = first;
    views.extend(second);
    let pairs: Vec<_> = (0..k).map(|i| (SampleRef::graph(i), SampleRef::graph(k + i))).collect();
    let (negatives, per) = match mode {
        NegativeMode::InBatch => (
            Negatives::InBatch {
                include_anchors: false,
                extra: Vec::new(),
            },
            0,
        ),
        NegativeMode::Explicit(n) => {
            let lists = (0..k)
                .map(|i| {
                    let pool: Vec<_> = (0..k).filter(|&j| j != i).map(|j| SampleRef::graph(k + j)).collect();
                    draw(&mut r, &pool, n)
                })
                .collect();
            (Negatives::Explicit(lists), n)
        }
    };
    Ok(ContrastBatch {
        views,
        pairs,
        negatives,
        negatives_per_positive: per,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn sample_graph() -> Graph {
        let edges: Vec<_> = (0..40).flat_map(|i| [(i, (i + 1) % 40), (i, (i + 7) % 40)]).collect();
        let f = Array2::from_shape_fn((40, 5), |(i, j)| (i * 5 + j) as f64);
        Graph::new(40, edges, Some(f), Some(vec![0; 40])).unwrap()
    }

    fn spec(strategy: Strategy, rate: f64) -> AugmentationSpec {
        AugmentationSpec { strategy, rate, seed: 11 }
    }

    #[test]
    fn zero_rate_is_identity() {
        let g = sample_graph();
        for s in Strategy::ALL {
            assert_eq!(augment_graph(&g, &spec(s, 0.0)).unwrap(), g, "{s:?}");
        }
    }

    #[test]
    fn full_edge_drop() {
        let g = sample_graph();
        assert_eq!(augment_graph(&g, &spec(Strategy::EdgeDrop, 1.0)).unwrap().num_edges(), 0);
    }

    #[test]
    fn attr_mask_leaves_other_columns() {
        let g = sample_graph();
        let out = augment_graph(&g, &spec(Strategy::AttrMask, 0.5)).unwrap();
        let (a, b) = (g.features().unwrap(), out.features().unwrap());
        let mut masked = 0;
        for c in 0..5 {
            if a.column(c) == b.column(c) {
                continue;
            }
            masked += 1;
            assert!(a.column(c).iter().zip(b.column(c)).all(|(x, y)| x != y));
        }
        assert!(masked < 5);
        assert_eq!(out.edges(), g.edges());
    }

    #[test]
    fn node_drop_never_empty() {
        let g = sample_graph();
        let (out, ids) = augment_with_ids(&g, &spec(Strategy::NodeDrop, 1.0)).unwrap();
        assert_eq!(out.num_nodes(), 1);
        assert_eq!(ids.len(), 1);
    }

    #[test]
    fn subgraph_is_connected_when_possible() {
        let g = sample_graph();
        let (out, ids) = augment_with_ids(&g, &spec(Strategy::Subgraph, 0.3)).unwrap();
        assert_eq!(out.num_nodes(), 28);
        assert_eq!(ids.len(), 28);
        // breadth-first search over the induced graph reaches every node
        let adj = out.adjacency_lists();
        let mut seen = vec![false; 28];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn gca_pairs_and_counts() {
        let g = sample_graph();
        let b = sample_gca(&g, 0.2, NegativeMode::InBatch, 1).unwrap();
        assert_eq!(b.pairs.len(), 40);
        assert!(b.views.iter().all(|v| v.num_nodes() == 40));
        assert!(b.views.iter().all(|v| matches!(
            v.augmentation.unwrap().strategy,
            Strategy::EdgeDrop | Strategy::AttrMask
        )));
        assert!(matches!(b.negatives, Negatives::InBatch { include_anchors: true, .. }));

        let b = sample_gca(&g, 0.2, NegativeMode::Explicit(50), 1).unwrap();
        let Negatives::Explicit(lists) = &b.negatives else { unreachable!() };
        for ((a, p), negs) in b.pairs.iter().zip(lists) {
            assert!(negs.iter().all(|n| n != a && n != p));
        }
    }

    #[test]
    fn graphcl_rules() {
        let g = sample_graph();
        let h = Graph::new(3, [(0, 1)], None, None).unwrap();
        assert!(sample_graphcl(&[&g], 0.2, NegativeMode::InBatch, 0)
            .unwrap_err()
            .to_string()
            .contains("GraphCL requires multi-graph batches"));
        let b = sample_graphcl(&[&g, &h, &g], 0.2, NegativeMode::Explicit(3), 0).unwrap();
        assert_eq!(b.pairs.len(), 3);
        let Negatives::Explicit(lists) = &b.negatives else { unreachable!() };
        for (i, negs) in lists.iter().enumerate() {
            assert!(negs.iter().all(|n| b.views[n.view].source != i));
        }
        let same = sample_graphcl(&[&g, &h], 0.0, NegativeMode::InBatch, 0).unwrap();
        assert_eq!(same.views[0].graph, same.views[2].graph);
    }
}
