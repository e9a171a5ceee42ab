use std::sync::Arc;

use gclab_autodiff::Matrix;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{negatives_for, ContrastBatch, NegativeMode, Negatives, SampleRef, View, ViewKind};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng;

/// Personalised PageRank diffusion `alpha * (I - (1 - alpha) T)^-1` with the
/// random-walk transition `T = D^-1 A`. Isolated nodes get a self-loop in
/// `T`, so every row of the result sums to one.
pub fn ppr_diffusion(g: &Graph, alpha: f64) -> Result<Matrix> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("teleport probability must be in (0, 1), got {alpha}")));
    }
    let n = g.num_nodes();
    let m = Array2::<f64>::eye(n) - g.transition_dense() * (1.0 - alpha);
    let mut s = invert(m).ok_or_else(|| Error::Sampler("diffusion matrix is numerically singular".into()))?;
    s *= alpha;
    Ok(s)
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert(mut a: Matrix) -> Option<Matrix> {
    let n = a.nrows();
    let mut inv = Array2::<f64>::eye(n);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))?;
        if a[[pivot, col]].abs() < 1e-12 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap([pivot, k], [col, k]);
                inv.swap([pivot, k], [col, k]);
            }
        }
        let p = a[[col, col]];
        a.row_mut(col).mapv_inplace(|v| v / p);
        inv.row_mut(col).mapv_inplace(|v| v / p);
        let (arow, irow) = (a.row(col).to_owned(), inv.row(col).to_owned());
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[[r, col]];
            if f != 0.0 {
                a.row_mut(r).scaled_add(-f, &arow);
                inv.row_mut(r).scaled_add(-f, &irow);
            }
        }
    }
    Some(inv)
}

/// Permutes feature rows: node `i` of the result carries the features of
/// node `perm[i]`. Structure is unchanged.
pub fn shuffle_features(g: &Graph, seed: u64) -> (Graph, Vec<usize>) {
    let mut perm: Vec<usize> = (0..g.num_nodes()).collect();
    perm.shuffle(&mut rng::stream(seed, 0x5f1));
    let features = g.feature_matrix().select(Axis(0), &perm);
    let shuffled = g.clone().with_features(features).expect("same node count");
    (shuffled, perm)
}

fn shuffled_view(g: &Graph, kind: ViewKind, dense: Option<Arc<Matrix>>, seed: u64) -> View {
    let (graph, perm) = shuffle_features(g, seed);
    View {
        kind,
        graph,
        dense_override: dense,
        source: 0,
        augmentation: None,
        node_ids: perm,
    }
}

/// Graph summaries as anchors and their own nodes as positives. With several
/// graphs the negatives are nodes of the other graphs; a lone graph is
/// contrasted with a feature-shuffled copy of itself.
pub fn sample_dgi(graphs: &[&Graph], mode: NegativeMode, seed: u64) -> Result<ContrastBatch> {
    if graphs.is_empty() {
        return Err(Error::Sampler("dgi needs at least one graph".into()));
    }
    let mut views: Vec<View> = graphs.iter().enumerate().map(|(i, g)| View::original((*g).clone(), i)).collect();
    let pairs: Vec<_> = graphs
        .iter()
        .enumerate()
        .flat_map(|(v, g)| (0..g.num_nodes()).map(move |i| (SampleRef::graph(v), SampleRef::node(v, i))))
        .collect();
    let mut r = rng::stream(seed, 0xd61);
    let (negatives, n) = if graphs.len() == 1 {
        views.push(shuffled_view(graphs[0], ViewKind::FeatureShuffled, None, seed));
        corrupted_negatives(&mut r, mode, &pairs, 1, graphs[0].num_nodes())?
    } else {
        let groups: Vec<_> = graphs.iter().enumerate().map(|(v, g)| (v, g.num_nodes())).collect();
        other_graph_negatives(&mut r, mode, &pairs, &groups)?
    };
    Ok(ContrastBatch {
        views,
        pairs,
        negatives,
        negatives_per_positive: n,
    })
}

/// Like [`sample_dgi`], but positives are nodes of each graph's diffusion
/// view.
pub fn sample_mvgrl(graphs: &[&Graph], alpha: f64, mode: NegativeMode, seed: u64) -> Result<ContrastBatch> {
    let diffusions = graphs
        .iter()
        .map(|g| ppr_diffusion(g, alpha).map(Arc::new))
        .collect::<Result<Vec<_>>>()?;
    mvgrl_with(graphs, diffusions, mode, seed)
}

pub(crate) fn mvgrl_with(graphs: &[&Graph], diffusions: Vec<Arc<Matrix>>, mode: NegativeMode, seed: u64) -> Result<ContrastBatch> {
    if graphs.is_empty() {
        return Err(Error::Sampler("mvgrl needs at least one graph".into()));
    }
    let k = graphs.len();
    let mut views: Vec<View> = graphs.iter().enumerate().map(|(i, g)| View::original((*g).clone(), i)).collect();
    for (i, (g, s)) in graphs.iter().zip(&diffusions).enumerate() {
        views.push(View {
            kind: ViewKind::Diffusion,
            dense_override: Some(s.clone()),
            ..View::original((*g).clone(), i)
        });
    }
    let pairs: Vec<_> = graphs
        .iter()
        .enumerate()
        .flat_map(|(v, g)| (0..g.num_nodes()).map(move |i| (SampleRef::graph(v), SampleRef::node(k + v, i))))
        .collect();
    let mut r = rng::stream(seed, 0x3f6);
    let (negatives, n) = if k == 1 {
        views.push(shuffled_view(graphs[0], ViewKind::Diffusion, Some(diffusions[0].clone()), seed));
        corrupted_negatives(&mut r, mode, &pairs, 2, graphs[0].num_nodes())?
    } else {
        let groups: Vec<_> = graphs.iter().enumerate().map(|(v, g)| (k + v, g.num_nodes())).collect();
        other_graph_negatives(&mut r, mode, &pairs, &groups)?
    };
    Ok(ContrastBatch {
        views,
        pairs,
        negatives,
        negatives_per_positive: n,
    })
}

/// Negatives are the nodes of the corrupted view `view`.
fn corrupted_negatives<R: Rng>(
    r: &mut R,
    mode: NegativeMode,
    pairs: &[(SampleRef, SampleRef)],
    view: usize,
    n: usize,
) -> Result<(Negatives, usize)> {
    let pool: Vec<_> = (0..n).map(|i| SampleRef::node(view, i)).collect();
    let extra = if mode == NegativeMode::InBatch { pool.clone() } else { Vec::new() };
    negatives_for(r, mode, pairs, &pool, false, extra)
}

/// Explicit negatives drawn uniformly from the node views in `groups` other
/// than the one holding the pair's positive. In-batch mode needs nothing
/// extra: the other graphs' nodes are already contexts.
fn other_graph_negatives<R: Rng>(
    r: &mut R,
    mode: NegativeMode,
    pairs: &[(SampleRef, SampleRef)],
    groups: &[(usize, usize)],
) -> Result<(Negatives, usize)> {
    let NegativeMode::Explicit(n) = mode else {
        return Ok((
            Negatives::InBatch {
                include_anchors: false,
                extra: Vec::new(),
            },
            0,
        ));
    };
    let all: Vec<SampleRef> = groups
        .iter()
        .flat_map(|&(v, size)| (0..size).map(move |i| SampleRef::node(v, i)))
        .collect();
    let mut offsets = Vec::with_capacity(groups.len());
    let mut acc = 0;
    for &(_, size) in groups {
        offsets.push(acc);
        acc += size;
    }
    let mut lists = Vec::with_capacity(pairs.len());
    for (_, pos) in pairs {
        let g = groups.iter().position(|&(v, _)| v == pos.view).expect("positive in a group");
        let (start, size) = (offsets[g], groups[g].1);
        let others = all.len() - size;
        if others == 0 && n > 0 {
            return Err(Error::Sampler("no nodes in other graphs to use as negatives".into()));
        }
        lists.push(
            (0..n)
                .map(|_| {
                    let mut k = r.random_range(0..others);
                    if k >= start {
                        k += size;
                    }
                    all[k]
                })
                .collect(),
        );
    }
    Ok((Negatives::Explicit(lists), n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::Scope;
    use ndarray::array;

    #[test]
    fn two_node_diffusion() {
        let g = Graph::new(2, [(0, 1)], None, None).unwrap();
        let s = ppr_diffusion(&g, 0.2).unwrap();
        let expect = array![[0.5556, 0.4444], [0.4444, 0.5556]];
        assert!((&s - &expect).iter().all(|d| d.abs() < 1e-3), "{s}");
    }

    #[test]
    fn teleport_dominant_limit() {
        let g = Graph::new(4, [(0, 1), (1, 2), (2, 3)], None, None).unwrap();
        let s = ppr_diffusion(&g, 0.999).unwrap();
        assert!((&s - &Array2::<f64>::eye(4)).iter().all(|d| d.abs() < 1e-2));
    }

    #[test]
    fn path_matches_power_series() {
        let g = Graph::new(3, [(0, 1), (1, 2)], None, None).unwrap();
        let alpha: f64 = 0.2;
        let t = g.transition_dense();
        let mut term = Array2::<f64>::eye(3);
        let mut series = Array2::<f64>::zeros((3, 3));
        for k in 0..=200 {
            series = series + &term * (alpha * (1.0 - alpha).powi(k));
            term = term.dot(&t);
        }
        let s = ppr_diffusion(&g, alpha).unwrap();
        assert!((&s - &series).iter().all(|d| d.abs() < 1e-6));
        for row in s.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn isolated_nodes_keep_unit_rows() {
        let g = Graph::new(3, [(0, 1)], None, None).unwrap();
        let s = ppr_diffusion(&g, 0.3).unwrap();
        assert!((s[[2, 2]] - 1.0).abs() < 1e-12);
        assert!(s.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn invalid_alpha() {
        let g = Graph::new(2, [(0, 1)], None, None).unwrap();
        assert!(ppr_diffusion(&g, 0.0).is_err());
        assert!(ppr_diffusion(&g, 1.0).is_err());
    }

    #[test]
    fn dgi_multi_graph_negatives_from_other_graphs() {
        let a = Graph::new(3, [(0, 1)], None, None).unwrap();
        let b = Graph::new(2, [(0, 1)], None, None).unwrap();
        let batch = sample_dgi(&[&a, &b], NegativeMode::Explicit(4), 1).unwrap();
        assert_eq!(batch.views.len(), 2);
        assert_eq!(batch.pairs.len(), 5);
        let Negatives::Explicit(lists) = &batch.negatives else { unreachable!() };
        for ((anchor, pos), negs) in batch.pairs.iter().zip(lists) {
            assert_eq!(anchor.scope, Scope::Graph);
            assert_eq!(anchor.view, pos.view);
            assert!(negs.iter().all(|n| n.view != pos.view));
        }
    }

    #[test]
    fn dgi_single_graph_uses_shuffled_view() {
        let f = array![[1.0, 0.0], [2.0, 5.0], [3.0, 1.0], [4.0, -1.0]];
        let g = Graph::new(4, [(0, 1), (2, 3)], Some(f.clone()), None).unwrap();
        let batch = sample_dgi(&[&g], NegativeMode::InBatch, 3).unwrap();
        assert_eq!(batch.views.len(), 2);
        let shuffled = &batch.views[1];
        assert_eq!(shuffled.kind, ViewKind::FeatureShuffled);
        let sf = shuffled.graph.features().unwrap();
        for c in 0..2 {
            let mut a: Vec<f64> = f.column(c).to_vec();
            let mut b: Vec<f64> = sf.column(c).to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert_eq!(a, b);
        }
        let Negatives::InBatch { extra, .. } = &batch.negatives else { unreachable!() };
        assert_eq!(extra.len(), 4);
        assert!(extra.iter().all(|r| r.view == 1));
    }

    #[test]
    fn shuffle_of_identical_rows_is_identity() {
        let g = Graph::new(3, [(0, 1)], Some(Array2::from_elem((3, 2), 0.5)), None).unwrap();
        let (s, _) = shuffle_features(&g, 9);
        assert_eq!(s, g);
    }

    #[test]
    fn mvgrl_views() {
        let g = Graph::new(3, [(0, 1), (1, 2)], None, None).unwrap();
        let batch = sample_mvgrl(&[&g], 0.2, NegativeMode::Explicit(1), 0).unwrap();
        let kinds: Vec<_> = batch.views.iter().map(|v| v.kind).collect();
        assert_eq!(kinds, vec![ViewKind::Original, ViewKind::Diffusion, ViewKind::Diffusion]);
        assert!(batch.views[2].node_ids != vec![0, 1, 2] || batch.views[2].graph == g);
        for v in &batch.views[1..] {
            for row in v.dense_override.as_ref().unwrap().rows() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }
        assert!(batch.pairs.iter().all(|(a, p)| a.view == 0 && p.view == 1));

        let h = Graph::new(2, [(0, 1)], None, None).unwrap();
        let batch = sample_mvgrl(&[&g, &h], 0.2, NegativeMode::Explicit(2), 0).unwrap();
        assert_eq!(batch.views.len(), 4);
        let Negatives::Explicit(lists) = &batch.negatives else { unreachable!() };
        for ((a, _), negs) in batch.pairs.iter().zip(lists) {
            let other = if a.view == 0 { 3 } else { 2 };
            assert!(negs.iter().all(|n| n.view == other));
        }
    }
}
