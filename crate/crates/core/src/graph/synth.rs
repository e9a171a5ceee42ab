use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Graph, Task};
use crate::error::{Error, Result};
use crate::rng;

/// Stochastic block model on one graph. Node labels are block ids. With
/// `feat_dim > 0`, node features are a one-hot block indicator (column
/// `block % feat_dim`) plus standard normal noise; otherwise constant ones.
pub fn generate_sbm(block_sizes: &[usize], p_in: f64, p_out: f64, feat_dim: usize, seed: u64) -> Result<Dataset> {
    for p in [p_in, p_out] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
        }
    }
    let labels: Vec<usize> = block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &n)| std::iter::repeat_n(b, n))
        .collect();
    let n = labels.len();
    if n == 0 {
        return Err(Error::InvalidArgument("SBM needs at least one node".into()));
    }

    let mut r = rng::stream(seed, 0x5b3);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { p_in } else { p_out };
            if r.random_bool(p) {
                edges.push((u, v));
            }
        }
    }

    let features = if feat_dim == 0 {
        Array2::ones((n, 1))
    } else {
        let mut noise = rng::stream(seed, 0xfea7);
        let mut f = Array2::from_shape_fn((n, feat_dim), |_| noise.sample::<f64, _>(StandardNormal));
        for (i, &b) in labels.iter().enumerate() {
            f[[i, b % feat_dim]] += 1.0;
        }
        f
    };
    let g = Graph::new(n, edges, Some(features), Some(labels))?;
    Dataset::new(format!("sbm-{seed}"), Task::NodeClassification, vec![g], None)
}

/// Graph-classification data where the label is the index of the graph's
/// size in `sizes`. Every graph is a featureless cycle, so all nodes look
/// the same locally. Graph order is shuffled by `seed`.
pub fn generate_size_classes(sizes: &[usize], per_class: usize, seed: u64) -> Result<Dataset> {
    if sizes.len() < 2 || per_class == 0 {
        return Err(Error::InvalidArgument("need at least two sizes and one graph per class".into()));
    }
    if let Some(&s) = sizes.iter().find(|&&s| s < 3) {
        return Err(Error::InvalidArgument(format!("cycle size {s} is below 3")));
    }
    let mut items: Vec<(usize, usize)> = sizes
        .iter()
        .enumerate()
        .flat_map(|(class, &n)| std::iter::repeat_n((class, n), per_class))
        .collect();
    items.shuffle(&mut rng::stream(seed, 0x517e));
    let mut graphs = Vec::with_capacity(items.len());
    let mut labels = Vec::with_capacity(items.len());
    for (class, n) in items {
        let g = Graph::new(n, (0..n).map(|i| (i, (i + 1) % n)), Some(Array2::ones((n, 1))), None)?;
        graphs.push(g);
        labels.push(class);
    }
    Dataset::new(format!("sizes-{seed}"), Task::GraphClassification, graphs, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_triangles() {
        let d = generate_sbm(&[3, 3], 1.0, 0.0, 2, 0).unwrap();
        let g = &d.graphs[0];
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)]);
        assert_eq!(g.node_labels().unwrap(), &[0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn empty_block() {
        let d = generate_sbm(&[5], 0.0, 0.5, 4, 0).unwrap();
        assert_eq!(d.graphs[0].num_nodes(), 5);
        assert_eq!(d.graphs[0].num_edges(), 0);
    }

    #[test]
    fn edge_count_near_expectation() {
        // 2*C(100,2)*0.1 + 100*100*0.01 = 990 + 100
        let mean = 2.0 * 4950.0 * 0.1 + 100.0;
        let var: f64 = 2.0 * 4950.0 * 0.1 * 0.9 + 10000.0 * 0.01 * 0.99;
        for seed in 0..5 {
            let d = generate_sbm(&[100, 100], 0.1, 0.01, 8, seed).unwrap();
            let m = d.graphs[0].num_edges() as f64;
            assert!((m - mean).abs() <= 3.0 * var.sqrt(), "seed {seed}: {m}");
        }
    }

    #[test]
    fn size_classes() {
        let d = generate_size_classes(&[20, 40], 5, 1).unwrap();
        assert_eq!(d.graphs.len(), 10);
        for (g, &l) in d.graphs.iter().zip(d.graph_labels.as_ref().unwrap()) {
            assert_eq!(g.num_nodes(), [20, 40][l]);
            assert!(g.degrees().iter().all(|&k| k == 2));
        }
    }
}
