//! Graph and dataset model, ingestion, normalisation, splits and batching.

mod batch;
mod io;
mod split;
mod synth;

use std::collections::BTreeSet;

use gclab_autodiff::{CsrMatrix, Matrix};
use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use batch::{plan_batches, BatchPlan};
pub use io::{load_dataset, load_dataset_with, save_dataset_json, FeatureFill, Format};
pub use split::{make_split, Split, GRAPH_SPLIT, NODE_SPLIT};
pub use synth::{generate_sbm, generate_size_classes};

/// Undirected, unweighted graph with optional node features and labels.
///
/// Edges are stored once as `(u, v)` with `u < v`, sorted, without
/// self-loops or duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Option<Matrix>,
    node_labels: Option<Vec<usize>>,
}

impl Graph {
    /// Builds a graph, symmetrising and deduplicating `edges` and dropping
    /// self-loops.
    pub fn new(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Option<Matrix>,
        node_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let mut canon = BTreeSet::new();
        for (k, (u, v)) in edges.into_iter().enumerate() {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::InvalidArgument(format!(
                    "edge {k} ({u}, {v}) references a node >= {num_nodes}"
                )));
            }
            if u != v {
                canon.insert((u.min(v), u.max(v)));
            }
        }
        if let Some(f) = &features {
            if f.nrows() != num_nodes {
                return Err(Error::InvalidArgument(format!(
                    "feature matrix has {} rows for {num_nodes} nodes",
                    f.nrows()
                )));
            }
        }
        if let Some(l) = &node_labels {
            if l.len() != num_nodes {
                return Err(Error::InvalidArgument(format!(
                    "{} node labels for {num_nodes} nodes",
                    l.len()
                )));
            }
        }
        Ok(Self {
            num_nodes,
            edges: canon.into_iter().collect(),
            features,
            node_labels,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> Option<&Matrix> {
        self.features.as_ref()
    }

    pub fn node_labels(&self) -> Option<&[usize]> {
        self.node_labels.as_deref()
    }

    /// Feature width; a featureless graph counts as one constant column.
    pub fn feature_dim(&self) -> usize {
        self.features.as_ref().map_or(1, |f| f.ncols())
    }

    /// Stored features, or a column of ones when there are none.
    pub fn feature_matrix(&self) -> Matrix {
        self.features
            .clone()
            .unwrap_or_else(|| Array2::ones((self.num_nodes, 1)))
    }

    pub fn with_features(mut self, features: Matrix) -> Result<Self> {
        if features.nrows() != self.num_nodes {
            return Err(Error::InvalidArgument(format!(
                "feature matrix has {} rows for {} nodes",
                features.nrows(),
                self.num_nodes
            )));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn without_edges(&self) -> Self {
        Self {
            edges: Vec::new(),
            ..self.clone()
        }
    }

    /// Neighbour lists in ascending order.
    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Binary symmetric adjacency matrix.
    pub fn adjacency(&self) -> CsrMatrix {
        let trip: Vec<_> = self
            .edges
            .iter()
            .flat_map(|&(u, v)| [(u, v, 1.0), (v, u, 1.0)])
            .collect();
        CsrMatrix::from_triplets(self.num_nodes, self.num_nodes, &trip).expect("edges validated")
    }

    /// `D^{-1/2} (A + I) D^{-1/2}` with degrees counted after adding the
    /// self-loops.
    pub fn symmetric_normalize(&self) -> CsrMatrix {
        let deg: Vec<f64> = self.degrees().iter().map(|&d| (d + 1) as f64).collect();
        let mut trip = Vec::with_capacity(self.num_nodes + 2 * self.edges.len());
        for (i, d) in deg.iter().enumerate() {
            trip.push((i, i, 1.0 / d));
        }
        for &(u, v) in &self.edges {
            let w = 1.0 / (deg[u] * deg[v]).sqrt();
            trip.push((u, v, w));
            trip.push((v, u, w));
        }
        CsrMatrix::from_triplets(self.num_nodes, self.num_nodes, &trip).expect("edges validated")
    }

    /// Row-stochastic random-walk transition matrix `D^{-1} A` as a dense
    /// matrix. Isolated nodes get a self-loop so that every row sums to one.
    pub fn transition_dense(&self) -> Matrix {
        let deg = self.degrees();
        let mut t = Array2::zeros((self.num_nodes, self.num_nodes));
        for &(u, v) in &self.edges {
            t[[u, v]] = 1.0 / deg[u] as f64;
            t[[v, u]] = 1.0 / deg[v] as f64;
        }
        for (i, &d) in deg.iter().enumerate() {
            if d == 0 {
                t[[i, i]] = 1.0;
            }
        }
        t
    }

    /// Subgraph induced by `nodes`, relabelled in the given order.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Self {
        let mut position = vec![usize::MAX; self.num_nodes];
        for (new, &old) in nodes.iter().enumerate() {
            position[old] = new;
        }
        let edges: Vec<_> = self
            .edges
            .iter()
            .filter_map(|&(u, v)| {
                let (a, b) = (position[u], position[v]);
                (a != usize::MAX && b != usize::MAX).then_some((a, b))
            })
            .collect();
        let features = self.features.as_ref().map(|f| f.select(Axis(0), nodes));
        let node_labels = self
            .node_labels
            .as_ref()
            .map(|l| nodes.iter().map(|&i| l[i]).collect());
        Self::new(nodes.len(), edges, features, node_labels).expect("subgraph of a valid graph")
    }
}

/// Node ids kept by [`sample_subgraph`], ascending.
pub fn subgraph_node_sample(num_nodes: usize, max_nodes: usize, seed: u64) -> Vec<usize> {
    if num_nodes <= max_nodes {
        return (0..num_nodes).collect();
    }
    let mut r = rng::stream(seed, 0x5b);
    let mut kept = sample(&mut r, num_nodes, max_nodes).into_vec();
    kept.sort_unstable();
    kept
}

/// Uniform node-induced subgraph of at most `max_nodes` nodes.
pub fn sample_subgraph(g: &Graph, max_nodes: usize, seed: u64) -> Result<Graph> {
    if max_nodes == 0 {
        return Err(Error::InvalidArgument("max_nodes must be at least 1".into()));
    }
    if g.num_nodes() <= max_nodes {
        return Ok(g.clone());
    }
    Ok(g.induced_subgraph(&subgraph_node_sample(g.num_nodes(), max_nodes, seed)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[serde(rename = "node")]
    NodeClassification,
    #[serde(rename = "graph")]
    GraphClassification,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::NodeClassification => "node",
            Task::GraphClassification => "graph",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub task: Task,
    pub graphs: Vec<Graph>,
    pub graph_labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, task: Task, graphs: Vec<Graph>, graph_labels: Option<Vec<usize>>) -> Result<Self> {
        let d = Self {
            name: name.into(),
            task,
            graphs,
            graph_labels,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self.task {
            Task::NodeClassification => {
                if self.graphs.len() != 1 {
                    return Err(Error::InvalidArgument(format!(
                        "node task needs exactly one graph, found {}",
                        self.graphs.len()
                    )));
                }
                if self.graphs[0].node_labels().is_none() {
                    return Err(Error::InvalidArgument("node task needs node labels".into()));
                }
            }
            Task::GraphClassification => match &self.graph_labels {
                Some(l) if l.len() == self.graphs.len() => {}
                Some(l) => {
                    return Err(Error::InvalidArgument(format!(
                        "{} graph labels for {} graphs",
                        l.len(),
                        self.graphs.len()
                    )))
                }
                None => return Err(Error::InvalidArgument("graph task needs graph labels".into())),
            },
        }
        Ok(())
    }

    pub fn is_multi_graph(&self) -> bool {
        self.graphs.len() > 1
    }

    /// Labels of the classified items: nodes of the single graph, or graphs.
    pub fn labels(&self) -> Vec<usize> {
        match self.task {
            Task::NodeClassification => self.graphs[0].node_labels().map(<[usize]>::to_vec).unwrap_or_default(),
            Task::GraphClassification => self.graph_labels.clone().unwrap_or_default(),
        }
    }

    pub fn num_items(&self) -> usize {
        match self.task {
            Task::NodeClassification => self.graphs.first().map_or(0, Graph::num_nodes),
            Task::GraphClassification => self.graphs.len(),
        }
    }

    pub fn total_nodes(&self) -> usize {
        self.graphs.iter().map(Graph::num_nodes).sum()
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(1, Graph::feature_dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn path3() -> Graph {
        Graph::new(3, [(0, 1), (1, 2)], None, None).unwrap()
    }

    /// Dense `D^{-1/2}(A+I)D^{-1/2}` computed straight from the definition.
    fn dense_normalized(g: &Graph) -> Matrix {
        let n = g.num_nodes();
        let mut a = Array2::<f64>::eye(n);
        for &(u, v) in g.edges() {
            a[[u, v]] = 1.0;
            a[[v, u]] = 1.0;
        }
        let d: Vec<f64> = a.rows().into_iter().map(|r| r.sum()).collect();
        Array2::from_shape_fn((n, n), |(i, j)| a[[i, j]] / (d[i] * d[j]).sqrt())
    }

    #[test]
    fn edges_are_canonical() {
        let g = Graph::new(3, [(1, 0), (0, 1), (2, 2), (2, 1)], None, None).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn dangling_edge_rejected() {
        assert!(Graph::new(2, [(0, 2)], None, None).is_err());
    }

    #[test]
    fn feature_rows_must_match() {
        assert!(Graph::new(2, [], Some(Array2::zeros((3, 1))), None).is_err());
    }

    #[test]
    fn normalize_two_nodes() {
        let g = Graph::new(2, [(0, 1)], None, None).unwrap();
        assert_eq!(g.symmetric_normalize().to_dense(), array![[0.5, 0.5], [0.5, 0.5]]);
    }

    #[test]
    fn normalize_isolated_node() {
        let g = Graph::new(1, [], None, None).unwrap();
        assert_eq!(g.symmetric_normalize().to_dense(), array![[1.0]]);
    }

    #[test]
    fn normalize_path_matches_dense_formula() {
        let g = path3();
        let sparse = g.symmetric_normalize().to_dense();
        let dense = dense_normalized(&g);
        assert!((sparse[[0, 1]] - 1.0 / 6f64.sqrt()).abs() < 1e-12);
        assert!((&sparse - &dense).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn regular_graph_rows_sum_to_one() {
        // 5-cycle: every entry is 1/3
        let g = Graph::new(5, (0..5).map(|i| (i, (i + 1) % 5)), None, None).unwrap();
        let a = g.symmetric_normalize().to_dense();
        for row in a.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!((&a - &a.t()).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn subgraph_caps_node_count() {
        let edges: Vec<_> = (0..5999).map(|i| (i, i + 1)).collect();
        let labels = (0..6000).map(|i| i % 3).collect();
        let g = Graph::new(6000, edges, None, Some(labels)).unwrap();
        let s = sample_subgraph(&g, 5000, 3).unwrap();
        assert_eq!(s.num_nodes(), 5000);
        assert_eq!(s.node_labels().unwrap().len(), 5000);
        assert_eq!(s, sample_subgraph(&g, 5000, 3).unwrap());
    }

    #[test]
    fn small_graph_is_not_subsampled() {
        let g = path3();
        assert_eq!(sample_subgraph(&g, 5000, 1).unwrap(), g);
    }

    #[test]
    fn induced_subgraph_reindexes() {
        let g = Graph::new(4, [(0, 1), (1, 2), (2, 3)], Some(array![[0.], [1.], [2.], [3.]]), Some(vec![0, 1, 0, 1]))
            .unwrap();
        let s = g.induced_subgraph(&[1, 2]);
        assert_eq!(s.edges(), &[(0, 1)]);
        assert_eq!(s.features().unwrap(), &array![[1.], [2.]]);
        assert_eq!(s.node_labels().unwrap(), &[1, 0]);
    }

    #[test]
    fn dataset_invariants() {
        let g = path3();
        assert!(Dataset::new("x", Task::NodeClassification, vec![g.clone()], None).is_err());
        assert!(Dataset::new("x", Task::GraphClassification, vec![g.clone(), g.clone()], Some(vec![0])).is_err());
        assert!(Dataset::new("x", Task::GraphClassification, vec![g.clone(), g], Some(vec![0, 1])).is_ok());
    }
}
