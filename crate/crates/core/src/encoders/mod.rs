//! Node encoders, readouts and the projection head.
//!
//! Parameter names:
//!
//! | name | shape |
//! |------|-------|
//! | `enc.lookup` | rows x d |
//! | `enc.{l}.w`, `enc.{l}.b` | in x d, 1 x d (mlp, gcn and gat use `w`; only mlp has `b`) |
//! | `enc.{l}.att_src`, `enc.{l}.att_dst` | d x 1 (gat) |
//! | `enc.{l}.w1`, `enc.{l}.b1`, `enc.{l}.w2`, `enc.{l}.b2` | gin inner MLP |
//! | `readout.jk.w`, `readout.jk.slope` | (L d) x d, 1 x 1 |
//! | `proj.w1`, `proj.b1`, `proj.w2`, `proj.b2` | projection head |

mod config;

use std::sync::Arc;

use gclab_autodiff::{CsrMatrix, Matrix, ParamStore, Reduce, Tape, Var};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;
use crate::samplers::View;

pub use config::{EncoderConfig, EncoderKind, ReadoutKind};

pub const GAT_SLOPE: f64 = 0.2;
/// Diffusion entries at or below this are not attention edges.
pub const GAT_DIFFUSION_THRESHOLD: f64 = 1e-4;
pub const PRELU_INIT: f64 = 0.25;

pub(crate) fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..=limit))
}

fn layer_name(l: usize, p: &str) -> String {
    format!("enc.{l}.{p}")
}

/// Adds encoder, readout and projection parameters for `cfg` to `store`.
/// `lookup_rows` sizes the lookup table and is ignored by other encoders.
pub fn init_params(cfg: &EncoderConfig, feat_dim: usize, lookup_rows: usize, seed: u64, store: &mut ParamStore) -> Result<()> {
    cfg.validate()?;
    let d = cfg.emb_dim;
    let mut r = rng::stream(seed, 0xe7c);
    match cfg.kind {
        EncoderKind::Lookup => {
            let scale = 1.0 / (d as f64).sqrt();
            let table = Array2::from_shape_fn((lookup_rows, d), |_| r.sample::<f64, _>(StandardNormal) * scale);
            store.insert("enc.lookup", table);
        }
        kind => {
            for l in 0..cfg.layers {
                let fan_in = if l == 0 { feat_dim } else { d };
                match kind {
                    EncoderKind::Mlp => {
                        store.insert(layer_name(l, "w"), glorot(&mut r, fan_in, d));
                        store.insert(layer_name(l, "b"), Array2::zeros((1, d)));
                    }
                    EncoderKind::Gcn => store.insert(layer_name(l, "w"), glorot(&mut r, fan_in, d)),
                    EncoderKind::Gat => {
                        store.insert(layer_name(l, "w"), glorot(&mut r, fan_in, d));
                        store.insert(layer_name(l, "att_src"), glorot(&mut r, d, 1));
                        store.insert(layer_name(l, "att_dst"), glorot(&mut r, d, 1));
                    }
                    EncoderKind::Gin => {
                        store.insert(layer_name(l, "w1"), glorot(&mut r, fan_in, d));
                        store.insert(layer_name(l, "b1"), Array2::zeros((1, d)));
                        store.insert(layer_name(l, "w2"), glorot(&mut r, d, d));
                        store.insert(layer_name(l, "b2"), Array2::zeros((1, d)));
                    }
                    EncoderKind::Lookup => unreachable!(),
                }
            }
        }
    }
    if cfg.readout == ReadoutKind::Jknet {
        store.insert("readout.jk.w", glorot(&mut r, cfg.effective_layers() * d, d));
        store.insert("readout.jk.slope", Array2::from_elem((1, 1), PRELU_INIT));
    }
    if cfg.projection_head {
        store.insert("proj.w1", glorot(&mut r, d, d));
        store.insert("proj.b1", Array2::zeros((1, d)));
        store.insert("proj.w2", glorot(&mut r, d, d));
        store.insert("proj.b2", Array2::zeros((1, d)));
    }
    Ok(())
}

/// Node embeddings of one view.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    /// Final-layer embeddings, `n x d`.
    pub nodes: Var,
    /// Every layer's output; kept only for the jknet readout.
    pub per_layer: Option<Vec<Var>>,
}

fn linear(t: &mut Tape, store: &ParamStore, h: Var, w: &str, b: Option<&str>) -> Result<Var> {
    let w = t.param(store, w)?;
    let mut out = t.matmul(h, w)?;
    if let Some(b) = b {
        let b = t.param(store, b)?;
        out = t.add(out, b)?;
    }
    Ok(out)
}

/// Propagates `x` through the view's diffusion matrix or through `sparse`.
fn propagate(t: &mut Tape, view: &View, sparse: impl FnOnce() -> CsrMatrix, x: Var) -> Result<Var> {
    Ok(match &view.dense_override {
        Some(dense) => t.const_matmul(dense.clone(), x)?,
        None => t.sparse_matmul(Arc::new(sparse()), x)?,
    })
}

/// Attention edges `(target, neighbour)` including self-loops, grouped by
/// target.
fn attention_edges(view: &View) -> (Vec<usize>, Vec<usize>) {
    let n = view.num_nodes();
    let mut tgt = Vec::new();
    let mut nbr = Vec::new();
    match &view.dense_override {
        Some(s) => {
            for i in 0..n {
                for j in 0..n {
                    if i == j || s[[i, j]] > GAT_DIFFUSION_THRESHOLD {
                        tgt.push(i);
                        nbr.push(j);
                    }
                }
            }
        }
        None => {
            for (i, list) in view.graph.adjacency_lists().into_iter().enumerate() {
                tgt.push(i);
                nbr.push(i);
                for j in list {
                    tgt.push(i);
                    nbr.push(j);
                }
            }
        }
    }
    (tgt, nbr)
}

/// Encodes every node of `view`. `lookup_offset` is the lookup-table row of
/// node 0 of the view's source graph.
pub fn encode_nodes(t: &mut Tape, cfg: &EncoderConfig, store: &ParamStore, view: &View, lookup_offset: usize) -> Result<EmbeddingTable> {
    let keep = cfg.readout == ReadoutKind::Jknet;
    let mut per_layer = Vec::new();
    let n = view.num_nodes();

    if cfg.kind == EncoderKind::Lookup {
        let table = t.param(store, "enc.lookup")?;
        let rows = t.shape(table).0;
        let idx: Vec<usize> = view.node_ids.iter().map(|&i| lookup_offset + i).collect();
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::InvalidArgument(format!("lookup row {bad} outside a table of {rows} rows")));
        }
        let h = t.gather_rows(table, idx)?;
        return Ok(EmbeddingTable {
            nodes: h,
            per_layer: keep.then(|| vec![h]),
        });
    }

    let features = view.graph.feature_matrix();
    let expected = store
        .get(&layer_name(0, if cfg.kind == EncoderKind::Gin { "w1" } else { "w" }))
        .map(|w| w.nrows())
        .ok_or_else(|| Error::InvalidArgument("encoder parameters are not initialised".into()))?;
    if features.ncols() != expected {
        return Err(Error::InvalidArgument(format!(
            "feature dim mismatch: view has {} columns, encoder expects {expected}",
            features.ncols()
        )));
    }
    let mut h = t.constant(features);
    let (tgt, nbr): (Arc<[usize]>, Arc<[usize]>) = if cfg.kind == EncoderKind::Gat {
        let (a, b) = attention_edges(view);
        (a.into(), b.into())
    } else {
        (Arc::from(Vec::new()), Arc::from(Vec::new()))
    };

    for l in 0..cfg.layers {
        h = match cfg.kind {
            EncoderKind::Mlp => {
                let z = linear(t, store, h, &layer_name(l, "w"), Some(&layer_name(l, "b")))?;
                t.relu(z)
            }
            EncoderKind::Gcn => {
                let z = linear(t, store, h, &layer_name(l, "w"), None)?;
                let z = propagate(t, view, || view.graph.symmetric_normalize(), z)?;
                t.relu(z)
            }
            EncoderKind::Gat => {
                let wh = linear(t, store, h, &layer_name(l, "w"), None)?;
                let a_dst = t.param(store, &layer_name(l, "att_dst"))?;
                let a_src = t.param(store, &layer_name(l, "att_src"))?;
                let s_dst = t.matmul(wh, a_dst)?;
                let s_src = t.matmul(wh, a_src)?;
                let e_dst = t.gather_rows(s_dst, tgt.clone())?;
                let e_src = t.gather_rows(s_src, nbr.clone())?;
                let e = t.add(e_dst, e_src)?;
                let e = t.leaky_relu(e, GAT_SLOPE);
                let att = t.segment_softmax(e, tgt.clone(), n)?;
                let msg = t.gather_rows(wh, nbr.clone())?;
                let msg = t.mul(msg, att)?;
                let z = t.segment_sum(msg, tgt.clone(), n)?;
                t.relu(z)
            }
            EncoderKind::Gin => {
                let agg = propagate(t, view, || view.graph.adjacency(), h)?;
                let z = t.add(h, agg)?;
                let z = linear(t, store, z, &layer_name(l, "w1"), Some(&layer_name(l, "b1")))?;
                let z = t.relu(z);
                let z = linear(t, store, z, &layer_name(l, "w2"), Some(&layer_name(l, "b2")))?;
                t.relu(z)
            }
            EncoderKind::Lookup => unreachable!(),
        };
        if keep {
            per_layer.push(h);
        }
    }
    Ok(EmbeddingTable {
        nodes: h,
        per_layer: keep.then_some(per_layer),
    })
}

/// Graph embedding `1 x d`, or `None` for the `none` readout.
pub fn readout(t: &mut Tape, table: &EmbeddingTable, kind: ReadoutKind, store: &ParamStore) -> Result<Option<Var>> {
    Ok(match kind {
        ReadoutKind::None => None,
        ReadoutKind::Mean => Some(t.reduce_mean(table.nodes, Reduce::Rows)),
        ReadoutKind::Sum => Some(t.reduce_sum(table.nodes, Reduce::Rows)),
        ReadoutKind::Jknet => {
            let layers = table
                .per_layer
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("jknet readout needs per-layer embeddings".into()))?;
            let sums: Vec<Var> = layers.iter().map(|&h| t.reduce_sum(h, Reduce::Rows)).collect();
            let cat = t.concat_cols(&sums)?;
            let w = t.param(store, "readout.jk.w")?;
            let z = t.matmul(cat, w)?;
            let slope = t.param(store, "readout.jk.slope")?;
            Some(t.prelu(z, slope)?)
        }
    })
}

/// Two-layer projection head; identity when disabled.
pub fn project(t: &mut Tape, x: Var, store: &ParamStore, enabled: bool) -> Result<Var> {
    if !enabled {
        return Ok(x);
    }
    let h = linear(t, store, x, "proj.w1", Some("proj.b1"))?;
    let h = t.relu(h);
    linear(t, store, h, "proj.w2", Some("proj.b2"))
}
