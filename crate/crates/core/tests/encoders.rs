use std::sync::Arc;

use gclab::encoders::{encode_nodes, init_params, project, readout, EncoderConfig, EncoderKind, ReadoutKind};
use gclab::graph::Graph;
use gclab::samplers::{ppr_diffusion, View, ViewKind};
use gclab_autodiff::{grad_check, Matrix, ParamStore, Reduce, Result, Tape, Var};
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FEAT: usize = 3;
const DIM: usize = 4;

fn random_graph(seed: u64, n: usize) -> Graph {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if r.random_bool(0.4) {
                edges.push((u, v));
            }
        }
    }
    let x = Array2::from_shape_fn((n, FEAT), |_| r.random_range(-1.0..1.0));
    Graph::new(n, edges, Some(x), None).unwrap()
}

fn diffusion_view(g: &Graph) -> View {
    let mut v = View::original(g.clone(), 0);
    v.kind = ViewKind::Diffusion;
    v.dense_override = Some(Arc::new(ppr_diffusion(g, 0.2).unwrap()));
    v
}

fn setup(kind: EncoderKind, readout_kind: ReadoutKind, layers: usize, seed: u64, n: usize, proj: bool) -> (EncoderConfig, ParamStore) {
    let mut cfg = EncoderConfig::new(kind, readout_kind, DIM, layers);
    cfg.projection_head = proj;
    let mut store = ParamStore::new();
    init_params(&cfg, FEAT, n, seed, &mut store).unwrap();
    (cfg, store)
}

/// Node embeddings and readout, contracted with fixed weights.
fn scalar_loss(t: &mut Tape, cfg: &EncoderConfig, store: &ParamStore, view: &View, w: &Matrix) -> Result<Var> {
    let table = encode_nodes(t, cfg, store, view, 0).expect("encode");
    let mut total = {
        let h = project(t, table.nodes, store, cfg.projection_head).expect("project");
        let wc = t.constant(w.clone());
        let p = t.mul(h, wc)?;
        t.sum_all(p)
    };
    if let Some(r) = readout(t, &table, cfg.readout, store).expect("readout") {
        let s = t.reduce_sum(r, Reduce::All);
        total = t.add(total, s)?;
    }
    Ok(total)
}

/// Replaces every parameter with a uniform draw so no check sits on a kink
/// created by zero-initialised biases.
fn randomize(store: &mut ParamStore, seed: u64) {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        store.get_mut(&name).unwrap().mapv_inplace(|_| r.random_range(-1.0..1.0));
    }
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let mut worst: f64 = 0.0;
    for kind in EncoderKind::ALL {
        for layers in 1..=4 {
            for seed in 0..3u64 {
                let g = random_graph(seed, 6);
                let ro = if seed == 0 { ReadoutKind::Jknet } else { ReadoutKind::Sum };
                let (cfg, mut store) = setup(kind, ro, layers, seed, 6, seed == 2);
                randomize(&mut store, seed);
                let views = [View::original(g.clone(), 0), diffusion_view(&g)];
                let mut wr = ChaCha8Rng::seed_from_u64(seed + 100);
                let w = Array2::from_shape_fn((6, DIM), |_| wr.random_range(-1.0..1.0));
                for view in &views {
                    let names: Vec<String> = store.names().map(str::to_string).collect();
                    for name in names {
                        let point = store.get(&name).unwrap().clone();
                        let err = grad_check(
                            |t, x| {
                                t.bind_param(&name, x);
                                scalar_loss(t, &cfg, &store, view, &w)
                            },
                            &point,
                        )
                        .unwrap();
                        assert!(err < 1e-4, "{kind} L={layers} seed={seed} {name}: {err:e}");
                        worst = worst.max(err);
                    }
                }
            }
        }
    }
    assert!(worst < 1e-4);
}

/// Each parameter gets a nonzero gradient for at least one of a few seeds;
/// a PReLU slope only sees negative inputs on some draws.
#[test]
fn every_parameter_receives_gradient() {
    for kind in EncoderKind::ALL {
        for ro in [ReadoutKind::Mean, ReadoutKind::Jknet] {
            for layers in 1..=4 {
                let mut live = std::collections::BTreeSet::new();
                let mut all = Vec::new();
                for seed in 0..4u64 {
                    let g = random_graph(11 + seed, 8);
                    let (cfg, mut store) = setup(kind, ro, layers, seed, 8, true);
                    let mut t = Tape::new();
                    let w = Array2::from_shape_fn((8, DIM), |(i, j)| (i + 2 * j) as f64 * 0.1 - 0.5);
                    let loss = scalar_loss(&mut t, &cfg, &store, &View::original(g, 0), &w).unwrap();
                    t.backward_into(loss, &mut store).unwrap();
                    all = store.names().map(str::to_string).collect();
                    for name in &all {
                        if store.grad(name).unwrap().iter().any(|v| *v != 0.0) {
                            live.insert(name.clone());
                        }
                    }
                }
                for name in &all {
                    assert!(live.contains(name), "{kind} {ro} L={layers}: {name} never receives gradient");
                }
            }
        }
    }
}

fn permute_graph(g: &Graph, perm: &[usize]) -> Graph {
    // new node i is old node perm[i]
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    let edges: Vec<(usize, usize)> = g.edges().iter().map(|&(u, v)| (inv[u], inv[v])).collect();
    let x = g.features().unwrap().select(Axis(0), perm);
    Graph::new(g.num_nodes(), edges, Some(x), None).unwrap()
}

#[test]
fn message_passing_is_permutation_equivariant() {
    let g = random_graph(21, 7);
    let perm = [3, 0, 6, 1, 5, 2, 4];
    let pg = permute_graph(&g, &perm);
    for kind in [EncoderKind::Mlp, EncoderKind::Gcn, EncoderKind::Gat, EncoderKind::Gin] {
        for ro in [ReadoutKind::Mean, ReadoutKind::Sum, ReadoutKind::Jknet] {
            let (cfg, store) = setup(kind, ro, 2, 3, 7, false);
            let mut t = Tape::new();
            let a = encode_nodes(&mut t, &cfg, &store, &View::original(g.clone(), 0), 0).unwrap();
            let b = encode_nodes(&mut t, &cfg, &store, &View::original(pg.clone(), 0), 0).unwrap();
            let ha = t.value(a.nodes).select(Axis(0), &perm);
            let hb = t.value(b.nodes).clone();
            assert!((&ha - &hb).iter().all(|d| d.abs() < 1e-10), "{kind}: node embeddings");
            let ra = readout(&mut t, &a, ro, &store).unwrap().unwrap();
            let rb = readout(&mut t, &b, ro, &store).unwrap().unwrap();
            let diff = t.value(ra) - t.value(rb);
            assert!(diff.iter().all(|d| d.abs() < 1e-10), "{kind} {ro}: readout");
        }
    }
}

#[test]
fn mlp_and_lookup_ignore_edges() {
    let g = random_graph(4, 6);
    for kind in [EncoderKind::Lookup, EncoderKind::Mlp] {
        let (cfg, store) = setup(kind, ReadoutKind::Mean, 3, 1, 6, false);
        let mut t = Tape::new();
        let a = encode_nodes(&mut t, &cfg, &store, &View::original(g.clone(), 0), 0).unwrap();
        let b = encode_nodes(&mut t, &cfg, &store, &View::original(g.without_edges(), 0), 0).unwrap();
        assert_eq!(t.value(a.nodes), t.value(b.nodes), "{kind}");
    }
    let (cfg, store) = setup(EncoderKind::Gcn, ReadoutKind::Mean, 2, 1, 6, false);
    let mut t = Tape::new();
    let a = encode_nodes(&mut t, &cfg, &store, &View::original(g.clone(), 0), 0).unwrap();
    let b = encode_nodes(&mut t, &cfg, &store, &View::original(g.without_edges(), 0), 0).unwrap();
    assert_ne!(t.value(a.nodes), t.value(b.nodes));
}

#[test]
fn sum_readout_separates_sizes_mean_does_not() {
    let cycle = |n: usize| Graph::new(n, (0..n).map(|i| (i, (i + 1) % n)), Some(Array2::ones((n, FEAT))), None).unwrap();
    let (cfg, store) = setup(EncoderKind::Mlp, ReadoutKind::Sum, 2, 9, 0, false);
    let mut t = Tape::new();
    let a = encode_nodes(&mut t, &cfg, &store, &View::original(cycle(20), 0), 0).unwrap();
    let b = encode_nodes(&mut t, &cfg, &store, &View::original(cycle(40), 0), 0).unwrap();
    let (sa, sb) = (
        readout(&mut t, &a, ReadoutKind::Sum, &store).unwrap().unwrap(),
        readout(&mut t, &b, ReadoutKind::Sum, &store).unwrap().unwrap(),
    );
    let (ma, mb) = (
        readout(&mut t, &a, ReadoutKind::Mean, &store).unwrap().unwrap(),
        readout(&mut t, &b, ReadoutKind::Mean, &store).unwrap().unwrap(),
    );
    let sum_gap: f64 = (t.value(sa) - t.value(sb)).iter().map(|v| v.abs()).sum();
    let mean_gap: f64 = (t.value(ma) - t.value(mb)).iter().map(|v| v.abs()).sum();
    assert!(sum_gap > 1e-3);
    assert!(mean_gap < 1e-12);
}
