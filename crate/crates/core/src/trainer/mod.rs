//! Model assembly and the training loop.

mod early_stop;

use std::collections::BTreeSet;
use std::time::Instant;

use gclab_autodiff::{AdamConfig, Matrix, ParamStore, Tape, Var};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::contrast::{self, DiscriminatorKind, EstimatorKind, NegativeScores, ScoredBatch};
use crate::encoders::{self, EncoderConfig, EncoderKind, ReadoutKind};
use crate::error::{Error, Result};
use crate::graph::{plan_batches, sample_subgraph, Dataset, Graph, Task};
use crate::rng;
use crate::samplers::{self, ContrastBatch, DiffusionCache, NegativeMode, Negatives, SampleRef, SamplerConfig, SamplerKind, Scope, View};

pub use early_stop::{stopping_epoch, EarlyStopping};

/// One point of the module and hyperparameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameworkSpec {
    pub encoder: EncoderConfig,
    pub sampler: SamplerConfig,
    pub discriminator: DiscriminatorKind,
    pub estimator: EstimatorKind,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub node_budget: usize,
    pub subgraph_cap: usize,
    pub seed: u64,
    /// Pairs kept per batch per epoch; larger batches are subsampled.
    pub max_pairs: usize,
    /// InfoNCE score divisor.
    pub temperature: f64,
}

impl Default for FrameworkSpec {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::new(EncoderKind::Gcn, ReadoutKind::Mean, 64, 2),
            sampler: SamplerConfig::default(),
            discriminator: DiscriminatorKind::Inner,
            estimator: EstimatorKind::Jsd,
            lr: 0.01,
            max_epochs: 500,
            patience: 3,
            node_budget: 4096,
            subgraph_cap: 5000,
            seed: 0,
            max_pairs: 4096,
            temperature: 1.0,
        }
    }
}

impl FrameworkSpec {
    pub fn new(
        encoder: EncoderKind,
        readout: ReadoutKind,
        sampler: SamplerKind,
        discriminator: DiscriminatorKind,
        estimator: EstimatorKind,
    ) -> Self {
        let mut spec = Self::default();
        spec.encoder.kind = encoder;
        spec.encoder.readout = readout;
        spec.sampler.kind = sampler;
        spec.discriminator = discriminator;
        spec.estimator = estimator;
        spec
    }

    /// `(encoder, readout, sampler, discriminator, estimator)`.
    pub fn module_tuple(&self) -> String {
        format!(
            "({}, {}, {}, {}, {})",
            self.encoder.kind, self.encoder.readout, self.sampler.kind, self.discriminator, self.estimator
        )
    }

    pub fn negative_mode(&self) -> NegativeMode {
        match self.estimator {
            EstimatorKind::Jsd => NegativeMode::Explicit(self.sampler.negatives),
            EstimatorKind::Infonce => NegativeMode::InBatch,
        }
    }

    /// Rejects module combinations that cannot run on `dataset`.
    pub fn check_compatible(&self, dataset: &Dataset) -> Result<()> {
        self.encoder.validate()?;
        if !(self.lr > 0.0) || !(self.temperature > 0.0) || self.max_pairs == 0 || self.node_budget == 0 || self.subgraph_cap == 0 {
            return Err(Error::InvalidArgument(
                "lr, temperature, max_pairs, node_budget and subgraph_cap must be positive".into(),
            ));
        }
        let readout = format!("readout={}", self.encoder.readout);
        let sampler = format!("sampler={}", self.sampler.kind);
        if self.sampler.kind == SamplerKind::Graphcl && !dataset.is_multi_graph() {
            return Err(Error::Incompatible {
                first: sampler,
                second: format!("dataset={}", dataset.name),
                reason: "GraphCL requires multi-graph batches".into(),
            });
        }
        if self.encoder.readout == ReadoutKind::None {
            if dataset.task == Task::GraphClassification {
                return Err(Error::Incompatible {
                    first: readout,
                    second: "task=graph".into(),
                    reason: "graph classification needs a readout".into(),
                });
            }
            if self.sampler.kind.uses_graph_anchors() {
                return Err(Error::Incompatible {
                    first: readout,
                    second: sampler,
                    reason: "the sampler anchors on graph summaries".into(),
                });
            }
        }
        Ok(())
    }
}

/// Epoch-level training record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub stopped_epoch: usize,
    pub epoch_wall_ms: Vec<f64>,
    pub param_checksum: String,
    #[serde(skip)]
    pub params: ParamStore,
}

/// An assembled, trainable model bound to its (possibly subsampled) data.
#[derive(Debug)]
pub struct Model {
    pub spec: FrameworkSpec,
    pub params: ParamStore,
    data: Dataset,
    offsets: Vec<usize>,
    cache: DiffusionCache,
}

pub fn assemble(spec: &FrameworkSpec, dataset: &Dataset) -> Result<Model> {
    dataset.validate()?;
    spec.check_compatible(dataset)?;
    let mut data = dataset.clone();
    for (i, g) in data.graphs.iter_mut().enumerate() {
        if g.num_nodes() > spec.subgraph_cap {
            *g = sample_subgraph(g, spec.subgraph_cap, rng::derive(spec.seed, 0x5ab0 + i as u64))?;
        }
    }
    let mut offsets = Vec::with_capacity(data.graphs.len());
    let mut total = 0;
    for g in &data.graphs {
        offsets.push(total);
        total += g.num_nodes();
    }
    let mut params = ParamStore::new();
    encoders::init_params(&spec.encoder, data.feature_dim(), total, rng::derive(spec.seed, 1), &mut params)?;
    contrast::init_discriminator(spec.discriminator, spec.encoder.emb_dim, rng::derive(spec.seed, 2), &mut params);
    Ok(Model {
        spec: spec.clone(),
        params,
        data,
        offsets,
        cache: DiffusionCache::new(),
    })
}

impl Model {
    /// The data the model trains and embeds on, after subsampling.
    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn lookup_offset(&self, graph: usize) -> usize {
        self.offsets[graph]
    }

    /// Builds `-I` for one contrast batch on `t`.
    pub fn batch_loss(&self, t: &mut Tape, batch: &ContrastBatch) -> Result<Var> {
        batch_loss(&self.spec, &self.params, &self.offsets, t, batch)
    }

    /// Runs training; see [`fit`].
    pub fn fit(&mut self) -> Result<TrainReport> {
        fit(self)
    }

    /// Final-layer node embeddings of the original graph (node task) or one
    /// readout row per graph (graph task).
    pub fn embed_for_task(&self) -> Result<Matrix> {
        embed_for_task(self)
    }
}

fn graph_refs(batch: &ContrastBatch) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let mut note = |r: &SampleRef| {
        if r.scope == Scope::Graph {
            out.insert(r.view);
        }
    };
    for (a, p) in &batch.pairs {
        note(a);
        note(p);
    }
    match &batch.negatives {
        Negatives::Explicit(lists) => lists.iter().flatten().for_each(&mut note),
        Negatives::InBatch { extra, .. } => extra.iter().for_each(&mut note),
    }
    out
}

fn batch_loss(spec: &FrameworkSpec, params: &ParamStore, offsets: &[usize], t: &mut Tape, batch: &ContrastBatch) -> Result<Var> {
    let cfg = &spec.encoder;
    let mut node_rows = Vec::with_capacity(batch.views.len());
    let mut blocks = Vec::new();
    let mut tables = Vec::with_capacity(batch.views.len());
    let mut row = 0;
    for view in &batch.views {
        let table = encoders::encode_nodes(t, cfg, params, view, offsets[view.source])?;
        node_rows.push(row);
        row += view.num_nodes();
        blocks.push(table.nodes);
        tables.push(table);
    }
    let mut graph_rows = vec![usize::MAX; batch.views.len()];
    for v in graph_refs(batch) {
        let r = encoders::readout(t, &tables[v], cfg.readout, params)?
            .ok_or_else(|| Error::InvalidArgument("sampler needs graph summaries but the readout is none".into()))?;
        graph_rows[v] = row;
        row += 1;
        blocks.push(r);
    }
    let mut pool = t.concat_rows(&blocks)?;
    pool = encoders::project(t, pool, params, cfg.projection_head)?;
    if spec.estimator == EstimatorKind::Infonce {
        pool = t.row_l2_normalize(pool);
    }
    let index = |r: &SampleRef| match r.scope {
        Scope::Node => node_rows[r.view] + r.index,
        Scope::Graph => graph_rows[r.view],
    };

    let a_rows: Vec<usize> = batch.pairs.iter().map(|(a, _)| index(a)).collect();
    let p_rows: Vec<usize> = batch.pairs.iter().map(|(_, p)| index(p)).collect();
    let anchors = t.gather_rows(pool, a_rows.clone())?;
    let contexts = t.gather_rows(pool, p_rows)?;
    let mut positive = contrast::score(t, spec.discriminator, params, anchors, contexts)?;

    let mut negatives = match &batch.negatives {
        Negatives::Explicit(lists) => {
            let n = batch.negatives_per_positive;
            let p = batch.pairs.len();
            if n == 0 {
                NegativeScores::Explicit(t.constant(Array2::zeros((p, 0))))
            } else {
                let neg_rows: Vec<usize> = lists.iter().flatten().map(index).collect();
                let rep_rows: Vec<usize> = a_rows.iter().flat_map(|&r| std::iter::repeat_n(r, n)).collect();
                let na = t.gather_rows(pool, rep_rows)?;
                let nc = t.gather_rows(pool, neg_rows)?;
                let s = contrast::score(t, spec.discriminator, params, na, nc)?;
                NegativeScores::Explicit(t.reshape(s, (p, n))?)
            }
        }
        Negatives::InBatch { .. } => {
            let layout = contrast::in_batch_layout(batch)?;
            let ua = t.gather_rows(pool, layout.anchors.iter().map(index).collect::<Vec<_>>())?;
            let uc = t.gather_rows(pool, layout.candidates.iter().map(index).collect::<Vec<_>>())?;
            let scores = contrast::score_matrix(t, spec.discriminator, params, ua, uc)?;
            NegativeScores::InBatch {
                scores,
                mask: layout.mask,
                anchor_of_pair: layout.anchor_of_pair,
            }
        }
    };
    if spec.temperature != 1.0 {
        let k = 1.0 / spec.temperature;
        positive = t.scale(positive, k);
        negatives = match negatives {
            NegativeScores::Explicit(v) => NegativeScores::Explicit(t.scale(v, k)),
            NegativeScores::InBatch {
                scores,
                mask,
                anchor_of_pair,
            } => NegativeScores::InBatch {
                scores: t.scale(scores, k),
                mask,
                anchor_of_pair,
            },
        };
    }
    let mi = contrast::estimate(t, spec.estimator, &ScoredBatch { positive, negatives })?;
    Ok(t.scale(mi, -1.0))
}

/// Full-pass epochs of sample, encode, score, estimate and Adam, until
/// `max_epochs` or the early-stopping rule fires.
pub fn fit(model: &mut Model) -> Result<TrainReport> {
    let Model {
        spec,
        params,
        data,
        offsets,
        cache,
    } = model;
    let adam = AdamConfig {
        lr: spec.lr,
        ..AdamConfig::default()
    };
    let mode = spec.negative_mode();
    let mut stop = EarlyStopping::new(spec.patience);
    let mut losses = Vec::new();
    let mut wall = Vec::new();

    for epoch in 1..=spec.max_epochs {
        let started = Instant::now();
        let epoch_seed = rng::derive(spec.seed, epoch as u64);
        let plan = plan_batches(data, spec.node_budget, epoch_seed)?;
        let mut total = 0.0;
        let mut ran = 0;
        let mut skipped = None;
        for (b, members) in plan.batches.iter().enumerate() {
            let graphs: Vec<(usize, &Graph)> = members.iter().map(|&i| (i, &data.graphs[i])).collect();
            let batch_seed = rng::derive(epoch_seed, b as u64);
            let mut batch = match samplers::sample(&spec.sampler, &graphs, mode, batch_seed, cache) {
                Ok(batch) => batch,
                Err(e @ Error::Sampler(_)) => {
                    skipped = Some(e);
                    continue;
                }
                Err(e) => return Err(e),
            };
            batch.cap_pairs(spec.max_pairs, &mut rng::stream(batch_seed, 0xca9));
            let mut t = Tape::new();
            let loss = batch_loss(spec, params, offsets, &mut t, &batch)?;
            let value = t.value(loss)[[0, 0]];
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    modules: spec.module_tuple(),
                });
            }
            t.backward_into(loss, params)?;
            params.adam_step(&adam);
            total += value;
            ran += 1;
        }
        if ran == 0 {
            return Err(skipped.unwrap_or_else(|| Error::Sampler("no batches to train on".into())));
        }
        let mean = total / ran as f64;
        losses.push(mean);
        wall.push(started.elapsed().as_secs_f64() * 1e3);
        log::debug!("epoch {epoch}: loss {mean:.6}");
        if stop.update(mean) {
            break;
        }
    }
    Ok(TrainReport {
        stopped_epoch: losses.len(),
        epoch_losses: losses,
        epoch_wall_ms: wall,
        param_checksum: params.checksum(),
        params: params.clone(),
    })
}

pub fn embed_for_task(model: &Model) -> Result<Matrix> {
    let cfg = &model.spec.encoder;
    match model.data.task {
        Task::NodeClassification => {
            let view = View::original(model.data.graphs[0].clone(), 0);
            let mut t = Tape::new();
            let table = encoders::encode_nodes(&mut t, cfg, &model.params, &view, model.offsets[0])?;
            Ok(t.value(table.nodes).clone())
        }
        Task::GraphClassification => {
            let mut out = Array2::zeros((model.data.graphs.len(), cfg.emb_dim));
            for (i, g) in model.data.graphs.iter().enumerate() {
                let view = View::original(g.clone(), i);
                let mut t = Tape::new();
                let table = encoders::encode_nodes(&mut t, cfg, &model.params, &view, model.offsets[i])?;
                let r = encoders::readout(&mut t, &table, cfg.readout, &model.params)?
                    .ok_or_else(|| Error::InvalidArgument("graph embeddings need a readout".into()))?;
                out.row_mut(i).assign(&t.value(r).row(0));
            }
            Ok(out)
        }
    }
}
