use std::path::Path;
use std::time::Instant;

use gclab_autodiff::{ParamStore, Tape};
use serde::{Deserialize, Serialize};

use crate::encoders::{self, EncoderKind};
use crate::error::Result;
use crate::graph::{plan_batches, Dataset, Graph};
use crate::rng;
use crate::samplers::{self, DiffusionCache, SamplerKind, View};
use crate::trainer::FrameworkSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderProfile {
    pub dataset: String,
    pub encoder: EncoderKind,
    pub params: usize,
    pub size_kb: f64,
    pub time_ms: f64,
    /// Bytes held by the forward tape, in MB.
    pub memory_mb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerProfile {
    pub dataset: String,
    pub sampler: SamplerKind,
    pub time_ms: f64,
    pub samples: usize,
    pub time_per_sample_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileTable {
    pub encoders: Vec<EncoderProfile>,
    pub samplers: Vec<SamplerProfile>,
}

#[derive(Debug, Clone)]
pub struct ProfileOptions {
    /// Timed repetitions averaged per row.
    pub repeats: usize,
    pub encoders: Vec<EncoderKind>,
    pub samplers: Vec<SamplerKind>,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            repeats: 3,
            encoders: EncoderKind::ALL.to_vec(),
            samplers: SamplerKind::ALL.to_vec(),
        }
    }
}

/// Changes the encoder or the sampler of `baseline` one at a time. Encoder
/// rows time one forward pass over every graph; sampler rows time one epoch
/// of batches and count positive pairs as samples.
pub fn profile_modules(dataset: &Dataset, baseline: &FrameworkSpec, opts: &ProfileOptions) -> Result<ProfileTable> {
    dataset.validate()?;
    let repeats = opts.repeats.max(1);
    let mut encoders_out = Vec::new();
    for &kind in &opts.encoders {
        let mut cfg = baseline.encoder;
        cfg.kind = kind;
        let mut store = ParamStore::new();
        encoders::init_params(&cfg, dataset.feature_dim(), dataset.total_nodes(), rng::derive(baseline.seed, 1), &mut store)?;
        let views: Vec<View> = dataset.graphs.iter().enumerate().map(|(i, g)| View::original(g.clone(), i)).collect();
        let mut total = 0.0;
        let mut bytes = 0;
        for _ in 0..repeats {
            let started = Instant::now();
            let mut offset = 0;
            let mut peak = 0;
            for v in &views {
                let mut t = Tape::new();
                encoders::encode_nodes(&mut t, &cfg, &store, v, offset)?;
                offset += v.num_nodes();
                peak = peak.max(t.value_bytes());
            }
            total += started.elapsed().as_secs_f64() * 1e3;
            bytes = peak;
        }
        encoders_out.push(EncoderProfile {
            dataset: dataset.name.clone(),
            encoder: kind,
            params: store.num_scalars(),
            size_kb: store.byte_size() as f64 / 1024.0,
            time_ms: total / repeats as f64,
            memory_mb: bytes as f64 / (1024.0 * 1024.0),
        });
    }

    let mut samplers_out = Vec::new();
    let mode = baseline.negative_mode();
    for &kind in &opts.samplers {
        let mut cfg = baseline.sampler;
        cfg.kind = kind;
        let plan = plan_batches(dataset, baseline.node_budget, rng::derive(baseline.seed, 1))?;
        let mut total = 0.0;
        let mut samples = 0;
        let mut usable = true;
        for _ in 0..repeats {
            let mut cache = DiffusionCache::new();
            let started = Instant::now();
            samples = 0;
            let mut any = false;
            for (b, members) in plan.batches.iter().enumerate() {
                let graphs: Vec<(usize, &Graph)> = members.iter().map(|&i| (i, &dataset.graphs[i])).collect();
                match samplers::sample(&cfg, &graphs, mode, rng::derive(baseline.seed, b as u64), &mut cache) {
                    Ok(batch) => {
                        samples += batch.pairs.len();
                        any = true;
                    }
                    Err(e) => log::debug!("{kind} on batch {b}: {e}"),
                }
            }
            total += started.elapsed().as_secs_f64() * 1e3;
            usable &= any;
        }
        if !usable {
            log::warn!("sampler {kind} produced no batches on {}; row omitted", dataset.name);
            continue;
        }
        let time_ms = total / repeats as f64;
        samplers_out.push(SamplerProfile {
            dataset: dataset.name.clone(),
            sampler: kind,
            time_ms,
            samples,
            time_per_sample_us: if samples == 0 { 0.0 } else { time_ms * 1e3 / samples as f64 },
        });
    }
    Ok(ProfileTable {
        encoders: encoders_out,
        samplers: samplers_out,
    })
}

impl ProfileTable {
    /// Writes `<stem>.encoders.csv` and `<stem>.samplers.csv`.
    pub fn write_csv(&self, stem: &Path) -> Result<()> {
        let with = |suffix: &str| {
            let mut s = stem.as_os_str().to_owned();
            s.push(suffix);
            std::path::PathBuf::from(s)
        };
        let mut w = csv::Writer::from_path(with(".encoders.csv"))?;
        for r in &self.encoders {
            w.serialize(r)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(with(".samplers.csv"))?;
        for r in &self.samplers {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Plain-text table in the dataset/module/cost layout.
    pub fn render(&self) -> String {
        let mut s = String::from("Dataset\tEncoder\tParams\tSize (KB)\tTime (ms)\tMemory (MB)\n");
        for r in &self.encoders {
            s += &format!(
                "{}\t{}\t{}\t{:.1}\t{:.2}\t{:.2}\n",
                r.dataset, r.encoder, r.params, r.size_kb, r.time_ms, r.memory_mb
            );
        }
        s += "\nDataset\tSampler\tTime (ms)\t# Samples\tTime/Sample (us)\n";
        for r in &self.samplers {
            s += &format!(
                "{}\t{}\t{:.2}\t{}\t{:.2}\n",
                r.dataset, r.sampler, r.time_ms, r.samples, r.time_per_sample_us
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generate_sbm;
    use crate::harness::preset;

    #[test]
    fn lookup_parameter_count_and_determinism() {
        let d = generate_sbm(&[15, 15], 0.3, 0.02, 4, 2).unwrap();
        let mut base = preset("line").unwrap();
        let opts = ProfileOptions {
            repeats: 1,
            ..ProfileOptions::default()
        };
        let a = profile_modules(&d, &base, &opts).unwrap();
        let lookup = a.encoders.iter().find(|r| r.encoder == EncoderKind::Lookup).unwrap();
        assert_eq!(lookup.params, 30 * 64);
        assert!(a.samplers.iter().all(|r| r.sampler != SamplerKind::Graphcl));
        for r in &a.samplers {
            assert!((r.time_per_sample_us - r.time_ms * 1e3 / r.samples as f64).abs() < 1e-9);
        }
        let b = profile_modules(&d, &base, &opts).unwrap();
        let counts = |t: &ProfileTable| t.samplers.iter().map(|r| r.samples).collect::<Vec<_>>();
        assert_eq!(counts(&a), counts(&b));

        base.encoder.projection_head = true;
        let p = profile_modules(&d, &base, &opts).unwrap();
        let lookup = p.encoders.iter().find(|r| r.encoder == EncoderKind::Lookup).unwrap();
        assert_eq!(lookup.params, 30 * 64 + 2 * (64 * 64 + 64));
    }
}
