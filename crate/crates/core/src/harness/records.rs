use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::contrast::{DiscriminatorKind, EstimatorKind};
use crate::encoders::{EncoderKind, ReadoutKind};
use crate::error::{Error, Result};
use crate::samplers::SamplerKind;
use crate::trainer::FrameworkSpec;

pub const RESULT_HEADER: &str =
    "encoder,readout,sampler,discriminator,estimator,emb_dim,layers,dataset,seed,pair_id,varied_module,score,wall_time_ms,status";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub config: ExperimentConfig,
    /// Test accuracy; `None` for a failed run.
    pub score: Option<f64>,
    pub wall_time_ms: f64,
    pub status: Status,
    /// Failure message; not persisted in the CSV.
    pub error: Option<String>,
}

impl ResultRecord {
    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok && self.score.is_some()
    }

    pub fn ok_score(&self) -> Option<f64> {
        self.score.filter(|_| self.status == Status::Ok)
    }
}

/// One CSV line of the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub encoder: EncoderKind,
    pub readout: ReadoutKind,
    pub sampler: SamplerKind,
    pub discriminator: DiscriminatorKind,
    pub estimator: EstimatorKind,
    pub emb_dim: usize,
    pub layers: usize,
    pub dataset: String,
    pub seed: u64,
    pub pair_id: Option<String>,
    pub varied_module: Option<String>,
    pub score: Option<f64>,
    pub wall_time_ms: f64,
    pub status: Status,
}

impl From<&ResultRecord> for ResultRow {
    fn from(r: &ResultRecord) -> Self {
        let s = &r.config.spec;
        Self {
            encoder: s.encoder.kind,
            readout: s.encoder.readout,
            sampler: s.sampler.kind,
            discriminator: s.discriminator,
            estimator: s.estimator,
            emb_dim: s.encoder.emb_dim,
            layers: s.encoder.layers,
            dataset: r.config.dataset.clone(),
            seed: s.seed,
            pair_id: r.config.pair_id.clone(),
            varied_module: r.config.varied_module.clone(),
            score: r.score,
            wall_time_ms: (r.wall_time_ms * 1e3).round() / 1e3,
            status: r.status,
        }
    }
}

impl From<ResultRow> for ResultRecord {
    fn from(row: ResultRow) -> Self {
        let mut spec = FrameworkSpec::new(row.encoder, row.readout, row.sampler, row.discriminator, row.estimator);
        spec.encoder.emb_dim = row.emb_dim;
        spec.encoder.layers = row.layers;
        spec.seed = row.seed;
        Self {
            config: ExperimentConfig {
                spec,
                dataset: row.dataset,
                pair_id: row.pair_id,
                varied_module: row.varied_module,
            },
            score: row.score,
            wall_time_ms: row.wall_time_ms,
            status: row.status,
            error: None,
        }
    }
}

/// Identity of a run as recoverable from a CSV row.
pub fn record_key(c: &ExperimentConfig) -> String {
    let s = &c.spec;
    format!(
        "{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}",
        c.dataset,
        c.pair_id.as_deref().unwrap_or(""),
        c.varied_module.as_deref().unwrap_or(""),
        s.encoder.kind,
        s.encoder.readout,
        s.sampler.kind,
        s.discriminator,
        s.estimator,
        s.encoder.emb_dim,
        s.encoder.layers,
        s.seed
    )
}

/// Writes rows, with the header when the file is new or empty.
pub fn write_results(path: &Path, records: &[ResultRecord], append: bool) -> Result<()> {
    let fresh = !append || std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in records {
        w.serialize(ResultRow::from(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    let file = path.display().to_string();
    let mut rd = csv::Reader::from_path(path).map_err(|e| Error::data(&file, "open", e.to_string()))?;
    let header = rd.headers().map_err(|e| Error::data(&file, "line 1", e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != RESULT_HEADER {
        return Err(Error::data(&file, "line 1", format!("expected header {RESULT_HEADER}")));
    }
    let mut out = Vec::new();
    for row in rd.deserialize::<ResultRow>() {
        let row = row.map_err(|e| {
            let line = e.position().map_or_else(|| "unknown line".to_string(), |p| format!("line {}", p.line()));
            Error::data(&file, line, e.to_string())
        })?;
        out.push(row.into());
    }
    Ok(out)
}

pub fn write_configs(path: &Path, configs: &[ExperimentConfig]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for c in configs {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_configs(path: &Path) -> Result<Vec<ExperimentConfig>> {
    let file = path.display().to_string();
    let rd = BufReader::new(File::open(path).map_err(|e| Error::data(&file, "open", e.to_string()))?);
    let mut out = Vec::new();
    for (i, line) in rd.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let c: ExperimentConfig =
            serde_json::from_str(&line).map_err(|e| Error::data(&file, format!("line {}", i + 1), e.to_string()))?;
        c.spec.encoder.validate().map_err(|e| Error::data(&file, format!("line {}", i + 1), e.to_string()))?;
        out.push(c);
    }
    Ok(out)
}
