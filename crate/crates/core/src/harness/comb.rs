use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Axis, ResultRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombEntry {
    pub module_x: String,
    /// Empty for single-module entries.
    pub module_y: String,
    pub pooled: usize,
    pub runs: usize,
    /// `None` when no successful run used the module pair.
    pub p_t: Option<f64>,
    pub comb: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombTable {
    pub t: f64,
    pub entries: Vec<CombEntry>,
    /// Per dataset: (pool size, successful runs).
    pub pool_sizes: BTreeMap<String, (usize, usize)>,
}

/// `ceil(t% * n)`, robust to round-off in `t / 100 * n`.
pub fn pool_size(n: usize, t: f64) -> usize {
    let k = t * n as f64 / 100.0;
    let r = k.round();
    if (k - r).abs() < 1e-9 {
        r as usize
    } else {
        k.ceil() as usize
    }
}

fn label(axis: Axis, r: &ResultRecord) -> String {
    format!("{}:{}", axis, axis.value(&r.config.spec))
}

/// Marks the top `ceil(t% n)` successful runs of each dataset. Equal scores
/// keep input order.
fn pool(records: &[ResultRecord], t: f64) -> Result<(Vec<bool>, BTreeMap<String, (usize, usize)>)> {
    if !(t > 0.0 && t < 100.0) {
        return Err(Error::Harness(format!("t must be in (0, 100), got {t}")));
    }
    let mut by_dataset: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if r.is_ok() {
            by_dataset.entry(&r.config.dataset).or_default().push(i);
        }
    }
    let mut pooled = vec![false; records.len()];
    let mut sizes = BTreeMap::new();
    for (d, mut idx) in by_dataset {
        idx.sort_by(|&a, &b| {
            let (sa, sb) = (records[a].ok_score().unwrap_or(0.0), records[b].ok_score().unwrap_or(0.0));
            sb.total_cmp(&sa).then(a.cmp(&b))
        });
        let k = pool_size(idx.len(), t);
        for &i in &idx[..k] {
            pooled[i] = true;
        }
        sizes.insert(d.to_string(), (k, idx.len()));
    }
    Ok((pooled, sizes))
}

fn entries<F>(records: &[ResultRecord], pooled: &[bool], t: f64, keys: F) -> Vec<CombEntry>
where
    F: Fn(&ResultRecord) -> Vec<(String, String)>,
{
    let mut universe: BTreeSet<(String, String)> = BTreeSet::new();
    let mut counts: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        for k in keys(r) {
            universe.insert(k.clone());
            if r.is_ok() {
                let c = counts.entry(k).or_default();
                c.1 += 1;
                if pooled[i] {
                    c.0 += 1;
                }
            }
        }
    }
    universe
        .into_iter()
        .map(|k| {
            let (p, n) = counts.get(&k).copied().unwrap_or((0, 0));
            let p_t = (n > 0).then(|| p as f64 / n as f64);
            CombEntry {
                module_x: k.0,
                module_y: k.1,
                pooled: p,
                runs: n,
                p_t,
                comb: p_t.map(|v| v - t / 100.0),
            }
        })
        .collect()
}

/// `p_t(x, y)` and `Comb(x, y)` for every pair of instantiations from two
/// different axes. Counts are pooled over datasets before dividing.
pub fn best_pool_comb(records: &[ResultRecord], t: f64) -> Result<CombTable> {
    let (pooled, pool_sizes) = pool(records, t)?;
    let entries = entries(records, &pooled, t, |r| {
        let mut out = Vec::new();
        for (i, &x) in Axis::ALL.iter().enumerate() {
            for &y in &Axis::ALL[i + 1..] {
                out.push((label(x, r), label(y, r)));
            }
        }
        out
    });
    Ok(CombTable { t, entries, pool_sizes })
}

/// The single-module analogue: share of each instantiation's runs that land
/// in the pool.
pub fn best_pool_single(records: &[ResultRecord], t: f64) -> Result<CombTable> {
    let (pooled, pool_sizes) = pool(records, t)?;
    let entries = entries(records, &pooled, t, |r| Axis::ALL.iter().map(|&a| (label(a, r), String::new())).collect());
    Ok(CombTable { t, entries, pool_sizes })
}

impl CombTable {
    pub fn get(&self, x: &str, y: &str) -> Option<&CombEntry> {
        self.entries.iter().find(|e| (e.module_x == x && e.module_y == y) || (e.module_x == y && e.module_y == x))
    }

    /// `module_x,module_y,p_t,comb`; absent entries leave both values empty.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["module_x", "module_y", "p_t", "comb"])?;
        for e in &self.entries {
            let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([e.module_x.as_str(), e.module_y.as_str(), &fmt(e.p_t), &fmt(e.comb)])?;
        }
        w.flush()?;
        Ok(())
    }
}
