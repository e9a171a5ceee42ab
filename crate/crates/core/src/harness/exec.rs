use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use super::{read_results, record_key, write_results, ExperimentConfig, ResultRecord, Status};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::graph::{make_split, Dataset, Split, Task, GRAPH_SPLIT, NODE_SPLIT};
use crate::trainer::{assemble, TrainReport};

/// The node or graph split of `d` under `seed`.
pub fn split_for(d: &Dataset, seed: u64) -> Result<Split> {
    let ratios = match d.task {
        Task::NodeClassification => NODE_SPLIT,
        Task::GraphClassification => GRAPH_SPLIT,
    };
    make_split(d, ratios, seed)
}

#[derive(Debug)]
pub struct RunOutcome {
    pub record: ResultRecord,
    pub train: Option<TrainReport>,
    pub eval: Option<EvalReport>,
}

/// Trains and evaluates one config. Module and runtime errors become a
/// failed record; the split is drawn from `split_seed` over the data the
/// model actually trains on.
pub fn run_experiment(config: &ExperimentConfig, dataset: &Dataset, split_seed: u64) -> RunOutcome {
    let started = Instant::now();
    let mut train = None;
    let result = (|| {
        let mut model = assemble(&config.spec, dataset)?;
        train = Some(model.fit()?);
        let split = split_for(model.dataset(), split_seed)?;
        evaluate(&model, &split)
    })();
    let wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
    match result {
        Ok(report) => RunOutcome {
            record: ResultRecord {
                config: config.clone(),
                score: Some(report.test_accuracy),
                wall_time_ms,
                status: Status::Ok,
                error: None,
            },
            train,
            eval: Some(report),
        },
        Err(e) => {
            log::warn!("run {} failed: {e}", config.spec.module_tuple());
            RunOutcome {
                record: ResultRecord {
                    config: config.clone(),
                    score: None,
                    wall_time_ms,
                    status: Status::Failed,
                    error: Some(e.to_string()),
                },
                train,
                eval: None,
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExecOptions {
    pub workers: usize,
    pub split_seed: u64,
    /// Merged results file; per-worker files live in `<out>.parts/`.
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecSummary {
    pub ran: usize,
    pub skipped: usize,
    pub failed: usize,
}

fn parts_dir(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".parts");
    PathBuf::from(s)
}

fn group_key(c: &ExperimentConfig, index: usize) -> String {
    match &c.pair_id {
        Some(p) => format!("{}|{p}", c.dataset),
        None => format!("#{index}"),
    }
}

/// Runs every config whose group has no complete record set yet, on a pool
/// of `workers` threads. Each worker appends to its own CSV; the merged file
/// lists one record per config in batch order.
pub fn execute_batch<F>(configs: &[ExperimentConfig], load: F, opts: &ExecOptions) -> Result<ExecSummary>
where
    F: Fn(&str) -> Result<Dataset>,
{
    let parts = parts_dir(&opts.out);
    fs::create_dir_all(&parts)?;
    let mut done: BTreeMap<String, ResultRecord> = BTreeMap::new();
    let mut previous = Vec::new();
    if opts.out.exists() {
        previous.push(opts.out.clone());
    }
    let mut part_files: Vec<PathBuf> = fs::read_dir(&parts)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    part_files.sort();
    previous.extend(part_files);
    for p in &previous {
        if fs::metadata(p)?.len() == 0 {
            continue;
        }
        for r in read_results(p)? {
            done.insert(record_key(&r.config), r);
        }
    }

    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, c) in configs.iter().enumerate() {
        groups.entry(group_key(c, i)).or_default().push(i);
    }
    let mut todo: Vec<usize> = Vec::new();
    let mut skipped = 0;
    for members in groups.values() {
        if members.iter().all(|&i| done.contains_key(&record_key(&configs[i]))) {
            skipped += members.len();
        } else {
            todo.extend(members.iter().copied().filter(|&i| !done.contains_key(&record_key(&configs[i]))));
        }
    }
    todo.sort_unstable();

    let names: BTreeSet<&str> = todo.iter().map(|&i| configs[i].dataset.as_str()).collect();
    let mut datasets: BTreeMap<&str, Dataset> = BTreeMap::new();
    for n in names {
        datasets.insert(n, load(n)?);
    }

    let next = AtomicUsize::new(0);
    let fresh: Mutex<Vec<(usize, ResultRecord)>> = Mutex::new(Vec::new());
    let workers = opts.workers.max(1).min(todo.len().max(1));
    let run_id = std::process::id();
    std::thread::scope(|s| -> Result<()> {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (next, fresh, todo, datasets) = (&next, &fresh, &todo, &datasets);
                let part = parts.join(format!("worker-{run_id}-{w}.csv"));
                s.spawn(move || -> Result<()> {
                    loop {
                        let k = next.fetch_add(1, Ordering::SeqCst);
                        let Some(&i) = todo.get(k) else { return Ok(()) };
                        let c = &configs[i];
                        let out = run_experiment(c, &datasets[c.dataset.as_str()], opts.split_seed);
                        write_results(&part, std::slice::from_ref(&out.record), true)?;
                        fresh.lock().expect("worker panicked").push((i, out.record));
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().map_err(|_| Error::Harness("worker panicked".into()))??;
        }
        Ok(())
    })?;

    let fresh = fresh.into_inner().expect("worker panicked");
    let failed = fresh.iter().filter(|(_, r)| r.status == Status::Failed).count();
    let ran = fresh.len();
    for (_, r) in fresh {
        done.insert(record_key(&r.config), r);
    }
    let mut merged = Vec::new();
    let mut seen = HashSet::new();
    for c in configs {
        let k = record_key(c);
        if let Some(r) = done.get(&k) {
            if seen.insert(k) {
                merged.push(r.clone());
            }
        }
    }
    let tmp = opts.out.with_extension("csv.tmp");
    write_results(&tmp, &merged, false)?;
    fs::rename(&tmp, &opts.out)?;
    fs::remove_dir_all(&parts)?;
    Ok(ExecSummary { ran, skipped, failed })
}
