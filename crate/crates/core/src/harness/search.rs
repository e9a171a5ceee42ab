use super::{run_experiment, ExperimentConfig, ResultRecord, SearchSpace};
use crate::error::{Error, Result};
use crate::graph::Dataset;
use crate::rng;

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best_index: usize,
    /// Successful runs by descending score, then failures, each in draw
    /// order on ties.
    pub leaderboard: Vec<ResultRecord>,
}

impl SearchResult {
    pub fn best(&self) -> &ResultRecord {
        &self.leaderboard[self.best_index]
    }
}

/// `budget` uniform draws from `space`, each trained and evaluated on
/// `dataset` with the split drawn from `seed`.
pub fn best_model_search(space: &SearchSpace, dataset: &Dataset, name: &str, budget: usize, seed: u64) -> Result<SearchResult> {
    if budget == 0 {
        return Err(Error::Harness("budget must be at least 1".into()));
    }
    space.validate()?;
    let mut runs = Vec::with_capacity(budget);
    for i in 0..budget {
        let spec = space.sample(&mut rng::stream(seed, 0x5ea7 + i as u64))?;
        runs.push(run_experiment(&ExperimentConfig::new(spec, name), dataset, seed).record);
    }
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (runs[a].ok_score(), runs[b].ok_score());
        match (sa, sb) {
            (Some(x), Some(y)) => y.total_cmp(&x),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        }
        .then(a.cmp(&b))
    });
    let leaderboard: Vec<ResultRecord> = order.into_iter().map(|i| runs[i].clone()).collect();
    if !leaderboard[0].is_ok() {
        let mut reasons: Vec<String> = leaderboard.iter().filter_map(|r| r.error.clone()).collect();
        reasons.sort();
        reasons.dedup();
        return Err(Error::Harness(format!("all {budget} runs failed: {}", reasons.join("; "))));
    }
    Ok(SearchResult {
        best_index: 0,
        leaderboard,
    })
}
