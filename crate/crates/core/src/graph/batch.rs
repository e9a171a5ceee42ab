use rand::seq::SliceRandom;

use super::{Dataset, Task};
use crate::error::{Error, Result};
use crate::rng;

/// Ordered batches of graph indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub batches: Vec<Vec<usize>>,
    pub node_budget: usize,
}

/// Greedily packs graphs, in seeded-shuffled order, into batches of at most
/// `node_budget` nodes. A graph larger than the budget forms its own batch.
/// Node tasks always yield a single batch holding graph 0.
pub fn plan_batches(d: &Dataset, node_budget: usize, seed: u64) -> Result<BatchPlan> {
    if node_budget == 0 {
        return Err(Error::InvalidArgument("node_budget must be at least 1".into()));
    }
    if d.task == Task::NodeClassification {
        return Ok(BatchPlan {
            batches: vec![vec![0]],
            node_budget,
        });
    }
    let mut order: Vec<usize> = (0..d.graphs.len()).collect();
    order.shuffle(&mut rng::stream(seed, 0xba7c));

    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut used = 0;
    for gi in order {
        let n = d.graphs[gi].num_nodes();
        if n > node_budget {
            batches.push(vec![gi]);
            continue;
        }
        if used + n > node_budget {
            batches.push(std::mem::take(&mut current));
            used = 0;
        }
        current.push(gi);
        used += n;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    Ok(BatchPlan { batches, node_budget })
}
