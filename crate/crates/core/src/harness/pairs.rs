use super::{Axis, ExperimentConfig, SearchSpace};
use crate::error::{Error, Result};
use crate::rng;

/// `m` base draws with `axis` fixed to its first value, each cloned once per
/// other value. Members of a group share `pair_id` and are adjacent.
pub fn generate_controlled_pairs(
    space: &SearchSpace,
    axis: Axis,
    m: usize,
    dataset: &str,
    seed: u64,
) -> Result<Vec<ExperimentConfig>> {
    space.validate()?;
    let values = space.axis_values(axis);
    if values.len() < 2 {
        return Err(Error::Harness(format!("axis {axis} needs at least two values in the space, found {}", values.len())));
    }
    if m == 0 {
        return Err(Error::Harness("m must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(m * values.len());
    for i in 0..m {
        let base = space.sample(&mut rng::stream(seed, i as u64))?;
        let pair_id = format!("{axis}-{seed}-{i}");
        for v in &values {
            let mut spec = base.clone();
            axis.set(&mut spec, v)?;
            out.push(ExperimentConfig {
                spec,
                dataset: dataset.to_string(),
                pair_id: Some(pair_id.clone()),
                varied_module: Some(axis.to_string()),
            });
        }
    }
    Ok(out)
}
