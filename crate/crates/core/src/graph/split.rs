use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;

pub const NODE_SPLIT: (f64, f64, f64) = (0.2, 0.1, 0.7);
pub const GRAPH_SPLIT: (f64, f64, f64) = (0.8, 0.1, 0.1);

/// Disjoint train/validation/test indices over nodes or graphs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl Split {
    /// Seeded split of `n` items; each part gets at least one item.
    pub fn of_size(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<Self> {
        let (a, b, c) = ratios;
        if a <= 0.0 || b <= 0.0 || c <= 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split ratios must be positive and sum to 1, got ({a}, {b}, {c})"
            )));
        }
        if n < 3 {
            return Err(Error::InvalidArgument(format!("need at least 3 labeled items to split, got {n}")));
        }
        let mut n_train = ((a * n as f64).round() as usize).max(1);
        let mut n_val = ((b * n as f64).round() as usize).max(1);
        while n_train + n_val >= n {
            if n_train >= n_val {
                n_train -= 1;
            } else {
                n_val -= 1;
            }
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::stream(seed, 0x5917));
        let test = idx.split_off(n_train + n_val);
        let val = idx.split_off(n_train);
        Ok(Self {
            train: idx,
            val,
            test,
            seed,
        })
    }
}

pub fn make_split(d: &Dataset, ratios: (f64, f64, f64), seed: u64) -> Result<Split> {
    Split::of_size(d.num_items(), ratios, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn node_ratios() {
        let s = Split::of_size(100, NODE_SPLIT, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (20, 10, 70));
    }

    #[test]
    fn graph_ratios() {
        let s = Split::of_size(10, GRAPH_SPLIT, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
    }

    #[test]
    fn deterministic() {
        assert_eq!(Split::of_size(50, NODE_SPLIT, 9).unwrap(), Split::of_size(50, NODE_SPLIT, 9).unwrap());
        assert_ne!(Split::of_size(50, NODE_SPLIT, 9).unwrap(), Split::of_size(50, NODE_SPLIT, 10).unwrap());
    }

    #[test]
    fn too_few_items() {
        assert!(Split::of_size(2, NODE_SPLIT, 0).is_err());
        assert!(Split::of_size(10, (0.5, 0.5, 0.0), 0).is_err());
    }

    proptest! {
        #[test]
        fn partitions_everything(n in 3usize..400, seed in any::<u64>(), a in 0.05f64..0.8, b in 0.05f64..0.15) {
            let c = 1.0 - a - b;
            prop_assume!(c > 0.01);
            let s = Split::of_size(n, (a, b, c), seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert!((s.train.len() as f64 - a * n as f64).abs() <= 1.0 + 1e-9 || s.train.len() == 1 || s.test.len() == 1);
            prop_assert!((s.val.len() as f64 - b * n as f64).abs() <= 1.0 + 1e-9 || s.val.len() == 1);
        }
    }
}
