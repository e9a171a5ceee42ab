use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Axis, ResultRecord};
use crate::error::Result;

pub const TIE_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub axis: String,
    pub instantiation: String,
    pub rank: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRank {
    pub axis: String,
    pub instantiation: String,
    pub mean_rank: f64,
    pub groups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingTable {
    pub tie_threshold: f64,
    /// Rank distribution per axis and instantiation.
    pub rows: Vec<RankRow>,
    pub mean_ranks: Vec<MeanRank>,
    pub complete_groups: usize,
    pub excluded_groups: usize,
}

/// Competition ranks of `scores` (higher is better), in input order. A
/// score within `tie` of the best score of the current block joins it.
pub fn competition_ranks(scores: &[f64], tie: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; scores.len()];
    let mut block_top = f64::NAN;
    let mut block_rank = 0;
    for (pos, &i) in order.iter().enumerate() {
        if pos == 0 || !(block_top - scores[i] < tie) {
            block_top = scores[i];
            block_rank = pos + 1;
        }
        ranks[i] = block_rank;
    }
    ranks
}

/// Ranks each complete controlled group. A group is keyed by dataset and
/// pair id; it is complete when every member succeeded, members vary the
/// named axis over distinct values, and it has as many members as the
/// largest group seen for that axis.
pub fn rank_pairs(records: &[ResultRecord], tie_threshold: f64) -> Result<RankingTable> {
    let mut groups: BTreeMap<(String, String), Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        if let (Some(p), Some(_)) = (&r.config.pair_id, &r.config.varied_module) {
            groups.entry((r.config.dataset.clone(), p.clone())).or_default().push(r);
        }
    }
    let mut expected: BTreeMap<String, usize> = BTreeMap::new();
    for members in groups.values() {
        let axis = members[0].config.varied_module.clone().unwrap_or_default();
        let e = expected.entry(axis).or_default();
        *e = (*e).max(members.len());
    }

    let mut dist: BTreeMap<(String, String, usize), usize> = BTreeMap::new();
    let mut sums: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    let (mut complete, mut excluded) = (0, 0);
    for members in groups.values() {
        let axis_name = members[0].config.varied_module.clone().unwrap_or_default();
        let Ok(axis) = axis_name.parse::<Axis>() else {
            excluded += 1;
            continue;
        };
        let values: Vec<String> = members.iter().map(|r| axis.value(&r.config.spec)).collect();
        let mut distinct = values.clone();
        distinct.sort();
        distinct.dedup();
        let ok = members.iter().all(|r| r.is_ok())
            && members.iter().all(|r| r.config.varied_module.as_deref() == Some(axis_name.as_str()))
            && distinct.len() == members.len()
            && members.len() == expected[&axis_name]
            && members.len() >= 2;
        if !ok {
            excluded += 1;
            continue;
        }
        complete += 1;
        let scores: Vec<f64> = members.iter().map(|r| r.ok_score().unwrap_or(0.0)).collect();
        for (v, rank) in values.into_iter().zip(competition_ranks(&scores, tie_threshold)) {
            *dist.entry((axis_name.clone(), v.clone(), rank)).or_default() += 1;
            let s = sums.entry((axis_name.clone(), v)).or_default();
            s.0 += rank as f64;
            s.1 += 1;
        }
    }
    if excluded > 0 {
        log::warn!("{excluded} incomplete or failed groups excluded from ranking");
    }
    Ok(RankingTable {
        tie_threshold,
        rows: dist
            .into_iter()
            .map(|((axis, instantiation, rank), count)| RankRow {
                axis,
                instantiation,
                rank,
                count,
            })
            .collect(),
        mean_ranks: sums
            .into_iter()
            .map(|((axis, instantiation), (total, n))| MeanRank {
                axis,
                instantiation,
                mean_rank: total / n as f64,
                groups: n,
            })
            .collect(),
        complete_groups: complete,
        excluded_groups: excluded,
    })
}

impl RankingTable {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Groups in which `instantiation` of `axis` took rank 1.
    pub fn rank_one_count(&self, axis: &str, instantiation: &str) -> usize {
        self.rows
            .iter()
            .filter(|r| r.axis == axis && r.instantiation == instantiation && r.rank == 1)
            .map(|r| r.count)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{ExperimentConfig, Status};
    use crate::trainer::FrameworkSpec;
    use proptest::prelude::*;

    #[test]
    fn tie_rules() {
        assert_eq!(competition_ranks(&[0.805, 0.801], 0.01), [1, 1]);
        assert_eq!(competition_ranks(&[0.9, 0.7, 0.5], 0.01), [1, 2, 3]);
        assert_eq!(competition_ranks(&[0.90, 0.895, 0.70], 0.01), [1, 1, 3]);
        assert_eq!(competition_ranks(&[0.70, 0.90, 0.895], 0.01), [3, 1, 1]);
        // a gap of exactly the threshold is not a tie
        assert_eq!(competition_ranks(&[0.5, 0.25], 0.25), [1, 2]);
    }

    fn rec(pair: &str, est: &str, score: Option<f64>) -> ResultRecord {
        let mut spec = FrameworkSpec::default();
        Axis::Estimator.set(&mut spec, est).unwrap();
        ResultRecord {
            config: ExperimentConfig {
                spec,
                dataset: "d".into(),
                pair_id: Some(pair.into()),
                varied_module: Some("estimator".into()),
            },
            score,
            wall_time_ms: 0.0,
            status: if score.is_some() { Status::Ok } else { Status::Failed },
            error: None,
        }
    }

    #[test]
    fn pairs_and_exclusions() {
        let rs = vec![
            rec("a", "jsd", Some(0.805)),
            rec("a", "infonce", Some(0.801)),
            rec("b", "jsd", Some(0.6)),
            rec("b", "infonce", Some(0.9)),
            rec("c", "jsd", Some(0.6)),
            rec("c", "infonce", None),
            rec("d", "jsd", Some(0.6)),
        ];
        let t = rank_pairs(&rs, TIE_THRESHOLD).unwrap();
        assert_eq!((t.complete_groups, t.excluded_groups), (2, 2));
        assert_eq!(t.rank_one_count("estimator", "jsd"), 1);
        assert_eq!(t.rank_one_count("estimator", "infonce"), 2);
        let m: Vec<f64> = t.mean_ranks.iter().map(|m| m.mean_rank).collect();
        assert_eq!(m, [1.0, 1.5]);
    }

    proptest! {
        #[test]
        fn rank_one_counts_cover_groups(scores in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..40)) {
            let mut rs = Vec::new();
            for (i, (a, b)) in scores.iter().enumerate() {
                rs.push(rec(&i.to_string(), "jsd", Some(*a)));
                rs.push(rec(&i.to_string(), "infonce", Some(*b)));
            }
            let t = rank_pairs(&rs, TIE_THRESHOLD).unwrap();
            let ones = t.rank_one_count("estimator", "jsd") + t.rank_one_count("estimator", "infonce");
            prop_assert!(ones >= t.complete_groups);
            prop_assert_eq!(t.complete_groups, scores.len());
        }

        #[test]
        fn ranks_are_competition_ranks(scores in proptest::collection::vec(0.0f64..1.0, 1..8)) {
            let r = competition_ranks(&scores, TIE_THRESHOLD);
            prop_assert_eq!(r.iter().filter(|&&x| x == 1).count() >= 1, true);
            for (i, &ri) in r.iter().enumerate() {
                let better = scores.iter().filter(|&&s| s > scores[i]).count();
                prop_assert!(ri <= better + 1);
            }
        }
    }
}
