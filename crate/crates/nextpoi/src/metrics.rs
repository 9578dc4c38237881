//! Rank extraction and aggregate accuracy metrics.
//!
//! Acc@k is the fraction of test cases whose ground truth appears in the
//! top-k recommendations; MRR is the mean reciprocal rank. A ground truth
//! missing from the list contributes zero to both — with top-10 lists the
//! reciprocal of an unlisted item is taken as zero rather than excluding the
//! case.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::OrderingStrategy;
use crate::prompting::RequirementFlags;
use crate::response::ParseStatus;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no outcomes to aggregate")]
    EmptyOutcomes,
}

/// The scored result of one test case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub trajectory_id: String,
    /// 1-based rank of the ground truth in the recommendation, if listed.
    pub rank: Option<u32>,
    pub parse_status: ParseStatus,
    pub latency_ms: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub method: String,
    pub flags: RequirementFlags,
    pub ordering: OrderingStrategy,
}

/// Aggregated metrics over a set of outcomes.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub n: usize,
    pub acc1: f64,
    pub acc5: f64,
    pub acc10: f64,
    pub mrr: f64,
    pub clean: usize,
    pub recovered: usize,
    pub failed: usize,
    /// Echo of the configuration that produced the outcomes, when known.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub config: serde_json::Value,
}

impl EvalReport {
    /// The metric fields only, for comparisons across configurations.
    pub fn metrics(&self) -> (usize, f64, f64, f64, f64, usize, usize, usize) {
        (self.n, self.acc1, self.acc5, self.acc10, self.mrr, self.clean, self.recovered, self.failed)
    }
}

/// 1-based position of the ground truth in a sanitized id list.
pub fn rank_of_ground_truth(ids: &[String], ground_truth: &str) -> Option<u32> {
    ids.iter().position(|id| id == ground_truth).map(|i| i as u32 + 1)
}

/// Averages hits and reciprocal ranks over all outcomes. Every outcome counts
/// toward `n`, including failed parses.
pub fn aggregate(outcomes: &[EvalOutcome]) -> Result<EvalReport, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::EmptyOutcomes);
    }
    let n = outcomes.len();
    let mut hits1 = 0usize;
    let mut hits5 = 0usize;
    let mut hits10 = 0usize;
    let mut ranks = Vec::new();
    let mut clean = 0usize;
    let mut recovered = 0usize;
    let mut failed = 0usize;

    for outcome in outcomes {
        if let Some(rank) = outcome.rank {
            debug_assert!(rank >= 1);
            if rank <= 1 {
                hits1 += 1;
            }
            if rank <= 5 {
                hits5 += 1;
            }
            if rank <= 10 {
                hits10 += 1;
            }
            ranks.push(rank);
        }
        match outcome.parse_status {
            ParseStatus::Clean => clean += 1,
            ParseStatus::Recovered => recovered += 1,
            ParseStatus::Failed => failed += 1,
        }
    }
    // Summing reciprocals in sorted rank order makes the MRR bit-identical
    // under any permutation of the outcomes.
    ranks.sort_unstable();
    let reciprocal_sum: f64 = ranks.iter().map(|&r| 1.0 / f64::from(r)).sum();

    Ok(EvalReport {
        n,
        acc1: hits1 as f64 / n as f64,
        acc5: hits5 as f64 / n as f64,
        acc10: hits10 as f64 / n as f64,
        mrr: reciprocal_sum / n as f64,
        clean,
        recovered,
        failed,
        config: serde_json::Value::Null,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    pub(crate) fn outcome(trajectory_id: &str, rank: Option<u32>) -> EvalOutcome {
        EvalOutcome {
            trajectory_id: trajectory_id.into(),
            rank,
            parse_status: ParseStatus::Clean,
            latency_ms: 0,
            prompt_tokens: 0,
            completion_tokens: 0,
            method: "dist".into(),
            flags: RequirementFlags::ALL,
            ordering: OrderingStrategy::DistAsc,
        }
    }

    #[test]
    fn rank_is_one_based() {
        let ids: Vec<String> = ["g", "x", "y"].iter().map(|s| s.to_string()).collect();
        assert_eq!(rank_of_ground_truth(&ids, "g"), Some(1));
        assert_eq!(rank_of_ground_truth(&ids, "y"), Some(3));
        assert_eq!(rank_of_ground_truth(&ids, "missing"), None);
    }

    #[test]
    fn rank_from_listed_recommendation() {
        let ids: Vec<String> = ["1395", "1494", "646", "327", "4853", "2442", "2932", "2222", "212", "1043"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(rank_of_ground_truth(&ids, "1494"), Some(2));
    }

    #[test]
    fn aggregate_counts_absent_as_zero() {
        let outcomes = vec![outcome("a", Some(1)), outcome("b", Some(1)), outcome("c", None)];
        let report = aggregate(&outcomes).unwrap();
        assert!((report.acc1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((report.mrr - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn aggregate_simple_ranks() {
        let outcomes = vec![outcome("a", Some(1)), outcome("b", Some(2)), outcome("c", Some(4))];
        let report = aggregate(&outcomes).unwrap();
        assert!((report.mrr - 7.0 / 12.0).abs() < 1e-15);
        assert_eq!(report.acc1, 1.0 / 3.0);
        assert_eq!(report.acc5, 1.0);
    }

    #[test]
    fn aggregate_rejects_empty() {
        assert_eq!(aggregate(&[]), Err(MetricsError::EmptyOutcomes));
    }

    /// Deliberately naive re-implementation used as the aggregation oracle.
    pub(crate) fn naive_aggregate(ranks: &[Option<u32>]) -> (f64, f64, f64, f64) {
        let n = ranks.len() as f64;
        let mut acc = [0.0f64; 3];
        let mut mrr = 0.0f64;
        for rank in ranks {
            for (slot, k) in [(0, 1u32), (1, 5), (2, 10)] {
                if let Some(r) = rank {
                    if *r <= k {
                        acc[slot] += 1.0;
                    }
                }
            }
            if let Some(r) = rank {
                mrr += 1.0 / f64::from(*r);
            }
        }
        (acc[0] / n, acc[1] / n, acc[2] / n, mrr / n)
    }

    #[test]
    fn aggregate_matches_naive_oracle_on_random_sets() {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let n = rng.gen_range(1..50);
            let ranks: Vec<Option<u32>> = (0..n)
                .map(|_| if rng.gen_bool(0.3) { None } else { Some(rng.gen_range(1..=101)) })
                .collect();
            let outcomes: Vec<EvalOutcome> =
                ranks.iter().enumerate().map(|(i, r)| outcome(&format!("t{i}"), *r)).collect();
            let report = aggregate(&outcomes).unwrap();
            let (acc1, acc5, acc10, mrr) = naive_aggregate(&ranks);
            assert!((report.acc1 - acc1).abs() < 1e-12);
            assert!((report.acc5 - acc5).abs() < 1e-12);
            assert!((report.acc10 - acc10).abs() < 1e-12);
            assert!((report.mrr - mrr).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_are_bounded_monotone_and_order_free() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.gen_range(1..40);
            let mut outcomes: Vec<EvalOutcome> = (0..n)
                .map(|i| {
                    outcome(&format!("t{i}"), if rng.gen_bool(0.25) { None } else { Some(rng.gen_range(1..=30)) })
                })
                .collect();
            let report = aggregate(&outcomes).unwrap();
            for value in [report.acc1, report.acc5, report.acc10, report.mrr] {
                assert!((0.0..=1.0).contains(&value));
            }
            assert!(report.acc1 <= report.acc5 && report.acc5 <= report.acc10);
            assert!(report.mrr >= report.acc1);

            outcomes.shuffle(&mut rng);
            let shuffled = aggregate(&outcomes).unwrap();
            assert_eq!(shuffled.metrics(), report.metrics());
        }
    }

    #[test]
    fn failed_parses_count_in_n() {
        let mut bad = outcome("x", None);
        bad.parse_status = ParseStatus::Failed;
        let outcomes = vec![outcome("a", Some(1)), bad];
        let report = aggregate(&outcomes).unwrap();
        assert_eq!(report.n, 2);
        assert_eq!(report.acc1, 0.5);
        assert_eq!(report.failed, 1);
    }
}
