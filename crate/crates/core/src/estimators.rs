//! Bernoulli sampling over joins: the sample-size plan, the scaled join
//! size estimator, a one-sided GROUP-BY reporter and the analytic
//! quantities used to judge them.
//!
//! Row `r` of table `i` is kept iff the `r`-th draw of the ChaCha8 stream
//! `(seed, i)` is below `q`. Draws are therefore keyed by
//! `(seed, table, row)`, and for a fixed seed the kept set only grows with `q`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::joinexec::{exact_eval, Aggregate, Answer, ExecError, JoinQuery};
use crate::relation::Relation;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub q: f64,
    pub p: usize,
    pub n: u64,
    pub target_alpha: f64,
    /// `p·n·q`.
    pub expected_samples: f64,
    /// The plan's rate before clamping to `[1/(pn), 1]`.
    pub raw_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub estimate: f64,
    pub truth: f64,
    /// `max(estimate/truth, truth/estimate) − 1`; `None` when exactly one
    /// side is zero.
    pub rel_error: Option<f64>,
    /// Sampled tuples across all tables.
    pub budget_tuples: u64,
    pub seed: u64,
    pub passed: bool,
}

/// Two-sided ratio error; both zero counts as exact.
pub fn ratio_error(estimate: f64, truth: f64) -> Option<f64> {
    if estimate == 0.0 && truth == 0.0 {
        return Some(0.0);
    }
    if estimate <= 0.0 || truth <= 0.0 {
        return None;
    }
    Some((estimate / truth).max(truth / estimate) - 1.0)
}

/// Whether `estimate` is within a `(1+ε)` factor of `truth`.
pub fn within_factor(estimate: f64, truth: f64, epsilon: f64) -> bool {
    matches!(ratio_error(estimate, truth), Some(r) if r <= epsilon * (1.0 + 1e-12))
}

/// Chebyshev ratio `E²/Var` that makes a single estimate an
/// (ε, δ)-approximation: `1/(δ·ε²)`.
pub fn default_target_alpha(epsilon: f64, delta: f64) -> f64 {
    1.0 / (delta * epsilon * epsilon)
}

/// Per-tuple sampling rate `q = min(1, (2·p·α·n^{p−1}/B)^{1/(p−1)})`,
/// never below `1/(pn)`.
pub fn plan_samples(p: usize, n: u64, b: f64, target_alpha: f64) -> Result<SamplingPlan, EstimateError> {
    if p < 2 {
        return Err(EstimateError::InvalidArgument(format!("p = {p} must be at least 2")));
    }
    if !(b >= 1.0) {
        return Err(EstimateError::InvalidArgument(format!("B = {b} must be at least 1")));
    }
    if n == 0 || !(target_alpha > 0.0) {
        return Err(EstimateError::InvalidArgument("n and target_alpha must be positive".into()));
    }
    let pf = p as f64;
    let nf = n as f64;
    let raw_q = (2.0 * pf * target_alpha * nf.powi(p as i32 - 1) / b).powf(1.0 / (pf - 1.0));
    let q = raw_q.min(1.0).max(1.0 / (pf * nf));
    Ok(SamplingPlan {
        q,
        p,
        n,
        target_alpha,
        expected_samples: pf * nf * q,
        raw_q,
    })
}

fn check_q(q: f64) -> Result<(), EstimateError> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(EstimateError::InvalidArgument(format!("q = {q} outside (0, 1]")))
    }
}

/// Keep decisions for the rows of table `table`.
pub fn keep_mask(rows: usize, q: f64, seed: u64, table: usize) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(table as u64);
    (0..rows).map(|_| unit(rng.next_u64()) < q).collect()
}

fn unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Independent Bernoulli(q) samples of every relation; returns the samples
/// and the number of kept tuples.
pub fn sample_relations(rels: &[Relation], q: f64, seed: u64) -> (Vec<Relation>, u64) {
    let mut kept = 0u64;
    let out = rels
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mask = keep_mask(r.row_count(), q, seed, i);
            kept += mask.iter().filter(|&&k| k).count() as u64;
            r.filter_rows(|row| mask[row])
        })
        .collect();
    (out, kept)
}

fn scalar(ans: Answer) -> Result<u64, EstimateError> {
    ans.scalar()
        .ok_or_else(|| EstimateError::InvalidArgument("query does not return a single value".into()))
}

/// One trial against a known truth: `exact_eval(sample)·q^{−p}`.
pub fn bernoulli_trial(
    rels: &[Relation],
    query: &JoinQuery,
    q: f64,
    seed: u64,
    truth: f64,
    epsilon: f64,
) -> Result<TrialResult, EstimateError> {
    check_q(q)?;
    if !matches!(query.aggregate, Aggregate::Count | Aggregate::Sum { .. }) {
        return Err(EstimateError::InvalidArgument(
            "the scaled estimator handles COUNT and SUM".into(),
        ));
    }
    let (sample, kept) = sample_relations(rels, q, seed);
    let count = scalar(exact_eval(&sample, query)?)?;
    let estimate = count as f64 / q.powi(rels.len() as i32);
    Ok(TrialResult {
        estimate,
        truth,
        rel_error: ratio_error(estimate, truth),
        budget_tuples: kept,
        seed,
        passed: within_factor(estimate, truth, epsilon),
    })
}

/// Like [`bernoulli_trial`], computing the truth with [`exact_eval`].
pub fn bernoulli_estimate(
    rels: &[Relation],
    query: &JoinQuery,
    q: f64,
    seed: u64,
    epsilon: f64,
) -> Result<TrialResult, EstimateError> {
    let truth = scalar(exact_eval(rels, query)?)? as f64;
    bernoulli_trial(rels, query, q, seed, truth, epsilon)
}

/// `2p·E·n^{p−1}·q^{p+1} / q^{2p}`, an upper bound on the estimator variance.
pub fn variance_bound(p: usize, n: u64, e_size: f64, q: f64) -> Result<f64, EstimateError> {
    check_q(q)?;
    let floor = 1.0 / (p as f64 * n as f64);
    if q < floor {
        return Err(EstimateError::Precondition(format!("q = {q} below 1/(pn) = {floor}")));
    }
    let pi = p as i32;
    Ok(2.0 * p as f64 * e_size * (n as f64).powi(pi - 1) * q.powi(pi + 1) / q.powi(2 * pi))
}

/// Probability that Bernoulli(q) keeps none of `rows_per_type` rows.
pub fn miss_probability(q: f64, rows_per_type: u64) -> Result<f64, EstimateError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(EstimateError::InvalidArgument(format!("q = {q} outside [0, 1]")));
    }
    if rows_per_type == 0 {
        return Err(EstimateError::InvalidArgument("rows_per_type must be at least 1".into()));
    }
    Ok((1.0 - q).powf(rows_per_type as f64))
}

/// Scaled group sizes reported from a sample.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupEstimate {
    pub groups: BTreeMap<String, f64>,
    pub budget_tuples: u64,
}

impl GroupEstimate {
    pub fn total(&self) -> f64 {
        self.groups.values().sum()
    }
}

/// GROUP-BY over a Bernoulli sample. Only groups witnessed in the sampled
/// join are reported, so a reported group always exists.
pub fn sample_group_reporter(
    rels: &[Relation],
    query: &JoinQuery,
    q: f64,
    seed: u64,
) -> Result<GroupEstimate, EstimateError> {
    check_q(q)?;
    if !matches!(query.aggregate, Aggregate::GroupBy { .. }) {
        return Err(EstimateError::InvalidArgument("query is not a GROUP BY".into()));
    }
    let (sample, kept) = sample_relations(rels, q, seed);
    let ans = exact_eval(&sample, query)?;
    let scale = q.powi(rels.len() as i32);
    let groups = ans
        .groups()
        .map(|g| g.groups.iter().map(|(k, &v)| (k.clone(), v as f64 / scale)).collect())
        .unwrap_or_default();
    Ok(GroupEstimate {
        groups,
        budget_tuples: kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (Vec<Relation>, JoinQuery) {
        let rels = vec![
            Relation::from_pairs("R1", vec![("c", vec![1, 1]), ("id", vec![0, 1])]).unwrap(),
            Relation::from_pairs("R2", vec![("c", vec![1]), ("id", vec![0])]).unwrap(),
        ];
        (rels, JoinQuery::chain(&["R1", "R2"], &[("c", "c")], Aggregate::Count))
    }

    #[test]
    fn plan_example() {
        let plan = plan_samples(2, 1000, 1e6, 20.0).unwrap();
        assert!((plan.q - 0.08).abs() < 1e-12);
        assert!((plan.expected_samples - 160.0).abs() < 1e-9);
        assert_eq!(plan_samples(2, 1000, 1.0, 20.0).unwrap().q, 1.0);
        let floor = plan_samples(2, 10, 1e12, 1.0).unwrap();
        assert_eq!(floor.q, 1.0 / 20.0);
        assert!(plan_samples(1, 10, 1.0, 1.0).is_err());
        assert!(plan_samples(2, 10, 0.5, 1.0).is_err());
    }

    #[test]
    fn full_sample_is_exact() {
        let (rels, q) = tiny();
        let r = bernoulli_estimate(&rels, &q, 1.0, 3, 0.1).unwrap();
        assert_eq!(r.estimate, 2.0);
        assert_eq!(r.rel_error, Some(0.0));
        assert!(r.passed);
        assert_eq!(r.budget_tuples, 3);
    }

    #[test]
    fn masks_grow_with_q() {
        let lo = keep_mask(500, 0.2, 11, 1);
        let hi = keep_mask(500, 0.6, 11, 1);
        assert!(lo.iter().zip(&hi).all(|(&a, &b)| !a || b));
        assert_ne!(keep_mask(500, 0.5, 11, 0), keep_mask(500, 0.5, 11, 1));
    }

    #[test]
    fn zero_estimate_fails() {
        assert_eq!(ratio_error(0.0, 5.0), None);
        assert!(!within_factor(0.0, 5.0, 100.0));
        assert!(within_factor(0.0, 0.0, 0.1));
        assert!(within_factor(3.0, 2.0, 0.5));
        assert!(!within_factor(3.1, 2.0, 0.5));
    }

    #[test]
    fn variance_bound_scaling() {
        assert_eq!(variance_bound(2, 10, 5.0, 1.0).unwrap(), 200.0);
        let a = variance_bound(3, 100, 50.0, 0.2).unwrap();
        let b = variance_bound(3, 100, 50.0, 0.1).unwrap();
        assert!((b / a - 4.0).abs() < 1e-9);
        assert!(variance_bound(2, 10, 5.0, 0.01).is_err());
    }

    #[test]
    fn miss_probability_values() {
        assert_eq!(miss_probability(1.0, 4).unwrap(), 0.0);
        assert_eq!(miss_probability(0.0, 4).unwrap(), 1.0);
        assert_eq!(miss_probability(0.5, 3).unwrap(), 0.125);
        assert!(miss_probability(0.5, 0).is_err());
    }

    #[test]
    fn reporter_full_sample() {
        let (rels, q) = tiny();
        let g = q.with_aggregate(Aggregate::GroupBy {
            columns: vec![crate::joinexec::ColumnRef::new("R1", "c")],
        });
        let rep = sample_group_reporter(&rels, &g, 1.0, 0).unwrap();
        assert_eq!(rep.groups, BTreeMap::from([("1".to_string(), 2.0)]));
        assert!(sample_group_reporter(&rels, &q, 1.0, 0).is_err());
    }
}
