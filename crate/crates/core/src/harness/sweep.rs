use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use super::persist::RunOutput;
use super::{keyed_seed, tuple_bits, with_pool, ExperimentConfig, ExperimentKind, ExperimentRecord, HarnessError, SkippedCell};
use crate::estimators::{bernoulli_trial, default_target_alpha, plan_samples, TrialResult};
use crate::joinexec::{exact_eval, Aggregate, JoinQuery};
use crate::mathcore::{lower_bound, BoundParams};
use crate::relation::Relation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    /// Log-log slope of planned samples against n.
    pub sample_slope: f64,
    /// Log-log slope of lower-bound bits against n.
    pub bound_slope: f64,
    /// max / min of planned samples over lower-bound bits across the grid.
    pub ratio_band: f64,
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// `p` tables of `n` rows with `c = row mod d`, chained on `c`.
fn uniform_instance(p: usize, n: u64, d: u64) -> Result<(Vec<Relation>, JoinQuery), HarnessError> {
    let names: Vec<String> = (1..=p).map(|i| format!("R{i}")).collect();
    let rels = names
        .iter()
        .map(|name| {
            Relation::from_pairs(
                name.as_str(),
                vec![("c", (0..n).map(|r| r % d).collect()), ("id", (0..n).collect())],
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let query = JoinQuery::chain(&refs, &vec![("c", "c"); p - 1], Aggregate::Count);
    Ok((rels, query))
}

/// Compares the sampling plan with the lower bound along `n_grid`.
///
/// Each cell plans q for `p` tables of `n` rows and `B = n^{b_exponent}`,
/// records `p·n·q` next to the lower-bound bits, and measures the plan's
/// failure rate on a uniform instance whose join size is at least B.
pub fn run_upper_lower_sweep(cfg: &ExperimentConfig) -> Result<(RunOutput, SweepSummary), HarnessError> {
    cfg.validate()?;
    let grid = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| HarnessError::Config("missing [sweep] table".into()))?;
    let p = grid.p;
    let alpha = grid
        .target_alpha
        .unwrap_or_else(|| default_target_alpha(grid.epsilon, grid.delta));
    let mut out = RunOutput::default();
    for (ci, &n) in grid.n_grid.iter().enumerate() {
        let started = Instant::now();
        let b = (n as f64).powf(grid.b_exponent).round().max(1.0);
        let params = BoundParams::new(cfg.kind, vec![n; p], grid.epsilon, grid.delta, b);
        let bound = match lower_bound(&params) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("sweep cell {ci} skipped: {e}");
                out.skipped.push(SkippedCell {
                    cell: ci,
                    params,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let plan = plan_samples(p, n, b, alpha)?;
        // d^{p-1} ≤ n^p / B keeps the join size n^p/d^{p-1} at least B
        let d = ((n as f64).powi(p as i32) / b)
            .powf(1.0 / (p as f64 - 1.0))
            .floor()
            .clamp(1.0, n as f64) as u64;
        let (rels, query) = uniform_instance(p, n, d)?;
        let truth = exact_eval(&rels, &query)?
            .scalar()
            .expect("COUNT returns a scalar") as f64;
        let trials: Result<Vec<TrialResult>, _> = with_pool(|| {
            (0..cfg.trials_per_cell)
                .into_par_iter()
                .map(|i| {
                    let seed = keyed_seed(cfg.base_seed, ci as u64, i as u64);
                    bernoulli_trial(&rels, &query, plan.q, seed, truth, grid.epsilon)
                })
                .collect()
        });
        let trials = trials?;
        let count = trials.len() as f64;
        let failures = trials.iter().filter(|t| !t.passed).count();
        let errs: Vec<f64> = trials.iter().filter_map(|t| t.rel_error).collect();
        let per_tuple = tuple_bits(n as usize, n - 1) as f64;
        let kept = trials.iter().map(|t| t.budget_tuples as f64).sum::<f64>() / count;
        out.records.push(ExperimentRecord {
            experiment: ExperimentKind::Sweep,
            cell: ci,
            params,
            q: plan.q,
            trials: trials.len(),
            empirical_failure_rate: failures as f64 / count,
            mean_rel_error: (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64),
            lower_bound_bits: bound.bits,
            budget_bits: kept * per_tuple,
            runtime_ms: started.elapsed().as_millis() as u64,
            truth_low: truth,
            truth_high: truth,
            decoder: None,
            hit_trials: None,
            hit_failures: None,
            miss_trials: None,
            miss_failures: None,
            block: None,
            planned_samples: Some(plan.expected_samples),
            plan_to_bound_ratio: Some(plan.expected_samples / bound.bits),
            adjustments: Vec::new(),
        });
    }
    let summary = summarize(&out.records);
    Ok((out, summary))
}

fn summarize(records: &[ExperimentRecord]) -> SweepSummary {
    let ns: Vec<f64> = records.iter().map(|r| r.params.table_sizes[0] as f64).collect();
    let samples: Vec<f64> = records.iter().filter_map(|r| r.planned_samples).collect();
    let bits: Vec<f64> = records.iter().map(|r| r.lower_bound_bits).collect();
    let ratios: Vec<f64> = records.iter().filter_map(|r| r.plan_to_bound_ratio).collect();
    let max = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    SweepSummary {
        sample_slope: loglog_slope(&ns, &samples).unwrap_or(f64::NAN),
        bound_slope: loglog_slope(&ns, &bits).unwrap_or(f64::NAN),
        ratio_band: if ratios.is_empty() { f64::NAN } else { max / min },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::SweepGrid;
    use crate::mathcore::QueryKind;

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() - 1.5).abs() < 1e-12);
        assert!(loglog_slope(&[1.0], &[1.0]).is_none());
        assert!(loglog_slope(&[1.0, 2.0], &[0.0, 1.0]).is_none());
    }

    #[test]
    fn uniform_instance_size() {
        let (rels, q) = uniform_instance(3, 12, 3).unwrap();
        // 3 values, 4 rows each, 4³ per value
        assert_eq!(exact_eval(&rels, &q).unwrap().scalar(), Some(192));
    }

    #[test]
    fn small_sweep() {
        let cfg = ExperimentConfig {
            experiment: ExperimentKind::Sweep,
            kind: QueryKind::Count2,
            cells: vec![],
            sweep: Some(SweepGrid {
                p: 2,
                n_grid: vec![50, 100, 200],
                b_exponent: 1.0,
                epsilon: 0.5,
                delta: 0.05,
                target_alpha: None,
            }),
            trials_per_cell: 5,
            q_grid: vec![],
            base_seed: 1,
            output_path: None,
            decoder: Default::default(),
            hit_prior: None,
        };
        let (out, summary) = run_upper_lower_sweep(&cfg).unwrap();
        assert_eq!(out.records.len(), 3);
        assert!(out.records.iter().all(|r| r.truth_low >= r.params.b));
        assert!((summary.sample_slope - 1.0).abs() < 0.15, "{summary:?}");
        assert!(summary.ratio_band < 10.0);
    }
}
