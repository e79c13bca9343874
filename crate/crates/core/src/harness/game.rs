use rayon::prelude::*;
use std::time::Instant;

use super::persist::RunOutput;
use super::{
    keyed_seed, tuple_bits, with_pool, Decoder, ExperimentConfig, ExperimentKind, ExperimentRecord,
    HarnessError, SkippedCell,
};
use crate::estimators::{bernoulli_trial, keep_mask, ratio_error, sample_group_reporter, within_factor};
use crate::joinexec::{exact_eval, row_weights, Answer};
use crate::mathcore::lower_bound;
use crate::relgen::{generate, snap_params, AdversarialInstance};

const STREAM_PRIOR: u64 = 1;
const STREAM_SAMPLE: u64 = 2;
/// Every this-many trials the instance truth is re-evaluated exactly.
const SPOT_CHECK_EVERY: usize = 100;

fn spot_check(inst: &AdversarialInstance, cell: usize, trial: usize) -> Result<(), HarnessError> {
    let exact = match exact_eval(&inst.relations, &inst.query)? {
        Answer::Scalar(v) => v as f64,
        Answer::Groups(g) => g.total() as f64,
    };
    if exact != inst.truth() {
        return Err(HarnessError::TruthMismatch {
            cell,
            trial,
            metadata: inst.truth(),
            exact,
        });
    }
    Ok(())
}

/// Rows of the design region that take part in the join. A hit is
/// detectable from the sample exactly when one of them is kept.
pub fn witness_rows(inst: &AdversarialInstance) -> Result<Vec<usize>, HarnessError> {
    let design = &inst.relations[inst.spec.design_table];
    let w = row_weights(&inst.relations, &inst.query, design.name())?;
    let [lo, hi] = inst.spec.design_rows;
    Ok((lo..hi).filter(|&r| w[r] > 0).collect())
}

struct Outcome {
    hit: bool,
    passed: bool,
    rel_error: Option<f64>,
    bits: f64,
}

struct Trial {
    hit: bool,
    block: u64,
    outcomes: Vec<Outcome>,
}

fn max_value(inst: &AdversarialInstance, table: Option<usize>) -> u64 {
    inst.relations
        .iter()
        .enumerate()
        .filter(|(i, _)| table.is_none_or(|t| t == *i))
        .flat_map(|(_, r)| r.columns().iter().flat_map(|c| c.values.iter().copied()))
        .max()
        .unwrap_or(0)
}

fn play(cfg: &ExperimentConfig, inst: &AdversarialInstance, sample_seed: u64) -> Result<Trial, HarnessError> {
    let eps = inst.spec.params.epsilon;
    let truth = inst.truth();
    let witnesses = witness_rows(inst)?;
    let mut outcomes = Vec::with_capacity(cfg.q_grid.len());
    for &q in &cfg.q_grid {
        let (estimate, kept, bits_per) = match cfg.decoder {
            Decoder::Witness => {
                let d = inst.spec.design_table;
                let rows = inst.relations[d].row_count();
                let mask = keep_mask(rows, q, sample_seed, d);
                let seen = witnesses.iter().any(|&r| mask[r]);
                let kept = mask.iter().filter(|&&k| k).count() as u64;
                let est = if seen { inst.truth_high } else { inst.truth_low };
                (est, kept, tuple_bits(rows, max_value(inst, Some(d))))
            }
            Decoder::Scaled => {
                let rows = inst.relations.iter().map(|r| r.row_count()).max().unwrap_or(1);
                let bits = tuple_bits(rows, max_value(inst, None));
                if inst.spec.kind.is_group_by() {
                    let rep = sample_group_reporter(&inst.relations, &inst.query, q, sample_seed)?;
                    (rep.total(), rep.budget_tuples, bits)
                } else {
                    let r = bernoulli_trial(&inst.relations, &inst.query, q, sample_seed, truth, eps)?;
                    (r.estimate, r.budget_tuples, bits)
                }
            }
        };
        outcomes.push(Outcome {
            hit: inst.branch_hit,
            passed: within_factor(estimate, truth, eps),
            rel_error: ratio_error(estimate, truth),
            bits: (kept * bits_per) as f64,
        });
    }
    Ok(Trial {
        hit: inst.branch_hit,
        block: witnesses.len() as u64,
        outcomes,
    })
}

/// Plays the distinguishing game on every cell and q.
///
/// Per trial: draw the branch (from `hit_prior` if set, else through the
/// uniform draw of `v`), generate the instance, decode a sample at each q
/// and score it with the `(1+ε)` ratio test against the instance truth.
/// Instances and samples are keyed by `(base_seed, cell, trial)`, so every
/// q sees the same instances and nested samples. Every hundredth trial
/// re-evaluates its instance exactly; a truth mismatch aborts the run
/// rather than skipping the cell.
pub fn run_distinguishing_game(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let mut out = RunOutput::default();
    for (ci, cell) in cfg.cells.iter().enumerate() {
        let started = Instant::now();
        let raw = cell.params(cfg.kind);
        let skip = |reason: String| SkippedCell {
            cell: ci,
            params: raw.clone(),
            reason,
        };
        let (params, adjustments) = match snap_params(&raw) {
            Ok(s) => (s.params, s.adjustments),
            Err(e) => {
                log::warn!("cell {ci} skipped: {e}");
                out.skipped.push(skip(e.to_string()));
                continue;
            }
        };
        let bits = lower_bound(&params).map_err(crate::relgen::GenError::from)?.bits;
        let base_opts = cell.gen_options();
        let trials: Result<Vec<Trial>, HarnessError> = with_pool(|| {
            (0..cfg.trials_per_cell)
                .into_par_iter()
                .map(|i| {
                    let seed = keyed_seed(cfg.base_seed, ci as u64, i as u64);
                    let mut opts = base_opts.clone();
                    if let Some(prior) = cfg.hit_prior {
                        let u = (keyed_seed(seed, STREAM_PRIOR, 0) >> 11) as f64 / (1u64 << 53) as f64;
                        opts.force_hit = Some(u < prior);
                    }
                    let inst = generate(&params, &opts, seed)?;
                    if i % SPOT_CHECK_EVERY == 0 {
                        spot_check(&inst, ci, i)?;
                    }
                    play(cfg, &inst, keyed_seed(seed, STREAM_SAMPLE, 0))
                })
                .collect()
        });
        let trials = match trials {
            Ok(t) => t,
            Err(e @ HarnessError::TruthMismatch { .. }) => return Err(e),
            Err(e) => {
                log::warn!("cell {ci} skipped: {e}");
                out.skipped.push(skip(e.to_string()));
                continue;
            }
        };
        let probe = generate(&params, &base_opts, keyed_seed(cfg.base_seed, ci as u64, 0))?;
        let mut blocks: Vec<u64> = trials.iter().filter(|t| t.hit).map(|t| t.block).collect();
        blocks.sort_unstable();
        blocks.dedup();
        let block = match blocks.as_slice() {
            [b] => Some(*b),
            _ => None,
        };
        let runtime_ms = started.elapsed().as_millis() as u64;
        for (qi, &q) in cfg.q_grid.iter().enumerate() {
            let outcomes: Vec<&Outcome> = trials.iter().map(|t| &t.outcomes[qi]).collect();
            let n = outcomes.len();
            let failures = outcomes.iter().filter(|o| !o.passed).count();
            let hit_trials = outcomes.iter().filter(|o| o.hit).count();
            let hit_failures = outcomes.iter().filter(|o| o.hit && !o.passed).count();
            let errs: Vec<f64> = outcomes.iter().filter_map(|o| o.rel_error).collect();
            out.records.push(ExperimentRecord {
                experiment: ExperimentKind::Game,
                cell: ci,
                params: params.clone(),
                q,
                trials: n,
                empirical_failure_rate: failures as f64 / n as f64,
                mean_rel_error: (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64),
                lower_bound_bits: bits,
                budget_bits: outcomes.iter().map(|o| o.bits).sum::<f64>() / n as f64,
                runtime_ms,
                truth_low: probe.truth_low,
                truth_high: probe.truth_high,
                decoder: Some(cfg.decoder),
                hit_trials: Some(hit_trials),
                hit_failures: Some(hit_failures),
                miss_trials: Some(n - hit_trials),
                miss_failures: Some(failures - hit_failures),
                block,
                planned_samples: None,
                plan_to_bound_ratio: None,
                adjustments: adjustments.clone(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::CellSpec;
    use crate::mathcore::QueryKind;

    fn cfg(q_grid: Vec<f64>, trials: usize) -> ExperimentConfig {
        ExperimentConfig {
            experiment: ExperimentKind::Game,
            kind: QueryKind::Count2,
            cells: vec![CellSpec {
                table_sizes: vec![12, 12],
                epsilon: 1.0,
                delta: 0.01,
                b: 9.0,
                sum_max: None,
                lambda: None,
                hh_a: None,
                hh_b: None,
                k: None,
                t: None,
            }],
            sweep: None,
            trials_per_cell: trials,
            q_grid,
            base_seed: 17,
            output_path: None,
            decoder: Decoder::Witness,
            hit_prior: Some(1.0),
        }
    }

    #[test]
    fn full_sample_never_fails() {
        let out = run_distinguishing_game(&cfg(vec![1.0], 40)).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].empirical_failure_rate, 0.0);
        assert_eq!(out.records[0].block, Some(3));
    }

    #[test]
    fn failures_shrink_with_q() {
        let out = run_distinguishing_game(&cfg(vec![0.05, 0.1, 0.3, 0.6], 200)).unwrap();
        let rates: Vec<f64> = out.records.iter().map(|r| r.empirical_failure_rate).collect();
        assert!(rates.windows(2).all(|w| w[0] >= w[1]), "{rates:?}");
        assert_eq!(out.records[0].hit_trials, Some(200));
    }

    #[test]
    fn infeasible_cell_is_skipped() {
        let mut c = cfg(vec![0.5], 5);
        let mut bad = c.cells[0].clone();
        bad.b = 1000.0;
        c.cells.insert(0, bad);
        let out = run_distinguishing_game(&c).unwrap();
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.skipped[0].cell, 0);
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].cell, 1);
    }

    #[test]
    fn snapped_cell_records_adjustment() {
        let mut c = cfg(vec![0.5], 5);
        c.cells[0].b = 10.0;
        let out = run_distinguishing_game(&c).unwrap();
        let r = &out.records[0];
        assert_eq!(r.params.b, 9.0);
        assert_eq!(r.adjustments.len(), 1);
        assert_eq!((r.adjustments[0].from, r.adjustments[0].to), (10.0, 9.0));
    }

    #[test]
    fn scaled_decoder_is_exact_at_full_rate() {
        let mut c = cfg(vec![1.0], 10);
        c.decoder = Decoder::Scaled;
        c.hit_prior = None;
        let out = run_distinguishing_game(&c).unwrap();
        assert_eq!(out.records[0].empirical_failure_rate, 0.0);
    }
}
