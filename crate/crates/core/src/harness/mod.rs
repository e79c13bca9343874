//! Experiment driver: distinguishing games on adversarial instances,
//! upper/lower bound sweeps, and run directories on disk.
//!
//! The experiments exercise one concrete summary scheme (Bernoulli
//! sampling). A failing scheme here says nothing about schemes in general;
//! the bounds in [`crate::mathcore`] are what cover those.

mod game;
mod persist;
mod sweep;

pub use game::{run_distinguishing_game, witness_rows};
pub use persist::{
    load_instance, read_jsonl, read_manifest, save_instance, verify_run, write_run, Manifest,
    RunOutput, VerifyReport,
};
pub use sweep::{loglog_slope, run_upper_lower_sweep, SweepSummary};

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

use crate::estimators::EstimateError;
use crate::joinexec::ExecError;
use crate::mathcore::{BoundParams, QueryKind};
use crate::relation::RelationError;
use crate::relgen::{Adjustment, GenError, GenOptions};

/// Overrides the configured output directory.
pub const ENV_OUTPUT: &str = "JOINBOUND_OUTPUT";
/// Number of worker threads (default: all cores).
pub const ENV_THREADS: &str = "JOINBOUND_THREADS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("cell {cell} trial {trial}: metadata truth {metadata} but exact evaluation gives {exact}")]
    TruthMismatch {
        cell: usize,
        trial: usize,
        metadata: f64,
        exact: f64,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into().display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Game,
    Sweep,
}

/// How the game turns a sample into an answer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoder {
    /// Only the design table is sampled; the answer is `truth_high` iff a
    /// kept design row has a join partner, else `truth_low`.
    #[default]
    Witness,
    /// Every table is sampled and the sample join is scaled by `q^{−p}`.
    Scaled,
}

/// One parameter cell of a game. The query kind comes from the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub table_sizes: Vec<u64>,
    pub epsilon: f64,
    pub delta: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sum_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hh_a: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hh_b: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
}

impl CellSpec {
    pub fn params(&self, kind: QueryKind) -> BoundParams {
        BoundParams {
            query_kind: kind,
            table_sizes: self.table_sizes.clone(),
            epsilon: self.epsilon,
            delta: self.delta,
            b: self.b,
            sum_max: self.sum_max,
            lambda: self.lambda,
            hh_a: self.hh_a.clone(),
            hh_b: self.hh_b.clone(),
        }
    }

    pub fn gen_options(&self) -> GenOptions {
        GenOptions {
            k: self.k,
            t: self.t,
            ..Default::default()
        }
    }
}

/// Grid of a COUNT sweep: `p` tables of `n` rows with `B = n^{b_exponent}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub p: usize,
    pub n_grid: Vec<u64>,
    pub b_exponent: f64,
    pub epsilon: f64,
    pub delta: f64,
    /// Chebyshev ratio E²/Var; defaults to 1/(δ·ε²).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_alpha: Option<f64>,
}

/// A whole experiment, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub kind: QueryKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cells: Vec<CellSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepGrid>,
    pub trials_per_cell: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub q_grid: Vec<f64>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<String>,
    #[serde(default)]
    pub decoder: Decoder,
    /// Probability of drawing the hit branch; `None` draws `v` uniformly
    /// from `T`, which hits with probability `k/t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hit_prior: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.trials_per_cell == 0 {
            return bad("trials_per_cell must be at least 1");
        }
        if let Some(p) = self.hit_prior {
            if !(0.0..=1.0).contains(&p) {
                return bad("hit_prior must lie in [0, 1]");
            }
        }
        match self.experiment {
            ExperimentKind::Game => {
                if self.cells.is_empty() {
                    return bad("a game needs at least one [[cells]] entry");
                }
                if self.q_grid.is_empty() {
                    return bad("a game needs a non-empty q_grid");
                }
                if self.q_grid.iter().any(|&q| !(q > 0.0 && q <= 1.0)) {
                    return bad("every q must lie in (0, 1]");
                }
            }
            ExperimentKind::Sweep => {
                let Some(grid) = &self.sweep else {
                    return bad("a sweep needs a [sweep] table");
                };
                if grid.n_grid.is_empty() {
                    return bad("sweep.n_grid must be non-empty");
                }
                if grid.p < 2 {
                    return bad("sweep.p must be at least 2");
                }
                let ok = match self.kind {
                    QueryKind::Count2 => grid.p == 2,
                    QueryKind::CountP => true,
                    _ => false,
                };
                if !ok {
                    return bad("sweeps run COUNT2 (p = 2) or COUNTP");
                }
            }
        }
        Ok(())
    }

    /// Output directory after applying [`ENV_OUTPUT`].
    pub fn resolved_output(&self) -> Option<PathBuf> {
        std::env::var(ENV_OUTPUT)
            .ok()
            .filter(|s| !s.is_empty())
            .or_else(|| self.output_path.clone())
            .map(PathBuf::from)
    }
}

/// Outcome of one (cell, q) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment: ExperimentKind,
    pub cell: usize,
    pub params: BoundParams,
    pub q: f64,
    pub trials: usize,
    pub empirical_failure_rate: f64,
    /// Mean ratio error over trials where it is defined.
    pub mean_rel_error: Option<f64>,
    pub lower_bound_bits: f64,
    /// Mean over trials of kept tuples × (⌈log₂ n⌉ + value width).
    pub budget_bits: f64,
    pub runtime_ms: u64,
    pub truth_low: f64,
    pub truth_high: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder: Option<Decoder>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hit_trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hit_failures: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub miss_trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub miss_failures: Option<usize>,
    /// Design rows joining on a hit (game, when constant across trials).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<u64>,
    /// Planned sample count `p·n·q` (sweep).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planned_samples: Option<f64>,
    /// `planned_samples / lower_bound_bits` (sweep).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_to_bound_ratio: Option<f64>,
    /// Snapping applied to the configured cell before it ran.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub adjustments: Vec<Adjustment>,
}

impl ExperimentRecord {
    pub fn hit_failure_rate(&self) -> Option<f64> {
        match (self.hit_failures, self.hit_trials) {
            (Some(f), Some(t)) if t > 0 => Some(f as f64 / t as f64),
            _ => None,
        }
    }

    /// Equality ignoring `runtime_ms`.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.runtime_ms = other.runtime_ms;
        &a == other
    }
}

/// A cell that could not run, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub cell: usize,
    pub params: BoundParams,
    pub reason: String,
}

/// Seed for `(stream, index)` under `base`: the `index`-th word pair of the
/// ChaCha8 stream `stream`.
pub fn keyed_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.set_word_pos(2 * index as u128);
    rng.next_u64()
}

/// Runs `f` on a pool sized by [`ENV_THREADS`] when set.
pub(crate) fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let threads = std::env::var(ENV_THREADS).ok().and_then(|s| s.parse::<usize>().ok());
    match threads {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}

/// Bits to address one of `rows` rows plus the bits of the widest value.
pub(crate) fn tuple_bits(rows: usize, max_value: u64) -> u64 {
    let index_bits = (rows.max(1) as f64).log2().ceil() as u64;
    let value_bits = 64 - max_value.leading_zeros() as u64;
    index_bits + value_bits.max(1)
}

/// Runs whichever experiment the config names; sweeps also return their
/// summary.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(RunOutput, Option<SweepSummary>), HarnessError> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentKind::Game => Ok((run_distinguishing_game(cfg)?, None)),
        ExperimentKind::Sweep => run_upper_lower_sweep(cfg).map(|(out, s)| (out, Some(s))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GAME: &str = r#"
experiment = "game"
kind = "COUNT2"
trials_per_cell = 10
q_grid = [0.1, 1.0]
base_seed = 4

[[cells]]
table_sizes = [12, 12]
epsilon = 1.0
delta = 0.01
B = 9
"#;

    #[test]
    fn parse_game_config() {
        let cfg = ExperimentConfig::from_toml(GAME).unwrap();
        assert_eq!(cfg.decoder, Decoder::Witness);
        assert_eq!(cfg.cells[0].params(cfg.kind).b, 9.0);
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn invalid_configs() {
        let empty_grid = GAME.replace("q_grid = [0.1, 1.0]", "q_grid = []");
        assert!(ExperimentConfig::from_toml(&empty_grid).is_err());
        let zero = GAME.replace("trials_per_cell = 10", "trials_per_cell = 0");
        assert!(ExperimentConfig::from_toml(&zero).is_err());
        let typo = GAME.replace("epsilon", "epsilom");
        assert!(ExperimentConfig::from_toml(&typo).is_err());
    }

    #[test]
    fn keyed_seeds_are_stable() {
        assert_eq!(keyed_seed(1, 2, 3), keyed_seed(1, 2, 3));
        assert_ne!(keyed_seed(1, 2, 3), keyed_seed(1, 2, 4));
        assert_ne!(keyed_seed(1, 2, 3), keyed_seed(1, 3, 3));
    }

    #[test]
    fn tuple_bit_widths() {
        assert_eq!(tuple_bits(12, 38), 4 + 6);
        assert_eq!(tuple_bits(1, 0), 1);
    }
}
