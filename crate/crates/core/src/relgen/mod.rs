//! Adversarial database instances.
//!
//! Every generator builds the two-branch distribution behind one lower
//! bound: a "probe" side that carries a single type `v` drawn from
//! `T = {1..t}`, and a "design" table whose join column spells out a subset
//! `S` of `T` drawn from a (k, α, β)-set. The instance answer is `truth_low`
//! when `v ∉ S` and `truth_high` when `v ∈ S`, and no single column's value
//! frequencies reveal which.
//!
//! Values: `0` is the filler type, `1..=t` are design types, and anything
//! above `t` is a fresh value recorded in [`AdversarialSpec::fresh_values`].

mod count;
mod freqs;
mod snap;
mod star;

pub use count::{gen_count, gen_count_distinct, gen_group_by};
pub use freqs::{gen_chain4, gen_heavy_hitter};
pub use snap::{integral, snap_params, Snapped};
pub use star::gen_pk_fk;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::joinexec::JoinQuery;
use crate::kabset::{self, KabError, KabSet};
use crate::mathcore::{beta_bound, BoundParams, MathError, QueryKind};
use crate::relation::{Relation, RelationError};

/// Upper limit on the default design-family size.
pub const DEFAULT_MAX_FAMILY: usize = 64;

#[derive(Debug, Error)]
pub enum GenError {
    #[error(transparent)]
    Math(#[from] MathError),
    #[error("not integral: {message}")]
    Snap {
        message: String,
        fractional: Vec<(String, f64)>,
    },
    #[error(transparent)]
    Kab(#[from] KabError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Relation(#[from] RelationError),
}

/// Overrides for desk-scale instances. Everything defaults to the
/// derivation used by the corresponding lower bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenOptions {
    pub k: Option<usize>,
    pub t: Option<usize>,
    /// Use this subset as `S` instead of drawing one from a constructed family.
    pub subset: Option<Vec<u32>>,
    /// Force the probe type `v`.
    pub branch_value: Option<u32>,
    /// Draw `v` from `S` (true) or from `T \ S` (false) instead of from `T`.
    pub force_hit: Option<bool>,
    pub family_size: Option<usize>,
    pub max_restarts: usize,
    /// PK-FK only: the uniform foreign-key draws of the fact table.
    pub fk_draws: Option<Vec<u32>>,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            k: None,
            t: None,
            subset: None,
            branch_value: None,
            force_hit: None,
            family_size: None,
            max_restarts: 1000,
            fk_draws: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjustment {
    pub quantity: String,
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialSpec {
    pub kind: QueryKind,
    pub params: BoundParams,
    pub k: usize,
    pub t: usize,
    pub kab: KabSet,
    /// The design subset `S` realized in the instance.
    pub subset: Vec<u32>,
    /// Probe type `v` (position of `a` for CHAIN4; 0 for PK-FK, which has
    /// no single probe type).
    pub branch_value: u32,
    pub seed: u64,
    /// Index of the relation carrying `S`.
    pub design_table: usize,
    /// Half-open row range of the design table holding the `S` blocks.
    pub design_rows: [usize; 2],
    /// Inclusive range of fresh values used, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fresh_values: Option<[u64; 2]>,
    /// PK-FK: fact-table frequency of each key `1..=n_D`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_frequencies: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub adjustments: Vec<Adjustment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialInstance {
    pub relations: Vec<Relation>,
    pub query: JoinQuery,
    /// Answer when `v ∉ S` (GROUP-BY kinds: size of the absent group, 0).
    pub truth_low: f64,
    /// Answer when `v ∈ S` (GROUP-BY kinds: size of the single group).
    pub truth_high: f64,
    pub branch_hit: bool,
    pub spec: AdversarialSpec,
}

impl AdversarialInstance {
    /// Answer of the realized branch.
    pub fn truth(&self) -> f64 {
        if self.branch_hit {
            self.truth_high
        } else {
            self.truth_low
        }
    }

    pub fn relation(&self, name: &str) -> Option<&Relation> {
        self.relations.iter().find(|r| r.name() == name)
    }
}

/// Generates the instance for `params.query_kind`.
pub fn generate(params: &BoundParams, opts: &GenOptions, seed: u64) -> Result<AdversarialInstance, GenError> {
    match params.query_kind {
        QueryKind::Count2 | QueryKind::CountP | QueryKind::Sum => gen_count(params, opts, seed),
        QueryKind::CountDistinct => gen_count_distinct(params, opts, seed),
        QueryKind::GroupBy => gen_group_by(params, opts, seed),
        QueryKind::PkFkCount => gen_pk_fk(params, false, opts, seed),
        QueryKind::PkFkGroupBy => gen_pk_fk(params, true, opts, seed),
        QueryKind::HeavyHitter => gen_heavy_hitter(params, opts, seed),
        QueryKind::Chain4 => gen_chain4(params, opts, seed),
    }
}

// Independent random streams derived from one seed.
const STREAM_FAMILY: u64 = 1;
const STREAM_SUBSET: u64 = 2;
const STREAM_BRANCH: u64 = 3;
const STREAM_FACT: u64 = 4;

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// `⌈k/(8δ)⌉`, the default number of types.
pub(crate) fn default_t(k: usize, delta: f64) -> usize {
    let t = (k as f64 / (8.0 * delta) - 1e-9).ceil() as usize;
    t.max(k)
}

/// ⌊2^{βk}⌋ with β half of the feasibility bound for α = t/k, clamped to
/// `[1, DEFAULT_MAX_FAMILY]` and to the number of available subsets.
pub fn default_family_size(k: usize, t: usize) -> usize {
    let alpha = t as f64 / k as f64;
    let size = match beta_bound(alpha) {
        Ok(b) if b > 0.0 => kabset::family_size_for(0.5 * b, k),
        _ => 1,
    };
    let available = kabset::binomial(t, k);
    let cap = if available < DEFAULT_MAX_FAMILY as f64 {
        available as usize
    } else {
        DEFAULT_MAX_FAMILY
    };
    size.clamp(1, cap.max(1))
}

/// Picks the design family and the realized subset `S`.
pub(crate) fn choose_design(
    k: usize,
    t: usize,
    opts: &GenOptions,
    seed: u64,
    any_size: bool,
) -> Result<(KabSet, Vec<u32>), GenError> {
    if let Some(subset) = &opts.subset {
        let mut s = subset.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != subset.len() {
            return Err(GenError::Precondition("subset override repeats a type".into()));
        }
        if !any_size && s.len() != k {
            return Err(GenError::Precondition(format!(
                "subset override has {} types, expected k = {k}",
                s.len()
            )));
        }
        if let Some(&bad) = s.iter().find(|&&v| v == 0 || v as usize > t) {
            return Err(GenError::Precondition(format!(
                "subset override type {bad} outside 1..={t}"
            )));
        }
        return Ok((KabSet::singleton(s.len(), t, s.clone()), s));
    }
    let size = opts.family_size.unwrap_or_else(|| default_family_size(k, t));
    let family_seed: u64 = stream(seed, STREAM_FAMILY).gen();
    let kab = kabset::construct_in_universe(k, t, size, family_seed, opts.max_restarts)?;
    let idx = stream(seed, STREAM_SUBSET).gen_range(0..kab.family.len());
    let s = kab.family[idx].clone();
    Ok((kab, s))
}

/// Picks the probe type `v ∈ {1..t}`.
pub(crate) fn choose_branch(t: usize, subset: &[u32], opts: &GenOptions, seed: u64) -> Result<u32, GenError> {
    if let Some(v) = opts.branch_value {
        if v == 0 || v as usize > t {
            return Err(GenError::Precondition(format!("branch value {v} outside 1..={t}")));
        }
        return Ok(v);
    }
    let mut rng = stream(seed, STREAM_BRANCH);
    match opts.force_hit {
        None => Ok(rng.gen_range(1..=t as u32)),
        Some(true) => {
            if subset.is_empty() {
                return Err(GenError::Precondition("cannot force a hit with an empty S".into()));
            }
            Ok(subset[rng.gen_range(0..subset.len())])
        }
        Some(false) => {
            let outside: Vec<u32> = (1..=t as u32).filter(|v| subset.binary_search(v).is_err()).collect();
            if outside.is_empty() {
                return Err(GenError::Precondition("cannot force a miss: S covers T".into()));
            }
            Ok(outside[rng.gen_range(0..outside.len())])
        }
    }
}

pub(crate) fn fact_stream(seed: u64) -> ChaCha8Rng {
    stream(seed, STREAM_FACT)
}

/// Largest divisor of `m` that is at most `limit` and passes `ok`.
pub(crate) fn largest_divisor(m: u64, limit: f64, ok: impl Fn(u64) -> bool) -> Option<u64> {
    let cap = (limit + 1e-9).floor();
    if cap < 1.0 {
        return None;
    }
    let cap = (cap as u64).min(m);
    (1..=cap).rev().find(|&d| m.is_multiple_of(d) && ok(d))
}

/// `k` blocks of `block` rows each, the j-th carrying `subset[j]`.
pub(crate) fn design_blocks(subset: &[u32], block: usize) -> Vec<u64> {
    subset
        .iter()
        .flat_map(|&s| std::iter::repeat_n(s as u64, block))
        .collect()
}

pub(crate) fn row_ids(n: usize) -> Vec<u64> {
    (0..n as u64).collect()
}

pub(crate) fn check_t(k: usize, t: usize) -> Result<(), GenError> {
    if t < k || t == 0 {
        return Err(GenError::Precondition(format!("t = {t} must be at least k = {k}")));
    }
    if t > u32::MAX as usize / 2 {
        return Err(GenError::Precondition(format!("t = {t} is too large")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_t_rounds_up() {
        assert_eq!(default_t(3, 0.01), 38);
        assert_eq!(default_t(1, 0.0625 - 1e-12), 2);
        assert_eq!(default_t(2, 0.0125), 20);
    }

    #[test]
    fn divisor_search() {
        assert_eq!(largest_divisor(9, 3.0, |_| true), Some(3));
        assert_eq!(largest_divisor(9, 2.99, |_| true), Some(1));
        assert_eq!(largest_divisor(12, 100.0, |d| d < 5), Some(4));
        assert_eq!(largest_divisor(12, 0.5, |_| true), None);
    }

    #[test]
    fn design_choice_is_deterministic() {
        let opts = GenOptions::default();
        let a = choose_design(3, 38, &opts, 5, false).unwrap();
        let b = choose_design(3, 38, &opts, 5, false).unwrap();
        assert_eq!(a, b);
        assert!(a.0.verify().valid);
        assert!(a.0.family.contains(&a.1));
    }

    #[test]
    fn forced_branches() {
        let s = vec![2, 5];
        let hit = GenOptions { force_hit: Some(true), ..Default::default() };
        let miss = GenOptions { force_hit: Some(false), ..Default::default() };
        for seed in 0..20 {
            assert!(s.contains(&choose_branch(6, &s, &hit, seed).unwrap()));
            assert!(!s.contains(&choose_branch(6, &s, &miss, seed).unwrap()));
        }
        let full = vec![1, 2];
        assert!(choose_branch(2, &full, &miss, 0).is_err());
    }
}
