//! (k, α, β)-sets: families of k-subsets of a universe {1..U} whose
//! pairwise intersections have at most ⌊k/2⌋ elements.
//!
//! Construction follows the probabilistic method literally: draw the whole
//! family uniformly at random and keep it if it verifies, otherwise redraw
//! from a fresh stream.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KabSet {
    pub k: usize,
    /// Universe size; elements are drawn from `1..=universe`.
    pub universe: usize,
    pub family: Vec<Vec<u32>>,
    pub seed: u64,
    /// Number of whole-family draws it took (1 = first draw verified).
    #[serde(default)]
    pub attempts: usize,
}

impl KabSet {
    /// Universe multiplier U/k.
    pub fn alpha(&self) -> f64 {
        self.universe as f64 / self.k as f64
    }

    pub fn len(&self) -> usize {
        self.family.len()
    }

    pub fn is_empty(&self) -> bool {
        self.family.is_empty()
    }

    pub fn verify(&self) -> Verification {
        verify_in_universe(&self.family, self.k, self.universe)
    }

    /// A one-member family; always valid.
    pub fn singleton(k: usize, universe: usize, subset: Vec<u32>) -> Self {
        KabSet {
            k,
            universe,
            family: vec![subset],
            seed: 0,
            attempts: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KabError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("no valid family of size {requested} after {attempts} draws; best valid subfamily has {} members", best.len())]
    ConstructionFailed {
        requested: usize,
        attempts: usize,
        best: Vec<Vec<u32>>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// Member `index` does not have exactly k elements.
    Size { index: usize, len: usize },
    /// Member `index` holds an element outside the universe, or a repeat.
    Element { index: usize, element: u32 },
    Duplicate { first: usize, second: usize },
    Intersection {
        first: usize,
        second: usize,
        common: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verification {
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl Verification {
    fn ok() -> Self {
        Verification {
            valid: true,
            witness: None,
            reason: None,
        }
    }

    fn fail(witness: Witness, reason: String) -> Self {
        Verification {
            valid: false,
            witness: Some(witness),
            reason: Some(reason),
        }
    }
}

/// Largest intersection allowed between two members.
pub fn intersection_limit(k: usize) -> usize {
    k / 2
}

/// ⌊2^{βk}⌋, saturating at `usize::MAX`.
pub fn family_size_for(beta: f64, k: usize) -> usize {
    let v = (beta * k as f64).exp2().floor();
    if v >= usize::MAX as f64 {
        usize::MAX
    } else if v < 0.0 || v.is_nan() {
        0
    } else {
        v as usize
    }
}

/// C(n, r) as f64; exact for the sizes used here, saturates to +inf.
pub fn binomial(n: usize, r: usize) -> f64 {
    if r > n {
        return 0.0;
    }
    let r = r.min(n - r);
    let mut acc = 1.0f64;
    for i in 0..r {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

pub fn kab_construct(
    k: usize,
    alpha: usize,
    family_size: usize,
    seed: u64,
    max_restarts: usize,
) -> Result<KabSet, KabError> {
    if alpha < 2 {
        return Err(KabError::InvalidParams(format!("alpha must be ≥ 2, got {alpha}")));
    }
    construct_in_universe(k, alpha * k, family_size, seed, max_restarts)
}

/// Like [`kab_construct`] but over an arbitrary universe `{1..universe}`,
/// for constructions whose type count is not a multiple of k.
pub fn construct_in_universe(
    k: usize,
    universe: usize,
    family_size: usize,
    seed: u64,
    max_restarts: usize,
) -> Result<KabSet, KabError> {
    if k == 0 {
        return Err(KabError::InvalidParams("k must be positive".into()));
    }
    if universe < k {
        return Err(KabError::InvalidParams(format!(
            "universe {universe} is smaller than k = {k}"
        )));
    }
    if universe > u32::MAX as usize {
        return Err(KabError::InvalidParams("universe too large".into()));
    }
    if family_size == 0 {
        return Err(KabError::InvalidParams("family_size must be positive".into()));
    }
    if max_restarts == 0 {
        return Err(KabError::InvalidParams("max_restarts must be positive".into()));
    }
    let available = binomial(universe, k);
    if family_size as f64 > available {
        return Err(KabError::InvalidParams(format!(
            "family_size {family_size} exceeds C({universe}, {k}) = {available}"
        )));
    }

    let mut best: Vec<Vec<u32>> = Vec::new();
    for attempt in 0..max_restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt as u64);
        let family = draw_family(&mut rng, k, universe, family_size);
        if verify_in_universe(&family, k, universe).valid {
            return Ok(KabSet {
                k,
                universe,
                family,
                seed,
                attempts: attempt + 1,
            });
        }
        let kept = greedy_valid_subfamily(&family, k);
        if kept.len() > best.len() {
            best = kept;
        }
    }
    Err(KabError::ConstructionFailed {
        requested: family_size,
        attempts: max_restarts,
        best,
    })
}

fn draw_family(rng: &mut ChaCha8Rng, k: usize, universe: usize, size: usize) -> Vec<Vec<u32>> {
    let mut seen: HashSet<Vec<u32>> = HashSet::with_capacity(size);
    let mut family = Vec::with_capacity(size);
    while family.len() < size {
        let mut subset: Vec<u32> = index::sample(rng, universe, k)
            .into_iter()
            .map(|i| i as u32 + 1)
            .collect();
        subset.sort_unstable();
        if seen.insert(subset.clone()) {
            family.push(subset);
        }
    }
    family
}

fn greedy_valid_subfamily(family: &[Vec<u32>], k: usize) -> Vec<Vec<u32>> {
    let limit = intersection_limit(k);
    let mut kept: Vec<Vec<u32>> = Vec::new();
    for s in family {
        if kept.iter().all(|t| sorted_intersection(s, t).len() <= limit) {
            kept.push(s.clone());
        }
    }
    kept
}

fn sorted_intersection(a: &[u32], b: &[u32]) -> Vec<u32> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Checks the three defining conditions over the universe `{1..αk}`.
pub fn kab_verify(family: &[Vec<u32>], k: usize, alpha: usize) -> Verification {
    verify_in_universe(family, k, alpha.saturating_mul(k))
}

pub fn verify_in_universe(family: &[Vec<u32>], k: usize, universe: usize) -> Verification {
    let mut normalized: Vec<Vec<u32>> = Vec::with_capacity(family.len());
    for (index, s) in family.iter().enumerate() {
        if s.len() != k {
            return Verification::fail(
                Witness::Size { index, len: s.len() },
                format!("member {index} has {} elements, expected {k}", s.len()),
            );
        }
        let mut sorted = s.clone();
        sorted.sort_unstable();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Verification::fail(
                    Witness::Element { index, element: w[0] },
                    format!("member {index} repeats element {}", w[0]),
                );
            }
        }
        if let Some(&bad) = sorted.iter().find(|&&e| e == 0 || e as usize > universe) {
            return Verification::fail(
                Witness::Element { index, element: bad },
                format!("member {index} has element {bad} outside 1..={universe}"),
            );
        }
        normalized.push(sorted);
    }
    let limit = intersection_limit(k);
    for i in 0..normalized.len() {
        for j in (i + 1)..normalized.len() {
            if normalized[i] == normalized[j] {
                return Verification::fail(
                    Witness::Duplicate { first: i, second: j },
                    format!("members {i} and {j} are equal"),
                );
            }
            let common = sorted_intersection(&normalized[i], &normalized[j]);
            if common.len() > limit {
                let reason = format!(
                    "members {i} and {j} share {} elements, limit is {limit}",
                    common.len()
                );
                return Verification::fail(
                    Witness::Intersection {
                        first: i,
                        second: j,
                        common,
                    },
                    reason,
                );
            }
        }
    }
    Verification::ok()
}

/// Intersection size → number of unordered member pairs with that size.
pub fn intersection_histogram(kab: &KabSet) -> BTreeMap<usize, u64> {
    pair_histogram(&kab.family)
}

pub(crate) fn pair_histogram(family: &[Vec<u32>]) -> BTreeMap<usize, u64> {
    let mut hist = BTreeMap::new();
    if family.len() < 2 {
        return hist;
    }
    for i in 0..family.len() {
        for j in (i + 1)..family.len() {
            *hist
                .entry(sorted_intersection(&family[i], &family[j]).len())
                .or_insert(0) += 1;
        }
    }
    hist
}
