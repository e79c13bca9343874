//! Entropy, capacity constants and closed-form lower bounds (in bits) on the
//! summary length any scheme needs to approximate join aggregates.
//!
//! Everything here is a pure `f64` function. Bounds are returned as real
//! numbers; callers that need an integral bit count should floor them.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Upper limit (exclusive) on the error probability δ.
pub const DELTA_LIMIT: f64 = 0.0625;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MathError {
    #[error("{name} = {value} is outside the domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("precondition violated: {0}")]
    Precondition(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QueryKind {
    #[serde(rename = "COUNT2")]
    Count2,
    #[serde(rename = "COUNTP")]
    CountP,
    #[serde(rename = "SUM")]
    Sum,
    #[serde(rename = "COUNT_DISTINCT")]
    CountDistinct,
    #[serde(rename = "GROUP_BY")]
    GroupBy,
    #[serde(rename = "PKFK_COUNT")]
    PkFkCount,
    #[serde(rename = "PKFK_GROUP_BY")]
    PkFkGroupBy,
    #[serde(rename = "HEAVY_HITTER")]
    HeavyHitter,
    #[serde(rename = "CHAIN4")]
    Chain4,
}

impl QueryKind {
    pub const ALL: [QueryKind; 9] = [
        QueryKind::Count2,
        QueryKind::CountP,
        QueryKind::Sum,
        QueryKind::CountDistinct,
        QueryKind::GroupBy,
        QueryKind::PkFkCount,
        QueryKind::PkFkGroupBy,
        QueryKind::HeavyHitter,
        QueryKind::Chain4,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QueryKind::Count2 => "COUNT2",
            QueryKind::CountP => "COUNTP",
            QueryKind::Sum => "SUM",
            QueryKind::CountDistinct => "COUNT_DISTINCT",
            QueryKind::GroupBy => "GROUP_BY",
            QueryKind::PkFkCount => "PKFK_COUNT",
            QueryKind::PkFkGroupBy => "PKFK_GROUP_BY",
            QueryKind::HeavyHitter => "HEAVY_HITTER",
            QueryKind::Chain4 => "CHAIN4",
        }
    }

    /// Kinds whose answer is a group report rather than a single number.
    pub fn is_group_by(self) -> bool {
        matches!(self, QueryKind::GroupBy | QueryKind::PkFkGroupBy)
    }

    /// Kinds whose bound is scaled by C'(δ) instead of C(δ).
    pub fn uses_scaled_capacity(self) -> bool {
        matches!(
            self,
            QueryKind::PkFkCount | QueryKind::PkFkGroupBy | QueryKind::Chain4
        )
    }
}

impl fmt::Display for QueryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase().replace('-', "_");
        QueryKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == upper)
            .ok_or_else(|| format!("unknown query kind '{s}'"))
    }
}

/// Inputs to the closed-form bounds.
///
/// `table_sizes` is interpreted per kind:
/// - `COUNT2`, `COUNTP`, `SUM`, `GROUP_BY`: one entry per joined relation.
/// - `COUNT_DISTINCT`: the relation carrying the distinct columns is last.
/// - `PKFK_*`: dimension sizes first, fact table size last.
/// - `HEAVY_HITTER`: `[n1, n2]` excluding the heavy-hitter rows.
/// - `CHAIN4`: `[n]` or four equal sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub query_kind: QueryKind,
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
}

impl BoundParams {
    pub fn new(query_kind: QueryKind, table_sizes: Vec<u64>, epsilon: f64, delta: f64, b: f64) -> Self {
        BoundParams {
            query_kind,
            table_sizes,
            epsilon,
            delta,
            b,
            sum_max: None,
            lambda: None,
            hh_a: None,
            hh_b: None,
        }
    }

    pub fn with_sum_max(mut self, m: f64) -> Self {
        self.sum_max = Some(m);
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(lambda);
        self
    }

    pub fn with_heavy_hitters(mut self, a: Vec<u64>, b: Vec<u64>) -> Self {
        self.hh_a = Some(a);
        self.hh_b = Some(b);
        self
    }

    /// ε² + 2ε, the relative gap (1+ε)² − 1 every construction must open.
    pub fn gap(&self) -> f64 {
        gap_factor(self.epsilon)
    }

    /// Checks the invariants shared by every kind plus the kind's own
    /// theorem preconditions.
    pub fn validate(&self) -> Result<(), MathError> {
        check_delta(self.delta)?;
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(MathError::Domain {
                name: "epsilon",
                value: self.epsilon,
                domain: "(0, inf)",
            });
        }
        if !(self.b > 0.0) || !self.b.is_finite() {
            return Err(MathError::Domain {
                name: "B",
                value: self.b,
                domain: "(0, inf)",
            });
        }
        if self.table_sizes.contains(&0) {
            return Err(MathError::Precondition(
                "every table size must be positive".into(),
            ));
        }
        // the kind-specific checks live next to the formulas
        compute(self).map(|_| ())
    }
}

/// Intermediate quantities of a bound, mirroring the construction it comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    /// Per-table sizes of the design-carrying region (`m_i`).
    pub m: Vec<f64>,
    /// Design size.
    pub k: f64,
    /// Number of types, `k / (8δ)` unless the construction fixes it.
    pub t: f64,
    /// Universe multiplier `1 / (8δ)`.
    pub alpha: f64,
    /// C(δ) or C'(δ), whichever the bound uses.
    pub capacity: f64,
    pub capacity_name: String,
    /// Extra named quantities (x, y for CHAIN4, per-side k for heavy hitters, ...).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub bits: f64,
    pub derived: Derived,
}

impl BoundResult {
    /// The bound rounded down to a whole number of bits.
    pub fn floor_bits(&self) -> u64 {
        self.bits.floor().max(0.0) as u64
    }
}

pub fn gap_factor(epsilon: f64) -> f64 {
    epsilon * epsilon + 2.0 * epsilon
}

fn check_delta(delta: f64) -> Result<(), MathError> {
    if delta > 0.0 && delta < DELTA_LIMIT {
        Ok(())
    } else {
        Err(MathError::Domain {
            name: "delta",
            value: delta,
            domain: "(0, 0.0625)",
        })
    }
}

/// −p·log₂p − (1−p)·log₂(1−p), with 0·log 0 = 0.
pub fn binary_entropy(p: f64) -> Result<f64, MathError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(MathError::Domain {
            name: "p",
            value: p,
            domain: "[0, 1]",
        });
    }
    Ok(plogp(p) + plogp(1.0 - p))
}

fn plogp(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        -p * p.log2()
    }
}

/// C(δ) = [H(8δ) − (1−8δ)·H(4δ/(1−8δ))] / (16δ) − 1/2.
pub fn capacity_c(delta: f64) -> Result<f64, MathError> {
    check_delta(delta)?;
    let eight = 8.0 * delta;
    let inner = 4.0 * delta / (1.0 - eight);
    let num = binary_entropy(eight)? - (1.0 - eight) * binary_entropy(inner)?;
    Ok(num / (16.0 * delta) - 0.5)
}

/// C'(δ) = 8δ·C(δ).
pub fn capacity_c_prime(delta: f64) -> Result<f64, MathError> {
    Ok(8.0 * delta * capacity_c(delta)?)
}

/// Supremum of β for which random k-subsets of {1..αk} form a
/// (k, α, β)-set for large k: ½(αH(1/α) − (α−1)H(1/(2(α−1))) − 1).
pub fn beta_bound(alpha: f64) -> Result<f64, MathError> {
    if !(alpha >= 2.0) || !alpha.is_finite() {
        return Err(MathError::Domain {
            name: "alpha",
            value: alpha,
            domain: "[2, inf)",
        });
    }
    let a = alpha * binary_entropy(1.0 / alpha)?;
    let b = (alpha - 1.0) * binary_entropy(1.0 / (2.0 * (alpha - 1.0)))?;
    Ok(0.5 * (a - b - 1.0))
}

/// Dispatches to the kind's closed-form bound.
pub fn lower_bound(params: &BoundParams) -> Result<BoundResult, MathError> {
    params.validate()?;
    compute(params)
}

fn compute(params: &BoundParams) -> Result<BoundResult, MathError> {
    match params.query_kind {
        QueryKind::Count2 => {
            require_len(params, 2, "COUNT2 needs exactly two table sizes")?;
            count_like(params, 1.0)
        }
        QueryKind::CountP => {
            require_min_len(params, 2, "COUNTP needs at least two table sizes")?;
            count_like(params, 1.0)
        }
        QueryKind::Sum => {
            require_min_len(params, 2, "SUM needs at least two table sizes")?;
            let m = params
                .sum_max
                .ok_or_else(|| MathError::Precondition("SUM requires sum_max (M)".into()))?;
            if !(m > 0.0) {
                return Err(MathError::Precondition("sum_max must be positive".into()));
            }
            count_like(params, m)
        }
        QueryKind::CountDistinct => count_distinct(params),
        QueryKind::GroupBy => group_by(params),
        QueryKind::PkFkCount => pk_fk(params, false),
        QueryKind::PkFkGroupBy => pk_fk(params, true),
        QueryKind::HeavyHitter => heavy_hitter(params),
        QueryKind::Chain4 => chain4(params),
    }
}

fn require_len(params: &BoundParams, len: usize, msg: &str) -> Result<(), MathError> {
    if params.table_sizes.len() != len {
        return Err(MathError::Precondition(msg.into()));
    }
    Ok(())
}

fn require_min_len(params: &BoundParams, len: usize, msg: &str) -> Result<(), MathError> {
    if params.table_sizes.len() < len {
        return Err(MathError::Precondition(msg.into()));
    }
    Ok(())
}

fn base_derived(delta: f64, capacity: f64, name: &str) -> Derived {
    Derived {
        m: Vec::new(),
        k: 0.0,
        t: 0.0,
        alpha: 1.0 / (8.0 * delta),
        capacity,
        capacity_name: name.to_string(),
        extra: Vec::new(),
    }
}

// COUNT2, COUNTP and SUM share one formula; COUNT uses scale = 1.
fn count_like(params: &BoundParams, scale: f64) -> Result<BoundResult, MathError> {
    let c = capacity_c(params.delta)?;
    let e = params.gap();
    let b = params.b;
    let p = params.table_sizes.len() as f64;
    let prod_n: f64 = params.table_sizes.iter().map(|&n| n as f64).product();
    let ceiling = scale * prod_n / (1.0 + params.epsilon).powi(2);
    if !(b < ceiling) {
        return Err(MathError::Precondition(format!(
            "B < {}·Πn_i/(1+ε)² fails: B = {b}, ceiling = {ceiling}",
            if scale == 1.0 { "1".to_string() } else { "M".to_string() }
        )));
    }
    let shrink = 1.0 - (b / (scale * prod_n)).powf(1.0 / p);
    let m: Vec<f64> = params.table_sizes.iter().map(|&n| n as f64 * shrink).collect();
    let max_m = m.iter().cloned().fold(f64::MIN, f64::max);
    let prod_m: f64 = m.iter().product();
    let k = max_m.min(scale * prod_m / (e * b));
    let mut derived = base_derived(params.delta, c, "C");
    derived.m = m;
    derived.k = k;
    derived.t = k / (8.0 * params.delta);
    Ok(BoundResult {
        bits: 0.5 * c * k,
        derived,
    })
}

fn count_distinct(params: &BoundParams) -> Result<BoundResult, MathError> {
    require_min_len(params, 2, "COUNT_DISTINCT needs at least two joined tables")?;
    let c = capacity_c(params.delta)?;
    let e = params.gap();
    let b = params.b;
    let n = *params.table_sizes.last().unwrap() as f64;
    let need = (1.0 + params.epsilon).powi(2) * b;
    if !(n > need) {
        return Err(MathError::Precondition(format!(
            "n > (1+ε)²B fails: n = {n}, (1+ε)²B = {need}"
        )));
    }
    let k = (n - b) * (1.0f64).min(1.0 / (e * b));
    let mut derived = base_derived(params.delta, c, "C");
    derived.m = vec![n - b];
    derived.k = k;
    derived.t = k / (8.0 * params.delta);
    Ok(BoundResult {
        bits: 0.5 * c * k,
        derived,
    })
}

fn group_by(params: &BoundParams) -> Result<BoundResult, MathError> {
    require_min_len(params, 2, "GROUP_BY needs at least two table sizes")?;
    let c = capacity_c(params.delta)?;
    let lambda = params
        .lambda
        .ok_or_else(|| MathError::Precondition("GROUP_BY requires lambda".into()))?;
    if !(lambda >= 1.0) {
        return Err(MathError::Precondition(format!("λ ≥ 1 fails: λ = {lambda}")));
    }
    let max_n = *params.table_sizes.iter().max().unwrap() as f64;
    let k = max_n / lambda;
    if k < 1.0 {
        return Err(MathError::Precondition(format!(
            "max n_i / λ ≥ 1 fails: {max_n} / {lambda}"
        )));
    }
    let mut derived = base_derived(params.delta, c, "C");
    derived.m = vec![max_n];
    derived.k = k;
    derived.t = k / (8.0 * params.delta);
    Ok(BoundResult {
        bits: 0.5 * c * k,
        derived,
    })
}

fn pk_fk(params: &BoundParams, group_by: bool) -> Result<BoundResult, MathError> {
    require_min_len(
        params,
        2,
        "PK-FK needs at least one dimension size followed by the fact size",
    )?;
    let cp = capacity_c_prime(params.delta)?;
    let (fact, dims) = params.table_sizes.split_last().unwrap();
    let n_d = *dims.iter().max().unwrap() as f64;
    let n_f = *fact as f64;
    if n_d < 2.0 {
        return Err(MathError::Precondition(format!("n_D ≥ 2 fails: n_D = {n_d}")));
    }
    if !group_by {
        let ceiling = n_f / (1.0 + params.epsilon).powi(2);
        if !(params.b < ceiling) {
            return Err(MathError::Precondition(format!(
                "B < n_F/(1+ε)² fails: B = {}, ceiling = {ceiling}",
                params.b
            )));
        }
    }
    let mut derived = base_derived(params.delta, cp, "C'");
    derived.t = n_d - 1.0;
    derived.k = 8.0 * params.delta * (n_d - 1.0);
    derived.m = vec![n_d - 1.0];
    let bits = if group_by {
        0.5 * cp * n_d
    } else {
        0.5 * cp * (n_d - 1.0)
    };
    Ok(BoundResult { bits, derived })
}

fn heavy_hitter(params: &BoundParams) -> Result<BoundResult, MathError> {
    require_len(params, 2, "HEAVY_HITTER needs exactly two table sizes")?;
    let (a, b_vec) = match (&params.hh_a, &params.hh_b) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(MathError::Precondition(
                "HEAVY_HITTER requires hh_a and hh_b".into(),
            ))
        }
    };
    check_frequency_vector("hh_a", a)?;
    check_frequency_vector("hh_b", b_vec)?;
    let c = capacity_c(params.delta)?;
    let e = params.gap();
    let b = params.b;
    let a_k = *a.last().unwrap() as f64;
    let b_k = *b_vec.last().unwrap() as f64;
    let n1 = params.table_sizes[0] as f64;
    let n2 = params.table_sizes[1] as f64;
    if !(a_k * b_k >= e * b) {
        return Err(MathError::Precondition(format!(
            "a_K·b_K ≥ (ε²+2ε)B fails: {} < {}",
            a_k * b_k,
            e * b
        )));
    }
    let factor = 2.0f64.max(1.0 + 1.0 / e);
    if !(n1 >= factor * a_k) {
        return Err(MathError::Precondition(format!(
            "n1 ≥ max(2, 1+1/(ε²+2ε))·a_K fails: {n1} < {}",
            factor * a_k
        )));
    }
    if !(n2 >= factor * b_k) {
        return Err(MathError::Precondition(format!(
            "n2 ≥ max(2, 1+1/(ε²+2ε))·b_K fails: {n2} < {}",
            factor * b_k
        )));
    }
    let m1 = n1 - b / b_k;
    let m2 = n2 - b / a_k;
    let k1 = m1 * (1.0f64).min(b_k / (e * b));
    let k2 = m2 * (1.0f64).min(a_k / (e * b));
    let k = k1.max(k2);
    let mut derived = base_derived(params.delta, c, "C");
    derived.m = vec![m1, m2];
    derived.k = k;
    derived.t = k / (8.0 * params.delta);
    derived.extra = vec![("k1".into(), k1), ("k2".into(), k2)];
    Ok(BoundResult {
        bits: 0.5 * c * k,
        derived,
    })
}

fn check_frequency_vector(name: &str, v: &[u64]) -> Result<(), MathError> {
    if v.is_empty() {
        return Err(MathError::Precondition(format!("{name} must be non-empty")));
    }
    if v.windows(2).any(|w| w[0] < w[1]) {
        return Err(MathError::Precondition(format!("{name} must be non-increasing")));
    }
    if *v.last().unwrap() < 1 {
        return Err(MathError::Precondition(format!("{name} entries must be ≥ 1")));
    }
    Ok(())
}

/// Size shared by all four relations of a CHAIN4 query.
pub(crate) fn chain4_size(params: &BoundParams) -> Result<u64, MathError> {
    match params.table_sizes.as_slice() {
        [n] => Ok(*n),
        [a, b, c, d] if a == b && b == c && c == d => Ok(*a),
        _ => Err(MathError::Precondition(
            "CHAIN4 needs one size or four equal sizes".into(),
        )),
    }
}

fn chain4(params: &BoundParams) -> Result<BoundResult, MathError> {
    let n = chain4_size(params)? as f64;
    let cp = capacity_c_prime(params.delta)?;
    let e = params.gap();
    let b = params.b;
    if !(b <= n * n / e) {
        return Err(MathError::Precondition(format!(
            "B ≤ n²/(ε²+2ε) fails: B = {b}, ceiling = {}",
            n * n / e
        )));
    }
    let x = n - (e * b).sqrt();
    if !(x > 0.0) {
        return Err(MathError::Precondition(format!(
            "x = n − √((ε²+2ε)B) > 0 fails: x = {x}"
        )));
    }
    let y = b.sqrt() / x;
    if !(y < n) {
        return Err(MathError::Precondition(format!(
            "y = √B/x < n fails: y = {y}"
        )));
    }
    let t = n - y;
    let mut derived = base_derived(params.delta, cp, "C'");
    derived.m = vec![t];
    derived.t = t;
    derived.k = 8.0 * params.delta * t;
    derived.extra = vec![("x".into(), x), ("y".into(), y)];
    Ok(BoundResult {
        bits: 0.5 * cp * t,
        derived,
    })
}
