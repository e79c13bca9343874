use super::snap::Fractional;
use super::{
    check_t, choose_branch, choose_design, default_t, design_blocks, largest_divisor, row_ids,
    AdversarialInstance, AdversarialSpec, GenError, GenOptions,
};
use crate::joinexec::{Aggregate, ColumnRef, JoinQuery};
use crate::mathcore::{lower_bound, BoundParams, QueryKind};
use crate::relation::{Relation, TYPE_ZERO};

pub(crate) fn table_name(i: usize) -> String {
    format!("R{}", i + 1)
}

fn chain_query(p: usize, aggregate: Aggregate) -> JoinQuery {
    let names: Vec<String> = (0..p).map(table_name).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let links = vec![("c", "c"); p - 1];
    JoinQuery::chain(&refs, &links, aggregate)
}

/// Index of the largest table, the last one on ties.
fn widest(sizes: &[u64]) -> usize {
    let max = *sizes.iter().max().unwrap();
    sizes.iter().rposition(|&n| n == max).unwrap()
}

/// Integer shape of a COUNT / SUM instance.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct CountLayout {
    /// Per-table design-region size `m_i`.
    pub m: Vec<u64>,
    /// Multiplier of every join tuple (M for SUM, 1 otherwise).
    pub scale: u64,
    /// Join tuples among type-0 rows: B / scale.
    pub base: u64,
    pub design: usize,
    pub k_max: f64,
}

pub(crate) fn count_layout(params: &BoundParams) -> Result<CountLayout, GenError> {
    lower_bound(params)?;
    let sizes = &params.table_sizes;
    let p = sizes.len();
    let mut frac = Fractional::default();
    let scale = match params.query_kind {
        QueryKind::Sum => frac.whole("M", params.sum_max.unwrap_or(0.0)),
        _ => Some(1),
    };
    let base = scale.and_then(|s| frac.whole("B/M", params.b / s as f64));
    let prod_n: f64 = sizes.iter().map(|&n| n as f64).product();
    let ratio = (params.b / scale.unwrap_or(1) as f64 / prod_n).powf(1.0 / p as f64);
    let tails: Vec<Option<u64>> = sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| frac.whole(&format!("tail_{}", i + 1), n as f64 * ratio))
        .collect();
    frac.finish()?;
    let (scale, base) = (scale.unwrap(), base.unwrap());
    let tails: Vec<u64> = tails.into_iter().map(Option::unwrap).collect();
    if tails.iter().product::<u64>() != base {
        return Err(GenError::Precondition(format!(
            "type-0 tails {tails:?} do not multiply to B/M = {base}"
        )));
    }
    let m: Vec<u64> = sizes.iter().zip(&tails).map(|(&n, &t)| n - t).collect();
    if m.contains(&0) {
        return Err(GenError::Precondition("some table has no design rows".into()));
    }
    let design = widest(sizes);
    let prod_m: f64 = m.iter().map(|&x| x as f64).product();
    let k_max = (m[design] as f64).min(prod_m / (params.gap() * base as f64));
    Ok(CountLayout {
        m,
        scale,
        base,
        design,
        k_max,
    })
}

impl CountLayout {
    /// Join tuples added on a hit, per unit of block size.
    fn probe_rows(&self) -> u64 {
        self.m
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != self.design)
            .map(|(_, &x)| x)
            .product()
    }

    fn gain_ok(&self, block: u64, gap: f64) -> bool {
        (self.probe_rows() * block) as f64 >= gap * self.base as f64 * (1.0 - 1e-12)
    }

    pub(crate) fn pick_k(&self, requested: Option<usize>, gap: f64) -> Result<usize, GenError> {
        let m = self.m[self.design];
        match requested {
            Some(k) => {
                if k == 0 || k as u64 > m || !m.is_multiple_of(k as u64) {
                    return Err(GenError::Precondition(format!(
                        "k = {k} must divide the {m} design rows"
                    )));
                }
                if !self.gain_ok(m / k as u64, gap) {
                    return Err(GenError::Precondition(format!(
                        "k = {k} leaves a hit below (1+ε)²·B"
                    )));
                }
                Ok(k)
            }
            None => largest_divisor(m, self.k_max, |_| true)
                .map(|k| k as usize)
                .ok_or_else(|| {
                    GenError::Precondition(format!("k = {} < 1: no design fits", self.k_max))
                }),
        }
    }
}

/// COUNT (chain of p ≥ 2 tables) or SUM instance.
///
/// The probe tables carry `v` on their first `m_i` rows, the widest table
/// carries `k` blocks of `m/k` rows typed by `S`, and type-0 tails produce
/// exactly B join tuples.
pub fn gen_count(params: &BoundParams, opts: &GenOptions, seed: u64) -> Result<AdversarialInstance, GenError> {
    if !matches!(params.query_kind, QueryKind::Count2 | QueryKind::CountP | QueryKind::Sum) {
        return Err(GenError::Precondition(format!(
            "gen_count does not build {}",
            params.query_kind
        )));
    }
    let layout = count_layout(params)?;
    let k = layout.pick_k(opts.k, params.gap())?;
    let t = opts.t.unwrap_or_else(|| default_t(k, params.delta));
    check_t(k, t)?;
    let (kab, subset) = choose_design(k, t, opts, seed, false)?;
    let v = choose_branch(t, &subset, opts, seed)?;

    let sizes = &params.table_sizes;
    let d = layout.design;
    let block = (layout.m[d] / k as u64) as usize;
    let mut relations = Vec::with_capacity(sizes.len());
    for (i, &n) in sizes.iter().enumerate() {
        let n = n as usize;
        let mut c = if i == d {
            design_blocks(&subset, block)
        } else {
            vec![v as u64; layout.m[i] as usize]
        };
        c.resize(n, TYPE_ZERO);
        let mut cols = vec![("c", c), ("id", row_ids(n))];
        if i == 0 && params.query_kind == QueryKind::Sum {
            cols.push(("val", vec![layout.scale; n]));
        }
        relations.push(Relation::from_pairs(table_name(i), cols)?);
    }
    let aggregate = match params.query_kind {
        QueryKind::Sum => Aggregate::Sum {
            column: ColumnRef::new("R1", "val"),
        },
        _ => Aggregate::Count,
    };
    let hit = subset.contains(&v);
    let low = layout.scale * layout.base;
    let high = layout.scale * (layout.base + layout.probe_rows() * block as u64);
    Ok(AdversarialInstance {
        relations,
        query: chain_query(sizes.len(), aggregate),
        truth_low: low as f64,
        truth_high: high as f64,
        branch_hit: hit,
        spec: AdversarialSpec {
            kind: params.query_kind,
            params: params.clone(),
            k,
            t,
            kab,
            subset,
            branch_value: v,
            seed,
            design_table: d,
            design_rows: [0, layout.m[d] as usize],
            fresh_values: None,
            key_frequencies: None,
            adjustments: Vec::new(),
        },
    })
}

/// Integer shape of a COUNT DISTINCT instance: `(B, n − B, k_max)`.
pub(crate) fn distinct_layout(params: &BoundParams) -> Result<(u64, u64, f64), GenError> {
    let bound = lower_bound(params)?;
    if params.table_sizes.len() != 2 {
        return Err(GenError::Precondition(
            "COUNT_DISTINCT instances join exactly two tables [n', n]".into(),
        ));
    }
    if params.table_sizes[0] < 2 {
        return Err(GenError::Precondition("companion table needs at least 2 rows".into()));
    }
    let mut frac = Fractional::default();
    let b = frac.whole("B", params.b);
    frac.finish()?;
    let b = b.unwrap();
    let n = params.table_sizes[1];
    Ok((b, n - b, bound.derived.k))
}

/// COUNT(DISTINCT R.id) over `R′ ⋈ R`.
///
/// `R′.c = [v, 0, fresh…]`; `R.c` has `k` blocks typed by `S` followed by
/// B type-0 rows, and `R.id` is distinct on every row.
pub fn gen_count_distinct(params: &BoundParams, opts: &GenOptions, seed: u64) -> Result<AdversarialInstance, GenError> {
    let (b, region, k_max) = distinct_layout(params)?;
    let k = match opts.k {
        Some(k) => {
            let k64 = k as u64;
            if k == 0 || k64 > region || region % k64 != 0 {
                return Err(GenError::Precondition(format!(
                    "k = {k} must divide the {region} design rows"
                )));
            }
            if ((region / k64) as f64) < params.gap() * b as f64 * (1.0 - 1e-12) {
                return Err(GenError::Precondition(format!(
                    "k = {k} leaves a hit below (1+ε)²·B"
                )));
            }
            k
        }
        None => largest_divisor(region, k_max, |_| true)
            .ok_or_else(|| GenError::Precondition(format!("k = {k_max} < 1 after snapping")))?
            as usize,
    };
    let t = opts.t.unwrap_or_else(|| default_t(k, params.delta));
    check_t(k, t)?;
    let (kab, subset) = choose_design(k, t, opts, seed, false)?;
    let v = choose_branch(t, &subset, opts, seed)?;

    let n_comp = params.table_sizes[0] as usize;
    let n = params.table_sizes[1] as usize;
    let block = region as usize / k;
    let first_fresh = t as u64 + 1;
    let mut comp = vec![v as u64, TYPE_ZERO];
    comp.extend((0..(n_comp - 2) as u64).map(|i| first_fresh + i));
    let fresh = (n_comp > 2).then(|| [first_fresh, first_fresh + n_comp as u64 - 3]);
    let mut c = design_blocks(&subset, block);
    c.resize(n, TYPE_ZERO);
    let relations = vec![
        Relation::from_pairs("R1", vec![("c", comp), ("id", row_ids(n_comp))])?,
        Relation::from_pairs("R2", vec![("c", c), ("id", row_ids(n))])?,
    ];
    let query = chain_query(
        2,
        Aggregate::CountDistinct {
            columns: vec![ColumnRef::new("R2", "id")],
        },
    );
    Ok(AdversarialInstance {
        relations,
        query,
        truth_low: b as f64,
        truth_high: (b + block as u64) as f64,
        branch_hit: subset.contains(&v),
        spec: AdversarialSpec {
            kind: QueryKind::CountDistinct,
            params: params.clone(),
            k,
            t,
            kab,
            subset,
            branch_value: v,
            seed,
            design_table: 1,
            design_rows: [0, region as usize],
            fresh_values: fresh,
            key_frequencies: None,
            adjustments: Vec::new(),
        },
    })
}

/// Integer shape of a GROUP-BY instance: `(λ, design table)`.
pub(crate) fn group_layout(params: &BoundParams) -> Result<(u64, usize), GenError> {
    lower_bound(params)?;
    let mut frac = Fractional::default();
    let lambda = frac.whole("lambda", params.lambda.unwrap_or(0.0));
    frac.finish()?;
    let lambda = lambda.unwrap();
    let d = widest(&params.table_sizes);
    let n = params.table_sizes[d];
    if !n.is_multiple_of(lambda) {
        return Err(GenError::Snap {
            message: format!("λ = {lambda} does not divide n = {n}"),
            fractional: vec![("k".into(), n as f64 / lambda as f64)],
        });
    }
    Ok((lambda, d))
}

/// GROUP BY R1.g over a chain where every row of every probe table carries
/// `v` and the widest table is split into `n/λ` blocks of λ rows typed by
/// `S`. The result is one group of size `λ·Π n_i` (probe tables) on a hit
/// and no group on a miss.
pub fn gen_group_by(params: &BoundParams, opts: &GenOptions, seed: u64) -> Result<AdversarialInstance, GenError> {
    let (lambda, d) = group_layout(params)?;
    let sizes = &params.table_sizes;
    let k = (sizes[d] / lambda) as usize;
    if let Some(req) = opts.k {
        if req != k {
            return Err(GenError::Precondition(format!(
                "GROUP_BY fixes k = n/λ = {k}, got override {req}"
            )));
        }
    }
    let t = opts.t.unwrap_or_else(|| default_t(k, params.delta));
    check_t(k, t)?;
    let (kab, subset) = choose_design(k, t, opts, seed, false)?;
    let v = choose_branch(t, &subset, opts, seed)?;

    let mut relations = Vec::with_capacity(sizes.len());
    let mut group: u64 = lambda;
    for (i, &n) in sizes.iter().enumerate() {
        let n = n as usize;
        let c = if i == d {
            design_blocks(&subset, lambda as usize)
        } else {
            group *= n as u64;
            vec![v as u64; n]
        };
        let payload = if i == 0 { ("g", vec![1; n]) } else { ("id", row_ids(n)) };
        relations.push(Relation::from_pairs(table_name(i), vec![("c", c), payload])?);
    }
    let query = chain_query(
        sizes.len(),
        Aggregate::GroupBy {
            columns: vec![ColumnRef::new("R1", "g")],
        },
    );
    Ok(AdversarialInstance {
        relations,
        query,
        truth_low: 0.0,
        truth_high: group as f64,
        branch_hit: subset.contains(&v),
        spec: AdversarialSpec {
            kind: QueryKind::GroupBy,
            params: params.clone(),
            k,
            t,
            kab,
            subset,
            branch_value: v,
            seed,
            design_table: d,
            design_rows: [0, sizes[d] as usize],
            fresh_values: None,
            key_frequencies: None,
            adjustments: Vec::new(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joinexec::{exact_eval, Answer};

    fn count(inst: &AdversarialInstance) -> u64 {
        exact_eval(&inst.relations, &inst.query).unwrap().scalar().unwrap()
    }

    fn fixed(k: usize, t: usize, s: Vec<u32>, v: u32) -> GenOptions {
        GenOptions {
            k: Some(k),
            t: Some(t),
            subset: Some(s),
            branch_value: Some(v),
            ..Default::default()
        }
    }

    #[test]
    fn two_table_count_branches() {
        let p = BoundParams::new(QueryKind::Count2, vec![6, 6], 0.7, 0.05, 4.0);
        let hit = gen_count(&p, &fixed(2, 4, vec![1, 3], 3), 0).unwrap();
        assert!(hit.branch_hit);
        assert_eq!(count(&hit), 12);
        assert_eq!(hit.truth(), 12.0);
        let miss = gen_count(&p, &fixed(2, 4, vec![1, 3], 2), 0).unwrap();
        assert!(!miss.branch_hit);
        assert_eq!(count(&miss), 4);
        assert_eq!(miss.truth_low, 4.0);
    }

    #[test]
    fn single_block_miss_is_b() {
        let p = BoundParams::new(QueryKind::Count2, vec![6, 6], 1.0, 0.05, 4.0);
        let opts = GenOptions {
            k: Some(1),
            t: Some(4),
            force_hit: Some(false),
            ..Default::default()
        };
        for seed in 0..10 {
            let inst = gen_count(&p, &opts, seed).unwrap();
            assert!(!inst.spec.subset.contains(&inst.spec.branch_value));
            assert_eq!(count(&inst), 4);
        }
    }

    #[test]
    fn sum_scales_count() {
        let p = BoundParams::new(QueryKind::Sum, vec![6, 6], 0.7, 0.05, 20.0).with_sum_max(5.0);
        for v in [3, 2] {
            let inst = gen_count(&p, &fixed(2, 4, vec![1, 3], v), 0).unwrap();
            let expect = if v == 3 { 60 } else { 20 };
            assert_eq!(count(&inst), expect);
            assert_eq!(inst.truth(), expect as f64);
        }
    }

    #[test]
    fn default_k_respects_gap() {
        let p = BoundParams::new(QueryKind::Count2, vec![12, 12], 1.0, 0.01, 9.0);
        let layout = count_layout(&p).unwrap();
        assert_eq!(layout.m, vec![9, 9]);
        let inst = gen_count(&p, &GenOptions::default(), 3).unwrap();
        assert_eq!(inst.spec.k, 3);
        assert_eq!(inst.spec.t, 38);
        assert!(inst.truth_high / inst.truth_low >= 4.0);
        assert_eq!(count(&inst), inst.truth() as u64);
    }

    #[test]
    fn three_tables() {
        let p = BoundParams::new(QueryKind::CountP, vec![6, 6, 6], 1.0, 0.05, 8.0);
        for seed in 0..8 {
            let inst = gen_count(&p, &GenOptions::default(), seed).unwrap();
            assert_eq!(count(&inst), inst.truth() as u64);
            assert!(inst.truth_high >= 4.0 * inst.truth_low);
        }
    }

    #[test]
    fn non_integral_tail_is_rejected() {
        let p = BoundParams::new(QueryKind::Count2, vec![6, 6], 1.0, 0.05, 5.0);
        assert!(matches!(count_layout(&p), Err(GenError::Snap { .. })));
    }

    #[test]
    fn distinct_branches() {
        let p = BoundParams::new(QueryKind::CountDistinct, vec![3, 10], 1.0, 0.05, 1.0);
        let (_, region, k_max) = distinct_layout(&p).unwrap();
        assert_eq!(region, 9);
        assert!((k_max - 3.0).abs() < 1e-12);
        let opts = |v| GenOptions {
            t: Some(6),
            subset: Some(vec![2, 4, 6]),
            branch_value: Some(v),
            ..Default::default()
        };
        let hit = gen_count_distinct(&p, &opts(4), 1).unwrap();
        assert_eq!(hit.spec.k, 3);
        assert_eq!(count(&hit), 4);
        let miss = gen_count_distinct(&p, &opts(5), 1).unwrap();
        assert_eq!(count(&miss), 1);
        assert_eq!(hit.spec.fresh_values, Some([7, 7]));
    }

    #[test]
    fn distinct_boundary() {
        let p = BoundParams::new(QueryKind::CountDistinct, vec![3, 8], 1.0, 0.05, 2.0);
        assert!(gen_count_distinct(&p, &GenOptions::default(), 0).is_err());
    }

    #[test]
    fn group_by_branches() {
        let p = BoundParams::new(QueryKind::GroupBy, vec![4, 8], 1.0, 0.05, 1.0).with_lambda(2.0);
        let base = GenOptions {
            t: Some(8),
            subset: Some(vec![1, 2, 3, 4]),
            ..Default::default()
        };
        let hit = gen_group_by(&p, &GenOptions { branch_value: Some(2), ..base.clone() }, 0).unwrap();
        assert_eq!(hit.spec.k, 4);
        let ans = exact_eval(&hit.relations, &hit.query).unwrap();
        let g = ans.groups().unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.total(), 8);
        assert_eq!(hit.truth_high, 8.0);
        let miss = gen_group_by(&p, &GenOptions { branch_value: Some(7), ..base }, 0).unwrap();
        assert_eq!(
            exact_eval(&miss.relations, &miss.query).unwrap(),
            Answer::Groups(Default::default())
        );
    }

    #[test]
    fn group_by_extremes() {
        let unit = BoundParams::new(QueryKind::GroupBy, vec![4, 8], 1.0, 0.05, 1.0).with_lambda(1.0);
        let inst = gen_group_by(&unit, &GenOptions::default(), 0).unwrap();
        assert_eq!(inst.spec.k, 8);
        let whole = unit.clone().with_lambda(8.0);
        assert_eq!(gen_group_by(&whole, &GenOptions::default(), 0).unwrap().spec.k, 1);
        let bad = unit.with_lambda(3.0);
        assert!(matches!(gen_group_by(&bad, &GenOptions::default(), 0), Err(GenError::Snap { .. })));
    }
}
