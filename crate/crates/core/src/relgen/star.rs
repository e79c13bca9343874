use rand::Rng;

use super::snap::Fractional;
use super::{check_t, choose_design, fact_stream, row_ids, AdversarialInstance, AdversarialSpec, GenError, GenOptions};
use crate::joinexec::{Aggregate, ColumnRef, JoinPair, JoinQuery, Topology};
use crate::mathcore::{lower_bound, BoundParams, QueryKind};
use crate::relation::Relation;

/// Integer shape of a PK-FK instance: `(n_D, n_F, B, k)`.
pub(crate) fn pk_fk_layout(params: &BoundParams) -> Result<(u64, u64, u64, usize), GenError> {
    let bound = lower_bound(params)?;
    let (&n_f, dims) = params.table_sizes.split_last().unwrap();
    let n_d = *dims.iter().max().unwrap();
    let mut frac = Fractional::default();
    let b = frac.whole("B", params.b);
    frac.finish()?;
    let b = b.unwrap();
    if b > n_f {
        return Err(GenError::Precondition(format!("B = {b} exceeds n_F = {n_f}")));
    }
    let k = (bound.derived.k + 1e-9).floor() as usize;
    Ok((n_d, n_f, b, k))
}

/// Star join of a fact table `F(fk, id)` with a dimension `D(pk, sel)`.
///
/// `D` holds keys `1..=n_D`; `sel` marks the keys of `S` and `n_D`. The
/// first `n_F − B` foreign keys are uniform over `{1..n_D−1}`, the last B
/// are `n_D`. The GROUP-BY variant draws all `n_F` keys uniformly, so the
/// single group `F.g = 1` exists iff some draw lands in `S`.
pub fn gen_pk_fk(
    params: &BoundParams,
    group_by: bool,
    opts: &GenOptions,
    seed: u64,
) -> Result<AdversarialInstance, GenError> {
    let expected = if group_by { QueryKind::PkFkGroupBy } else { QueryKind::PkFkCount };
    if params.query_kind != expected {
        return Err(GenError::Precondition(format!(
            "group_by = {group_by} needs kind {expected}, got {}",
            params.query_kind
        )));
    }
    let (n_d, n_f, b, k_derived) = pk_fk_layout(params)?;
    let t = (n_d - 1) as usize;
    if let Some(req) = opts.t {
        if req != t {
            return Err(GenError::Precondition(format!("PK-FK fixes t = n_D − 1 = {t}, got {req}")));
        }
    }
    let k = match (&opts.subset, opts.k) {
        (Some(s), _) => s.len(),
        (None, Some(k)) => k,
        (None, None) => k_derived,
    };
    if opts.subset.is_none() {
        if k < 1 {
            return Err(GenError::Precondition(format!(
                "k = 8δ(n_D − 1) = {k_derived} < 1"
            )));
        }
        check_t(k, t)?;
    }
    let (kab, subset) = choose_design(k, t, opts, seed, true)?;

    let random_rows = if group_by { n_f } else { n_f - b } as usize;
    let mut fk: Vec<u64> = match &opts.fk_draws {
        Some(draws) => {
            if draws.len() != random_rows {
                return Err(GenError::Precondition(format!(
                    "expected {random_rows} foreign-key draws, got {}",
                    draws.len()
                )));
            }
            if let Some(bad) = draws.iter().find(|&&d| d == 0 || d as usize > t) {
                return Err(GenError::Precondition(format!("draw {bad} outside 1..={t}")));
            }
            draws.iter().map(|&d| d as u64).collect()
        }
        None => {
            let mut rng = fact_stream(seed);
            (0..random_rows).map(|_| rng.gen_range(1..=t as u64)).collect()
        }
    };
    if !group_by {
        fk.resize(n_f as usize, n_d);
    }
    let mut freq = vec![0u64; n_d as usize];
    for &key in &fk {
        freq[key as usize - 1] += 1;
    }
    let overlap: u64 = subset.iter().map(|&s| freq[s as usize - 1]).sum();

    let pk: Vec<u64> = (1..=n_d).collect();
    let sel: Vec<u64> = pk
        .iter()
        .map(|&key| (key == n_d || subset.binary_search(&(key as u32)).is_ok()) as u64)
        .collect();
    let mut fact_cols = vec![("fk", fk), ("id", row_ids(n_f as usize))];
    if group_by {
        fact_cols.push(("g", vec![1; n_f as usize]));
    }
    let relations = vec![
        Relation::from_pairs("F", fact_cols)?,
        Relation::from_pairs("D", vec![("pk", pk), ("sel", sel)])?,
    ];
    let aggregate = if group_by {
        Aggregate::GroupBy {
            columns: vec![ColumnRef::new("F", "g")],
        }
    } else {
        Aggregate::Count
    };
    let query = JoinQuery {
        topology: Topology::Star,
        join_columns: vec![JoinPair::new("F", "fk", "D", "pk")],
        aggregate,
        selection: vec![ColumnRef::new("D", "sel")],
    };
    let low = if group_by { 0 } else { b };
    Ok(AdversarialInstance {
        relations,
        query,
        truth_low: low as f64,
        truth_high: (low + overlap) as f64,
        branch_hit: overlap > 0,
        spec: AdversarialSpec {
            kind: params.query_kind,
            params: params.clone(),
            k: subset.len(),
            t,
            kab,
            subset,
            branch_value: 0,
            seed,
            design_table: 1,
            design_rows: [0, t],
            fresh_values: None,
            key_frequencies: Some(freq),
            adjustments: Vec::new(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joinexec::exact_eval;

    fn params(group_by: bool) -> BoundParams {
        let kind = if group_by { QueryKind::PkFkGroupBy } else { QueryKind::PkFkCount };
        BoundParams::new(kind, vec![5, 8], 0.5, 0.05, 2.0)
    }

    #[test]
    fn fixed_draws() {
        let opts = GenOptions {
            subset: Some(vec![1, 3]),
            fk_draws: Some(vec![1, 1, 2, 3, 4, 4]),
            ..Default::default()
        };
        let inst = gen_pk_fk(&params(false), false, &opts, 0).unwrap();
        let got = exact_eval(&inst.relations, &inst.query).unwrap();
        assert_eq!(got.scalar(), Some(5));
        assert_eq!(inst.truth(), 5.0);
        assert_eq!(inst.spec.key_frequencies, Some(vec![2, 1, 1, 2, 2]));
    }

    #[test]
    fn empty_subset_counts_b() {
        let opts = GenOptions {
            subset: Some(vec![]),
            ..Default::default()
        };
        let inst = gen_pk_fk(&params(false), false, &opts, 9).unwrap();
        assert!(!inst.branch_hit);
        assert_eq!(exact_eval(&inst.relations, &inst.query).unwrap().scalar(), Some(2));
    }

    #[test]
    fn group_present_iff_overlap() {
        for seed in 0..30 {
            let opts = GenOptions {
                subset: Some(vec![2]),
                ..Default::default()
            };
            let inst = gen_pk_fk(&params(true), true, &opts, seed).unwrap();
            let ans = exact_eval(&inst.relations, &inst.query).unwrap();
            let groups = ans.groups().unwrap();
            assert_eq!(!groups.is_empty(), inst.branch_hit);
            assert_eq!(groups.total() as f64, inst.truth());
        }
    }

    #[test]
    fn derived_k_too_small() {
        let tiny = BoundParams::new(QueryKind::PkFkCount, vec![5, 8], 0.5, 0.01, 2.0);
        assert!(gen_pk_fk(&tiny, false, &GenOptions::default(), 0).is_err());
        let big = BoundParams::new(QueryKind::PkFkCount, vec![11, 40], 0.5, 0.05, 4.0);
        let inst = gen_pk_fk(&big, false, &GenOptions::default(), 0).unwrap();
        assert_eq!(inst.spec.k, 4);
        assert_eq!(inst.spec.t, 10);
        let ans = exact_eval(&inst.relations, &inst.query).unwrap();
        assert_eq!(ans.scalar().unwrap() as f64, inst.truth());
    }
}
