use super::snap::Fractional;
use super::{
    check_t, choose_branch, choose_design, default_t, design_blocks, largest_divisor, row_ids,
    AdversarialInstance, AdversarialSpec, GenError, GenOptions,
};
use crate::joinexec::{Aggregate, JoinQuery};
use crate::mathcore::{chain4_size, lower_bound, BoundParams, QueryKind};
use crate::relation::{Relation, TYPE_ZERO};

/// Integer shape of a heavy-hitter instance.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct HeavyLayout {
    pub a: Vec<u64>,
    pub b: Vec<u64>,
    pub n1: u64,
    pub n2: u64,
    pub base: u64,
    /// Design rows of R2 (`n2 − B/a_K`).
    pub m2: u64,
    /// Number of B-producing value pairs and their per-table multiplicities.
    pub pairs: u64,
    pub pair_rows: (u64, u64),
    pub k_max: f64,
}

pub(crate) fn heavy_layout(params: &BoundParams) -> Result<HeavyLayout, GenError> {
    lower_bound(params)?;
    let a = params.hh_a.clone().unwrap();
    let b = params.hh_b.clone().unwrap();
    let a_k = *a.last().unwrap();
    let b_k = *b.last().unwrap();
    let (n1, n2) = (params.table_sizes[0], params.table_sizes[1]);
    let mut frac = Fractional::default();
    let base = frac.whole("B", params.b);
    let per_a = frac.whole("B/a_K", params.b / a_k as f64);
    let pairs = if params.b >= (a_k * b_k) as f64 {
        frac.whole("B/(a_K·b_K)", params.b / (a_k * b_k) as f64)
    } else {
        Some(1)
    };
    frac.finish()?;
    let (base, per_a, pairs) = (base.unwrap(), per_a.unwrap(), pairs.unwrap());
    let pair_rows = if base >= a_k * b_k { (a_k, b_k) } else { (a_k, per_a) };
    if pairs * pair_rows.0 * pair_rows.1 != base {
        return Err(GenError::Precondition(format!(
            "type-0 blocks do not produce B = {base} join tuples"
        )));
    }
    if a_k + pairs * pair_rows.0 > n1 {
        return Err(GenError::Precondition(format!(
            "n1 = {n1} is too small for the probe and base blocks"
        )));
    }
    if per_a >= n2 {
        return Err(GenError::Precondition(format!("B/a_K = {per_a} leaves no design rows in R2")));
    }
    let m2 = n2 - per_a;
    let k_max = m2 as f64 * (a_k as f64 / (params.gap() * base as f64)).min(1.0);
    Ok(HeavyLayout {
        a,
        b,
        n1,
        n2,
        base,
        m2,
        pairs,
        pair_rows,
        k_max,
    })
}

impl HeavyLayout {
    fn a_k(&self) -> u64 {
        *self.a.last().unwrap()
    }

    fn b_k(&self) -> u64 {
        *self.b.last().unwrap()
    }

    fn pick_k(&self, requested: Option<usize>, gap: f64) -> Result<usize, GenError> {
        let fits = |k: u64| self.m2 / k <= self.b_k();
        match requested {
            Some(k) => {
                let k64 = k as u64;
                if k == 0 || k64 > self.m2 || !self.m2.is_multiple_of(k64) {
                    return Err(GenError::Precondition(format!(
                        "k = {k} must divide the {} design rows",
                        self.m2
                    )));
                }
                if !fits(k64) {
                    return Err(GenError::Precondition(format!(
                        "block size {} exceeds b_K = {}",
                        self.m2 / k64,
                        self.b_k()
                    )));
                }
                if ((self.a_k() * (self.m2 / k64)) as f64) < gap * self.base as f64 * (1.0 - 1e-12) {
                    return Err(GenError::Precondition(format!(
                        "k = {k} leaves a hit below (1+ε)²·B"
                    )));
                }
                Ok(k)
            }
            None => largest_divisor(self.m2, self.k_max, fits)
                .map(|k| k as usize)
                .ok_or_else(|| {
                    GenError::Precondition(format!(
                        "no design size ≤ {} keeps blocks within b_K",
                        self.k_max
                    ))
                }),
        }
    }
}

/// Two-table COUNT whose top-K join-column frequencies are fixed to 𝐚 and 𝐛.
///
/// R1: heavy values (frequencies 𝐚), `a_K` copies of `v`, the base blocks,
/// then singleton fresh values. R2: heavy values (frequencies 𝐛), `k`
/// blocks typed by `S`, then the base blocks. Heavy and base values are
/// fresh, so only `v` and the base blocks join.
pub fn gen_heavy_hitter(params: &BoundParams, opts: &GenOptions, seed: u64) -> Result<AdversarialInstance, GenError> {
    let layout = heavy_layout(params)?;
    let k = layout.pick_k(opts.k, params.gap())?;
    let t = opts.t.unwrap_or_else(|| default_t(k, params.delta));
    check_t(k, t)?;
    let (kab, subset) = choose_design(k, t, opts, seed, false)?;
    let v = choose_branch(t, &subset, opts, seed)?;

    let mut next = t as u64 + 1;
    let mut fresh = || {
        let x = next;
        next += 1;
        x
    };
    let mut r1: Vec<u64> = Vec::new();
    let mut r2: Vec<u64> = Vec::new();
    for &f in &layout.a {
        let h = fresh();
        r1.extend(std::iter::repeat_n(h, f as usize));
    }
    for &f in &layout.b {
        let h = fresh();
        r2.extend(std::iter::repeat_n(h, f as usize));
    }
    let heavy_rows_2 = r2.len();
    r1.extend(std::iter::repeat_n(v as u64, layout.a_k() as usize));
    let block = (layout.m2 / k as u64) as usize;
    r2.extend(design_blocks(&subset, block));
    for _ in 0..layout.pairs {
        let w = fresh();
        r1.extend(std::iter::repeat_n(w, layout.pair_rows.0 as usize));
        r2.extend(std::iter::repeat_n(w, layout.pair_rows.1 as usize));
    }
    let filler = layout.n1 as usize - (r1.len() - layout.a.iter().sum::<u64>() as usize);
    for _ in 0..filler {
        r1.push(fresh());
    }
    let last_fresh = next - 1;
    debug_assert_eq!(r2.len() as u64, layout.b.iter().sum::<u64>() + layout.n2);

    let (l1, l2) = (r1.len(), r2.len());
    let relations = vec![
        Relation::from_pairs("R1", vec![("c", r1), ("id", row_ids(l1))])?,
        Relation::from_pairs("R2", vec![("c", r2), ("id", row_ids(l2))])?,
    ];
    let query = JoinQuery::chain(&["R1", "R2"], &[("c", "c")], Aggregate::Count);
    Ok(AdversarialInstance {
        relations,
        query,
        truth_low: layout.base as f64,
        truth_high: (layout.base + layout.a_k() * block as u64) as f64,
        branch_hit: subset.contains(&v),
        spec: AdversarialSpec {
            kind: QueryKind::HeavyHitter,
            params: params.clone(),
            k,
            t,
            kab,
            subset,
            branch_value: v,
            seed,
            design_table: 1,
            design_rows: [heavy_rows_2, heavy_rows_2 + layout.m2 as usize],
            fresh_values: Some([t as u64 + 1, last_fresh]),
            key_frequencies: None,
            adjustments: Vec::new(),
        },
    })
}

/// Integer shape of a CHAIN4 instance: `(n, x, y)`.
pub(crate) fn chain4_layout(params: &BoundParams) -> Result<(u64, u64, u64), GenError> {
    let bound = lower_bound(params)?;
    let n = chain4_size(params)?;
    let get = |name: &str| {
        bound
            .derived
            .extra
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| *v)
            .unwrap()
    };
    let mut frac = Fractional::default();
    let x = frac.whole("x", get("x"));
    let y = frac.whole("y", get("y"));
    frac.finish()?;
    let (x, y) = (x.unwrap(), y.unwrap());
    if x >= n {
        return Err(GenError::Precondition("x = n leaves no probe rows".into()));
    }
    if y >= n {
        return Err(GenError::Precondition(format!("y = {y} leaves no design rows")));
    }
    Ok((n, x, y))
}

/// Four-table chain `R1.c12 = R2.c12, R2.c23 = R3.c23, R3.c34 = R4.c34`.
///
/// With `t = n − y` positions, R2 has `b` everywhere in its first `t` rows
/// except an `a` at position `v`, R3 has `d` at the positions of `S` and
/// `c` elsewhere, and both carry the position in `c23`. The last `y` rows
/// of R2/R3 and the last `x` rows of R1/R4 are type 0, contributing
/// `x²y² = B`; a hit adds `(n − x)²`.
pub fn gen_chain4(params: &BoundParams, opts: &GenOptions, seed: u64) -> Result<AdversarialInstance, GenError> {
    let (n, x, y) = chain4_layout(params)?;
    let t = (n - y) as usize;
    if let Some(req) = opts.t {
        if req != t {
            return Err(GenError::Precondition(format!("CHAIN4 fixes t = n − y = {t}, got {req}")));
        }
    }
    let k = match opts.k {
        Some(k) => k,
        None => {
            let k = (8.0 * params.delta * t as f64 + 1e-9).floor() as usize;
            if k < 1 {
                return Err(GenError::Precondition(format!("k = 8δ(n − y) < 1 for n − y = {t}")));
            }
            k
        }
    };
    check_t(k, t)?;
    let (kab, subset) = choose_design(k, t, opts, seed, false)?;
    let v = choose_branch(t, &subset, opts, seed)?;

    let (n, x, y) = (n as usize, x as usize, y as usize);
    let base = t as u64;
    let (a, b, c, d) = (base + 1, base + 2, base + 3, base + 4);
    let mut r1 = vec![a; n - x];
    r1.resize(n, TYPE_ZERO);
    let mut r4 = vec![d; n - x];
    r4.resize(n, TYPE_ZERO);
    let mut r2_12: Vec<u64> = (1..=t as u32).map(|j| if j == v { a } else { b }).collect();
    r2_12.resize(n, TYPE_ZERO);
    let mut r3_34: Vec<u64> = (1..=t as u32)
        .map(|j| if subset.binary_search(&j).is_ok() { d } else { c })
        .collect();
    r3_34.resize(n, TYPE_ZERO);
    let mut pos: Vec<u64> = (1..=t as u64).collect();
    pos.resize(n, TYPE_ZERO);
    debug_assert_eq!(y, n - t);

    let relations = vec![
        Relation::from_pairs("R1", vec![("c12", r1), ("id", row_ids(n))])?,
        Relation::from_pairs("R2", vec![("c12", r2_12), ("c23", pos.clone())])?,
        Relation::from_pairs("R3", vec![("c23", pos), ("c34", r3_34)])?,
        Relation::from_pairs("R4", vec![("c34", r4), ("id", row_ids(n))])?,
    ];
    let query = JoinQuery::chain(
        &["R1", "R2", "R3", "R4"],
        &[("c12", "c12"), ("c23", "c23"), ("c34", "c34")],
        Aggregate::Count,
    );
    let low = (x * x * y * y) as u64;
    let high = low + ((n - x) * (n - x)) as u64;
    Ok(AdversarialInstance {
        relations,
        query,
        truth_low: low as f64,
        truth_high: high as f64,
        branch_hit: subset.contains(&v),
        spec: AdversarialSpec {
            kind: QueryKind::Chain4,
            params: params.clone(),
            k,
            t,
            kab,
            subset,
            branch_value: v,
            seed,
            design_table: 2,
            design_rows: [0, t],
            fresh_values: Some([a, d]),
            key_frequencies: None,
            adjustments: Vec::new(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joinexec::{exact_eval, top_k_frequencies};

    fn count(inst: &AdversarialInstance) -> u64 {
        exact_eval(&inst.relations, &inst.query).unwrap().scalar().unwrap()
    }

    fn hh() -> BoundParams {
        BoundParams::new(QueryKind::HeavyHitter, vec![8, 10], 1.0, 0.05, 4.0)
            .with_heavy_hitters(vec![4], vec![4])
    }

    #[test]
    fn heavy_hitter_branches() {
        let layout = heavy_layout(&hh()).unwrap();
        assert_eq!(layout.m2, 9);
        assert_eq!(layout.pick_k(None, 3.0).unwrap(), 3);
        let opts = |hit| GenOptions {
            force_hit: Some(hit),
            ..Default::default()
        };
        let hit = gen_heavy_hitter(&hh(), &opts(true), 4).unwrap();
        assert_eq!(hit.relations[0].row_count(), 12);
        assert_eq!(hit.relations[1].row_count(), 14);
        assert_eq!(count(&hit), 16);
        let miss = gen_heavy_hitter(&hh(), &opts(false), 4).unwrap();
        assert_eq!(count(&miss), 4);
    }

    #[test]
    fn heavy_hitter_top_k() {
        let p = BoundParams::new(QueryKind::HeavyHitter, vec![30, 31], 1.0, 0.05, 6.0)
            .with_heavy_hitters(vec![9, 6], vec![7, 6]);
        for seed in 0..20 {
            let inst = gen_heavy_hitter(&p, &GenOptions::default(), seed).unwrap();
            assert_eq!(top_k_frequencies(&inst.relations[0], "c", 2).unwrap(), vec![9, 6]);
            assert_eq!(top_k_frequencies(&inst.relations[1], "c", 2).unwrap(), vec![7, 6]);
            assert_eq!(count(&inst) as f64, inst.truth());
        }
    }

    #[test]
    fn heavy_hitter_condition() {
        let p = BoundParams::new(QueryKind::HeavyHitter, vec![8, 10], 1.0, 0.05, 8.0)
            .with_heavy_hitters(vec![4], vec![4]);
        let err = gen_heavy_hitter(&p, &GenOptions::default(), 0).unwrap_err();
        assert!(err.to_string().contains("a_K·b_K"));
    }

    fn chain() -> BoundParams {
        BoundParams::new(QueryKind::Chain4, vec![6], (1.25f64).sqrt() - 1.0, 0.05, 16.0)
    }

    #[test]
    fn chain4_branches() {
        assert_eq!(chain4_layout(&chain()).unwrap(), (6, 4, 1));
        let opts = |v| GenOptions {
            k: Some(2),
            subset: Some(vec![2, 5]),
            branch_value: Some(v),
            ..Default::default()
        };
        let hit = gen_chain4(&chain(), &opts(2), 0).unwrap();
        assert_eq!(hit.spec.t, 5);
        assert_eq!(count(&hit), 20);
        let miss = gen_chain4(&chain(), &opts(1), 0).unwrap();
        assert_eq!(count(&miss), 16);
    }

    #[test]
    fn chain4_frequencies_do_not_depend_on_design() {
        let p = chain();
        let first = gen_chain4(&p, &GenOptions { k: Some(2), ..Default::default() }, 0).unwrap();
        let profile = |inst: &AdversarialInstance| {
            inst.relations
                .iter()
                .flat_map(|r| {
                    r.column_names()
                        .map(|c| r.frequency_multiset(c).unwrap())
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>()
        };
        let reference = profile(&first);
        for seed in 1..20 {
            let inst = gen_chain4(&p, &GenOptions { k: Some(2), ..Default::default() }, seed).unwrap();
            assert_eq!(profile(&inst), reference);
        }
    }

    #[test]
    fn chain4_over_ceiling() {
        let p = BoundParams::new(QueryKind::Chain4, vec![6], 1.0, 0.05, 13.0);
        assert!(matches!(gen_chain4(&p, &GenOptions::default(), 0), Err(GenError::Math(_))));
    }
}
