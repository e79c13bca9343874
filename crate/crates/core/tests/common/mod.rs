#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use joinbound::joinexec::{group_key, Aggregate, Answer, ColumnRef, GroupReport, JoinQuery};
use joinbound::mathcore::{BoundParams, QueryKind};
use joinbound::relgen::{AdversarialInstance, GenOptions};
use joinbound::Relation;

/// A small parameter cell per generator kind, every table at most 200 rows.
pub struct DeskCase {
    pub name: &'static str,
    pub params: BoundParams,
    pub opts: GenOptions,
}

pub fn desk_cases() -> Vec<DeskCase> {
    let chain_eps = (3.25f64).sqrt() - 1.0;
    vec![
        DeskCase {
            name: "COUNT p=2",
            params: BoundParams::new(QueryKind::Count2, vec![12, 12], 1.0, 0.01, 9.0),
            opts: GenOptions::default(),
        },
        DeskCase {
            name: "COUNT p=3",
            params: BoundParams::new(QueryKind::CountP, vec![8, 8, 8], 1.0, 0.05, 8.0),
            opts: GenOptions::default(),
        },
        DeskCase {
            name: "SUM",
            params: BoundParams::new(QueryKind::Sum, vec![12, 12], 1.0, 0.01, 45.0).with_sum_max(5.0),
            opts: GenOptions::default(),
        },
        DeskCase {
            name: "COUNT_DISTINCT",
            params: BoundParams::new(QueryKind::CountDistinct, vec![3, 10], 1.0, 0.05, 1.0),
            opts: GenOptions {
                t: Some(6),
                ..Default::default()
            },
        },
        DeskCase {
            name: "GROUP_BY",
            params: BoundParams::new(QueryKind::GroupBy, vec![4, 8], 1.0, 0.05, 1.0).with_lambda(2.0),
            opts: GenOptions::default(),
        },
        DeskCase {
            name: "PKFK_COUNT",
            params: BoundParams::new(QueryKind::PkFkCount, vec![11, 40], 0.5, 0.05, 4.0),
            opts: GenOptions::default(),
        },
        DeskCase {
            name: "PKFK_GROUP_BY",
            params: BoundParams::new(QueryKind::PkFkGroupBy, vec![11, 40], 0.5, 0.05, 4.0),
            opts: GenOptions::default(),
        },
        DeskCase {
            name: "HEAVY_HITTER",
            params: BoundParams::new(QueryKind::HeavyHitter, vec![8, 10], 1.0, 0.05, 4.0)
                .with_heavy_hitters(vec![4], vec![4]),
            opts: GenOptions::default(),
        },
        DeskCase {
            name: "CHAIN4",
            params: BoundParams::new(QueryKind::Chain4, vec![10], chain_eps, 0.05, 16.0),
            opts: GenOptions::default(),
        },
    ]
}

/// Sorted frequency multiset of every column of every relation.
pub fn marginal_profile(inst: &AdversarialInstance) -> Vec<(String, Vec<u64>)> {
    inst.relations
        .iter()
        .flat_map(|r| {
            r.column_names()
                .map(|c| (format!("{}.{c}", r.name()), r.frequency_multiset(c).unwrap()))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// `high ≥ (1+ε)²·low`, allowing for rounding in `(1+ε)²` only.
pub fn gap_holds(low: f64, high: f64, epsilon: f64) -> bool {
    let g = (1.0 + epsilon) * (1.0 + epsilon);
    high >= g * low * (1.0 - 1e-12)
}

/// Cartesian-product enumeration of the join: every combination of one row
/// per table, filtered by the predicates and selections, then aggregated.
pub fn naive_eval(rels: &[Relation], query: &JoinQuery) -> Answer {
    let tables = query.tables();
    let rel_of = |name: &str| rels.iter().find(|r| r.name() == name).unwrap();
    let col = |name: &str, c: &str| rel_of(name).column(c).unwrap().to_vec();
    let pos = |name: &str| tables.iter().position(|t| t == name).unwrap();
    let sizes: Vec<usize> = tables.iter().map(|t| rel_of(t).row_count()).collect();
    let preds: Vec<(usize, Vec<u64>, usize, Vec<u64>)> = query
        .join_columns
        .iter()
        .map(|p| {
            (
                pos(&p.left_table),
                col(&p.left_table, &p.left_column),
                pos(&p.right_table),
                col(&p.right_table, &p.right_column),
            )
        })
        .collect();
    let sels: Vec<(usize, Vec<u64>)> = query
        .selection
        .iter()
        .map(|c| (pos(&c.table), col(&c.table, &c.column)))
        .collect();
    let picks = |cols: &[ColumnRef]| -> Vec<(usize, Vec<u64>)> {
        cols.iter().map(|c| (pos(&c.table), col(&c.table, &c.column))).collect()
    };

    let mut count = 0u64;
    let mut sum = 0u64;
    let mut distinct = BTreeSet::new();
    let mut groups: BTreeMap<String, u64> = BTreeMap::new();
    let mut idx = vec![0usize; tables.len()];
    if sizes.iter().all(|&s| s > 0) {
        loop {
            let ok = preds.iter().all(|(l, lc, r, rc)| lc[idx[*l]] == rc[idx[*r]])
                && sels.iter().all(|(t, c)| c[idx[*t]] != 0);
            if ok {
                count += 1;
                match &query.aggregate {
                    Aggregate::Count => {}
                    Aggregate::Sum { column } => sum += col(&column.table, &column.column)[idx[pos(&column.table)]],
                    Aggregate::CountDistinct { columns } => {
                        let key: Vec<u64> = picks(columns).iter().map(|(t, c)| c[idx[*t]]).collect();
                        distinct.insert(key);
                    }
                    Aggregate::GroupBy { columns } => {
                        let key: Vec<u64> = picks(columns).iter().map(|(t, c)| c[idx[*t]]).collect();
                        *groups.entry(group_key(&key)).or_default() += 1;
                    }
                }
            }
            // odometer increment
            let mut i = 0;
            while i < idx.len() {
                idx[i] += 1;
                if idx[i] < sizes[i] {
                    break;
                }
                idx[i] = 0;
                i += 1;
            }
            if i == idx.len() {
                break;
            }
        }
    }
    match &query.aggregate {
        Aggregate::Count => Answer::Scalar(count),
        Aggregate::Sum { .. } => Answer::Scalar(sum),
        Aggregate::CountDistinct { .. } => Answer::Scalar(distinct.len() as u64),
        Aggregate::GroupBy { .. } => Answer::Groups(GroupReport { groups }),
    }
}
