//! Exact evaluation of aggregates over acyclic (chain and star) joins.
//!
//! The default path never materializes the join: each table's rows are
//! weighted by the number of join results they take part in, computed by
//! passing per-value count messages along the join tree. Aggregates that
//! read columns from more than one table fall back to enumerating the join,
//! under a budget on visited partial tuples.

mod brute;
mod freq;
mod query;

pub use brute::brute_force_eval;
pub use freq::{chain_count_by_frequency, top_k_frequencies};
pub use query::{Aggregate, ColumnRef, JoinPair, JoinQuery, Topology};

use query::{find_column, BoundQuery, ColIdx};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use thiserror::Error;

use crate::relation::Relation;

/// Default cap on partial tuples visited by the enumeration fallback.
pub const DEFAULT_BRUTE_FORCE_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("64-bit overflow while accumulating the aggregate")]
    Overflow,
    #[error("enumeration budget of {budget} partial tuples exceeded")]
    BudgetExceeded { budget: u64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Groups of a GROUP-BY result keyed by the comma-joined decimal group values.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupReport {
    pub groups: BTreeMap<String, u64>,
}

impl GroupReport {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.groups.values().sum()
    }
}

pub fn group_key(values: &[u64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Scalar(u64),
    Groups(GroupReport),
}

impl Answer {
    pub fn scalar(&self) -> Option<u64> {
        match self {
            Answer::Scalar(v) => Some(*v),
            Answer::Groups(_) => None,
        }
    }

    pub fn groups(&self) -> Option<&GroupReport> {
        match self {
            Answer::Groups(g) => Some(g),
            Answer::Scalar(_) => None,
        }
    }
}

/// Exact aggregate of the full join result.
pub fn exact_eval(rels: &[Relation], query: &JoinQuery) -> Result<Answer, ExecError> {
    exact_eval_with_budget(rels, query, DEFAULT_BRUTE_FORCE_BUDGET)
}

pub fn exact_eval_with_budget(
    rels: &[Relation],
    query: &JoinQuery,
    budget: u64,
) -> Result<Answer, ExecError> {
    let bound = BoundQuery::bind(rels, query)?;
    match &query.aggregate {
        Aggregate::Count => {
            let w = bound.row_weights(0)?;
            checked_sum(w.iter().copied()).map(Answer::Scalar)
        }
        Aggregate::Sum { column } => {
            let c = find_column(rels, column)?;
            let w = bound.row_weights(c.table)?;
            let vals = bound.values(c);
            let mut acc: u64 = 0;
            for (&wi, &v) in w.iter().zip(vals) {
                let term = wi.checked_mul(v).ok_or(ExecError::Overflow)?;
                acc = acc.checked_add(term).ok_or(ExecError::Overflow)?;
            }
            Ok(Answer::Scalar(acc))
        }
        Aggregate::CountDistinct { columns } => {
            let cols = resolve(rels, columns)?;
            match single_table(&cols) {
                Some(t) => {
                    let w = bound.row_weights(t)?;
                    let mut seen: HashSet<Vec<u64>> = HashSet::new();
                    for (r, &wi) in w.iter().enumerate() {
                        if wi > 0 {
                            seen.insert(cols.iter().map(|&c| bound.values(c)[r]).collect());
                        }
                    }
                    Ok(Answer::Scalar(seen.len() as u64))
                }
                None => brute_force_eval(rels, query, budget),
            }
        }
        Aggregate::GroupBy { columns } => {
            let cols = resolve(rels, columns)?;
            match single_table(&cols) {
                Some(t) => {
                    let w = bound.row_weights(t)?;
                    let mut groups: BTreeMap<String, u64> = BTreeMap::new();
                    let mut key = Vec::with_capacity(cols.len());
                    for (r, &wi) in w.iter().enumerate() {
                        if wi > 0 {
                            key.clear();
                            key.extend(cols.iter().map(|&c| bound.values(c)[r]));
                            let slot = groups.entry(group_key(&key)).or_insert(0);
                            *slot = slot.checked_add(wi).ok_or(ExecError::Overflow)?;
                        }
                    }
                    Ok(Answer::Groups(GroupReport { groups }))
                }
                None => brute_force_eval(rels, query, budget),
            }
        }
    }
}

/// For each row of table `table`, the number of join results it takes
/// part in (0 for rows removed by a selection).
pub fn row_weights(rels: &[Relation], query: &JoinQuery, table: &str) -> Result<Vec<u64>, ExecError> {
    let bound = BoundQuery::bind(rels, query)?;
    let t = query::find_table(rels, table)?;
    bound.row_weights(t)
}

fn resolve(rels: &[Relation], cols: &[ColumnRef]) -> Result<Vec<ColIdx>, ExecError> {
    cols.iter().map(|c| find_column(rels, c)).collect()
}

fn single_table(cols: &[ColIdx]) -> Option<usize> {
    let t = cols.first()?.table;
    cols.iter().all(|c| c.table == t).then_some(t)
}

fn checked_sum(mut it: impl Iterator<Item = u64>) -> Result<u64, ExecError> {
    it.try_fold(0u64, |acc, v| acc.checked_add(v).ok_or(ExecError::Overflow))
}

impl BoundQuery<'_> {
    /// For each row of `root`, the number of join results containing it.
    pub(crate) fn row_weights(&self, root: usize) -> Result<Vec<u64>, ExecError> {
        self.subtree_weights(root, None)
    }

    fn subtree_weights(&self, t: usize, via: Option<usize>) -> Result<Vec<u64>, ExecError> {
        let mut w: Vec<u64> = self.active[t].iter().map(|&a| a as u64).collect();
        for &e in &self.adj[t] {
            if Some(e) == via {
                continue;
            }
            let child = self.edges[e].other(t);
            let msg = self.message(child, e)?;
            let col = self.edge_values(e, t);
            for (wi, v) in w.iter_mut().zip(col) {
                if *wi != 0 {
                    let m = msg.get(v).copied().unwrap_or(0);
                    *wi = wi.checked_mul(m).ok_or(ExecError::Overflow)?;
                }
            }
        }
        Ok(w)
    }

    /// Join value on edge `e` → total weight of `child`'s subtree rows
    /// carrying that value.
    fn message(&self, child: usize, e: usize) -> Result<HashMap<u64, u64>, ExecError> {
        let w = self.subtree_weights(child, Some(e))?;
        let col = self.edge_values(e, child);
        let mut out: HashMap<u64, u64> = HashMap::new();
        for (&wi, &v) in w.iter().zip(col) {
            if wi != 0 {
                let slot = out.entry(v).or_insert(0);
                *slot = slot.checked_add(wi).ok_or(ExecError::Overflow)?;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two(r1: Vec<u64>, r2: Vec<u64>) -> Vec<Relation> {
        let id1 = (0..r1.len() as u64).collect();
        let id2 = (0..r2.len() as u64).collect();
        vec![
            Relation::from_pairs("R1", vec![("c", r1), ("id", id1)]).unwrap(),
            Relation::from_pairs("R2", vec![("c", r2), ("id", id2)]).unwrap(),
        ]
    }

    fn q2(agg: Aggregate) -> JoinQuery {
        JoinQuery::chain(&["R1", "R2"], &[("c", "c")], agg)
    }

    #[test]
    fn hand_count() {
        // a = 7
        let rels = two(vec![7, 7, 0], vec![7, 0, 0]);
        assert_eq!(exact_eval(&rels, &q2(Aggregate::Count)).unwrap(), Answer::Scalar(4));
    }

    #[test]
    fn sum_and_distinct() {
        let rels = two(vec![7, 7, 0], vec![7, 0, 0]);
        let sum = q2(Aggregate::Sum {
            column: ColumnRef::new("R1", "id"),
        });
        // R1 rows 0,1 join once each, row 2 joins twice: 0 + 1 + 2·2
        assert_eq!(exact_eval(&rels, &sum).unwrap(), Answer::Scalar(5));
        let d = q2(Aggregate::CountDistinct {
            columns: vec![ColumnRef::new("R2", "id")],
        });
        assert_eq!(exact_eval(&rels, &d).unwrap(), Answer::Scalar(3));
        let cross = q2(Aggregate::CountDistinct {
            columns: vec![ColumnRef::new("R1", "id"), ColumnRef::new("R2", "id")],
        });
        assert_eq!(exact_eval(&rels, &cross).unwrap(), Answer::Scalar(4));
    }

    #[test]
    fn group_by_single_table() {
        let rels = two(vec![7, 7, 0], vec![7, 0, 0]);
        let g = q2(Aggregate::GroupBy {
            columns: vec![ColumnRef::new("R1", "c")],
        });
        let ans = exact_eval(&rels, &g).unwrap();
        let groups = ans.groups().unwrap();
        assert_eq!(groups.groups, BTreeMap::from([("0".into(), 2), ("7".into(), 2)]));
        assert_eq!(groups.total(), 4);
    }

    #[test]
    fn empty_overlap() {
        let rels = two(vec![1, 2], vec![3, 4]);
        assert_eq!(exact_eval(&rels, &q2(Aggregate::Count)).unwrap(), Answer::Scalar(0));
        let g = q2(Aggregate::GroupBy {
            columns: vec![ColumnRef::new("R1", "c")],
        });
        assert!(exact_eval(&rels, &g).unwrap().groups().unwrap().is_empty());
    }

    #[test]
    fn selection_filters_rows() {
        let dim = Relation::from_pairs("D", vec![("pk", vec![1, 2, 3]), ("sel", vec![1, 0, 1])]).unwrap();
        let fact = Relation::from_pairs("F", vec![("fk", vec![1, 1, 2, 3, 3, 3]), ("id", (0..6).collect())]).unwrap();
        let mut q = JoinQuery {
            topology: Topology::Star,
            join_columns: vec![JoinPair::new("F", "fk", "D", "pk")],
            aggregate: Aggregate::Count,
            selection: vec![ColumnRef::new("D", "sel")],
        };
        let rels = vec![fact, dim];
        assert_eq!(exact_eval(&rels, &q).unwrap(), Answer::Scalar(5));
        q.selection.clear();
        assert_eq!(exact_eval(&rels, &q).unwrap(), Answer::Scalar(6));
    }

    #[test]
    fn schema_errors() {
        let rels = two(vec![1], vec![1]);
        let bad = JoinQuery::chain(&["R1", "R2"], &[("c", "zz")], Aggregate::Count);
        assert!(matches!(exact_eval(&rels, &bad), Err(ExecError::Schema(_))));
        let missing = JoinQuery::chain(&["R1", "R9"], &[("c", "c")], Aggregate::Count);
        assert!(matches!(exact_eval(&rels, &missing), Err(ExecError::Schema(_))));
        let none = JoinQuery {
            topology: Topology::Chain,
            join_columns: vec![],
            aggregate: Aggregate::Count,
            selection: vec![],
        };
        assert!(matches!(exact_eval(&rels, &none), Err(ExecError::Schema(_))));
    }

    #[test]
    fn overflow_detected() {
        let n = 70_000usize;
        let mk = |name: &str| {
            Relation::from_pairs(name, vec![("c", vec![1; n]), ("id", (0..n as u64).collect())]).unwrap()
        };
        let rels = vec![mk("A"), mk("B"), mk("C"), mk("D")];
        let q = JoinQuery::chain(&["A", "B", "C", "D"], &[("c", "c"), ("c", "c"), ("c", "c")], Aggregate::Count);
        assert_eq!(exact_eval(&rels, &q), Err(ExecError::Overflow));
    }
}
