use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use super::query::{find_column, BoundQuery, ColIdx};
use super::{group_key, Aggregate, Answer, ExecError, GroupReport, JoinQuery};
use crate::relation::Relation;

/// Evaluates `query` by enumerating every join result.
///
/// Tables are visited in breadth-first order over the join tree; each
/// non-root table is probed through a hash index on the column linking it to
/// an earlier table. Fails with [`ExecError::BudgetExceeded`] once more than
/// `budget` partial tuples have been generated.
pub fn brute_force_eval(rels: &[Relation], query: &JoinQuery, budget: u64) -> Result<Answer, ExecError> {
    let bound = BoundQuery::bind(rels, query)?;
    let n = rels.len();

    // visit order and, for each non-root table, (parent table, parent col, own col)
    let mut order = vec![0usize];
    let mut link: Vec<Option<(usize, usize, usize)>> = vec![None; n];
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut queue = VecDeque::from([0usize]);
    while let Some(t) = queue.pop_front() {
        for &e in &bound.adj[t] {
            let edge = bound.edges[e];
            let o = edge.other(t);
            if !seen[o] {
                seen[o] = true;
                link[o] = Some((t, edge.col_of(t), edge.col_of(o)));
                order.push(o);
                queue.push_back(o);
            }
        }
    }

    let mut index: Vec<HashMap<u64, Vec<usize>>> = vec![HashMap::new(); n];
    for &t in &order[1..] {
        let (_, _, own) = link[t].unwrap();
        let col = &rels[t].columns()[own].values;
        for (r, &v) in col.iter().enumerate() {
            if bound.active[t][r] {
                index[t].entry(v).or_default().push(r);
            }
        }
    }

    let mut sink = Sink::new(rels, &query.aggregate)?;
    let mut walker = Walker {
        bound: &bound,
        order: &order,
        link: &link,
        index: &index,
        assign: vec![usize::MAX; n],
        visited: 0,
        budget,
    };
    let root_rows: Vec<usize> = (0..rels[0].row_count())
        .filter(|&r| bound.active[0][r])
        .collect();
    for r in root_rows {
        walker.assign[0] = r;
        walker.descend(1, &mut sink)?;
    }
    sink.finish()
}

struct Walker<'a> {
    bound: &'a BoundQuery<'a>,
    order: &'a [usize],
    link: &'a [Option<(usize, usize, usize)>],
    index: &'a [HashMap<u64, Vec<usize>>],
    assign: Vec<usize>,
    visited: u64,
    budget: u64,
}

impl Walker<'_> {
    fn descend(&mut self, depth: usize, sink: &mut Sink) -> Result<(), ExecError> {
        self.visited += 1;
        if self.visited > self.budget {
            return Err(ExecError::BudgetExceeded { budget: self.budget });
        }
        if depth == self.order.len() {
            return sink.accept(&self.assign);
        }
        let t = self.order[depth];
        let (parent, parent_col, _) = self.link[t].unwrap();
        let key = self.bound.rels[parent].columns()[parent_col].values[self.assign[parent]];
        let index = self.index;
        if let Some(rows) = index[t].get(&key) {
            for &r in rows {
                self.assign[t] = r;
                self.descend(depth + 1, sink)?;
            }
        }
        Ok(())
    }
}

enum Sink<'a> {
    Count(u64),
    Sum(u64, &'a [u64], usize),
    Distinct(HashSet<Vec<u64>>, Vec<(usize, &'a [u64])>),
    Group(BTreeMap<String, u64>, Vec<(usize, &'a [u64])>),
}

impl<'a> Sink<'a> {
    fn new(rels: &'a [Relation], agg: &Aggregate) -> Result<Self, ExecError> {
        let cols = |cs: &[super::ColumnRef]| -> Result<Vec<(usize, &'a [u64])>, ExecError> {
            cs.iter()
                .map(|c| {
                    let ColIdx { table, col } = find_column(rels, c)?;
                    Ok((table, rels[table].columns()[col].values.as_slice()))
                })
                .collect()
        };
        Ok(match agg {
            Aggregate::Count => Sink::Count(0),
            Aggregate::Sum { column } => {
                let ColIdx { table, col } = find_column(rels, column)?;
                Sink::Sum(0, &rels[table].columns()[col].values, table)
            }
            Aggregate::CountDistinct { columns } => Sink::Distinct(HashSet::new(), cols(columns)?),
            Aggregate::GroupBy { columns } => Sink::Group(BTreeMap::new(), cols(columns)?),
        })
    }

    fn accept(&mut self, assign: &[usize]) -> Result<(), ExecError> {
        match self {
            Sink::Count(c) => *c = c.checked_add(1).ok_or(ExecError::Overflow)?,
            Sink::Sum(acc, vals, t) => {
                *acc = acc.checked_add(vals[assign[*t]]).ok_or(ExecError::Overflow)?
            }
            Sink::Distinct(set, cols) => {
                set.insert(cols.iter().map(|(t, v)| v[assign[*t]]).collect());
            }
            Sink::Group(map, cols) => {
                let key: Vec<u64> = cols.iter().map(|(t, v)| v[assign[*t]]).collect();
                let slot = map.entry(group_key(&key)).or_insert(0);
                *slot = slot.checked_add(1).ok_or(ExecError::Overflow)?;
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<Answer, ExecError> {
        Ok(match self {
            Sink::Count(c) => Answer::Scalar(c),
            Sink::Sum(acc, _, _) => Answer::Scalar(acc),
            Sink::Distinct(set, _) => Answer::Scalar(set.len() as u64),
            Sink::Group(groups, _) => Answer::Groups(GroupReport { groups }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joinexec::{exact_eval, ColumnRef};

    #[test]
    fn agrees_with_fast_path() {
        let r1 = Relation::from_pairs("A", vec![("c", vec![1, 1, 2, 0]), ("g", vec![5, 6, 5, 5])]).unwrap();
        let r2 = Relation::from_pairs("B", vec![("c", vec![1, 2, 2, 0]), ("d", vec![9, 9, 8, 7])]).unwrap();
        let r3 = Relation::from_pairs("C", vec![("d", vec![9, 8, 8, 7]), ("x", vec![1, 2, 3, 4])]).unwrap();
        let rels = vec![r1, r2, r3];
        let base = JoinQuery::chain(&["A", "B", "C"], &[("c", "c"), ("d", "d")], Aggregate::Count);
        let aggs = vec![
            Aggregate::Count,
            Aggregate::Sum { column: ColumnRef::new("C", "x") },
            Aggregate::CountDistinct { columns: vec![ColumnRef::new("A", "g")] },
            Aggregate::GroupBy { columns: vec![ColumnRef::new("A", "g")] },
        ];
        for agg in aggs {
            let q = base.with_aggregate(agg);
            assert_eq!(
                brute_force_eval(&rels, &q, 1_000).unwrap(),
                exact_eval(&rels, &q).unwrap(),
                "{q:?}"
            );
        }
    }

    #[test]
    fn budget_enforced() {
        let r1 = Relation::from_pairs("A", vec![("c", vec![1; 50]), ("id", (0..50).collect())]).unwrap();
        let r2 = Relation::from_pairs("B", vec![("c", vec![1; 50]), ("id", (0..50).collect())]).unwrap();
        let q = JoinQuery::chain(&["A", "B"], &[("c", "c")], Aggregate::Count);
        let rels = vec![r1, r2];
        assert_eq!(
            brute_force_eval(&rels, &q, 100),
            Err(ExecError::BudgetExceeded { budget: 100 })
        );
        assert_eq!(brute_force_eval(&rels, &q, 10_000).unwrap(), Answer::Scalar(2500));
    }
}
