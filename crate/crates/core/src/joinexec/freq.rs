use std::collections::HashMap;

use super::query::{find_column, ColumnRef};
use super::{ExecError, JoinPair};
use crate::relation::Relation;

/// COUNT of a chain join computed only from per-table frequencies of
/// (incoming join value, outgoing join value) pairs.
///
/// Selections are not applied; the predicates must form a simple path.
pub fn chain_count_by_frequency(rels: &[Relation], join_columns: &[JoinPair]) -> Result<u64, ExecError> {
    if join_columns.is_empty() {
        return match rels {
            [only] => Ok(only.row_count() as u64),
            _ => Err(ExecError::Schema("chain without predicates must have one table".into())),
        };
    }
    // resolve each predicate to (table, col) endpoints
    let mut links = Vec::with_capacity(join_columns.len());
    for p in join_columns {
        let l = find_column(rels, &ColumnRef::new(&p.left_table, &p.left_column))?;
        let r = find_column(rels, &ColumnRef::new(&p.right_table, &p.right_column))?;
        links.push(((l.table, l.col), (r.table, r.col)));
    }
    let n = rels.len();
    if links.len() + 1 != n {
        return Err(ExecError::Schema(format!(
            "{n} tables need {} chain predicates, got {}",
            n - 1,
            links.len()
        )));
    }
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, (l, r)) in links.iter().enumerate() {
        incident[l.0].push(i);
        incident[r.0].push(i);
    }
    if incident.iter().any(|v| v.len() > 2 || v.is_empty()) {
        return Err(ExecError::Schema("predicates do not form a chain".into()));
    }
    let start = incident
        .iter()
        .position(|v| v.len() == 1)
        .ok_or_else(|| ExecError::Schema("predicates form a cycle".into()))?;

    // walk the path: (table, incoming col, outgoing col)
    let mut path: Vec<(usize, Option<usize>, Option<usize>)> = Vec::with_capacity(n);
    let mut prev_link: Option<usize> = None;
    let mut t = start;
    loop {
        let next_link = incident[t].iter().copied().find(|&l| Some(l) != prev_link);
        let col_on = |link: usize, table: usize| {
            let (l, r) = links[link];
            if l.0 == table {
                l.1
            } else {
                r.1
            }
        };
        path.push((t, prev_link.map(|l| col_on(l, t)), next_link.map(|l| col_on(l, t))));
        match next_link {
            Some(l) => {
                let (a, b) = links[l];
                t = if a.0 == t { b.0 } else { a.0 };
                prev_link = Some(l);
            }
            None => break,
        }
    }
    if path.len() != n {
        return Err(ExecError::Schema("predicates do not connect every table".into()));
    }

    let values = |t: usize, c: usize| rels[t].columns()[c].values.as_slice();
    let (t0, _, out0) = path[0];
    let mut weight: HashMap<u64, u64> = HashMap::new();
    for &v in values(t0, out0.unwrap()) {
        *weight.entry(v).or_insert(0) += 1;
    }
    for &(t, inc, out) in &path[1..] {
        let inc = values(t, inc.unwrap());
        match out {
            Some(out) => {
                let mut pairs: HashMap<(u64, u64), u64> = HashMap::new();
                for (&l, &r) in inc.iter().zip(values(t, out)) {
                    *pairs.entry((l, r)).or_insert(0) += 1;
                }
                let mut next: HashMap<u64, u64> = HashMap::new();
                for ((l, r), f) in pairs {
                    if let Some(&w) = weight.get(&l) {
                        let add = f.checked_mul(w).ok_or(ExecError::Overflow)?;
                        let slot = next.entry(r).or_insert(0);
                        *slot = slot.checked_add(add).ok_or(ExecError::Overflow)?;
                    }
                }
                weight = next;
            }
            None => {
                let mut freq: HashMap<u64, u64> = HashMap::new();
                for &l in inc {
                    *freq.entry(l).or_insert(0) += 1;
                }
                let mut total: u64 = 0;
                for (l, f) in freq {
                    if let Some(&w) = weight.get(&l) {
                        let add = f.checked_mul(w).ok_or(ExecError::Overflow)?;
                        total = total.checked_add(add).ok_or(ExecError::Overflow)?;
                    }
                }
                return Ok(total);
            }
        }
    }
    unreachable!("path has at least two tables")
}

/// The `k` largest value frequencies of `column`, non-increasing; ties are
/// broken by the smaller value first. Shorter than `k` when the column has
/// fewer distinct values.
pub fn top_k_frequencies(rel: &Relation, column: &str, k: usize) -> Result<Vec<u64>, ExecError> {
    if k == 0 {
        return Err(ExecError::InvalidArgument("K must be at least 1".into()));
    }
    let freqs = rel
        .frequencies(column)
        .map_err(|e| ExecError::Schema(e.to_string()))?;
    let mut ranked: Vec<(u64, u64)> = freqs.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().take(k).map(|(_, f)| f).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(name: &str, cols: Vec<(&str, Vec<u64>)>) -> Relation {
        Relation::from_pairs(name, cols).unwrap()
    }

    #[test]
    fn two_table_frequency_product() {
        let a = rel("A", vec![("c", vec![9, 9, 0]), ("id", vec![0, 1, 2])]);
        let b = rel("B", vec![("c", vec![9, 0, 0]), ("id", vec![0, 1, 2])]);
        let preds = [JoinPair::new("A", "c", "B", "c")];
        assert_eq!(chain_count_by_frequency(&[a, b], &preds).unwrap(), 4);
    }

    #[test]
    fn order_of_predicates_is_irrelevant() {
        let a = rel("A", vec![("x", vec![1, 1, 2]), ("id", vec![0, 1, 2])]);
        let b = rel("B", vec![("x", vec![1, 2]), ("y", vec![5, 6])]);
        let c = rel("C", vec![("y", vec![5, 5, 6]), ("id", vec![0, 1, 2])]);
        let fwd = [JoinPair::new("A", "x", "B", "x"), JoinPair::new("B", "y", "C", "y")];
        let rev = [JoinPair::new("C", "y", "B", "y"), JoinPair::new("B", "x", "A", "x")];
        let rels = [a, b, c];
        // x=1: 2·1·2 = 4, x=2: 1·1·1 = 1
        assert_eq!(chain_count_by_frequency(&rels, &fwd).unwrap(), 5);
        assert_eq!(chain_count_by_frequency(&rels, &rev).unwrap(), 5);
    }

    #[test]
    fn empty_overlap_is_zero() {
        let a = rel("A", vec![("c", vec![1, 2]), ("id", vec![0, 1])]);
        let b = rel("B", vec![("c", vec![3]), ("id", vec![0])]);
        assert_eq!(chain_count_by_frequency(&[a, b], &[JoinPair::new("A", "c", "B", "c")]).unwrap(), 0);
    }

    #[test]
    fn top_k() {
        let r = rel("R", vec![("c", vec![1, 1, 1, 2, 2, 3]), ("id", (0..6).collect())]);
        assert_eq!(top_k_frequencies(&r, "c", 2).unwrap(), vec![3, 2]);
        assert_eq!(top_k_frequencies(&r, "c", 10).unwrap(), vec![3, 2, 1]);
        assert_eq!(top_k_frequencies(&r, "id", 3).unwrap(), vec![1, 1, 1]);
        assert!(top_k_frequencies(&r, "c", 0).is_err());
    }
}
