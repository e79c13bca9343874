use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use super::ExecError;
use crate::relation::Relation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Topology {
    #[serde(rename = "CHAIN")]
    Chain,
    #[serde(rename = "STAR")]
    Star,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        ColumnRef {
            table: table.into(),
            column: column.into(),
        }
    }
}

/// Equality predicate `left_table.left_column = right_table.right_column`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinPair {
    pub left_table: String,
    pub left_column: String,
    pub right_table: String,
    pub right_column: String,
}

impl JoinPair {
    pub fn new(lt: &str, lc: &str, rt: &str, rc: &str) -> Self {
        JoinPair {
            left_table: lt.into(),
            left_column: lc.into(),
            right_table: rt.into(),
            right_column: rc.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Aggregate {
    #[serde(rename = "COUNT")]
    Count,
    #[serde(rename = "SUM")]
    Sum { column: ColumnRef },
    #[serde(rename = "COUNT_DISTINCT")]
    CountDistinct { columns: Vec<ColumnRef> },
    #[serde(rename = "GROUP_BY")]
    GroupBy { columns: Vec<ColumnRef> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinQuery {
    pub topology: Topology,
    pub join_columns: Vec<JoinPair>,
    pub aggregate: Aggregate,
    /// Indicator columns; a row survives when every indicator on its table
    /// is non-zero.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub selection: Vec<ColumnRef>,
}

impl JoinQuery {
    /// Chain over `tables` joining consecutive tables on the given columns:
    /// `links[i] = (right column of tables[i], left column of tables[i+1])`.
    pub fn chain(tables: &[&str], links: &[(&str, &str)], aggregate: Aggregate) -> Self {
        assert_eq!(tables.len(), links.len() + 1, "chain needs one link per adjacent pair");
        let join_columns = links
            .iter()
            .enumerate()
            .map(|(i, (l, r))| JoinPair::new(tables[i], l, tables[i + 1], r))
            .collect();
        JoinQuery {
            topology: Topology::Chain,
            join_columns,
            aggregate,
            selection: Vec::new(),
        }
    }

    pub fn with_aggregate(&self, aggregate: Aggregate) -> Self {
        JoinQuery {
            aggregate,
            ..self.clone()
        }
    }

    /// Names of every table mentioned by the join predicates.
    pub fn tables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.join_columns {
            for t in [&p.left_table, &p.right_table] {
                if !out.contains(t) {
                    out.push(t.clone());
                }
            }
        }
        out
    }
}

/// A join predicate resolved to relation and column indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Edge {
    pub a: usize,
    pub a_col: usize,
    pub b: usize,
    pub b_col: usize,
}

impl Edge {
    pub fn other(&self, t: usize) -> usize {
        if self.a == t {
            self.b
        } else {
            self.a
        }
    }

    pub fn col_of(&self, t: usize) -> usize {
        if self.a == t {
            self.a_col
        } else {
            self.b_col
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ColIdx {
    pub table: usize,
    pub col: usize,
}

/// A query checked against a concrete list of relations.
#[derive(Debug, Clone)]
pub(crate) struct BoundQuery<'a> {
    pub rels: &'a [Relation],
    pub edges: Vec<Edge>,
    pub adj: Vec<Vec<usize>>,
    pub active: Vec<Vec<bool>>,
}

pub(crate) fn find_table(rels: &[Relation], name: &str) -> Result<usize, ExecError> {
    rels.iter()
        .position(|r| r.name() == name)
        .ok_or_else(|| ExecError::Schema(format!("unknown table '{name}'")))
}

pub(crate) fn find_column(rels: &[Relation], c: &ColumnRef) -> Result<ColIdx, ExecError> {
    let table = find_table(rels, &c.table)?;
    let col = rels[table]
        .columns()
        .iter()
        .position(|x| x.name == c.column)
        .ok_or_else(|| {
            ExecError::Schema(format!("table '{}' has no column '{}'", c.table, c.column))
        })?;
    Ok(ColIdx { table, col })
}

impl<'a> BoundQuery<'a> {
    pub fn bind(rels: &'a [Relation], query: &JoinQuery) -> Result<Self, ExecError> {
        if rels.is_empty() {
            return Err(ExecError::Schema("no relations".into()));
        }
        for (i, r) in rels.iter().enumerate() {
            if rels[..i].iter().any(|o| o.name() == r.name()) {
                return Err(ExecError::Schema(format!("duplicate table '{}'", r.name())));
            }
        }
        let mut edges = Vec::with_capacity(query.join_columns.len());
        for p in &query.join_columns {
            let l = find_column(rels, &ColumnRef::new(&p.left_table, &p.left_column))?;
            let r = find_column(rels, &ColumnRef::new(&p.right_table, &p.right_column))?;
            if l.table == r.table {
                return Err(ExecError::Schema(format!(
                    "join predicate within a single table '{}'",
                    p.left_table
                )));
            }
            edges.push(Edge {
                a: l.table,
                a_col: l.col,
                b: r.table,
                b_col: r.col,
            });
        }
        let n = rels.len();
        let mut adj = vec![Vec::new(); n];
        for (i, e) in edges.iter().enumerate() {
            adj[e.a].push(i);
            adj[e.b].push(i);
        }
        if edges.len() + 1 != n {
            return Err(ExecError::Schema(format!(
                "{n} tables need {} join predicates, got {}",
                n - 1,
                edges.len()
            )));
        }
        // connected + n-1 edges = tree
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(t) = queue.pop_front() {
            for &e in &adj[t] {
                let o = edges[e].other(t);
                if !seen[o] {
                    seen[o] = true;
                    queue.push_back(o);
                }
            }
        }
        if let Some(lost) = seen.iter().position(|s| !s) {
            return Err(ExecError::Schema(format!(
                "table '{}' is not connected to the join",
                rels[lost].name()
            )));
        }
        match query.topology {
            Topology::Chain => {
                if adj.iter().any(|a| a.len() > 2) {
                    return Err(ExecError::Schema("CHAIN predicates do not form a path".into()));
                }
            }
            Topology::Star => {
                if n > 2 && !adj.iter().any(|a| a.len() == edges.len()) {
                    return Err(ExecError::Schema(
                        "STAR predicates do not share one fact table".into(),
                    ));
                }
            }
        }

        let mut active: Vec<Vec<bool>> = rels.iter().map(|r| vec![true; r.row_count()]).collect();
        for s in &query.selection {
            let c = find_column(rels, s)?;
            let values = &rels[c.table].columns()[c.col].values;
            for (flag, &v) in active[c.table].iter_mut().zip(values) {
                *flag &= v != 0;
            }
        }

        match &query.aggregate {
            Aggregate::Count => {}
            Aggregate::Sum { column } => {
                find_column(rels, column)?;
            }
            Aggregate::CountDistinct { columns } | Aggregate::GroupBy { columns } => {
                if columns.is_empty() {
                    return Err(ExecError::Schema("aggregate needs at least one column".into()));
                }
                for c in columns {
                    find_column(rels, c)?;
                }
            }
        }

        Ok(BoundQuery {
            rels,
            edges,
            adj,
            active,
        })
    }

    pub fn values(&self, c: ColIdx) -> &'a [u64] {
        &self.rels[c.table].columns()[c.col].values
    }

    pub fn edge_values(&self, e: usize, t: usize) -> &'a [u64] {
        let edge = &self.edges[e];
        &self.rels[t].columns()[edge.col_of(t)].values
    }
}
