//! Column-oriented integer relations and their CSV form.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use thiserror::Error;

/// Join value reserved for the filler rows whose cross product pins the
/// answer to exactly B.
pub const TYPE_ZERO: u64 = 0;

#[derive(Debug, Error)]
pub enum RelationError {
    #[error("relation '{relation}': {message}")]
    Schema { relation: String, message: String },
    #[error("relation '{relation}', line {line}: {message}")]
    Parse {
        relation: String,
        line: u64,
        message: String,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub values: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    name: String,
    columns: Vec<Column>,
    row_count: usize,
}

impl Relation {
    /// Builds a relation; columns must be equally long, uniquely named, and
    /// there must be at least two of them.
    pub fn new(name: impl Into<String>, columns: Vec<Column>) -> Result<Self, RelationError> {
        let name = name.into();
        let schema = |message: String| RelationError::Schema {
            relation: name.clone(),
            message,
        };
        if columns.len() < 2 {
            return Err(schema(format!(
                "needs at least two columns, got {}",
                columns.len()
            )));
        }
        let row_count = columns[0].values.len();
        for c in &columns {
            if c.values.len() != row_count {
                return Err(schema(format!(
                    "column '{}' has {} rows, expected {row_count}",
                    c.name,
                    c.values.len()
                )));
            }
        }
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].iter().any(|o| o.name == c.name) {
                return Err(schema(format!("duplicate column '{}'", c.name)));
            }
        }
        Ok(Relation {
            name,
            columns,
            row_count,
        })
    }

    pub fn from_pairs<S: Into<String>>(
        name: impl Into<String>,
        columns: Vec<(S, Vec<u64>)>,
    ) -> Result<Self, RelationError> {
        Relation::new(
            name,
            columns
                .into_iter()
                .map(|(n, values)| Column {
                    name: n.into(),
                    values,
                })
                .collect(),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn column(&self, name: &str) -> Option<&[u64]> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    pub fn require_column(&self, name: &str) -> Result<&[u64], RelationError> {
        self.column(name).ok_or_else(|| RelationError::Schema {
            relation: self.name.clone(),
            message: format!("no column '{name}'"),
        })
    }

    /// Value → number of rows holding it.
    pub fn frequencies(&self, column: &str) -> Result<BTreeMap<u64, u64>, RelationError> {
        let mut out = BTreeMap::new();
        for &v in self.require_column(column)? {
            *out.entry(v).or_insert(0) += 1;
        }
        Ok(out)
    }

    /// Sorted frequency counts of a column, with the values themselves
    /// forgotten.
    pub fn frequency_multiset(&self, column: &str) -> Result<Vec<u64>, RelationError> {
        let mut f: Vec<u64> = self.frequencies(column)?.into_values().collect();
        f.sort_unstable();
        Ok(f)
    }

    /// Copy holding only the rows for which `keep(row)` is true.
    pub fn filter_rows(&self, mut keep: impl FnMut(usize) -> bool) -> Relation {
        let mask: Vec<bool> = (0..self.row_count).map(&mut keep).collect();
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                values: c
                    .values
                    .iter()
                    .zip(&mask)
                    .filter(|(_, &k)| k)
                    .map(|(&v, _)| v)
                    .collect(),
            })
            .collect();
        Relation {
            name: self.name.clone(),
            columns,
            row_count: mask.iter().filter(|&&k| k).count(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), RelationError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.column_names())?;
        let mut row: Vec<String> = Vec::with_capacity(self.columns.len());
        for r in 0..self.row_count {
            row.clear();
            row.extend(self.columns.iter().map(|c| c.values[r].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(name: impl Into<String>, reader: R) -> Result<Self, RelationError> {
        let name = name.into();
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut values: Vec<Vec<u64>> = vec![Vec::new(); headers.len()];
        for record in rdr.records() {
            let record = record.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                RelationError::Parse {
                    relation: name.clone(),
                    line,
                    message: e.to_string(),
                }
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            for (i, cell) in record.iter().enumerate() {
                let v = cell.trim().parse::<u64>().map_err(|e| RelationError::Parse {
                    relation: name.clone(),
                    line,
                    message: format!("column '{}': '{cell}': {e}", headers[i]),
                })?;
                values[i].push(v);
            }
        }
        Relation::new(
            name,
            headers
                .into_iter()
                .zip(values)
                .map(|(name, values)| Column { name, values })
                .collect(),
        )
    }
}
