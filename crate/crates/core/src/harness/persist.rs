//! Run directories and instance directories.
//!
//! A run directory holds `manifest.json` (config and summary),
//! `records.jsonl` and `skipped.jsonl`. An instance directory holds one
//! `<relation>.csv` per relation plus `instance.json` with the query,
//! truths and generation metadata.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{run_experiment, ExperimentConfig, ExperimentRecord, HarnessError, SkippedCell};
use crate::joinexec::JoinQuery;
use crate::relation::Relation;
use crate::relgen::{AdversarialInstance, AdversarialSpec};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const SKIPPED_FILE: &str = "skipped.jsonl";
pub const INSTANCE_FILE: &str = "instance.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub records: Vec<ExperimentRecord>,
    pub skipped: Vec<SkippedCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub records: usize,
    pub skipped: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<serde_json::Value>,
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| HarnessError::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| HarnessError::Config(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| HarnessError::io(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Reads one JSON value per non-empty line; errors name the line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| HarnessError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| HarnessError::Config(e.to_string()))?;
    writeln!(w).map_err(|e| HarnessError::io(path, e))?;
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Writes a run directory.
pub fn write_run(
    dir: &Path,
    cfg: &ExperimentConfig,
    out: &RunOutput,
    summary: Option<serde_json::Value>,
) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        records: out.records.len(),
        skipped: out.skipped.len(),
        summary,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    write_jsonl(&dir.join(RECORDS_FILE), &out.records)?;
    write_jsonl(&dir.join(SKIPPED_FILE), &out.skipped)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, HarnessError> {
    read_json(&dir.join(MANIFEST_FILE))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub records: usize,
    /// Indices of stored records that differ from the re-run.
    pub mismatched: Vec<usize>,
    pub count_matches: bool,
    pub skipped_match: bool,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.mismatched.is_empty() && self.count_matches && self.skipped_match
    }
}

/// Re-runs the experiment stored in `dir` and compares records, ignoring
/// `runtime_ms`.
pub fn verify_run(dir: &Path) -> Result<VerifyReport, HarnessError> {
    let manifest = read_manifest(dir)?;
    let stored: Vec<ExperimentRecord> = read_jsonl(&dir.join(RECORDS_FILE))?;
    let stored_skips: Vec<SkippedCell> = read_jsonl(&dir.join(SKIPPED_FILE))?;
    let (fresh, _) = run_experiment(&manifest.config)?;
    let mismatched = stored
        .iter()
        .zip(&fresh.records)
        .enumerate()
        .filter(|(_, (a, b))| !a.same_outcome(b))
        .map(|(i, _)| i)
        .collect();
    Ok(VerifyReport {
        records: stored.len(),
        mismatched,
        count_matches: stored.len() == fresh.records.len(),
        skipped_match: stored_skips == fresh.skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct InstanceSidecar {
    relations: Vec<String>,
    query: JoinQuery,
    truth_low: f64,
    truth_high: f64,
    branch_hit: bool,
    spec: AdversarialSpec,
}

/// Writes `<name>.csv` for every relation and the `instance.json` sidecar.
pub fn save_instance(dir: &Path, inst: &AdversarialInstance) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    for rel in &inst.relations {
        let path = dir.join(format!("{}.csv", rel.name()));
        let mut w = create(&path)?;
        rel.write_csv(&mut w)?;
        w.flush().map_err(|e| HarnessError::io(&path, e))?;
    }
    let sidecar = InstanceSidecar {
        relations: inst.relations.iter().map(|r| r.name().to_string()).collect(),
        query: inst.query.clone(),
        truth_low: inst.truth_low,
        truth_high: inst.truth_high,
        branch_hit: inst.branch_hit,
        spec: inst.spec.clone(),
    };
    write_json(&dir.join(INSTANCE_FILE), &sidecar)
}

pub fn load_instance(dir: &Path) -> Result<AdversarialInstance, HarnessError> {
    let sidecar: InstanceSidecar = read_json(&dir.join(INSTANCE_FILE))?;
    let relations = sidecar
        .relations
        .iter()
        .map(|name| {
            let path = dir.join(format!("{name}.csv"));
            let file = File::open(&path).map_err(|e| HarnessError::io(&path, e))?;
            Ok(Relation::read_csv(name.as_str(), BufReader::new(file))?)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(AdversarialInstance {
        relations,
        query: sidecar.query,
        truth_low: sidecar.truth_low,
        truth_high: sidecar.truth_high,
        branch_hit: sidecar.branch_hit,
        spec: sidecar.spec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::{BoundParams, QueryKind};
    use crate::relgen::{gen_chain4, GenOptions};

    #[test]
    fn instance_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = BoundParams::new(QueryKind::Chain4, vec![6], (1.25f64).sqrt() - 1.0, 0.05, 16.0);
        let inst = gen_chain4(&p, &GenOptions { k: Some(2), ..Default::default() }, 3).unwrap();
        save_instance(dir.path(), &inst).unwrap();
        let back = load_instance(dir.path()).unwrap();
        assert_eq!(back, inst);
    }

    #[test]
    fn truncated_jsonl_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        fs::write(&path, "{\"a\": 1}\n{\"a\": 2}\n{\"a\": ").unwrap();
        let err = read_jsonl::<serde_json::Value>(&path).unwrap_err();
        match err {
            HarnessError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }
}
