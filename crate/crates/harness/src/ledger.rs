//! Append-only CSV results ledger.
//!
//! The first row is the header; every row carries the schema version. Appends
//! take an exclusive lock on the file so parallel processes serialize.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sslab_core::evaluation::normalized_accuracy;

use crate::error::{io_err, runtime, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const HEADER: &str = "schema_version,run_id,dataset,kind,seed,pooled_dim,feature_dim,label_fraction,standardized,\
evaluation,train_rows,train_size,train_acc,val_acc,test_acc,normalized_acc";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluation {
    /// Linear probe on frozen features.
    Probe,
    /// The supervised network's own classifier.
    EndToEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub schema_version: u32,
    pub run_id: String,
    pub dataset: String,
    pub kind: String,
    pub seed: u64,
    pub pooled_dim: Option<usize>,
    pub feature_dim: Option<usize>,
    pub label_fraction: f64,
    pub standardized: bool,
    pub evaluation: Evaluation,
    pub train_rows: usize,
    /// Size of the dataset's TRAIN split, whatever fraction was labeled.
    pub train_size: usize,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub normalized_acc: Option<f64>,
}

impl LedgerRow {
    fn same_result(&self, other: &LedgerRow) -> bool {
        self.run_id == other.run_id
            && self.pooled_dim == other.pooled_dim
            && self.label_fraction == other.label_fraction
            && self.standardized == other.standardized
            && self.evaluation == other.evaluation
    }

    /// The end-to-end supervised row a probe row is normalized by.
    pub fn is_baseline_for(&self, dataset: &str) -> bool {
        self.evaluation == Evaluation::EndToEnd && self.kind == "supervised" && self.dataset == dataset
    }
}

fn parse(text: &str, path: &Path) -> Result<Vec<LedgerRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<&str> = HEADER.split(',').collect();
    let found = reader.headers().map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    if found.iter().collect::<Vec<_>>() != header {
        return Err(runtime(format!("{}: header does not match ledger schema v{SCHEMA_VERSION}", path.display())));
    }
    let mut rows = Vec::new();
    for r in reader.deserialize::<LedgerRow>() {
        let row = r.map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        if row.schema_version != SCHEMA_VERSION {
            return Err(runtime(format!("{}: row with schema version {}", path.display(), row.schema_version)));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// All rows; a missing file reads as empty.
pub fn read_ledger(path: &Path) -> Result<Vec<LedgerRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    if text.is_empty() {
        return Ok(Vec::new());
    }
    parse(&text, path)
}

fn render_row(row: &LedgerRow) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.serialize(row).map_err(|e| runtime(e.to_string()))?;
    String::from_utf8(w.into_inner().map_err(|e| runtime(e.to_string()))?).map_err(|e| runtime(e.to_string()))
}

/// Outcome of [`append_row`].
#[derive(Debug, Clone, PartialEq)]
pub enum Appended {
    Written(LedgerRow),
    /// An equivalent row was already present; it is returned unchanged.
    Existing(LedgerRow),
}

impl Appended {
    pub fn row(&self) -> &LedgerRow {
        match self {
            Appended::Written(r) | Appended::Existing(r) => r,
        }
    }
}

/// Append under an exclusive lock. Probe rows get `normalized_acc` when a
/// supervised end-to-end row for the same dataset is already present.
pub fn append_row(path: &Path, mut row: LedgerRow) -> Result<Appended> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut file: File = OpenOptions::new().read(true).append(true).create(true).open(path).map_err(io_err(path))?;
    file.lock().map_err(io_err(path))?;
    let mut text = String::new();
    file.seek(SeekFrom::Start(0)).map_err(io_err(path))?;
    file.read_to_string(&mut text).map_err(io_err(path))?;
    let existing = if text.is_empty() { Vec::new() } else { parse(&text, path)? };
    if let Some(found) = existing.iter().find(|r| r.same_result(&row)) {
        return Ok(Appended::Existing(found.clone()));
    }
    row.schema_version = SCHEMA_VERSION;
    row.normalized_acc = None;
    if row.evaluation == Evaluation::Probe {
        let baseline = existing.iter().find(|r| r.is_baseline_for(&row.dataset)).and_then(|r| r.test_acc);
        if let (Some(sup), Some(acc)) = (baseline, row.test_acc) {
            row.normalized_acc = normalized_accuracy(acc, sup).ok();
        }
    }
    let mut out = String::new();
    if text.is_empty() {
        out.push_str(HEADER);
        out.push('\n');
    }
    out.push_str(&render_row(&row)?);
    file.write_all(out.as_bytes()).map_err(io_err(path))?;
    file.flush().map_err(io_err(path))?;
    Ok(Appended::Written(row))
}
