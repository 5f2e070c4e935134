//! Content-addressed run registry under the output root.
//!
//! ```text
//! <out>/runs/<id>/        record.json spec.json manifest.json checkpoint.bin encoder.bin curve.csv
//! <out>/features/<id>/    <split>_<pool>.bin + .json
//! <out>/diagnostics/<id>/ report.json + CSV tables
//! <out>/ledger.csv
//! <out>/report/
//! ```
//!
//! A run directory is assembled under a temporary name and renamed into
//! place, and nothing writes into it afterwards.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sslab_core::data::Split;
use sslab_core::models::PooledDim;

use crate::config::{RunKind, RunSpec};
use crate::error::{io_err, missing, runtime, Result};

pub const RECORD_FILE: &str = "record.json";
pub const SPEC_FILE: &str = "spec.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const ENCODER_FILE: &str = "encoder.bin";
pub const CURVE_FILE: &str = "curve.csv";

/// Canonical JSON of the spec: object keys sorted, no whitespace.
pub fn canonical_json(spec: &RunSpec) -> Result<String> {
    // serde_json's default map is ordered by key, so a round trip through
    // `Value` sorts every object.
    let value = serde_json::to_value(spec).map_err(|e| runtime(e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| runtime(e.to_string()))
}

/// First 16 hex digits of SHA-256 over the canonical spec.
pub fn run_id(spec: &RunSpec) -> Result<String> {
    let digest = Sha256::digest(canonical_json(spec)?.as_bytes());
    Ok(hex::encode(digest)[..16].to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub status: RunStatus,
    pub dataset: String,
    pub kind: RunKind,
    pub half_classes: bool,
    pub class_count: usize,
    pub train_size: usize,
    pub epochs_run: usize,
    pub halted_early: bool,
    pub final_train_metric: Option<f64>,
    pub final_val_metric: Option<f64>,
    /// Supervised runs only.
    pub end_to_end: Option<crate::ops::EndToEnd>,
    /// Paths relative to the run directory.
    pub checkpoint: String,
    pub encoder: String,
    pub manifest: String,
    pub curve: String,
    pub wallclock_s: f64,
    pub spec: RunSpec,
}

/// Feature file stem, e.g. `test_256` or `train_flat`.
pub fn feature_stem(split: Split, pooled: Option<PooledDim>) -> String {
    match pooled {
        Some(p) => format!("{split}_{}", p.nominal()),
        None => format!("{split}_flat"),
    }
}

#[derive(Debug, Clone)]
pub struct Registry {
    root: PathBuf,
}

impl Registry {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, id: &str) -> PathBuf {
        self.root.join("runs").join(id)
    }

    pub fn features_path(&self, id: &str, split: Split, pooled: Option<PooledDim>) -> PathBuf {
        self.root.join("features").join(id).join(format!("{}.bin", feature_stem(split, pooled)))
    }

    pub fn diagnostics_dir(&self, id: &str) -> PathBuf {
        self.root.join("diagnostics").join(id)
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.root.join("ledger.csv")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn is_complete(&self, id: &str) -> bool {
        self.run_dir(id).join(RECORD_FILE).is_file()
    }

    pub fn load_record(&self, id: &str) -> Result<RunRecord> {
        let path = self.run_dir(id).join(RECORD_FILE);
        if !path.is_file() {
            return Err(missing(format!("run {id} has no completed record under {}", self.root.display())));
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| runtime(format!("{}: {e}", path.display())))
    }

    /// Every completed record, ordered by run id.
    pub fn records(&self) -> Result<Vec<RunRecord>> {
        let dir = self.root.join("runs");
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut ids: Vec<String> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|name| !name.starts_with('.'))
            .collect();
        ids.sort();
        ids.iter().filter(|id| self.is_complete(id)).map(|id| self.load_record(id)).collect()
    }

    /// Fresh scratch directory for assembling run `id`.
    pub fn staging_dir(&self, id: &str) -> Result<PathBuf> {
        let dir = self.root.join("runs").join(format!(".staging-{id}-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(dir)
    }

    /// Write the record into `staging` and move it into place. Returns false
    /// when another process completed the same run first; its copy wins.
    pub fn commit(&self, staging: &Path, record: &RunRecord) -> Result<bool> {
        let spec_path = staging.join(SPEC_FILE);
        let spec_text = serde_json::to_string_pretty(&record.spec).map_err(|e| runtime(e.to_string()))?;
        fs::write(&spec_path, spec_text).map_err(io_err(&spec_path))?;
        let record_path = staging.join(RECORD_FILE);
        let text = serde_json::to_string_pretty(record).map_err(|e| runtime(e.to_string()))?;
        fs::write(&record_path, text).map_err(io_err(&record_path))?;
        let target = self.run_dir(&record.run_id);
        if target.exists() {
            fs::remove_dir_all(staging).map_err(io_err(staging))?;
            return Ok(false);
        }
        match fs::rename(staging, &target) {
            Ok(()) => Ok(true),
            Err(_) if self.is_complete(&record.run_id) => {
                fs::remove_dir_all(staging).map_err(io_err(staging))?;
                Ok(false)
            }
            Err(e) => Err(io_err(&target)(e)),
        }
    }
}
