//! Append-only run store.
//!
//! Each run lives in `<store_dir>/<run_id>/` with `predictions.jsonl` (one
//! record per prediction, appended as produced) and `manifest.json`.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Prediction, Scenario, Usage};
use crate::corpus::GoldLabel;
use crate::pipeline::Label;

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("run `{0}` not found in the store")]
    UnknownRun(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: malformed record on line {line}: {source}")]
    Malformed {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// One persisted prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredPrediction {
    pub run_id: String,
    pub email_id: String,
    pub scenario: Scenario,
    pub backend_id: String,
    pub label: Label,
    pub raw_completion: String,
    pub summary_text: Option<String>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cached: bool,
    pub timestamp: String,
}

impl StoredPrediction {
    pub fn from_prediction(run_id: &str, p: &Prediction) -> Self {
        Self {
            run_id: run_id.to_string(),
            email_id: p.email_id.clone(),
            scenario: p.scenario,
            backend_id: p.backend_id.clone(),
            label: p.label,
            raw_completion: p.raw_completion.clone(),
            summary_text: p.summary_text.clone(),
            prompt_tokens: p.usage.prompt_tokens,
            completion_tokens: p.usage.completion_tokens,
            cached: p.cached,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        }
    }

    pub fn into_prediction(self) -> Prediction {
        Prediction {
            email_id: self.email_id,
            scenario: self.scenario,
            backend_id: self.backend_id,
            label: self.label,
            raw_completion: self.raw_completion,
            summary_text: self.summary_text,
            usage: Usage {
                prompt_tokens: self.prompt_tokens,
                completion_tokens: self.completion_tokens,
            },
            cached: self.cached,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldEntry {
    pub id: String,
    pub gold_label: GoldLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub budget: usize,
    pub estimator: String,
    pub prompt_digest: String,
}

/// Everything needed to interpret a run's records later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub scenario: Scenario,
    /// Classifier backend ids in run order.
    pub backends: Vec<String>,
    pub summarizer: Option<String>,
    pub policy: PolicySnapshot,
    /// Effective configuration as resolved from flags, file and defaults.
    pub config: serde_json::Value,
    pub corpus_size: usize,
    pub sample_size: usize,
    /// Sampled emails in corpus order.
    pub emails: Vec<GoldEntry>,
}

#[derive(Debug)]
pub struct RunStore {
    dir: PathBuf,
    writer: Mutex<File>,
}

impl RunStore {
    /// Opens (creating if needed) the directory of `run_id` for appending.
    /// A trailing partial line left by an interrupted write is cut off.
    pub fn open(store_dir: &Path, run_id: &str) -> Result<Self, StoreError> {
        let dir = store_dir.join(run_id);
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| StoreError::Io { path, source }
        };
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(PREDICTIONS_FILE);
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        repair_tail(&mut file).map_err(io_err(&path))?;
        Ok(Self {
            dir,
            writer: Mutex::new(file),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append(&self, record: &StoredPrediction) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(record).expect("records serialize");
        line.push(b'\n');
        let path = self.dir.join(PREDICTIONS_FILE);
        let mut file = self.writer.lock().unwrap();
        file.write_all(&line)
            .and_then(|_| file.flush())
            .map_err(|source| StoreError::Io { path, source })
    }

    pub fn records(&self) -> Result<Vec<StoredPrediction>, StoreError> {
        read_records(&self.dir.join(PREDICTIONS_FILE))
    }

    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<(), StoreError> {
        let path = self.dir.join(MANIFEST_FILE);
        let body = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
        fs::write(&path, body).map_err(|source| StoreError::Io { path, source })
    }
}

fn repair_tail(file: &mut File) -> io::Result<()> {
    let len = file.seek(SeekFrom::End(0))?;
    if len == 0 {
        return Ok(());
    }
    file.seek(SeekFrom::Start(0))?;
    let mut content = Vec::with_capacity(len as usize);
    io::Read::read_to_end(file, &mut content)?;
    if content.last() == Some(&b'\n') {
        return Ok(());
    }
    let keep = content
        .iter()
        .rposition(|&b| b == b'\n')
        .map_or(0, |i| i + 1);
    file.set_len(keep as u64)?;
    file.seek(SeekFrom::End(0))?;
    Ok(())
}

/// Reads every record of a predictions file.
pub fn read_records(path: &Path) -> Result<Vec<StoredPrediction>, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(StoreError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| StoreError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Loads a finished (or partial) run: its manifest and records.
pub fn load_run(
    store_dir: &Path,
    run_id: &str,
) -> Result<(RunManifest, Vec<StoredPrediction>), StoreError> {
    let dir = store_dir.join(run_id);
    let manifest_path = dir.join(MANIFEST_FILE);
    let bytes = match fs::read(&manifest_path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(StoreError::UnknownRun(run_id.to_string()))
        }
        Err(source) => {
            return Err(StoreError::Io {
                path: manifest_path,
                source,
            })
        }
    };
    let manifest = serde_json::from_slice(&bytes).map_err(|source| StoreError::Malformed {
        path: manifest_path,
        line: 1,
        source,
    })?;
    let records = read_records(&dir.join(PREDICTIONS_FILE))?;
    Ok((manifest, records))
}
