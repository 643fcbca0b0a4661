//! File-backed persistence. Documents are content addressed; each run gets
//! its own directory holding `run.json` plus its artifacts.
//!
//! ```text
//! <root>/documents/<id>.json
//! <root>/runs/<run id>/run.json
//! <root>/runs/<run id>/tables/<k>.json
//! <root>/runs/<run id>/charts/<k>.svg
//! ```
//!
//! Every file is written to a temporary name and renamed into place, so a
//! reader sees either the old or the new content. A run's artifacts are
//! written before its record flips to `done`.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use chartext_core::config::BackendKind;
use chartext_core::llm::{GranularityOption, PipelineTrace, StageError};
use chartext_core::render::ChartSpec;
use chartext_core::topic::Granularity;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Corrupt { path: PathBuf, source: serde_json::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    pub title: String,
    pub body: String,
    pub created_at: DateTime<Utc>,
    pub content_hash: String,
}

/// Hex SHA-256 of the document body.
pub fn content_hash(body: &str) -> String {
    hex::encode(Sha256::digest(body.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub offset: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatementRef {
    StatementSpan(Span),
    StatementText(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunOptions {
    pub granularity: GranularityOption,
    /// Falls back to the configured backend when omitted.
    pub backend: Option<BackendKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pending,
    Running,
    Done,
    Failed,
}

/// One topic's table, addressed by its index `k` in the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRef {
    pub k: usize,
    pub granularity: Granularity,
    pub topic_id: String,
    pub title: String,
    pub url: String,
}

/// Outputs indexed by `k`; `chart_specs[k]` and `svgs[k]` are null for a
/// topic with nothing to chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutputs {
    pub tables: Vec<TableRef>,
    pub chart_specs: Vec<Option<ChartSpec>>,
    pub svgs: Vec<Option<String>>,
    pub trace: PipelineTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    /// Pipeline error with its stage tag; absent when the run failed
    /// outside the pipeline (storage, backend setup).
    pub error: Option<StageError>,
    pub message: String,
    pub trace: Option<PipelineTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub document_id: String,
    #[serde(flatten)]
    pub statement: StatementRef,
    pub options: RunOptions,
    pub status: RunStatus,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub outputs: Option<RunOutputs>,
    pub failure: Option<RunFailure>,
}

/// Artifacts of a finished run, in `k` order.
pub struct Artifacts {
    pub tables: Vec<String>,
    pub svgs: Vec<Option<String>>,
}

pub struct Store {
    root: PathBuf,
    document_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Store, StoreError> {
        let root = root.into();
        for dir in [root.join("documents"), root.join("runs")] {
            fs::create_dir_all(&dir).map_err(|source| StoreError::Io { path: dir, source })?;
        }
        Ok(Store {
            root,
            document_locks: Mutex::new(HashMap::new()),
        })
    }

    fn document_path(&self, id: &str) -> PathBuf {
        self.root.join("documents").join(format!("{id}.json"))
    }

    fn run_dir(&self, id: &str) -> PathBuf {
        self.root.join("runs").join(id)
    }

    /// Stores a document unless one with the same body exists. Returns the
    /// record and whether it was newly created.
    pub fn put_document(&self, title: &str, body: &str) -> Result<(DocumentRecord, bool), StoreError> {
        let hash = content_hash(body);
        let lock = self
            .document_locks
            .lock()
            .expect("lock map is never poisoned")
            .entry(hash.clone())
            .or_default()
            .clone();
        let _guard = lock.lock().expect("document lock is never poisoned");
        if let Some(existing) = self.document(&hash)? {
            return Ok((existing, false));
        }
        let record = DocumentRecord {
            id: hash.clone(),
            title: title.to_string(),
            body: body.to_string(),
            created_at: Utc::now(),
            content_hash: hash,
        };
        write_json(&self.document_path(&record.id), &record)?;
        Ok((record, true))
    }

    pub fn document(&self, id: &str) -> Result<Option<DocumentRecord>, StoreError> {
        if !is_token(id) {
            return Ok(None);
        }
        read_json(&self.document_path(id))
    }

    pub fn put_run(&self, record: &RunRecord) -> Result<(), StoreError> {
        let dir = self.run_dir(&record.id);
        fs::create_dir_all(&dir).map_err(|source| StoreError::Io { path: dir.clone(), source })?;
        write_json(&dir.join("run.json"), record)
    }

    pub fn run(&self, id: &str) -> Result<Option<RunRecord>, StoreError> {
        if !is_token(id) {
            return Ok(None);
        }
        read_json(&self.run_dir(id).join("run.json"))
    }

    /// Writes a run's artifacts. The caller flips the record to `done`
    /// afterwards.
    pub fn put_artifacts(&self, id: &str, artifacts: &Artifacts) -> Result<(), StoreError> {
        let dir = self.run_dir(id);
        for (k, table) in artifacts.tables.iter().enumerate() {
            write_atomic(&dir.join("tables").join(format!("{k}.json")), table.as_bytes())?;
        }
        for (k, svg) in artifacts.svgs.iter().enumerate() {
            if let Some(svg) = svg {
                write_atomic(&dir.join("charts").join(format!("{k}.svg")), svg.as_bytes())?;
            }
        }
        Ok(())
    }

    pub fn table(&self, run: &str, k: usize) -> Result<Option<Vec<u8>>, StoreError> {
        read_bytes(&self.run_dir(run).join("tables").join(format!("{k}.json")))
    }

    pub fn chart(&self, run: &str, k: usize) -> Result<Option<Vec<u8>>, StoreError> {
        read_bytes(&self.run_dir(run).join("charts").join(format!("{k}.svg")))
    }

    /// Every stored run record.
    pub fn runs(&self) -> Result<Vec<RunRecord>, StoreError> {
        let dir = self.root.join("runs");
        let entries = fs::read_dir(&dir).map_err(|source| StoreError::Io { path: dir, source })?;
        let mut runs = Vec::new();
        for entry in entries.flatten() {
            if let Some(record) = read_json(&entry.path().join("run.json"))? {
                runs.push(record);
            }
        }
        Ok(runs)
    }
}

/// Ids are hex digests or UUIDs; anything else never names a file.
fn is_token(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_hexdigit() || b == b'-')
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let io_err = |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    let tmp = path.with_extension(format!("tmp-{}", uuid::Uuid::new_v4().simple()));
    fs::write(&tmp, bytes).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let text = serde_json::to_vec_pretty(value).expect("records serialize");
    write_atomic(path, &text)
}

fn read_bytes(path: &Path) -> Result<Option<Vec<u8>>, StoreError> {
    match fs::read(path) {
        Ok(bytes) => Ok(Some(bytes)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(StoreError::Io {
            path: path.to_path_buf(),
            source,
        }),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Option<T>, StoreError> {
    let Some(bytes) = read_bytes(path)? else { return Ok(None) };
    serde_json::from_slice(&bytes).map(Some).map_err(|source| StoreError::Corrupt {
        path: path.to_path_buf(),
        source,
    })
}
