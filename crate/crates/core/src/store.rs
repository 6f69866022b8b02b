//! Append-only snapshot directory.
//!
//! Layout under the store root:
//!
//! ```text
//! snapshots/<snapshot_id>.json
//! ```
//!
//! Files are written to a temporary name and renamed into place, so readers
//! only ever see complete snapshots.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::analyzer::AnalysisSnapshot;
use crate::error::StoreError;
use crate::export::export_csv;
use crate::ingest::CorpusQuery;

/// Environment variable naming the default store root.
pub const DATA_DIR_ENV: &str = "MULTIDIMER_DATA_DIR";

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `bytes` next to `path` and renames over it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(
        ".{name}.{}.{}.tmp",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let mut file = fs::File::create(&tmp)?;
    file.write_all(bytes)?;
    file.sync_all()?;
    fs::rename(&tmp, path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotSummary {
    pub snapshot_id: String,
    pub created_at: DateTime<Utc>,
    pub query: CorpusQuery,
    pub corpus_fingerprint: String,
    pub bugs: usize,
    pub anomalies: usize,
}

impl From<&AnalysisSnapshot> for SnapshotSummary {
    fn from(s: &AnalysisSnapshot) -> Self {
        SnapshotSummary {
            snapshot_id: s.snapshot_id.clone(),
            created_at: s.created_at,
            query: s.query.clone(),
            corpus_fingerprint: s.corpus_fingerprint.clone(),
            bugs: s.reports.len(),
            anomalies: s.anomalies.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SnapshotStore {
    root: PathBuf,
    cache: Arc<RwLock<HashMap<String, Arc<AnalysisSnapshot>>>>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl SnapshotStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let dir = root.join("snapshots");
        fs::create_dir_all(&dir).map_err(|source| StoreError::Io { path: dir, source })?;
        Ok(SnapshotStore {
            root,
            cache: Arc::default(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, id: &str) -> PathBuf {
        self.root.join("snapshots").join(format!("{id}.json"))
    }

    /// Publishes `snapshot`. Returns `false` when a snapshot with the same id
    /// already exists; the stored one is kept untouched.
    pub fn publish(&self, snapshot: &AnalysisSnapshot) -> Result<bool, StoreError> {
        let path = self.path_for(&snapshot.snapshot_id);
        if path.exists() {
            return Ok(false);
        }
        let bytes = serde_json::to_vec(snapshot).map_err(|source| StoreError::Corrupt {
            path: path.clone(),
            source,
        })?;
        write_atomic(&path, &bytes).map_err(|source| StoreError::Io { path, source })?;
        Ok(true)
    }

    pub fn get(&self, id: &str) -> Result<Arc<AnalysisSnapshot>, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::SnapshotNotFound(id.to_string()));
        }
        if let Some(s) = self.cache.read().expect("cache lock").get(id) {
            return Ok(s.clone());
        }
        let path = self.path_for(id);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::SnapshotNotFound(id.to_string()))
            }
            Err(source) => return Err(StoreError::Io { path, source }),
        };
        let snapshot: AnalysisSnapshot = serde_json::from_slice(&bytes)
            .map_err(|source| StoreError::Corrupt { path, source })?;
        let snapshot = Arc::new(snapshot);
        self.cache
            .write()
            .expect("cache lock")
            .insert(id.to_string(), snapshot.clone());
        Ok(snapshot)
    }

    /// Oldest first, ties by id.
    pub fn list(&self) -> Result<Vec<SnapshotSummary>, StoreError> {
        let dir = self.root.join("snapshots");
        let entries = fs::read_dir(&dir).map_err(|source| StoreError::Io {
            path: dir.clone(),
            source,
        })?;
        let mut out = Vec::new();
        for entry in entries.flatten() {
            let name = entry.file_name();
            let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".json")) else {
                continue;
            };
            if !valid_id(id) {
                continue;
            }
            out.push(SnapshotSummary::from(self.get(id)?.as_ref()));
        }
        out.sort_by(|a, b| (a.created_at, &a.snapshot_id).cmp(&(b.created_at, &b.snapshot_id)));
        Ok(out)
    }

    pub fn latest(&self) -> Result<Option<SnapshotSummary>, StoreError> {
        Ok(self.list()?.pop())
    }

    pub fn export_csv(&self, id: &str) -> Result<Vec<u8>, StoreError> {
        let snapshot = self.get(id)?;
        Ok(export_csv(&snapshot)?)
    }
}
