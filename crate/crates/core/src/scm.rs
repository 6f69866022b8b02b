//! Resolution of extracted references to their repository and changed file
//! set, through a Gerrit REST adapter or a local fixture directory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ConfigError, ScmError};
use crate::idextract::{CommitRef, RefKey, RefKind};

/// Gerrit prepends this to every JSON body to defeat cross-site script
/// inclusion.
pub const XSSI_PREFIX: &str = ")]}'";

/// Environment variable carrying the bearer token for the Gerrit adapter.
pub const TOKEN_ENV: &str = "MULTIDIMER_SCM_TOKEN";

const MAGIC_FILES: [&str; 2] = ["/COMMIT_MSG", "/MERGE_LIST"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeInfo {
    #[serde(rename = "ref")]
    pub reference: CommitRef,
    pub repository: String,
    pub changed_files: Vec<String>,
    pub resolved_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnomalyReason {
    NotFound,
    Ambiguous,
    BackendError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionAnomaly {
    #[serde(rename = "ref")]
    pub reference: CommitRef,
    pub reason: AnomalyReason,
    pub detail: String,
}

/// What a backend knows about one change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeDetail {
    pub repository: String,
    pub changed_files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookupFailure {
    pub reason: AnomalyReason,
    pub detail: String,
}

impl LookupFailure {
    pub fn new(reason: AnomalyReason, detail: impl Into<String>) -> Self {
        LookupFailure {
            reason,
            detail: detail.into(),
        }
    }

    fn backend(err: ScmError) -> Self {
        LookupFailure::new(AnomalyReason::BackendError, err.to_string())
    }
}

pub type Lookup = Result<ChangeDetail, LookupFailure>;

pub trait ScmBackend: Send + Sync {
    fn lookup(&self, key: &RefKey) -> Lookup;
}

/// Repository-relative, forward-slash path with no empty, `.` or `..`
/// segments. Backslashes are treated as separators.
pub fn normalize_path(raw: &str) -> Option<String> {
    let unified = raw.replace('\\', "/");
    if unified.starts_with('/') {
        return None;
    }
    let segments: Vec<&str> = unified.split('/').filter(|s| !s.is_empty()).collect();
    if segments.is_empty() || segments.iter().any(|s| *s == "." || *s == "..") {
        return None;
    }
    Some(segments.join("/"))
}

/// Validates and canonicalizes a backend answer: paths normalized, sorted,
/// deduplicated, and at least one file present.
fn finish(repository: String, files: Vec<String>) -> Lookup {
    if repository.is_empty() {
        return Err(LookupFailure::new(
            AnomalyReason::BackendError,
            "change has no repository",
        ));
    }
    let mut out = Vec::with_capacity(files.len());
    for file in &files {
        match normalize_path(file) {
            Some(p) => out.push(p),
            None => {
                return Err(LookupFailure::new(
                    AnomalyReason::BackendError,
                    format!("invalid path `{file}` in change"),
                ))
            }
        }
    }
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(LookupFailure::new(
            AnomalyReason::NotFound,
            "change lists no files",
        ));
    }
    Ok(ChangeDetail {
        repository,
        changed_files: out,
    })
}

// ---------------------------------------------------------------------------
// Fixture backend

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRef {
    pub kind: RefKind,
    pub value: String,
}

/// One line of a fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    #[serde(rename = "ref")]
    pub reference: FixtureRef,
    pub repository: String,
    pub changed_files: Vec<String>,
}

/// Serves lookups from `*.jsonl` files in a directory. Commit hashes shorter
/// than 40 digits are resolved by prefix, as git does.
#[derive(Debug, Clone, Default)]
pub struct FixtureBackend {
    records: BTreeMap<RefKey, ChangeDetail>,
}

impl FixtureBackend {
    pub fn from_records(records: impl IntoIterator<Item = FixtureRecord>) -> Self {
        let records = records
            .into_iter()
            .map(|r| {
                (
                    RefKey::new(r.reference.kind, &r.reference.value),
                    ChangeDetail {
                        repository: r.repository,
                        changed_files: r.changed_files,
                    },
                )
            })
            .collect();
        FixtureBackend { records }
    }

    pub fn load(dir: &Path) -> Result<Self, ScmError> {
        let fixture_err = |path: &Path, detail: String| ScmError::Fixture {
            path: path.to_path_buf(),
            detail,
        };
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| fixture_err(dir, e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        let mut records = Vec::new();
        for path in paths {
            let file = fs::File::open(&path).map_err(|e| fixture_err(&path, e.to_string()))?;
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| fixture_err(&path, e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: FixtureRecord = serde_json::from_str(&line)
                    .map_err(|e| fixture_err(&path, format!("line {}: {e}", idx + 1)))?;
                records.push(record);
            }
        }
        Ok(FixtureBackend::from_records(records))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Every record with `key` as its identity or, for abbreviated hashes,
    /// as a prefix of its identity.
    pub fn candidates(&self, key: &RefKey) -> Vec<(&RefKey, &ChangeDetail)> {
        if key.kind == RefKind::GitSha && key.value.len() < 40 {
            let start = RefKey::new(RefKind::GitSha, &key.value);
            self.records
                .range(start..)
                .take_while(|(k, _)| k.kind == RefKind::GitSha && k.value.starts_with(&key.value))
                .collect()
        } else {
            self.records.get_key_value(key).into_iter().collect()
        }
    }

    pub fn records(&self) -> impl Iterator<Item = (&RefKey, &ChangeDetail)> {
        self.records.iter()
    }
}

impl ScmBackend for FixtureBackend {
    fn lookup(&self, key: &RefKey) -> Lookup {
        match self.candidates(key).as_slice() {
            [] => Err(LookupFailure::new(
                AnomalyReason::NotFound,
                "no fixture record",
            )),
            [(_, detail)] => finish(detail.repository.clone(), detail.changed_files.clone()),
            many => Err(LookupFailure::new(
                AnomalyReason::Ambiguous,
                format!("{} fixture records share prefix {}", many.len(), key.value),
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// Gerrit wire format

/// Project name and file list decoded from one change body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedChange {
    pub repository: String,
    pub changed_files: Vec<String>,
    /// Set when the body lacked the `)]}'` guard; parsing went ahead anyway.
    pub missing_prefix: bool,
}

fn strip_xssi(body: &[u8]) -> Result<(&str, bool), ScmError> {
    let text = std::str::from_utf8(body).map_err(|e| ScmError::Parse(e.to_string()))?;
    let trimmed = text.trim_start_matches('\u{feff}');
    match trimmed.strip_prefix(XSSI_PREFIX) {
        Some(rest) => {
            let rest = rest
                .strip_prefix("\r\n")
                .or_else(|| rest.strip_prefix('\n'))
                .unwrap_or(rest);
            Ok((rest, false))
        }
        None => Ok((trimmed, true)),
    }
}

fn decode_json(body: &[u8]) -> Result<(Value, bool), ScmError> {
    if body.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(ScmError::EmptyBody);
    }
    let (json, missing) = strip_xssi(body)?;
    if missing {
        log::warn!("review server response lacks the {XSSI_PREFIX} guard prefix");
    }
    let value = serde_json::from_str(json).map_err(|e| ScmError::Parse(e.to_string()))?;
    Ok((value, missing))
}

/// The `files` map of the current revision, falling back to the first
/// revision listed or a top-level `files` key.
fn change_from_value(value: &Value) -> Result<(String, Vec<String>), ScmError> {
    let obj = value
        .as_object()
        .ok_or_else(|| ScmError::Parse("change body is not a JSON object".into()))?;
    let project = obj
        .get("project")
        .and_then(Value::as_str)
        .ok_or_else(|| ScmError::Parse("change has no `project`".into()))?
        .to_string();

    let revisions = obj.get("revisions").and_then(Value::as_object);
    let current = obj
        .get("current_revision")
        .and_then(Value::as_str)
        .and_then(|rev| revisions.and_then(|r| r.get(rev)));
    let files = current
        .or_else(|| revisions.and_then(|r| r.values().next()))
        .and_then(|rev| rev.get("files"))
        .or_else(|| obj.get("files"));

    let files = match files {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Object(map)) => map
            .keys()
            .filter(|k| !MAGIC_FILES.contains(&k.as_str()))
            .cloned()
            .collect(),
        Some(_) => return Err(ScmError::Parse("`files` is not an object".into())),
    };
    Ok((project, files))
}

/// Decodes a `GET /changes/{id}?o=CURRENT_REVISION&o=CURRENT_FILES` body.
pub fn parse_gerrit_change_response(body: &[u8]) -> Result<ParsedChange, ScmError> {
    let (value, missing_prefix) = decode_json(body)?;
    let (repository, changed_files) = change_from_value(&value)?;
    Ok(ParsedChange {
        repository,
        changed_files,
        missing_prefix,
    })
}

/// Decodes a `GET /changes/?q=commit:{sha}&…` body, a list of changes.
pub fn parse_gerrit_query_response(body: &[u8]) -> Result<Vec<ParsedChange>, ScmError> {
    let (value, missing_prefix) = decode_json(body)?;
    let items = value
        .as_array()
        .ok_or_else(|| ScmError::Parse("query body is not a JSON array".into()))?;
    items
        .iter()
        .map(|item| {
            change_from_value(item).map(|(repository, changed_files)| ParsedChange {
                repository,
                changed_files,
                missing_prefix,
            })
        })
        .collect()
}

/// Talks to a Gerrit-compatible review server.
pub struct GerritBackend {
    endpoint: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl GerritBackend {
    pub fn new(endpoint: &str, token: Option<String>) -> Result<Self, ScmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| ScmError::Transport(e.to_string()))?;
        Ok(GerritBackend {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            token,
            client,
        })
    }

    pub fn url_for(&self, key: &RefKey) -> String {
        match key.kind {
            RefKind::GerritChangeId => format!(
                "{}/changes/{}?o=CURRENT_REVISION&o=CURRENT_FILES",
                self.endpoint, key.value
            ),
            RefKind::GitSha => format!(
                "{}/changes/?q=commit:{}&o=CURRENT_REVISION&o=CURRENT_FILES",
                self.endpoint, key.value
            ),
        }
    }

    fn get(&self, url: &str) -> Result<(u16, Vec<u8>), ScmError> {
        let mut request = self.client.get(url).header("Accept", "application/json");
        if let Some(token) = &self.token {
            request = request.bearer_auth(token);
        }
        let response = request
            .send()
            .map_err(|e| ScmError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .bytes()
            .map_err(|e| ScmError::Transport(e.to_string()))?;
        Ok((status, body.to_vec()))
    }
}

impl ScmBackend for GerritBackend {
    fn lookup(&self, key: &RefKey) -> Lookup {
        let (status, body) = self
            .get(&self.url_for(key))
            .map_err(LookupFailure::backend)?;
        if status == 404 {
            return Err(LookupFailure::new(
                AnomalyReason::NotFound,
                "review server returned 404",
            ));
        }
        if !(200..300).contains(&status) {
            return Err(LookupFailure::new(
                AnomalyReason::BackendError,
                format!("review server returned HTTP {status}"),
            ));
        }
        match key.kind {
            RefKind::GerritChangeId => {
                let change = parse_gerrit_change_response(&body).map_err(LookupFailure::backend)?;
                finish(change.repository, change.changed_files)
            }
            RefKind::GitSha => {
                let mut changes =
                    parse_gerrit_query_response(&body).map_err(LookupFailure::backend)?;
                match changes.len() {
                    0 => Err(LookupFailure::new(
                        AnomalyReason::NotFound,
                        "no change for commit",
                    )),
                    1 => {
                        let change = changes.remove(0);
                        finish(change.repository, change.changed_files)
                    }
                    n => Err(LookupFailure::new(
                        AnomalyReason::Ambiguous,
                        format!("{n} changes match commit {}", key.value),
                    )),
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Backend config

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Gerrit,
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub backend: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_dir: Option<PathBuf>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn default_parallelism() -> usize {
    4
}

impl BackendConfig {
    pub fn fixture(dir: impl Into<PathBuf>) -> Self {
        BackendConfig {
            backend: BackendKind::Fixture,
            endpoint: None,
            credential_ref: None,
            fixture_dir: Some(dir.into()),
            parallelism: default_parallelism(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        crate::config::read_json(path)
    }

    /// Builds the backend. Relative fixture directories resolve against
    /// `base`; the bearer token comes from [`TOKEN_ENV`].
    pub fn build(&self, base: &Path) -> Result<Arc<dyn ScmBackend>, ConfigError> {
        match self.backend {
            BackendKind::Fixture => {
                let dir = self.fixture_dir.as_ref().ok_or_else(|| {
                    ConfigError::Invalid("fixture backend needs `fixture_dir`".into())
                })?;
                let dir = if dir.is_absolute() {
                    dir.clone()
                } else {
                    base.join(dir)
                };
                let backend =
                    FixtureBackend::load(&dir).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(Arc::new(backend))
            }
            BackendKind::Gerrit => {
                let endpoint = self.endpoint.as_deref().ok_or_else(|| {
                    ConfigError::Invalid("gerrit backend needs `endpoint`".into())
                })?;
                let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
                if token.is_none() && self.credential_ref.is_some() {
                    log::warn!(
                        "credential_ref is set but {TOKEN_ENV} is empty; querying anonymously"
                    );
                }
                let backend = GerritBackend::new(endpoint, token)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(Arc::new(backend))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Gateway

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub changes: Vec<ChangeInfo>,
    pub anomalies: Vec<ResolutionAnomaly>,
}

#[derive(Serialize, Deserialize)]
struct DiskEntry {
    key: RefKey,
    result: Lookup,
}

/// Backend plus a per-job lookup cache. Every distinct reference reaches
/// the backend at most once for the gateway's lifetime.
pub struct ScmGateway {
    backend: Arc<dyn ScmBackend>,
    parallelism: usize,
    resolved_at: DateTime<Utc>,
    cache: RwLock<HashMap<RefKey, Lookup>>,
    disk_cache: Option<PathBuf>,
    backend_calls: AtomicUsize,
}

impl ScmGateway {
    /// `resolved_at` stamps every [`ChangeInfo`] this gateway produces.
    pub fn new(backend: Arc<dyn ScmBackend>, resolved_at: DateTime<Utc>) -> Self {
        ScmGateway {
            backend,
            parallelism: 1,
            resolved_at,
            cache: RwLock::new(HashMap::new()),
            disk_cache: None,
            backend_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    /// Seeds the cache from `path` when it exists; [`ScmGateway::persist`]
    /// writes it back. Backend errors are never persisted.
    pub fn with_disk_cache(mut self, path: impl Into<PathBuf>) -> Result<Self, ScmError> {
        let path = path.into();
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| ScmError::Fixture {
                path: path.clone(),
                detail: e.to_string(),
            })?;
            let mut cache = self.cache.write().expect("cache lock");
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let entry: DiskEntry =
                    serde_json::from_str(line).map_err(|e| ScmError::Fixture {
                        path: path.clone(),
                        detail: e.to_string(),
                    })?;
                cache.insert(entry.key, entry.result);
            }
        }
        self.disk_cache = Some(path);
        Ok(self)
    }

    pub fn persist(&self) -> std::io::Result<()> {
        let Some(path) = &self.disk_cache else {
            return Ok(());
        };
        let cache = self.cache.read().expect("cache lock");
        let mut entries: Vec<_> = cache
            .iter()
            .filter(|(_, v)| !matches!(v, Err(f) if f.reason == AnomalyReason::BackendError))
            .collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for (key, result) in entries {
            let line = serde_json::to_string(&DiskEntry {
                key: key.clone(),
                result: result.clone(),
            })?;
            out.push_str(&line);
            out.push('\n');
        }
        crate::store::write_atomic(path, out.as_bytes())
    }

    /// Number of lookups that actually reached the backend.
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::Relaxed)
    }

    fn fetch_missing(&self, keys: Vec<RefKey>) {
        if keys.is_empty() {
            return;
        }
        let next = AtomicUsize::new(0);
        let workers = self.parallelism.min(keys.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(key) = keys.get(i) else { break };
                    self.backend_calls.fetch_add(1, Ordering::Relaxed);
                    let result = self.backend.lookup(key);
                    self.cache
                        .write()
                        .expect("cache lock")
                        .insert(key.clone(), result);
                });
            }
        });
    }

    /// Resolves `refs`, deduplicated on `(source bug, kind, value)`. Each
    /// surviving ref lands in exactly one of the two output lists; both lists
    /// follow input order.
    pub fn resolve(&self, refs: &[CommitRef]) -> Resolution {
        let mut seen = HashSet::new();
        let unique: Vec<&CommitRef> = refs
            .iter()
            .filter(|r| seen.insert((r.source_bug_id.as_str(), r.kind, r.value.as_str())))
            .collect();

        let missing: Vec<RefKey> = {
            let cache = self.cache.read().expect("cache lock");
            let mut pending = HashSet::new();
            unique
                .iter()
                .map(|r| r.key())
                .filter(|k| !cache.contains_key(k) && pending.insert(k.clone()))
                .collect()
        };
        self.fetch_missing(missing);

        let cache = self.cache.read().expect("cache lock");
        let mut out = Resolution::default();
        for r in unique {
            match cache.get(&r.key()).expect("every key fetched") {
                Ok(detail) => out.changes.push(ChangeInfo {
                    reference: r.clone(),
                    repository: detail.repository.clone(),
                    changed_files: detail.changed_files.clone(),
                    resolved_at: self.resolved_at,
                }),
                Err(failure) => out.anomalies.push(ResolutionAnomaly {
                    reference: r.clone(),
                    reason: failure.reason,
                    detail: failure.detail.clone(),
                }),
            }
        }
        out
    }
}
