//! File-backed analysis: corpus file + config directory in, published
//! snapshot out. Configuration is re-read for every run, so edits to the
//! component map only affect later snapshots.

use std::path::PathBuf;
use std::sync::Arc;

use crate::analyzer::{run_analysis, AnalysisSnapshot};
use crate::clock::Clock;
use crate::config::{AnalysisConfig, SCM_FILE};
use crate::error::RunError;
use crate::ingest::{load_corpus_checked, CorpusFormat, CorpusQuery};
use crate::jobs::JobRunner;
use crate::scm::{BackendConfig, ScmGateway};
use crate::store::SnapshotStore;

pub const SCM_CACHE_FILE: &str = "scm-cache.jsonl";

pub struct FileRunner {
    pub corpus: PathBuf,
    pub format: CorpusFormat,
    pub config_dir: PathBuf,
    pub store: SnapshotStore,
    pub clock: Arc<dyn Clock>,
    /// Keep review-system lookups in the store directory between runs.
    pub cache_lookups: bool,
}

impl FileRunner {
    /// Runs without publishing.
    pub fn analyze(&self, query: &CorpusQuery) -> Result<AnalysisSnapshot, RunError> {
        let config = AnalysisConfig::load_dir(&self.config_dir)?;
        let backend_config = BackendConfig::load(&self.config_dir.join(SCM_FILE))?;
        let backend = backend_config.build(&self.config_dir)?;
        let (corpus, report) =
            load_corpus_checked(&self.corpus, self.format, Some(&config.vocabulary))?;
        if report.rejected > 0 {
            log::warn!(
                "{} of {} records rejected from {}",
                report.rejected,
                report.total(),
                self.corpus.display()
            );
        }
        let now = self.clock.now();
        let mut gateway =
            ScmGateway::new(backend, now).with_parallelism(backend_config.parallelism);
        if self.cache_lookups {
            gateway = gateway.with_disk_cache(self.store.root().join(SCM_CACHE_FILE))?;
        }
        let snapshot = run_analysis(&corpus, query, &config, &gateway, now)?;
        if let Err(e) = gateway.persist() {
            log::warn!("failed to persist lookup cache: {e}");
        }
        Ok(snapshot)
    }
}

impl JobRunner for FileRunner {
    fn run(&self, query: &CorpusQuery) -> Result<String, String> {
        let snapshot = self.analyze(query).map_err(|e| e.to_string())?;
        if !self.store.publish(&snapshot).map_err(|e| e.to_string())? {
            log::info!("snapshot {} already published", snapshot.snapshot_id);
        }
        Ok(snapshot.snapshot_id)
    }
}
