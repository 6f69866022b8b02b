//! Bug-report analytics: extract commit references from answer texts,
//! resolve them against a code review system, map changed files to
//! architectural components and aggregate reports along ten dimensions.

pub mod analyzer;
pub mod clock;
pub mod component_map;
pub mod config;
pub mod domain;
pub mod error;
pub mod export;
pub mod forge;
pub mod idextract;
pub mod ingest;
pub mod jobs;
pub mod runner;
pub mod schedule;
pub mod scm;
pub mod store;

pub use analyzer::{
    build_heatmap, build_source_tree, cross_tab, fst_validation, run_analysis, AnalysisSnapshot,
    CrossTab, FrequencyRow, FrequencyTable, FstReport, HeatmapMatrix, Ratio, SourceTreeNode,
};
pub use component_map::{Attribution, ComponentMap, ComponentMapConfig, UNMAPPED};
pub use config::{AnalysisConfig, AnalyzerConfig};
pub use domain::{AnswerCodeGroup, BugReport, Dimension, Vocabulary, UNKNOWN};
pub use error::{
    AnalysisError, ConfigError, ForgeError, IngestError, QueryError, RunError, ScmError, StoreError,
};
pub use idextract::{extract_commit_refs, CommitRef, RefKind};
pub use ingest::{CorpusFormat, CorpusQuery};
pub use scm::{ChangeInfo, ResolutionAnomaly, ScmGateway};
pub use store::SnapshotStore;
