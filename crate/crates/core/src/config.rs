//! Configuration files and the bundle an analysis job runs with.
//!
//! A config directory holds:
//!
//! | file                 | contents                                   | required |
//! |----------------------|--------------------------------------------|----------|
//! | `vocabulary.json`    | [`Vocabulary`]                             | no       |
//! | `analyzer.json`      | [`AnalyzerConfig`]                         | no       |
//! | `component-map.json` | [`ComponentMapConfig`](crate::component_map::ComponentMapConfig) | yes |
//! | `extraction.json`    | [`ExtractorConfig`]                        | no       |
//! | `scm.json`           | [`BackendConfig`](crate::scm::BackendConfig) | for analysis |

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::component_map::ComponentMap;
use crate::domain::Vocabulary;
use crate::error::ConfigError;
use crate::idextract::ExtractorConfig;

pub const VOCABULARY_FILE: &str = "vocabulary.json";
pub const ANALYZER_FILE: &str = "analyzer.json";
pub const COMPONENT_MAP_FILE: &str = "component-map.json";
pub const EXTRACTION_FILE: &str = "extraction.json";
pub const SCM_FILE: &str = "scm.json";

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn read_optional<T: DeserializeOwned + Default>(path: &Path) -> Result<T, ConfigError> {
    if path.exists() {
        read_json(path)
    } else {
        Ok(T::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzerConfig {
    /// Oldest first. Empty means "sort the labels present".
    pub release_order: Vec<String>,
    pub flag_threshold: f64,
    pub min_answered: usize,
    /// Overrides the vocabulary's internal phase list when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub internal_phases: Option<Vec<String>>,
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        AnalyzerConfig {
            release_order: Vec::new(),
            flag_threshold: 0.20,
            min_answered: 5,
            internal_phases: None,
        }
    }
}

impl AnalyzerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.flag_threshold > 0.0 && self.flag_threshold < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "flag_threshold must lie in (0, 1), got {}",
                self.flag_threshold
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.release_order.iter().find(|r| !seen.insert(*r)) {
            return Err(ConfigError::Invalid(format!(
                "release `{dup}` listed twice"
            )));
        }
        Ok(())
    }
}

/// Everything an analysis needs besides the corpus and the review backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub vocabulary: Vocabulary,
    pub analyzer: AnalyzerConfig,
    pub component_map: ComponentMap,
    #[serde(default)]
    pub extraction: ExtractorConfig,
}

impl AnalysisConfig {
    pub fn new(
        vocabulary: Vocabulary,
        analyzer: AnalyzerConfig,
        component_map: ComponentMap,
    ) -> Result<Self, ConfigError> {
        let config = AnalysisConfig {
            vocabulary,
            analyzer,
            component_map,
            extraction: ExtractorConfig::default(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.vocabulary.validate()?;
        self.analyzer.validate()
    }

    pub fn load_dir(dir: &Path) -> Result<Self, ConfigError> {
        let config = AnalysisConfig {
            vocabulary: read_optional(&dir.join(VOCABULARY_FILE))?,
            analyzer: read_optional(&dir.join(ANALYZER_FILE))?,
            component_map: ComponentMap::load(&dir.join(COMPONENT_MAP_FILE))?,
            extraction: read_optional(&dir.join(EXTRACTION_FILE))?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn internal_phases(&self) -> &[String] {
        self.analyzer
            .internal_phases
            .as_deref()
            .unwrap_or(&self.vocabulary.internal_phases)
    }

    /// Canonical JSON used for fingerprinting.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("config serializes")
    }
}
