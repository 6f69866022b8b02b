//! Attribution of resolved changes to architectural components via a
//! repository table and a per-repository path-prefix table.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::BugReport;
use crate::error::ConfigError;
use crate::scm::ChangeInfo;

/// Component assigned to files no table entry covers.
pub const UNMAPPED: &str = "UNMAPPED";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathRule {
    pub repo: String,
    pub prefix: String,
    pub component: String,
}

/// On-disk shape of the map config.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentMapConfig {
    pub components: Vec<String>,
    #[serde(default)]
    pub repo_table: BTreeMap<String, String>,
    #[serde(default)]
    pub path_table: Vec<PathRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ComponentMapConfig", into = "ComponentMapConfig")]
pub struct ComponentMap {
    config: ComponentMapConfig,
    /// `(repo, prefix)` -> component.
    index: HashMap<(String, String), String>,
}

fn normalize_prefix(raw: &str) -> Result<String, ConfigError> {
    let segments: Vec<&str> = raw.split('/').filter(|s| !s.is_empty()).collect();
    if segments.is_empty() {
        return Err(ConfigError::Invalid(format!(
            "path prefix `{raw}` is empty; map whole repositories through repo_table"
        )));
    }
    if segments.iter().any(|s| *s == "." || *s == "..") {
        return Err(ConfigError::Invalid(format!(
            "path prefix `{raw}` has relative segments"
        )));
    }
    Ok(segments.join("/"))
}

impl TryFrom<ComponentMapConfig> for ComponentMap {
    type Error = ConfigError;

    fn try_from(config: ComponentMapConfig) -> Result<Self, Self::Error> {
        ComponentMap::new(config)
    }
}

impl From<ComponentMap> for ComponentMapConfig {
    fn from(map: ComponentMap) -> Self {
        map.config
    }
}

impl ComponentMap {
    pub fn new(mut config: ComponentMapConfig) -> Result<Self, ConfigError> {
        let universe: HashSet<&str> = config.components.iter().map(String::as_str).collect();
        if universe.len() != config.components.len() {
            return Err(ConfigError::Invalid(
                "duplicate component in universe".into(),
            ));
        }
        if universe.contains(UNMAPPED) {
            return Err(ConfigError::Invalid(format!("`{UNMAPPED}` is reserved")));
        }
        for (repo, component) in &config.repo_table {
            if !universe.contains(component.as_str()) {
                return Err(ConfigError::Invalid(format!(
                    "repo_table maps `{repo}` to undeclared component `{component}`"
                )));
            }
        }
        let mut index = HashMap::new();
        for rule in &mut config.path_table {
            rule.prefix = normalize_prefix(&rule.prefix)?;
            if !universe.contains(rule.component.as_str()) {
                return Err(ConfigError::Invalid(format!(
                    "path_table maps `{}:{}` to undeclared component `{}`",
                    rule.repo, rule.prefix, rule.component
                )));
            }
            let key = (rule.repo.clone(), rule.prefix.clone());
            if index.insert(key, rule.component.clone()).is_some() {
                return Err(ConfigError::Invalid(format!(
                    "path_table lists `{}:{}` more than once",
                    rule.repo, rule.prefix
                )));
            }
        }
        Ok(ComponentMap { config, index })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let config: ComponentMapConfig = crate::config::read_json(path)?;
        ComponentMap::new(config)
    }

    pub fn config(&self) -> &ComponentMapConfig {
        &self.config
    }

    pub fn components(&self) -> &[String] {
        &self.config.components
    }

    /// Component for one file: the longest path prefix registered for the
    /// repository, else the repository entry, else `None`.
    pub fn map_file(&self, repo: &str, path: &str) -> Option<&str> {
        let segments: Vec<&str> = path.split('/').collect();
        for depth in (1..=segments.len()).rev() {
            let prefix = segments[..depth].join("/");
            if let Some(component) = self.index.get(&(repo.to_string(), prefix)) {
                return Some(component);
            }
        }
        self.config.repo_table.get(repo).map(String::as_str)
    }
}

pub fn map_change(change: &ChangeInfo, map: &ComponentMap) -> BTreeSet<String> {
    change
        .changed_files
        .iter()
        .map(|file| {
            map.map_file(&change.repository, file)
                .unwrap_or(UNMAPPED)
                .to_string()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AttributedFile {
    pub repository: String,
    pub path: String,
    pub component: String,
}

impl AttributedFile {
    pub fn new(repository: &str, path: &str, component: &str) -> Self {
        AttributedFile {
            repository: repository.into(),
            path: path.into(),
            component: component.into(),
        }
    }

    /// `repository/path`, the SOURCE_FILE dimension value.
    pub fn qualified_path(&self) -> String {
        format!("{}/{}", self.repository, self.path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribution {
    pub bug_id: String,
    pub components: BTreeSet<String>,
    /// Sorted, one entry per distinct `(repository, path)`.
    pub files: Vec<AttributedFile>,
}

impl Attribution {
    pub fn from_files(bug_id: &str, files: impl IntoIterator<Item = AttributedFile>) -> Self {
        let files: BTreeSet<AttributedFile> = files.into_iter().collect();
        Attribution {
            bug_id: bug_id.to_string(),
            components: files.iter().map(|f| f.component.clone()).collect(),
            files: files.into_iter().collect(),
        }
    }
}

/// One attribution per report that has at least one resolved change, in
/// report order.
pub fn attribute_bugs(
    reports: &[BugReport],
    changes: &HashMap<String, Vec<ChangeInfo>>,
    map: &ComponentMap,
) -> Vec<Attribution> {
    reports
        .iter()
        .filter_map(|report| {
            let bug_changes = changes.get(&report.bug_id).filter(|c| !c.is_empty())?;
            let files = bug_changes.iter().flat_map(|change| {
                change.changed_files.iter().map(|file| {
                    let component = map.map_file(&change.repository, file).unwrap_or(UNMAPPED);
                    AttributedFile::new(&change.repository, file, component)
                })
            });
            Some(Attribution::from_files(&report.bug_id, files))
        })
        .collect()
}

/// Groups resolved changes by the bug their reference came from.
pub fn changes_by_bug(changes: &[ChangeInfo]) -> HashMap<String, Vec<ChangeInfo>> {
    let mut out: HashMap<String, Vec<ChangeInfo>> = HashMap::new();
    for change in changes {
        out.entry(change.reference.source_bug_id.clone())
            .or_default()
            .push(change.clone());
    }
    out
}
