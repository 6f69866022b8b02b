//! Canonical bug-report types and the classification vocabularies shared by
//! every stage of the pipeline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::component_map::Attribution;
use crate::error::ConfigError;

/// Bucket used for every absent or empty attribute value.
pub const UNKNOWN: &str = "UNKNOWN";

/// One tracker record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugReport {
    pub bug_id: String,
    pub product_id: String,
    pub release: String,
    pub title: String,
    pub observation_text: String,
    pub answer_text: String,
    pub answer_code: Option<String>,
    pub severity: Option<String>,
    pub status: String,
    pub detection_phase: String,
    pub country: Option<String>,
    pub customer: Option<String>,
    pub document_refs: Vec<String>,
    pub created_at: DateTime<Utc>,
    pub answered_by: Option<String>,
    pub tracker_url: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnswerCodeGroup {
    AlreadyCorrected,
    WillBeCorrected,
    NoAction,
    Unknown,
}

impl AnswerCodeGroup {
    pub const ALL: [AnswerCodeGroup; 4] = [
        AnswerCodeGroup::AlreadyCorrected,
        AnswerCodeGroup::WillBeCorrected,
        AnswerCodeGroup::NoAction,
        AnswerCodeGroup::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnswerCodeGroup::AlreadyCorrected => "ALREADY_CORRECTED",
            AnswerCodeGroup::WillBeCorrected => "WILL_BE_CORRECTED",
            AnswerCodeGroup::NoAction => "NO_ACTION",
            AnswerCodeGroup::Unknown => "UNKNOWN",
        }
    }
}

impl fmt::Display for AnswerCodeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The ten axes a bug report is classified along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Dimension {
    Component,
    SourceFile,
    AnswerCode,
    Country,
    Customer,
    DetectionPhase,
    Document,
    Release,
    Severity,
    Status,
}

impl Dimension {
    pub const ALL: [Dimension; 10] = [
        Dimension::Component,
        Dimension::SourceFile,
        Dimension::AnswerCode,
        Dimension::Country,
        Dimension::Customer,
        Dimension::DetectionPhase,
        Dimension::Document,
        Dimension::Release,
        Dimension::Severity,
        Dimension::Status,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Component => "COMPONENT",
            Dimension::SourceFile => "SOURCE_FILE",
            Dimension::AnswerCode => "ANSWER_CODE",
            Dimension::Country => "COUNTRY",
            Dimension::Customer => "CUSTOMER",
            Dimension::DetectionPhase => "DETECTION_PHASE",
            Dimension::Document => "DOCUMENT",
            Dimension::Release => "RELEASE",
            Dimension::Severity => "SEVERITY",
            Dimension::Status => "STATUS",
        }
    }

    /// Dimensions where a bug may hold several values at once.
    pub fn is_multi_valued(self) -> bool {
        matches!(
            self,
            Dimension::Component | Dimension::SourceFile | Dimension::Document
        )
    }

    /// Dimensions whose values come from component attribution rather than
    /// the report itself.
    pub fn needs_attribution(self) -> bool {
        matches!(self, Dimension::Component | Dimension::SourceFile)
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown dimension `{0}`")]
pub struct UnknownDimension(pub String);

impl FromStr for Dimension {
    type Err = UnknownDimension;

    /// Accepts `SOURCE_FILE`, `source_file` and `source-file` spellings.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let canon = s.trim().to_ascii_uppercase().replace('-', "_");
        Dimension::ALL
            .into_iter()
            .find(|d| d.as_str() == canon)
            .ok_or_else(|| UnknownDimension(s.to_string()))
    }
}

/// Raw answer code to group lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnswerCodeTable(BTreeMap<String, AnswerCodeGroup>);

impl AnswerCodeTable {
    pub fn new(entries: BTreeMap<String, AnswerCodeGroup>) -> Result<Self, ConfigError> {
        let table = AnswerCodeTable(entries);
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some((code, _)) = self.0.iter().find(|(_, g)| **g == AnswerCodeGroup::Unknown) {
            return Err(ConfigError::Invalid(format!(
                "answer code `{code}` is mapped to UNKNOWN; configured codes need a concrete group"
            )));
        }
        Ok(())
    }

    pub fn get(&self, code: &str) -> Option<AnswerCodeGroup> {
        self.0.get(code).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, AnswerCodeGroup)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl FromIterator<(String, AnswerCodeGroup)> for AnswerCodeTable {
    fn from_iter<I: IntoIterator<Item = (String, AnswerCodeGroup)>>(iter: I) -> Self {
        AnswerCodeTable(iter.into_iter().collect())
    }
}

pub fn classify_answer_code(code: Option<&str>, table: &AnswerCodeTable) -> AnswerCodeGroup {
    code.and_then(|c| table.get(c))
        .unwrap_or(AnswerCodeGroup::Unknown)
}

/// Tracker vocabularies. Lists are optional; an empty list means "accept
/// anything".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Vocabulary {
    pub answer_code_groups: AnswerCodeTable,
    /// Most severe first.
    pub severities: Vec<String>,
    pub detection_phases: Vec<String>,
    pub internal_phases: Vec<String>,
    pub statuses: Vec<String>,
}

impl Vocabulary {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.answer_code_groups.validate()?;
        if !self.detection_phases.is_empty() {
            if let Some(p) = self
                .internal_phases
                .iter()
                .find(|p| !self.detection_phases.contains(p))
            {
                return Err(ConfigError::Invalid(format!(
                    "internal phase `{p}` is not a declared detection phase"
                )));
            }
        }
        for (name, list) in [
            ("severities", &self.severities),
            ("detection_phases", &self.detection_phases),
            ("statuses", &self.statuses),
        ] {
            let distinct: BTreeSet<&String> = list.iter().collect();
            if distinct.len() != list.len() {
                return Err(ConfigError::Invalid(format!("duplicate entry in `{name}`")));
            }
        }
        Ok(())
    }

    pub fn accepts_severity(&self, severity: &str) -> bool {
        self.severities.is_empty() || self.severities.iter().any(|s| s == severity)
    }
}

fn or_unknown(value: Option<&str>) -> BTreeSet<String> {
    match value {
        Some(v) if !v.is_empty() => BTreeSet::from([v.to_string()]),
        _ => BTreeSet::from([UNKNOWN.to_string()]),
    }
}

/// Values `report` takes along `dim`. Never empty: absent attributes yield
/// `{UNKNOWN}`.
pub fn dimension_values(
    report: &BugReport,
    dim: Dimension,
    attribution: Option<&Attribution>,
) -> BTreeSet<String> {
    match dim {
        Dimension::Component => match attribution {
            Some(a) if !a.components.is_empty() => a.components.clone(),
            _ => or_unknown(None),
        },
        Dimension::SourceFile => match attribution {
            Some(a) if !a.files.is_empty() => a.files.iter().map(|f| f.qualified_path()).collect(),
            _ => or_unknown(None),
        },
        Dimension::AnswerCode => or_unknown(report.answer_code.as_deref()),
        Dimension::Country => or_unknown(report.country.as_deref()),
        Dimension::Customer => or_unknown(report.customer.as_deref()),
        Dimension::DetectionPhase => or_unknown(Some(&report.detection_phase)),
        Dimension::Document => {
            let docs: BTreeSet<String> = report
                .document_refs
                .iter()
                .filter(|d| !d.is_empty())
                .cloned()
                .collect();
            if docs.is_empty() {
                or_unknown(None)
            } else {
                docs
            }
        }
        Dimension::Release => or_unknown(Some(&report.release)),
        Dimension::Severity => or_unknown(report.severity.as_deref()),
        Dimension::Status => or_unknown(Some(&report.status)),
    }
}
