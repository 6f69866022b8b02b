//! Consolidated CSV export of an analysis snapshot.

use std::collections::{BTreeSet, HashMap};

use chrono::SecondsFormat;
use serde::{Deserialize, Serialize};

use crate::analyzer::AnalysisSnapshot;
use crate::component_map::Attribution;
use crate::domain::{classify_answer_code, BugReport};

pub const EXPORT_COLUMNS: [&str; 16] = [
    "bug_id",
    "product_id",
    "release",
    "component",
    "repository",
    "file_count",
    "detection_phase",
    "answer_code",
    "answer_group",
    "severity",
    "status",
    "country",
    "customer",
    "document_refs",
    "commit_refs",
    "created_at",
];

/// One `(bug, component)` line. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRow {
    pub bug_id: String,
    pub product_id: String,
    pub release: String,
    pub component: String,
    pub repository: String,
    pub file_count: usize,
    pub detection_phase: String,
    pub answer_code: String,
    pub answer_group: String,
    pub severity: String,
    pub status: String,
    pub country: String,
    pub customer: String,
    pub document_refs: String,
    pub commit_refs: String,
    pub created_at: String,
}

impl ExportRow {
    pub fn from_report(
        report: &BugReport,
        component: &str,
        repository: &str,
        file_count: usize,
        answer_group: &str,
        commit_refs: &str,
    ) -> Self {
        ExportRow {
            bug_id: report.bug_id.clone(),
            product_id: report.product_id.clone(),
            release: report.release.clone(),
            component: component.to_string(),
            repository: repository.to_string(),
            file_count,
            detection_phase: report.detection_phase.clone(),
            answer_code: report.answer_code.clone().unwrap_or_default(),
            answer_group: answer_group.to_string(),
            severity: report.severity.clone().unwrap_or_default(),
            status: report.status.clone(),
            country: report.country.clone().unwrap_or_default(),
            customer: report.customer.clone().unwrap_or_default(),
            document_refs: report.document_refs.join(";"),
            commit_refs: commit_refs.to_string(),
            created_at: report
                .created_at
                .to_rfc3339_opts(SecondsFormat::AutoSi, true),
        }
    }
}

/// Writes header plus `rows` in the given order, RFC 4180 quoting, `\r\n`
/// line endings.
pub fn render_rows(rows: &[ExportRow]) -> Result<Vec<u8>, csv::Error> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::CRLF)
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(Vec::new());
    writer.write_record(EXPORT_COLUMNS)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.into_inner().map_err(|e| e.into_error().into())
}

pub fn export_rows(snapshot: &AnalysisSnapshot) -> Vec<ExportRow> {
    let mut refs_by_bug: HashMap<&str, Vec<&str>> = HashMap::new();
    for r in &snapshot.commit_refs {
        refs_by_bug
            .entry(&r.source_bug_id)
            .or_default()
            .push(&r.value);
    }
    let attributions: HashMap<&str, &Attribution> = snapshot
        .attributions
        .iter()
        .map(|a| (a.bug_id.as_str(), a))
        .collect();
    let table = &snapshot.config.vocabulary.answer_code_groups;

    let mut rows = Vec::new();
    for report in &snapshot.reports {
        let refs = refs_by_bug
            .get(report.bug_id.as_str())
            .map(|v| v.join(";"))
            .unwrap_or_default();
        let group = classify_answer_code(report.answer_code.as_deref(), table);
        match attributions.get(report.bug_id.as_str()) {
            None => rows.push(ExportRow::from_report(
                report,
                "",
                "",
                0,
                group.as_str(),
                &refs,
            )),
            Some(attribution) => {
                for component in &attribution.components {
                    let files: Vec<_> = attribution
                        .files
                        .iter()
                        .filter(|f| &f.component == component)
                        .collect();
                    let repos: BTreeSet<&str> =
                        files.iter().map(|f| f.repository.as_str()).collect();
                    let repos = repos.into_iter().collect::<Vec<_>>().join(";");
                    rows.push(ExportRow::from_report(
                        report,
                        component,
                        &repos,
                        files.len(),
                        group.as_str(),
                        &refs,
                    ));
                }
            }
        }
    }
    rows.sort_by(|a, b| (&a.bug_id, &a.component).cmp(&(&b.bug_id, &b.component)));
    rows
}

pub fn export_csv(snapshot: &AnalysisSnapshot) -> Result<Vec<u8>, csv::Error> {
    render_rows(&export_rows(snapshot))
}
