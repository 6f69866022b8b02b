//! Loading bug-report corpora from canonical export files and selecting the
//! subset an analysis job covers.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::{BugReport, Vocabulary};
use crate::error::{IngestError, QueryError};
use crate::export::{ExportRow, EXPORT_COLUMNS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "csv" => Ok(CorpusFormat::Csv),
            other => Err(format!(
                "unknown corpus format `{other}` (expected jsonl or csv)"
            )),
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusFormat::Jsonl => "jsonl",
            CorpusFormat::Csv => "csv",
        })
    }
}

/// Product set plus half-open `[from, to)` creation window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawQuery")]
pub struct CorpusQuery {
    pub product_ids: BTreeSet<String>,
    pub from: DateTime<Utc>,
    pub to: DateTime<Utc>,
}

#[derive(Deserialize)]
struct RawQuery {
    product_ids: BTreeSet<String>,
    from: DateTime<Utc>,
    to: DateTime<Utc>,
}

impl TryFrom<RawQuery> for CorpusQuery {
    type Error = QueryError;

    fn try_from(raw: RawQuery) -> Result<Self, Self::Error> {
        CorpusQuery::new(raw.product_ids, raw.from, raw.to)
    }
}

impl CorpusQuery {
    pub fn new<I, S>(
        products: I,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
    ) -> Result<Self, QueryError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let product_ids: BTreeSet<String> = products.into_iter().map(Into::into).collect();
        if product_ids.is_empty() {
            return Err(QueryError::NoProducts);
        }
        if from >= to {
            return Err(QueryError::EmptyWindow {
                from: from.to_rfc3339_opts(SecondsFormat::AutoSi, true),
                to: to.to_rfc3339_opts(SecondsFormat::AutoSi, true),
            });
        }
        Ok(CorpusQuery {
            product_ids,
            from,
            to,
        })
    }

    pub fn matches(&self, report: &BugReport) -> bool {
        self.product_ids.contains(&report.product_id)
            && self.from <= report.created_at
            && report.created_at < self.to
    }

    /// Product ids joined with `,`; used as the source tree root label.
    pub fn product_label(&self) -> String {
        self.product_ids
            .iter()
            .cloned()
            .collect::<Vec<_>>()
            .join(",")
    }
}

pub fn filter_corpus(reports: &[BugReport], query: &CorpusQuery) -> Vec<BugReport> {
    reports
        .iter()
        .filter(|r| query.matches(r))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    /// `line N` for JSONL, `line N` of the first row for CSV.
    pub locator: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: usize,
    pub rejection_reasons: Vec<Rejection>,
}

impl IngestReport {
    fn reject(&mut self, locator: String, reason: impl Into<String>) {
        self.rejected += 1;
        self.rejection_reasons.push(Rejection {
            locator,
            reason: reason.into(),
        });
    }

    pub fn total(&self) -> usize {
        self.accepted + self.rejected
    }
}

pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
) -> Result<(Vec<BugReport>, IngestReport), IngestError> {
    load_corpus_checked(path, format, None)
}

/// Like [`load_corpus`], additionally rejecting severities outside the
/// vocabulary.
pub fn load_corpus_checked(
    path: &Path,
    format: CorpusFormat,
    vocabulary: Option<&Vocabulary>,
) -> Result<(Vec<BugReport>, IngestReport), IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match format {
        CorpusFormat::Jsonl => Ok(parse_jsonl(&text, vocabulary)),
        CorpusFormat::Csv => parse_csv(text.as_bytes(), vocabulary),
    }
}

/// Wire shape of a JSONL record before validation. Everything optional so
/// missing fields produce a named rejection rather than a serde error.
#[derive(Debug, Deserialize)]
struct RawReport {
    bug_id: Option<String>,
    product_id: Option<String>,
    release: Option<String>,
    #[serde(default)]
    title: String,
    #[serde(default)]
    observation_text: String,
    #[serde(default)]
    answer_text: String,
    answer_code: Option<String>,
    severity: Option<String>,
    status: Option<String>,
    detection_phase: Option<String>,
    country: Option<String>,
    customer: Option<String>,
    #[serde(default)]
    document_refs: Vec<String>,
    created_at: Option<String>,
    answered_by: Option<String>,
    tracker_url: Option<String>,
}

fn required(value: Option<String>, field: &str) -> Result<String, String> {
    match value {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(format!("missing {field}")),
    }
}

fn parse_timestamp(raw: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(raw)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("invalid created_at `{raw}`: {e}"))
}

impl RawReport {
    fn validate(self, vocabulary: Option<&Vocabulary>) -> Result<BugReport, String> {
        let bug_id = required(self.bug_id, "bug_id")?;
        let product_id = required(self.product_id, "product_id")?;
        let release = required(self.release, "release")?;
        let status = required(self.status, "status")?;
        let detection_phase = required(self.detection_phase, "detection_phase")?;
        let created_at = parse_timestamp(&required(self.created_at, "created_at")?)?;
        if let (Some(vocab), Some(sev)) = (vocabulary, self.severity.as_deref()) {
            if !vocab.accepts_severity(sev) {
                return Err(format!("unknown severity `{sev}`"));
            }
        }
        Ok(BugReport {
            bug_id,
            product_id,
            release,
            title: self.title,
            observation_text: self.observation_text,
            answer_text: self.answer_text,
            answer_code: self.answer_code,
            severity: self.severity,
            status,
            detection_phase,
            country: self.country,
            customer: self.customer,
            document_refs: self.document_refs,
            created_at,
            answered_by: self.answered_by,
            tracker_url: self.tracker_url,
        })
    }
}

/// Parses JSONL text. Blank lines are skipped and are not records.
pub fn parse_jsonl(text: &str, vocabulary: Option<&Vocabulary>) -> (Vec<BugReport>, IngestReport) {
    let mut reports = Vec::new();
    let mut report = IngestReport::default();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let locator = format!("line {}", idx + 1);
        let parsed = serde_json::from_str::<RawReport>(line)
            .map_err(|e| format!("invalid record: {e}"))
            .and_then(|raw| raw.validate(vocabulary));
        match parsed {
            Ok(bug) if !seen.insert(bug.bug_id.clone()) => {
                report.reject(locator, format!("duplicate bug_id `{}`", bug.bug_id));
            }
            Ok(bug) => {
                report.accepted += 1;
                reports.push(bug);
            }
            Err(reason) => report.reject(locator, reason),
        }
    }
    (reports, report)
}

fn non_empty(s: &str) -> Option<String> {
    (!s.is_empty()).then(|| s.to_string())
}

fn report_from_row(row: &ExportRow, vocabulary: Option<&Vocabulary>) -> Result<BugReport, String> {
    let raw = RawReport {
        bug_id: non_empty(&row.bug_id),
        product_id: non_empty(&row.product_id),
        release: non_empty(&row.release),
        title: String::new(),
        observation_text: String::new(),
        answer_text: String::new(),
        answer_code: non_empty(&row.answer_code),
        severity: non_empty(&row.severity),
        status: non_empty(&row.status),
        detection_phase: non_empty(&row.detection_phase),
        country: non_empty(&row.country),
        customer: non_empty(&row.customer),
        document_refs: row
            .document_refs
            .split(';')
            .filter(|d| !d.is_empty())
            .map(str::to_string)
            .collect(),
        created_at: non_empty(&row.created_at),
        answered_by: None,
        tracker_url: None,
    };
    raw.validate(vocabulary)
}

/// Parses the export CSV. A record is the group of rows sharing a `bug_id`;
/// free-text fields are not part of the export and come back empty.
pub fn parse_csv<R: io::Read>(
    input: R,
    vocabulary: Option<&Vocabulary>,
) -> Result<(Vec<BugReport>, IngestReport), IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(input);
    let mut records = reader.records();
    let mut report = IngestReport::default();

    match records.next() {
        None => return Ok((Vec::new(), report)),
        Some(header) => {
            let header = header?;
            if header.iter().ne(EXPORT_COLUMNS.iter().copied()) {
                report.reject("line 1".into(), "unexpected header row");
                return Ok((Vec::new(), report));
            }
        }
    }

    // bug_id -> (first line, parsed report or error)
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, (usize, Result<BugReport, String>)> = HashMap::new();
    let mut orphan_rows = Vec::new();
    for (idx, record) in records.enumerate() {
        let line = idx + 2;
        let row: ExportRow = match record.and_then(|r| r.deserialize(None)) {
            Ok(row) => row,
            Err(e) => {
                orphan_rows.push((line, format!("invalid row: {e}")));
                continue;
            }
        };
        if row.bug_id.is_empty() {
            orphan_rows.push((line, "missing bug_id".to_string()));
            continue;
        }
        let parsed = report_from_row(&row, vocabulary);
        match groups.get_mut(&row.bug_id) {
            None => {
                order.push(row.bug_id.clone());
                groups.insert(row.bug_id.clone(), (line, parsed));
            }
            Some((_, existing)) => {
                if let (Ok(prev), Ok(next)) = (&*existing, &parsed) {
                    if prev != next {
                        *existing = Err(format!("conflicting rows for bug_id `{}`", row.bug_id));
                    }
                } else if existing.is_ok() {
                    *existing = parsed;
                }
            }
        }
    }

    let mut reports = Vec::new();
    let mut rejections: Vec<(usize, String)> = orphan_rows;
    for id in order {
        let (line, parsed) = groups.remove(&id).expect("grouped id");
        match parsed {
            Ok(bug) => {
                report.accepted += 1;
                reports.push(bug);
            }
            Err(reason) => rejections.push((line, reason)),
        }
    }
    rejections.sort_by_key(|(line, _)| *line);
    for (line, reason) in rejections {
        report.reject(format!("line {line}"), reason);
    }
    Ok((reports, report))
}

pub fn write_jsonl<W: Write>(mut out: W, reports: &[BugReport]) -> io::Result<()> {
    for report in reports {
        serde_json::to_writer(&mut out, report)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
