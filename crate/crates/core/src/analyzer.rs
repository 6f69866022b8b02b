//! Aggregation of a filtered corpus into per-dimension tables, the
//! release × component heatmap, the source tree, cross tabulations and the
//! answer-code validation report.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::component_map::{attribute_bugs, changes_by_bug, Attribution};
use crate::config::AnalysisConfig;
use crate::domain::{
    classify_answer_code, dimension_values, AnswerCodeGroup, BugReport, Dimension, UNKNOWN,
};
use crate::error::AnalysisError;
use crate::idextract::{CommitRef, Extractor};
use crate::ingest::{filter_corpus, write_jsonl, CorpusQuery};
use crate::scm::{ResolutionAnomaly, ScmGateway};

fn attribution_index(attributions: &[Attribution]) -> HashMap<&str, &Attribution> {
    attributions
        .iter()
        .map(|a| (a.bug_id.as_str(), a))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub value: String,
    pub count: usize,
    /// Ascending.
    pub bug_ids: Vec<String>,
}

/// Rows by count descending, ties by value ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub dimension: Dimension,
    pub rows: Vec<FrequencyRow>,
}

impl FrequencyTable {
    pub fn row(&self, value: &str) -> Option<&FrequencyRow> {
        self.rows.iter().find(|r| r.value == value)
    }

    pub fn total(&self) -> usize {
        self.rows.iter().map(|r| r.count).sum()
    }
}

pub fn aggregate_dimension(
    reports: &[BugReport],
    attributions: &[Attribution],
    dim: Dimension,
) -> FrequencyTable {
    let index = attribution_index(attributions);
    let mut buckets: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    for report in reports {
        let attribution = index.get(report.bug_id.as_str()).copied();
        for value in dimension_values(report, dim, attribution) {
            buckets.entry(value).or_default().insert(&report.bug_id);
        }
    }
    let mut rows: Vec<FrequencyRow> = buckets
        .into_iter()
        .map(|(value, ids)| FrequencyRow {
            value,
            count: ids.len(),
            bug_ids: ids.into_iter().map(str::to_string).collect(),
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.value.cmp(&b.value)));
    FrequencyTable {
        dimension: dim,
        rows,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatmapMatrix {
    /// Oldest first; a trailing `UNKNOWN` row collects unlisted labels.
    pub releases: Vec<String>,
    /// By column total descending, then name.
    pub components: Vec<String>,
    pub cells: Vec<Vec<usize>>,
    pub cell_bug_ids: Vec<Vec<Vec<String>>>,
}

impl HeatmapMatrix {
    pub fn cell(&self, release: &str, component: &str) -> Option<(usize, &[String])> {
        let r = self.releases.iter().position(|x| x == release)?;
        let c = self.components.iter().position(|x| x == component)?;
        Some((self.cells[r][c], &self.cell_bug_ids[r][c]))
    }

    pub fn max_cell(&self) -> usize {
        self.cells.iter().flatten().copied().max().unwrap_or(0)
    }
}

/// Orders axis labels: listed labels first in list order, then the rest
/// ascending, `UNKNOWN` always last.
fn order_by_list(present: BTreeSet<String>, listed: &[String]) -> Vec<String> {
    let mut out: Vec<String> = listed
        .iter()
        .filter(|l| present.contains(*l))
        .cloned()
        .collect();
    let listed: HashSet<&String> = listed.iter().collect();
    out.extend(
        present
            .iter()
            .filter(|p| !listed.contains(p) && p.as_str() != UNKNOWN)
            .cloned(),
    );
    if present.contains(UNKNOWN) {
        out.push(UNKNOWN.to_string());
    }
    out
}

pub fn build_heatmap(
    reports: &[BugReport],
    attributions: &[Attribution],
    release_order: &[String],
) -> HeatmapMatrix {
    let index = attribution_index(attributions);
    let row_label = |release: &str| -> String {
        let known = if release_order.is_empty() {
            !release.is_empty()
        } else {
            release_order.iter().any(|r| r == release)
        };
        if known {
            release.to_string()
        } else {
            UNKNOWN.to_string()
        }
    };

    let mut releases: Vec<String> = release_order.to_vec();
    let labels: BTreeSet<String> = reports.iter().map(|r| row_label(&r.release)).collect();
    if release_order.is_empty() {
        releases.extend(labels.iter().filter(|l| l.as_str() != UNKNOWN).cloned());
    }
    if labels.contains(UNKNOWN) {
        releases.push(UNKNOWN.to_string());
    }

    let mut cell_sets: BTreeMap<(String, String), BTreeSet<&str>> = BTreeMap::new();
    let mut totals: BTreeMap<&str, usize> = BTreeMap::new();
    for report in reports {
        let Some(attribution) = index.get(report.bug_id.as_str()) else {
            continue;
        };
        let release = row_label(&report.release);
        for component in &attribution.components {
            if cell_sets
                .entry((release.clone(), component.clone()))
                .or_default()
                .insert(&report.bug_id)
            {
                *totals.entry(component).or_default() += 1;
            }
        }
    }
    let mut components: Vec<(&str, usize)> = totals.into_iter().collect();
    components.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let components: Vec<String> = components.into_iter().map(|(c, _)| c.to_string()).collect();

    let mut cells = vec![vec![0; components.len()]; releases.len()];
    let mut cell_bug_ids = vec![vec![Vec::new(); components.len()]; releases.len()];
    for (r, release) in releases.iter().enumerate() {
        for (c, component) in components.iter().enumerate() {
            if let Some(ids) = cell_sets.remove(&(release.clone(), component.clone())) {
                cells[r][c] = ids.len();
                cell_bug_ids[r][c] = ids.into_iter().map(str::to_string).collect();
            }
        }
    }
    HeatmapMatrix {
        releases,
        components,
        cells,
        cell_bug_ids,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceTreeNode {
    pub name: String,
    /// `(bug, file)` pairs in this subtree.
    pub attributions: usize,
    /// Pairs whose file path ends exactly at this node.
    pub direct_attributions: usize,
    /// Distinct bugs touching this subtree.
    pub distinct_bugs: usize,
    pub children: Vec<SourceTreeNode>,
    /// Children elided by [`SourceTreeNode::truncated`].
    #[serde(default, skip_serializing_if = "is_zero")]
    pub hidden_children: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

impl SourceTreeNode {
    /// Copy keeping `depth` levels below this node; deeper levels are folded
    /// into their ancestors' counts, which are unchanged.
    pub fn truncated(&self, depth: usize) -> SourceTreeNode {
        let (children, hidden_children) = if depth == 0 {
            (Vec::new(), self.children.len() + self.hidden_children)
        } else {
            (
                self.children
                    .iter()
                    .map(|c| c.truncated(depth - 1))
                    .collect(),
                self.hidden_children,
            )
        };
        SourceTreeNode {
            name: self.name.clone(),
            attributions: self.attributions,
            direct_attributions: self.direct_attributions,
            distinct_bugs: self.distinct_bugs,
            children,
            hidden_children,
        }
    }

    /// Node at `path` (segment names below this node).
    pub fn find(&self, path: &[&str]) -> Option<&SourceTreeNode> {
        match path.split_first() {
            None => Some(self),
            Some((head, rest)) => self.children.iter().find(|c| c.name == *head)?.find(rest),
        }
    }
}

#[derive(Default)]
struct TreeBuilder<'a> {
    children: BTreeMap<&'a str, TreeBuilder<'a>>,
    attributions: usize,
    direct: usize,
    bugs: HashSet<&'a str>,
}

impl TreeBuilder<'_> {
    fn finish(self, name: String) -> SourceTreeNode {
        SourceTreeNode {
            name,
            attributions: self.attributions,
            direct_attributions: self.direct,
            distinct_bugs: self.bugs.len(),
            children: self
                .children
                .into_iter()
                .map(|(name, child)| child.finish(name.to_string()))
                .collect(),
            hidden_children: 0,
        }
    }
}

/// Tree rooted at `root_name`, then repository, then path segments down to
/// files.
pub fn build_source_tree(root_name: &str, attributions: &[Attribution]) -> SourceTreeNode {
    let mut root = TreeBuilder::default();
    for attribution in attributions {
        let bug = attribution.bug_id.as_str();
        for file in &attribution.files {
            let mut node = &mut root;
            node.attributions += 1;
            node.bugs.insert(bug);
            let segments = std::iter::once(file.repository.as_str()).chain(file.path.split('/'));
            for segment in segments {
                node = node.children.entry(segment).or_default();
                node.attributions += 1;
                node.bugs.insert(bug);
            }
            node.direct += 1;
        }
    }
    root.finish(root_name.to_string())
}

/// Preferred label order per axis.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AxisOrder {
    pub severities: Vec<String>,
    pub releases: Vec<String>,
}

impl AxisOrder {
    pub fn from_config(config: &AnalysisConfig) -> Self {
        AxisOrder {
            severities: config.vocabulary.severities.clone(),
            releases: config.analyzer.release_order.clone(),
        }
    }

    fn arrange(&self, dim: Dimension, totals: BTreeMap<String, usize>) -> Vec<String> {
        let listed = match dim {
            Dimension::Severity => Some(&self.severities),
            Dimension::Release => Some(&self.releases),
            _ => None,
        };
        match listed {
            Some(list) => order_by_list(totals.into_keys().collect(), list),
            None => {
                let mut labels: Vec<(String, usize)> = totals.into_iter().collect();
                labels.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                labels.into_iter().map(|(l, _)| l).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossTab {
    pub name: String,
    pub dim_a: Dimension,
    pub dim_b: Dimension,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub cells: Vec<Vec<usize>>,
    pub cell_bug_ids: Vec<Vec<Vec<String>>>,
}

impl CrossTab {
    pub fn cell(&self, a: &str, b: &str) -> Option<(usize, &[String])> {
        let r = self.rows.iter().position(|x| x == a)?;
        let c = self.cols.iter().position(|x| x == b)?;
        Some((self.cells[r][c], &self.cell_bug_ids[r][c]))
    }
}

pub fn cross_tab(
    reports: &[BugReport],
    attributions: &[Attribution],
    dim_a: Dimension,
    dim_b: Dimension,
    order: &AxisOrder,
) -> Result<CrossTab, AnalysisError> {
    if dim_a == dim_b {
        return Err(AnalysisError::SameDimension(dim_a));
    }
    let index = attribution_index(attributions);
    let mut pairs: BTreeMap<(String, String), BTreeSet<&str>> = BTreeMap::new();
    let mut row_totals: BTreeMap<String, usize> = BTreeMap::new();
    let mut col_totals: BTreeMap<String, usize> = BTreeMap::new();
    for report in reports {
        let attribution = index.get(report.bug_id.as_str()).copied();
        let a_values = dimension_values(report, dim_a, attribution);
        let b_values = dimension_values(report, dim_b, attribution);
        for a in &a_values {
            *row_totals.entry(a.clone()).or_default() += 1;
            for b in &b_values {
                pairs
                    .entry((a.clone(), b.clone()))
                    .or_default()
                    .insert(&report.bug_id);
            }
        }
        for b in b_values {
            *col_totals.entry(b).or_default() += 1;
        }
    }
    let rows = order.arrange(dim_a, row_totals);
    let cols = order.arrange(dim_b, col_totals);
    let mut cells = vec![vec![0; cols.len()]; rows.len()];
    let mut cell_bug_ids = vec![vec![Vec::new(); cols.len()]; rows.len()];
    for (r, a) in rows.iter().enumerate() {
        for (c, b) in cols.iter().enumerate() {
            if let Some(ids) = pairs.remove(&(a.clone(), b.clone())) {
                cells[r][c] = ids.len();
                cell_bug_ids[r][c] = ids.into_iter().map(str::to_string).collect();
            }
        }
    }
    Ok(CrossTab {
        name: format!("{dim_a}x{dim_b}"),
        dim_a,
        dim_b,
        rows,
        cols,
        cells,
        cell_bug_ids,
    })
}

/// A fraction, or `UNDEFINED` when its denominator is zero. Serialized as a
/// JSON number or the string `"UNDEFINED"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ratio {
    Defined(f64),
    Undefined,
}

impl Ratio {
    pub fn of(numerator: usize, denominator: usize) -> Ratio {
        if denominator == 0 {
            Ratio::Undefined
        } else {
            Ratio::Defined(numerator as f64 / denominator as f64)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Ratio::Defined(v) => Some(v),
            Ratio::Undefined => None,
        }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ratio::Defined(v) => write!(f, "{v:.4}"),
            Ratio::Undefined => f.write_str("UNDEFINED"),
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Ratio::Defined(v) => s.serialize_f64(*v),
            Ratio::Undefined => s.serialize_str("UNDEFINED"),
        }
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(Ratio::Defined(v)),
            Raw::Text(t) if t == "UNDEFINED" => Ok(Ratio::Undefined),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("invalid ratio `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswererShare {
    pub identity: String,
    pub already_corrected_share: f64,
    pub answered: usize,
}

/// Answer-code validation for fault-slip-through analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FstReport {
    pub total: usize,
    /// Bugs carrying an answer code, configured or not.
    pub answered: usize,
    pub group_counts: BTreeMap<AnswerCodeGroup, usize>,
    /// Per group, fraction of answered bugs.
    pub group_shares: BTreeMap<AnswerCodeGroup, Ratio>,
    pub flagged: bool,
    pub flag_threshold: f64,
    pub min_answered: usize,
    /// By already-corrected share descending; only answerers with at least
    /// `min_answered` answers.
    pub per_answerer: Vec<AnswererShare>,
    pub internal: usize,
    /// Fraction of all bugs found in an internal detection phase.
    pub internal_share: Ratio,
}

impl FstReport {
    pub fn already_corrected_share(&self) -> Ratio {
        self.group_shares[&AnswerCodeGroup::AlreadyCorrected]
    }
}

pub fn fst_validation(reports: &[BugReport], config: &AnalysisConfig) -> FstReport {
    let table = &config.vocabulary.answer_code_groups;
    let internal_phases: HashSet<&str> = config
        .internal_phases()
        .iter()
        .map(String::as_str)
        .collect();

    let mut group_counts: BTreeMap<AnswerCodeGroup, usize> =
        AnswerCodeGroup::ALL.iter().map(|g| (*g, 0)).collect();
    let mut answerers: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let mut answered = 0;
    let mut internal = 0;
    for report in reports {
        if internal_phases.contains(report.detection_phase.as_str()) {
            internal += 1;
        }
        let Some(code) = report.answer_code.as_deref() else {
            continue;
        };
        answered += 1;
        let group = classify_answer_code(Some(code), table);
        *group_counts.get_mut(&group).expect("all groups seeded") += 1;
        if let Some(who) = report.answered_by.as_deref() {
            let entry = answerers.entry(who).or_default();
            entry.1 += 1;
            if group == AnswerCodeGroup::AlreadyCorrected {
                entry.0 += 1;
            }
        }
    }

    let group_shares: BTreeMap<AnswerCodeGroup, Ratio> = group_counts
        .iter()
        .map(|(g, n)| (*g, Ratio::of(*n, answered)))
        .collect();
    let threshold = config.analyzer.flag_threshold;
    let flagged = group_shares[&AnswerCodeGroup::AlreadyCorrected]
        .value()
        .is_some_and(|share| share > threshold);

    let min_answered = config.analyzer.min_answered;
    let mut per_answerer: Vec<AnswererShare> = answerers
        .into_iter()
        .filter(|(_, (_, n))| *n >= min_answered && *n > 0)
        .map(|(who, (ac, n))| AnswererShare {
            identity: who.to_string(),
            already_corrected_share: ac as f64 / n as f64,
            answered: n,
        })
        .collect();
    per_answerer.sort_by(|a, b| {
        b.already_corrected_share
            .total_cmp(&a.already_corrected_share)
            .then_with(|| b.answered.cmp(&a.answered))
            .then_with(|| a.identity.cmp(&b.identity))
    });

    FstReport {
        total: reports.len(),
        answered,
        group_counts,
        group_shares,
        flagged,
        flag_threshold: threshold,
        min_answered,
        per_answerer,
        internal,
        internal_share: Ratio::of(internal, reports.len()),
    }
}

/// Immutable result of one analysis job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSnapshot {
    pub snapshot_id: String,
    pub query: CorpusQuery,
    pub created_at: DateTime<Utc>,
    pub corpus_fingerprint: String,
    pub config: AnalysisConfig,
    /// One table per dimension, in [`Dimension::ALL`] order.
    pub dimensions: Vec<FrequencyTable>,
    pub heatmap: HeatmapMatrix,
    pub source_tree: SourceTreeNode,
    pub cross_tabs: Vec<CrossTab>,
    pub fst: FstReport,
    pub anomalies: Vec<ResolutionAnomaly>,
    /// The analyzed (filtered) reports.
    pub reports: Vec<BugReport>,
    pub commit_refs: Vec<CommitRef>,
    pub attributions: Vec<Attribution>,
}

impl AnalysisSnapshot {
    pub fn table(&self, dim: Dimension) -> &FrequencyTable {
        self.dimensions
            .iter()
            .find(|t| t.dimension == dim)
            .expect("snapshot carries every dimension")
    }

    pub fn report(&self, bug_id: &str) -> Option<&BugReport> {
        self.reports.iter().find(|r| r.bug_id == bug_id)
    }

    pub fn axis_order(&self) -> AxisOrder {
        AxisOrder::from_config(&self.config)
    }
}

/// Cross tabulations every snapshot carries.
pub const DEFAULT_CROSS_TABS: [(Dimension, Dimension); 2] = [
    (Dimension::Severity, Dimension::Component),
    (Dimension::Severity, Dimension::DetectionPhase),
];

/// SHA-256 over the canonical corpus JSONL, a zero byte, then the config.
pub fn corpus_fingerprint(corpus: &[BugReport], config: &AnalysisConfig) -> String {
    let mut hasher = Sha256::new();
    let mut buf = Vec::new();
    write_jsonl(&mut buf, corpus).expect("in-memory write");
    hasher.update(&buf);
    hasher.update([0u8]);
    hasher.update(config.canonical_bytes());
    hex::encode(hasher.finalize())
}

/// First 16 hex digits of SHA-256 over fingerprint and query.
pub fn snapshot_id(fingerprint: &str, config: &AnalysisConfig, query: &CorpusQuery) -> String {
    let mut hasher = Sha256::new();
    hasher.update(fingerprint.as_bytes());
    hasher.update([0u8]);
    hasher.update(config.canonical_bytes());
    hasher.update([0u8]);
    hasher.update(serde_json::to_vec(query).expect("query serializes"));
    hex::encode(hasher.finalize())[..16].to_string()
}

/// Filter, extract, resolve, map and aggregate. Review-system failures end
/// up in `anomalies`; only invalid configuration aborts.
pub fn run_analysis(
    corpus: &[BugReport],
    query: &CorpusQuery,
    config: &AnalysisConfig,
    gateway: &ScmGateway,
    now: DateTime<Utc>,
) -> Result<AnalysisSnapshot, AnalysisError> {
    config.validate()?;
    let corpus_fingerprint = corpus_fingerprint(corpus, config);
    let snapshot_id = snapshot_id(&corpus_fingerprint, config, query);

    let reports = filter_corpus(corpus, query);
    let extractor = Extractor::new(config.extraction.clone());
    let commit_refs: Vec<CommitRef> = reports
        .iter()
        .flat_map(|r| extractor.extract(&r.answer_text, &r.bug_id))
        .collect();
    let resolution = gateway.resolve(&commit_refs);
    let attributions = attribute_bugs(
        &reports,
        &changes_by_bug(&resolution.changes),
        &config.component_map,
    );

    let dimensions = Dimension::ALL
        .iter()
        .map(|dim| aggregate_dimension(&reports, &attributions, *dim))
        .collect();
    let heatmap = build_heatmap(&reports, &attributions, &config.analyzer.release_order);
    let source_tree = build_source_tree(&query.product_label(), &attributions);
    let order = AxisOrder::from_config(config);
    let cross_tabs = DEFAULT_CROSS_TABS
        .iter()
        .map(|(a, b)| cross_tab(&reports, &attributions, *a, *b, &order))
        .collect::<Result<_, _>>()?;
    let fst = fst_validation(&reports, config);

    Ok(AnalysisSnapshot {
        snapshot_id,
        query: query.clone(),
        created_at: now,
        corpus_fingerprint,
        config: config.clone(),
        dimensions,
        heatmap,
        source_tree,
        cross_tabs,
        fst,
        anomalies: resolution.anomalies,
        reports,
        commit_refs,
        attributions,
    })
}
