//! Brute-force recounts built only from raw reports and the planted truth.

use std::collections::{BTreeMap, BTreeSet};

use multidimer_core::analyzer::{
    AnalysisSnapshot, CrossTab, FrequencyTable, HeatmapMatrix, SourceTreeNode,
};
use multidimer_core::component_map::AttributedFile;
use multidimer_core::forge::CorpusManifest;
use multidimer_core::{BugReport, Dimension, UNKNOWN};

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {{
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    }};
}
pub(crate) use ensure;

/// Planted files per bug, keyed by bug id.
pub struct Truth<'a> {
    files: BTreeMap<&'a str, &'a BTreeSet<AttributedFile>>,
}

impl<'a> Truth<'a> {
    pub fn new(manifest: &'a CorpusManifest) -> Self {
        Truth {
            files: manifest
                .bugs
                .iter()
                .filter(|b| !b.files.is_empty())
                .map(|b| (b.bug_id.as_str(), &b.files))
                .collect(),
        }
    }

    pub fn files(&self, bug: &str) -> impl Iterator<Item = &AttributedFile> {
        self.files.get(bug).into_iter().flat_map(|f| f.iter())
    }

    pub fn components(&self, bug: &str) -> BTreeSet<String> {
        self.files(bug).map(|f| f.component.clone()).collect()
    }

    pub fn values(&self, r: &BugReport, dim: Dimension) -> BTreeSet<String> {
        let opt = |v: &Option<String>| match v {
            Some(s) if !s.is_empty() => s.clone(),
            _ => UNKNOWN.to_string(),
        };
        let mut out: BTreeSet<String> = match dim {
            Dimension::Component => self.components(&r.bug_id),
            Dimension::SourceFile => self
                .files(&r.bug_id)
                .map(|f| format!("{}/{}", f.repository, f.path))
                .collect(),
            Dimension::Document => r
                .document_refs
                .iter()
                .filter(|d| !d.is_empty())
                .cloned()
                .collect(),
            Dimension::AnswerCode => [opt(&r.answer_code)].into(),
            Dimension::Country => [opt(&r.country)].into(),
            Dimension::Customer => [opt(&r.customer)].into(),
            Dimension::Severity => [opt(&r.severity)].into(),
            Dimension::DetectionPhase => [opt(&Some(r.detection_phase.clone()))].into(),
            Dimension::Release => [opt(&Some(r.release.clone()))].into(),
            Dimension::Status => [opt(&Some(r.status.clone()))].into(),
        };
        if out.is_empty() {
            out.insert(UNKNOWN.to_string());
        }
        out
    }
}

fn by_total_desc(totals: &BTreeMap<String, BTreeSet<String>>) -> Vec<String> {
    let mut labels: Vec<(&String, usize)> = totals.iter().map(|(k, v)| (k, v.len())).collect();
    labels.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    labels.into_iter().map(|(l, _)| l.clone()).collect()
}

fn by_list(present: &BTreeSet<String>, list: &[String]) -> Vec<String> {
    let mut out: Vec<String> = list
        .iter()
        .filter(|l| present.contains(*l))
        .cloned()
        .collect();
    out.extend(
        present
            .iter()
            .filter(|p| !list.contains(p) && p.as_str() != UNKNOWN)
            .cloned(),
    );
    if present.contains(UNKNOWN) {
        out.push(UNKNOWN.into());
    }
    out
}

pub fn check_table(table: &FrequencyTable, reports: &[BugReport], truth: &Truth) -> Check {
    let mut expected: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in reports {
        for v in truth.values(r, table.dimension) {
            expected.entry(v).or_default().insert(r.bug_id.clone());
        }
    }
    let order = by_total_desc(&expected);
    let got: Vec<&str> = table.rows.iter().map(|r| r.value.as_str()).collect();
    ensure!(
        got == order,
        "{}: row order differs ({} rows vs {} expected)",
        table.dimension,
        got.len(),
        order.len()
    );
    for row in &table.rows {
        let ids = &expected[&row.value];
        ensure!(
            row.count == ids.len(),
            "{}/{}: {} != {}",
            table.dimension,
            row.value,
            row.count,
            ids.len()
        );
        ensure!(
            row.bug_ids.iter().eq(ids.iter()),
            "{}/{}: bug ids differ",
            table.dimension,
            row.value
        );
    }
    Ok(())
}

pub fn check_table_against_manifest(table: &FrequencyTable, manifest: &CorpusManifest) -> Check {
    let planted = &manifest.dimension_counts[table.dimension.as_str()];
    let got: BTreeMap<String, usize> = table
        .rows
        .iter()
        .map(|r| (r.value.clone(), r.count))
        .collect();
    ensure!(
        &got == planted,
        "{}: counts differ from manifest",
        table.dimension
    );
    Ok(())
}

pub fn check_heatmap(
    h: &HeatmapMatrix,
    reports: &[BugReport],
    truth: &Truth,
    manifest: &CorpusManifest,
) -> Check {
    let mut cells: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
    let mut totals: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in reports {
        for c in truth.components(&r.bug_id) {
            cells
                .entry((r.release.clone(), c.clone()))
                .or_default()
                .insert(r.bug_id.clone());
            totals.entry(c).or_default().insert(r.bug_id.clone());
        }
    }
    ensure!(
        h.releases == manifest.release_order,
        "heatmap rows {:?}",
        h.releases
    );
    ensure!(
        h.components == by_total_desc(&totals),
        "heatmap columns {:?}",
        h.components
    );
    for (ri, release) in h.releases.iter().enumerate() {
        for (ci, component) in h.components.iter().enumerate() {
            let want = cells
                .remove(&(release.clone(), component.clone()))
                .unwrap_or_default();
            ensure!(
                h.cells[ri][ci] == want.len() && h.cell_bug_ids[ri][ci].iter().eq(want.iter()),
                "heatmap cell {release}x{component}: {} != {}",
                h.cells[ri][ci],
                want.len()
            );
            let planted = manifest
                .heatmap
                .get(release)
                .and_then(|m| m.get(component))
                .copied()
                .unwrap_or(0);
            ensure!(
                h.cells[ri][ci] == planted,
                "heatmap cell {release}x{component} vs manifest"
            );
        }
    }
    ensure!(
        cells.is_empty(),
        "{} expected heatmap cells missing",
        cells.len()
    );
    Ok(())
}

pub fn check_cross_tab(
    t: &CrossTab,
    reports: &[BugReport],
    truth: &Truth,
    severities: &[String],
    releases: &[String],
) -> Check {
    let mut cells: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
    let mut rows: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut cols: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in reports {
        let a = truth.values(r, t.dim_a);
        let b = truth.values(r, t.dim_b);
        for x in &a {
            rows.entry(x.clone()).or_default().insert(r.bug_id.clone());
            for y in &b {
                cells
                    .entry((x.clone(), y.clone()))
                    .or_default()
                    .insert(r.bug_id.clone());
            }
        }
        for y in b {
            cols.entry(y).or_default().insert(r.bug_id.clone());
        }
    }
    let arrange = |dim: Dimension, totals: &BTreeMap<String, BTreeSet<String>>| match dim {
        Dimension::Severity => by_list(&totals.keys().cloned().collect(), severities),
        Dimension::Release => by_list(&totals.keys().cloned().collect(), releases),
        _ => by_total_desc(totals),
    };
    ensure!(
        t.rows == arrange(t.dim_a, &rows),
        "{}: row labels differ",
        t.name
    );
    ensure!(
        t.cols == arrange(t.dim_b, &cols),
        "{}: column labels differ",
        t.name
    );
    for (ri, a) in t.rows.iter().enumerate() {
        for (ci, b) in t.cols.iter().enumerate() {
            let want = cells.remove(&(a.clone(), b.clone())).unwrap_or_default();
            ensure!(
                t.cells[ri][ci] == want.len() && t.cell_bug_ids[ri][ci].iter().eq(want.iter()),
                "{} cell {a}x{b}: {} != {}",
                t.name,
                t.cells[ri][ci],
                want.len()
            );
        }
    }
    ensure!(
        cells.is_empty(),
        "{}: {} expected cells missing",
        t.name,
        cells.len()
    );
    Ok(())
}

#[derive(Default, Debug)]
struct NodeCount {
    attributions: usize,
    direct: usize,
    bugs: BTreeSet<String>,
}

pub fn check_tree(root: &SourceTreeNode, reports: &[BugReport], truth: &Truth) -> Check {
    let mut expected: BTreeMap<Vec<String>, NodeCount> = BTreeMap::new();
    for r in reports {
        for f in truth.files(&r.bug_id) {
            let mut path: Vec<String> = Vec::new();
            let full: Vec<String> = std::iter::once(f.repository.clone())
                .chain(f.path.split('/').map(str::to_string))
                .collect();
            for depth in 0..=full.len() {
                path.clear();
                path.extend_from_slice(&full[..depth]);
                let node = expected.entry(path.clone()).or_default();
                node.attributions += 1;
                node.bugs.insert(r.bug_id.clone());
                if depth == full.len() {
                    node.direct += 1;
                }
            }
        }
    }
    expected.entry(Vec::new()).or_default();
    let mut seen = 0;
    let mut stack = vec![(Vec::<String>::new(), root)];
    while let Some((path, node)) = stack.pop() {
        seen += 1;
        let Some(want) = expected.get(&path) else {
            return Err(format!("tree has unexpected node {}", path.join("/")));
        };
        ensure!(
            node.attributions == want.attributions
                && node.direct_attributions == want.direct
                && node.distinct_bugs == want.bugs.len(),
            "tree node /{}: ({}, {}, {}) != ({}, {}, {})",
            path.join("/"),
            node.attributions,
            node.direct_attributions,
            node.distinct_bugs,
            want.attributions,
            want.direct,
            want.bugs.len()
        );
        for child in &node.children {
            let mut p = path.clone();
            p.push(child.name.clone());
            stack.push((p, child));
        }
    }
    ensure!(
        seen == expected.len(),
        "tree has {seen} nodes, expected {}",
        expected.len()
    );
    Ok(())
}

pub fn check_attributions(snapshot: &AnalysisSnapshot, truth: &Truth) -> Check {
    let attributed: BTreeMap<&str, _> = snapshot
        .attributions
        .iter()
        .map(|a| (a.bug_id.as_str(), a))
        .collect();
    for r in &snapshot.reports {
        let want: BTreeSet<&AttributedFile> = truth.files(&r.bug_id).collect();
        match attributed.get(r.bug_id.as_str()) {
            None => ensure!(
                want.is_empty(),
                "{} lacks its planted attribution",
                r.bug_id
            ),
            Some(a) => {
                let got: BTreeSet<&AttributedFile> = a.files.iter().collect();
                ensure!(
                    got == want,
                    "{}: attributed files differ from the planted ones",
                    r.bug_id
                );
            }
        }
    }
    Ok(())
}
