//! Synthetic corpora with known answers.
//!
//! Every share in a [`GenSpec`] is planted as an exact quota and the
//! assignment is shuffled with ChaCha8 seeded from `seed`, so a spec always
//! yields the same bytes. The [`CorpusManifest`] records the planted truth:
//! each bug's dimension values, the files behind its resolvable refs and the
//! aggregate counts those imply.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io;
use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::component_map::{AttributedFile, ComponentMapConfig, PathRule, UNMAPPED};
use crate::config::{AnalyzerConfig, ANALYZER_FILE, COMPONENT_MAP_FILE, SCM_FILE, VOCABULARY_FILE};
use crate::domain::{AnswerCodeGroup, AnswerCodeTable, BugReport, Dimension, Vocabulary, UNKNOWN};
use crate::error::ForgeError;
use crate::idextract::{normalize, RefKind};
use crate::ingest::write_jsonl;
use crate::scm::{BackendConfig, FixtureRecord, FixtureRef};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const FIXTURE_DIR: &str = "fixtures";
pub const MANIFEST_FILE: &str = "manifest.json";

const MONO_REPO: &str = "mono";
const LEGACY_REPO: &str = "legacy";

const INTERNAL_PHASES: [&str; 3] = ["function-test", "system-test", "integration-test"];
const EXTERNAL_PHASE: &str = "customer";

const DIRS: [&str; 12] = [
    "api", "net", "io", "util", "model", "store", "session", "codec", "queue", "auth", "sched",
    "proto",
];
const STEMS: [&str; 8] = [
    "handler", "main", "client", "server", "parser", "config", "worker", "cache",
];
const EXTS: [&str; 5] = [".c", ".h", ".py", ".java", ".ts"];

fn w(pairs: &[(&str, f64)]) -> Vec<(String, f64)> {
    pairs.iter().map(|(v, x)| (v.to_string(), *x)).collect()
}

fn wo(pairs: &[(Option<&str>, f64)]) -> Vec<(Option<String>, f64)> {
    pairs
        .iter()
        .map(|(v, x)| (v.map(str::to_string), *x))
        .collect()
}

/// Shares of answered bugs per group plus the unanswered remainder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnswerShares {
    pub already_corrected: f64,
    pub will_be_corrected: f64,
    pub no_action: f64,
    pub unanswered: f64,
}

impl Default for AnswerShares {
    fn default() -> Self {
        AnswerShares {
            already_corrected: 0.15,
            will_be_corrected: 0.5,
            no_action: 0.25,
            unanswered: 0.1,
        }
    }
}

impl AnswerShares {
    fn weights(&self) -> [f64; 4] {
        [
            self.already_corrected,
            self.will_be_corrected,
            self.no_action,
            self.unanswered,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    pub seed: u64,
    pub n_bugs: usize,
    pub products: Vec<(String, f64)>,
    /// Oldest first; also the emitted release order.
    pub releases: Vec<(String, f64)>,
    pub components: Vec<(String, f64)>,
    /// Entry `i` weighs bugs touching `i + 1` components.
    pub multiplicity: Vec<f64>,
    pub answers: AnswerShares,
    pub internal_share: f64,
    pub countries: Vec<(Option<String>, f64)>,
    pub customers: Vec<(Option<String>, f64)>,
    pub severities: Vec<(Option<String>, f64)>,
    pub statuses: Vec<(String, f64)>,
    pub documents: Vec<String>,
    pub document_share: f64,
    /// Bugs whose answer text carries commit references.
    pub ref_share: f64,
    /// Ref-bearing bugs that also touch an unmapped repository.
    pub unmapped_share: f64,
    /// Refs planted without a fixture record.
    pub broken_ref_rate: f64,
    /// Bugs whose texts carry hex-like decoys.
    pub distractor_rate: f64,
    pub start: DateTime<Utc>,
    pub span_days: u32,
    pub answerers: u32,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            seed: 1,
            n_bugs: 1000,
            products: w(&[("P1", 1.0)]),
            releases: w(&[("R1", 0.2), ("R2", 0.3), ("R3", 0.3), ("R4", 0.2)]),
            components: w(&[
                ("Documents", 0.3),
                ("Platform", 0.2),
                ("Messaging", 0.15),
                ("Billing", 0.15),
                ("Provisioning", 0.1),
                ("UserInterface", 0.1),
            ]),
            multiplicity: vec![0.8, 0.15, 0.05],
            answers: AnswerShares::default(),
            internal_share: 0.83,
            countries: wo(&[
                (Some("SE"), 0.3),
                (Some("DE"), 0.2),
                (Some("US"), 0.2),
                (Some("IN"), 0.15),
                (None, 0.15),
            ]),
            customers: wo(&[
                (Some("Operator North"), 0.3),
                (Some("Operator South"), 0.25),
                (Some("Carrier East"), 0.2),
                (None, 0.25),
            ]),
            severities: wo(&[
                (Some("A"), 0.1),
                (Some("B"), 0.3),
                (Some("C"), 0.5),
                (None, 0.1),
            ]),
            statuses: w(&[("closed", 0.6), ("answered", 0.25), ("open", 0.15)]),
            documents: [
                "installation-guide",
                "configuration-guide",
                "interface-spec",
                "upgrade-guide",
                "operations-manual",
            ]
            .map(String::from)
            .to_vec(),
            document_share: 0.3,
            ref_share: 0.85,
            unmapped_share: 0.02,
            broken_ref_rate: 0.0,
            distractor_rate: 0.5,
            start: Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap(),
            span_days: 365,
            answerers: 12,
        }
    }
}

fn check_weights(name: &str, weights: impl IntoIterator<Item = f64>) -> Result<(), ForgeError> {
    let mut sum = 0.0;
    let mut count = 0;
    for x in weights {
        if !x.is_finite() || x < 0.0 {
            return Err(ForgeError(format!(
                "`{name}` has a negative or non-finite weight"
            )));
        }
        sum += x;
        count += 1;
    }
    if count == 0 {
        return Err(ForgeError(format!("`{name}` is empty")));
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(ForgeError(format!("`{name}` weights sum to {sum}, not 1")));
    }
    Ok(())
}

fn check_share(name: &str, x: f64) -> Result<(), ForgeError> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(ForgeError(format!("`{name}` = {x} is outside [0, 1]")))
    }
}

fn slug(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    out.trim_end_matches('-').to_string()
}

impl GenSpec {
    pub fn validate(&self) -> Result<(), ForgeError> {
        check_weights("products", self.products.iter().map(|p| p.1))?;
        check_weights("releases", self.releases.iter().map(|p| p.1))?;
        check_weights("components", self.components.iter().map(|p| p.1))?;
        check_weights("multiplicity", self.multiplicity.iter().copied())?;
        check_weights("answers", self.answers.weights())?;
        check_weights("countries", self.countries.iter().map(|p| p.1))?;
        check_weights("customers", self.customers.iter().map(|p| p.1))?;
        check_weights("severities", self.severities.iter().map(|p| p.1))?;
        check_weights("statuses", self.statuses.iter().map(|p| p.1))?;
        for (name, x) in [
            ("internal_share", self.internal_share),
            ("document_share", self.document_share),
            ("ref_share", self.ref_share),
            ("unmapped_share", self.unmapped_share),
            ("broken_ref_rate", self.broken_ref_rate),
            ("distractor_rate", self.distractor_rate),
        ] {
            check_share(name, x)?;
        }
        if self.multiplicity.len() > self.components.len() {
            return Err(ForgeError(format!(
                "multiplicity allows {} components per bug but only {} exist",
                self.multiplicity.len(),
                self.components.len()
            )));
        }
        let mut slugs = HashSet::new();
        for (name, _) in &self.components {
            let s = slug(name);
            if s.is_empty() || [MONO_REPO, LEGACY_REPO].contains(&s.as_str()) || !slugs.insert(s) {
                return Err(ForgeError(format!(
                    "component name `{name}` is empty, reserved or a duplicate"
                )));
            }
        }
        for (label, list) in [
            ("products", &self.products),
            ("releases", &self.releases),
            ("statuses", &self.statuses),
        ] {
            let distinct: HashSet<_> = list.iter().map(|p| &p.0).collect();
            if distinct.len() != list.len() || list.iter().any(|p| p.0.is_empty()) {
                return Err(ForgeError(format!(
                    "`{label}` has an empty or repeated value"
                )));
            }
        }
        if self.document_share > 0.0 && self.documents.is_empty() {
            return Err(ForgeError(
                "document_share is positive but no documents are listed".into(),
            ));
        }
        if self.span_days == 0 {
            return Err(ForgeError("span_days must be positive".into()));
        }
        if self.n_bugs > 999_999 {
            return Err(ForgeError("n_bugs is capped at 999999".into()));
        }
        Ok(())
    }
}

/// Splits `n` by `weights` exactly: floors first, then the leftover units go
/// to the largest remainders (lower index on ties). Weights are scaled to
/// integers so the split does not depend on float rounding.
pub fn quotas(n: usize, weights: &[f64]) -> Vec<usize> {
    let units: Vec<u128> = weights.iter().map(|x| (x * 1e9).round() as u128).collect();
    let total: u128 = units.iter().sum();
    if total == 0 || n == 0 {
        return vec![0; weights.len()];
    }
    let n = n as u128;
    let mut out: Vec<usize> = units.iter().map(|u| (n * u / total) as usize).collect();
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(n * units[i] % total), i));
    let leftover = n as usize - out.iter().sum::<usize>();
    for &i in order.iter().take(leftover) {
        out[i] += 1;
    }
    out
}

/// `n` option indices in shuffled order, each appearing exactly its quota.
fn planted(rng: &mut ChaCha8Rng, n: usize, weights: &[f64]) -> Vec<usize> {
    let mut out: Vec<usize> = quotas(n, weights)
        .into_iter()
        .enumerate()
        .flat_map(|(i, q)| std::iter::repeat_n(i, q))
        .collect();
    out.shuffle(rng);
    out
}

fn planted_flags(rng: &mut ChaCha8Rng, n: usize, share: f64) -> Vec<bool> {
    planted(rng, n, &[share, 1.0 - share])
        .into_iter()
        .map(|i| i == 0)
        .collect()
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    items.choose(rng).expect("non-empty choice")
}

fn random_hex(rng: &mut ChaCha8Rng, len: usize) -> String {
    let mut bytes = vec![0u8; len.div_ceil(2)];
    rng.fill_bytes(&mut bytes);
    let mut s = hex::encode(bytes);
    s.truncate(len);
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceForm {
    ChangeIdLine,
    FullSha,
    LongSha,
    CuedShortSha,
}

const FORMS: [SurfaceForm; 4] = [
    SurfaceForm::ChangeIdLine,
    SurfaceForm::FullSha,
    SurfaceForm::LongSha,
    SurfaceForm::CuedShortSha,
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedRef {
    pub kind: RefKind,
    /// What extraction should return, already normalized.
    pub value: String,
    pub form: SurfaceForm,
    pub resolvable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestBug {
    pub bug_id: String,
    pub product_id: String,
    pub release: String,
    pub answer_code: Option<String>,
    pub answer_group: AnswerCodeGroup,
    pub severity: Option<String>,
    pub status: String,
    pub detection_phase: String,
    pub internal: bool,
    pub country: Option<String>,
    pub customer: Option<String>,
    pub document_refs: Vec<String>,
    pub created_at: DateTime<Utc>,
    pub refs: Vec<PlantedRef>,
    /// Components behind the resolvable refs, `UNMAPPED` included.
    pub components: BTreeSet<String>,
    pub files: BTreeSet<AttributedFile>,
}

impl ManifestBug {
    /// Planted values along `dim`, with `UNKNOWN` for absent attributes.
    pub fn values(&self, dim: Dimension) -> BTreeSet<String> {
        let one = |v: Option<&String>| {
            BTreeSet::from([v.cloned().unwrap_or_else(|| UNKNOWN.to_string())])
        };
        match dim {
            Dimension::Component if self.components.is_empty() => one(None),
            Dimension::Component => self.components.clone(),
            Dimension::SourceFile if self.files.is_empty() => one(None),
            Dimension::SourceFile => self.files.iter().map(|f| f.qualified_path()).collect(),
            Dimension::AnswerCode => one(self.answer_code.as_ref()),
            Dimension::Country => one(self.country.as_ref()),
            Dimension::Customer => one(self.customer.as_ref()),
            Dimension::DetectionPhase => one(Some(&self.detection_phase)),
            Dimension::Document if self.document_refs.is_empty() => one(None),
            Dimension::Document => self.document_refs.iter().cloned().collect(),
            Dimension::Release => one(Some(&self.release)),
            Dimension::Severity => one(self.severity.as_ref()),
            Dimension::Status => one(Some(&self.status)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub n_bugs: usize,
    pub release_order: Vec<String>,
    pub bugs: Vec<ManifestBug>,
    /// Dimension name to value to bug count.
    pub dimension_counts: BTreeMap<String, BTreeMap<String, usize>>,
    /// Release to component to bug count, attributed bugs only.
    pub heatmap: BTreeMap<String, BTreeMap<String, usize>>,
    pub internal_count: usize,
    pub answered_count: usize,
    pub answer_group_counts: BTreeMap<String, usize>,
    pub total_refs: usize,
    pub broken_refs: usize,
}

impl CorpusManifest {
    fn tally(seed: u64, release_order: Vec<String>, bugs: Vec<ManifestBug>) -> Self {
        let mut dimension_counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for dim in Dimension::ALL {
            let counts = dimension_counts
                .entry(dim.as_str().to_string())
                .or_default();
            for bug in &bugs {
                for v in bug.values(dim) {
                    *counts.entry(v).or_default() += 1;
                }
            }
        }
        let mut heatmap: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        let mut answer_group_counts = BTreeMap::new();
        for bug in &bugs {
            for c in &bug.components {
                *heatmap
                    .entry(bug.release.clone())
                    .or_default()
                    .entry(c.clone())
                    .or_default() += 1;
            }
            *answer_group_counts
                .entry(bug.answer_group.as_str().to_string())
                .or_default() += 1;
        }
        let refs = bugs.iter().flat_map(|b| &b.refs);
        CorpusManifest {
            seed,
            n_bugs: bugs.len(),
            release_order,
            internal_count: bugs.iter().filter(|b| b.internal).count(),
            answered_count: bugs.iter().filter(|b| b.answer_code.is_some()).count(),
            total_refs: refs.clone().count(),
            broken_refs: refs.filter(|r| !r.resolvable).count(),
            dimension_counts,
            heatmap,
            answer_group_counts,
            bugs,
        }
    }

    pub fn count(&self, dim: Dimension, value: &str) -> usize {
        self.dimension_counts
            .get(dim.as_str())
            .and_then(|m| m.get(value))
            .copied()
            .unwrap_or(0)
    }
}

/// Everything [`generate`] produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub corpus: Vec<BugReport>,
    pub fixtures: Vec<FixtureRecord>,
    pub component_map: ComponentMapConfig,
    pub vocabulary: Vocabulary,
    pub analyzer: AnalyzerConfig,
    pub manifest: CorpusManifest,
}

/// Where files of one component may live.
enum Placement {
    Repo(String),
    Under(String, String),
}

struct Layout {
    map: ComponentMapConfig,
    placements: Vec<Vec<Placement>>,
    dirs: Vec<&'static str>,
}

/// Dedicated repositories for even-indexed components, a renamed alias for
/// the first, prefixes in a shared `mono` repository for all (with one
/// nested prefix and a repo-table fallback), and an unmapped `legacy` repo.
fn layout(names: &[String]) -> Layout {
    let slugs: Vec<String> = names.iter().map(|n| slug(n)).collect();
    let mut map = ComponentMapConfig {
        components: names.to_vec(),
        ..Default::default()
    };
    let mut placements: Vec<Vec<Placement>> = names.iter().map(|_| Vec::new()).collect();
    for (i, s) in slugs.iter().enumerate() {
        if i % 2 == 0 {
            let repo = format!("{s}-repo");
            map.repo_table.insert(repo.clone(), names[i].clone());
            placements[i].push(Placement::Repo(repo));
        }
        let prefix = format!("src/{s}");
        map.path_table.push(PathRule {
            repo: MONO_REPO.into(),
            prefix: prefix.clone(),
            component: names[i].clone(),
        });
        placements[i].push(Placement::Under(MONO_REPO.into(), prefix));
    }
    let old = format!("{}-old", slugs[0]);
    map.repo_table.insert(old.clone(), names[0].clone());
    placements[0].push(Placement::Repo(old));
    map.repo_table.insert(MONO_REPO.into(), names[0].clone());
    placements[0].push(Placement::Under(MONO_REPO.into(), "tools".into()));
    let lookalike = format!("src/{}x", slugs[0]);
    if !slugs.iter().any(|s| format!("src/{s}") == lookalike) {
        placements[0].push(Placement::Under(MONO_REPO.into(), lookalike));
    }
    if names.len() > 1 {
        let nested = format!("src/{}/{}", slugs[0], slugs[1]);
        map.path_table.push(PathRule {
            repo: MONO_REPO.into(),
            prefix: nested.clone(),
            component: names[1].clone(),
        });
        placements[1].push(Placement::Under(MONO_REPO.into(), nested));
    }
    let dirs = DIRS
        .iter()
        .copied()
        .filter(|d| !slugs.iter().any(|s| s == d))
        .collect();
    Layout {
        map,
        placements,
        dirs,
    }
}

impl Layout {
    /// Repository and distinct paths of one change touching `component`, or
    /// the unmapped repository when `None`.
    fn change(
        &self,
        rng: &mut ChaCha8Rng,
        component: Option<usize>,
        n_files: u32,
    ) -> (String, Vec<String>) {
        let (repo, base) = match component.map(|c| pick(rng, &self.placements[c])) {
            Some(Placement::Repo(repo)) => (repo.clone(), None),
            Some(Placement::Under(repo, prefix)) => (repo.clone(), Some(prefix.clone())),
            None => (LEGACY_REPO.to_string(), Some("scripts".to_string())),
        };
        let mut paths = BTreeSet::new();
        for _ in 0..n_files {
            let dir = pick(rng, &self.dirs);
            let stem = pick(rng, &STEMS);
            let ext = pick(rng, &EXTS);
            paths.insert(match &base {
                Some(prefix) => format!("{prefix}/{dir}/{stem}{ext}"),
                None => format!("{dir}/{stem}{ext}"),
            });
        }
        (repo, paths.into_iter().collect())
    }
}

/// Allocates commit hashes whose 7-digit prefixes never collide, so every
/// abbreviation the corpus uses resolves to one record.
#[derive(Default)]
struct HashPool {
    prefixes: HashSet<String>,
    change_ids: HashSet<String>,
}

impl HashPool {
    fn sha(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let h = random_hex(rng, 40);
            if self.prefixes.insert(h[..7].to_string()) {
                return h;
            }
        }
    }

    fn change_id(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let h = format!("I{}", random_hex(rng, 40));
            if self.change_ids.insert(h.clone()) {
                return h;
            }
        }
    }
}

/// Returns the text mention and the fixture identity.
fn surface(
    rng: &mut ChaCha8Rng,
    pool: &mut HashPool,
    form: SurfaceForm,
) -> (String, FixtureRef, String) {
    match form {
        SurfaceForm::ChangeIdLine => {
            let id = pool.change_id(rng);
            let kind = RefKind::GerritChangeId;
            (
                format!("Change-Id: {id}"),
                FixtureRef {
                    kind,
                    value: id.clone(),
                },
                normalize(kind, &id),
            )
        }
        _ => {
            let sha = pool.sha(rng);
            let shown_len = match form {
                SurfaceForm::FullSha => 40,
                SurfaceForm::LongSha => rng.gen_range(12u32..=20) as usize,
                _ => rng.gen_range(7u32..=11) as usize,
            };
            let mut shown = sha[..shown_len].to_string();
            if rng.gen_ratio(1, 4) {
                shown.make_ascii_uppercase();
            }
            let text = match form {
                SurfaceForm::FullSha => format!(
                    "{} {shown}.",
                    pick(rng, &["Merged as", "Delivered with", "Pushed"])
                ),
                SurfaceForm::LongSha => format!("Landed in {shown} on the main branch."),
                _ => pick(
                    rng,
                    &[
                        "Fixed in commit {}.",
                        "See sha {} for details.",
                        "Corrected by revision {}.",
                        "Change {} resolves it.",
                        "Merged {} last week.",
                    ],
                )
                .replace("{}", &shown),
            };
            let kind = RefKind::GitSha;
            (
                text,
                FixtureRef { kind, value: sha },
                normalize(kind, &shown),
            )
        }
    }
}

/// Hex-like prose the extractor must leave alone: uncued 7-11 digit runs,
/// hex-letter English words, prefixed constants and over-long dumps.
fn distractor(rng: &mut ChaCha8Rng) -> String {
    match rng.gen_range(0u32..6) {
        0 => "Observed register value deadbeef during the run.".to_string(),
        1 => format!("Checksum reported as {} by the tool.", random_hex(rng, 8)),
        2 => "The facade layer looked defaced after the reboot.".to_string(),
        3 => format!(
            "Linked ticket number {} for tracking.",
            rng.gen_range(1_000_000u32..99_999_999)
        ),
        4 => format!(
            "Error code 0x{} returned twice.",
            random_hex(rng, 8).to_ascii_uppercase()
        ),
        _ => format!("Raw dump {} attached.", random_hex(rng, 48)),
    }
}

const GROUP_CODES: [(&str, AnswerCodeGroup); 6] = [
    ("AC1", AnswerCodeGroup::AlreadyCorrected),
    ("AC2", AnswerCodeGroup::AlreadyCorrected),
    ("WC1", AnswerCodeGroup::WillBeCorrected),
    ("WC2", AnswerCodeGroup::WillBeCorrected),
    ("NA1", AnswerCodeGroup::NoAction),
    ("NA2", AnswerCodeGroup::NoAction),
];

fn codes_of(group: AnswerCodeGroup) -> Vec<&'static str> {
    GROUP_CODES
        .iter()
        .filter(|(_, g)| *g == group)
        .map(|(c, _)| *c)
        .collect()
}

pub fn generate(spec: &GenSpec) -> Result<Generated, ForgeError> {
    spec.validate()?;
    let n = spec.n_bugs;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let weights = |v: &[(String, f64)]| v.iter().map(|p| p.1).collect::<Vec<_>>();
    let oweights = |v: &[(Option<String>, f64)]| v.iter().map(|p| p.1).collect::<Vec<_>>();

    let products = planted(&mut rng, n, &weights(&spec.products));
    let releases = planted(&mut rng, n, &weights(&spec.releases));
    let answers = planted(&mut rng, n, &spec.answers.weights());
    let internal = planted_flags(&mut rng, n, spec.internal_share);
    let countries = planted(&mut rng, n, &oweights(&spec.countries));
    let customers = planted(&mut rng, n, &oweights(&spec.customers));
    let severities = planted(&mut rng, n, &oweights(&spec.severities));
    let statuses = planted(&mut rng, n, &weights(&spec.statuses));
    let with_docs = planted_flags(&mut rng, n, spec.document_share);
    let with_refs = planted_flags(&mut rng, n, spec.ref_share);
    let with_decoys = planted_flags(&mut rng, n, spec.distractor_rate);

    let ref_bugs: Vec<usize> = (0..n).filter(|&i| with_refs[i]).collect();
    let multiplicity = planted(&mut rng, ref_bugs.len(), &spec.multiplicity);
    let unmapped = planted_flags(&mut rng, ref_bugs.len(), spec.unmapped_share);
    let mut fan_out = vec![(0usize, false); n];
    for (j, &i) in ref_bugs.iter().enumerate() {
        fan_out[i] = (multiplicity[j] + 1, unmapped[j]);
    }
    let total_refs: usize = fan_out.iter().map(|(k, u)| k + usize::from(*u)).sum();
    let broken = planted_flags(&mut rng, total_refs, spec.broken_ref_rate);

    let names: Vec<String> = spec.components.iter().map(|c| c.0.clone()).collect();
    let layout = layout(&names);
    let component_units: Vec<u64> = spec
        .components
        .iter()
        .map(|c| (c.1 * 1e9).round() as u64)
        .collect();
    let groups = [
        Some(AnswerCodeGroup::AlreadyCorrected),
        Some(AnswerCodeGroup::WillBeCorrected),
        Some(AnswerCodeGroup::NoAction),
        None,
    ];

    let mut pool = HashPool::default();
    let mut corpus = Vec::with_capacity(n);
    let mut fixtures = Vec::new();
    let mut bugs = Vec::with_capacity(n);
    let mut ref_cursor = 0;
    let span_secs = spec.span_days * 86_400;

    for i in 0..n {
        let bug_id = format!("BUG-{:06}", i + 1);
        let group = groups[answers[i]];
        let answer_code = group.map(|g| pick(&mut rng, &codes_of(g)).to_string());
        let detection_phase = if internal[i] {
            pick(&mut rng, &INTERNAL_PHASES).to_string()
        } else {
            EXTERNAL_PHASE.to_string()
        };
        let document_refs: Vec<String> = if with_docs[i] {
            let k = rng.gen_range(1u32..=2.min(spec.documents.len() as u32)) as usize;
            let mut docs: Vec<String> = spec
                .documents
                .choose_multiple(&mut rng, k)
                .cloned()
                .collect();
            docs.sort();
            docs
        } else {
            Vec::new()
        };
        let created_at = spec.start + Duration::seconds(i64::from(rng.gen_range(0..span_secs)));

        // Components by weight, without replacement.
        let (k, touches_legacy) = fan_out[i];
        let mut chosen = Vec::with_capacity(k);
        let mut units = component_units.clone();
        while chosen.len() < k {
            let c = match WeightedIndex::new(&units) {
                Ok(dist) => dist.sample(&mut rng),
                Err(_) => {
                    let rest: Vec<usize> =
                        (0..units.len()).filter(|c| !chosen.contains(c)).collect();
                    *pick(&mut rng, &rest)
                }
            };
            units[c] = 0;
            chosen.push(c);
        }

        let mut sentences = vec![pick(
            &mut rng,
            &["Analysis done.", "Investigated.", "Reproduced in the lab."],
        )
        .to_string()];
        let mut refs = Vec::new();
        let mut components = BTreeSet::new();
        let mut files = BTreeSet::new();
        let targets = chosen
            .iter()
            .map(|&c| Some(c))
            .chain(touches_legacy.then_some(None));
        for target in targets {
            let form = *pick(&mut rng, &FORMS);
            let (text, fixture_ref, extracted) = surface(&mut rng, &mut pool, form);
            sentences.push(text);
            let n_files = rng.gen_range(1u32..=3);
            let (repo, paths) = layout.change(&mut rng, target, n_files);
            let resolvable = !broken[ref_cursor];
            ref_cursor += 1;
            if resolvable {
                let component = target.map_or(UNMAPPED, |c| names[c].as_str());
                components.insert(component.to_string());
                files.extend(
                    paths
                        .iter()
                        .map(|p| AttributedFile::new(&repo, p, component)),
                );
                fixtures.push(FixtureRecord {
                    reference: fixture_ref.clone(),
                    repository: repo,
                    changed_files: paths,
                });
            }
            refs.push(PlantedRef {
                kind: fixture_ref.kind,
                value: extracted,
                form,
                resolvable,
            });
        }
        if with_decoys[i] {
            sentences.push(distractor(&mut rng));
        }
        sentences[1..].shuffle(&mut rng);
        let observation_text = if with_decoys[i] {
            format!("Node restarted unexpectedly. {}", distractor(&mut rng))
        } else {
            "Node restarted unexpectedly.".to_string()
        };
        let answered_by = answer_code
            .as_ref()
            .map(|_| format!("dev{:02}", rng.gen_range(0..spec.answerers.max(1))));

        let report = BugReport {
            bug_id: bug_id.clone(),
            product_id: spec.products[products[i]].0.clone(),
            release: spec.releases[releases[i]].0.clone(),
            title: format!("Unexpected behaviour in {}", pick(&mut rng, &layout.dirs)),
            observation_text,
            answer_text: sentences.join("\n"),
            answer_code: answer_code.clone(),
            severity: spec.severities[severities[i]].0.clone(),
            status: spec.statuses[statuses[i]].0.clone(),
            detection_phase: detection_phase.clone(),
            country: spec.countries[countries[i]].0.clone(),
            customer: spec.customers[customers[i]].0.clone(),
            document_refs: document_refs.clone(),
            created_at,
            answered_by,
            tracker_url: Some(format!("https://tracker.example.com/bugs/{bug_id}")),
        };
        bugs.push(ManifestBug {
            bug_id,
            product_id: report.product_id.clone(),
            release: report.release.clone(),
            answer_code,
            answer_group: group.unwrap_or(AnswerCodeGroup::Unknown),
            severity: report.severity.clone(),
            status: report.status.clone(),
            detection_phase,
            internal: internal[i],
            country: report.country.clone(),
            customer: report.customer.clone(),
            document_refs,
            created_at,
            refs,
            components,
            files,
        });
        corpus.push(report);
    }

    let release_order: Vec<String> = spec.releases.iter().map(|r| r.0.clone()).collect();
    let vocabulary = Vocabulary {
        answer_code_groups: GROUP_CODES
            .iter()
            .map(|(c, g)| (c.to_string(), *g))
            .collect::<AnswerCodeTable>(),
        severities: spec.severities.iter().filter_map(|s| s.0.clone()).collect(),
        detection_phases: INTERNAL_PHASES
            .iter()
            .chain([&EXTERNAL_PHASE])
            .map(|s| s.to_string())
            .collect(),
        internal_phases: INTERNAL_PHASES.map(String::from).to_vec(),
        statuses: spec.statuses.iter().map(|s| s.0.clone()).collect(),
    };
    let analyzer = AnalyzerConfig {
        release_order: release_order.clone(),
        ..AnalyzerConfig::default()
    };
    Ok(Generated {
        corpus,
        fixtures,
        component_map: layout.map,
        vocabulary,
        analyzer,
        manifest: CorpusManifest::tally(spec.seed, release_order, bugs),
    })
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    bytes
}

impl Generated {
    /// Writes a directory usable both as a corpus source and as a config
    /// directory: corpus, fixtures, manifest and the four config files.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir.join(FIXTURE_DIR))?;
        let mut corpus = Vec::new();
        write_jsonl(&mut corpus, &self.corpus)?;
        fs::write(dir.join(CORPUS_FILE), corpus)?;
        let mut fixtures = Vec::new();
        for record in &self.fixtures {
            serde_json::to_writer(&mut fixtures, record)?;
            fixtures.push(b'\n');
        }
        fs::write(dir.join(FIXTURE_DIR).join("changes.jsonl"), fixtures)?;
        fs::write(dir.join(COMPONENT_MAP_FILE), pretty(&self.component_map))?;
        fs::write(dir.join(VOCABULARY_FILE), pretty(&self.vocabulary))?;
        fs::write(dir.join(ANALYZER_FILE), pretty(&self.analyzer))?;
        fs::write(
            dir.join(SCM_FILE),
            pretty(&BackendConfig::fixture(FIXTURE_DIR)),
        )?;
        fs::write(dir.join(MANIFEST_FILE), pretty(&self.manifest))?;
        Ok(())
    }
}
