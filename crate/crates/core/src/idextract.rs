//! Extraction of Gerrit Change-Ids and git commit hashes from free answer
//! text.
//!
//! Grammar, applied left to right:
//!
//! 1. `I` followed by exactly 40 hex digits is a Change-Id. Its characters
//!    are consumed; no hash is reported from inside it.
//! 2. A word-bounded hex run of `long_min..=max_len` digits (12..=40 by
//!    default) is a commit hash.
//! 3. A word-bounded hex run of `short_min..long_min` digits (7..=11) is a
//!    commit hash only when one of the cue words appears among the
//!    `cue_window` whitespace-delimited tokens before it.
//!
//! Runs longer than `max_len` are ignored whole, never split.

use std::collections::{BTreeSet, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RefKind {
    GerritChangeId,
    GitSha,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CommitRef {
    pub kind: RefKind,
    /// Normalized: lowercase hex, Change-Ids keep their leading `I`.
    pub value: String,
    /// Byte offsets `[start, end)` into the source text.
    pub span: (usize, usize),
    pub source_bug_id: String,
}

impl CommitRef {
    pub fn key(&self) -> RefKey {
        RefKey {
            kind: self.kind,
            value: self.value.clone(),
        }
    }
}

/// Identity of a reference, independent of where it was found.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RefKey {
    pub kind: RefKind,
    pub value: String,
}

impl RefKey {
    pub fn new(kind: RefKind, value: &str) -> Self {
        RefKey {
            kind,
            value: normalize(kind, value),
        }
    }
}

pub fn normalize(kind: RefKind, raw: &str) -> String {
    match kind {
        RefKind::GerritChangeId => match raw.strip_prefix(['I', 'i']) {
            Some(hex) => format!("I{}", hex.to_ascii_lowercase()),
            None => raw.to_ascii_lowercase(),
        },
        RefKind::GitSha => raw.to_ascii_lowercase(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorConfig {
    pub short_min: usize,
    pub long_min: usize,
    pub max_len: usize,
    pub cue_window: usize,
    pub cues: BTreeSet<String>,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            short_min: 7,
            long_min: 12,
            max_len: 40,
            cue_window: 2,
            cues: [
                "commit", "commitid", "change", "changeid", "sha", "revision", "fix", "fixed",
                "merged",
            ]
            .into_iter()
            .map(str::to_string)
            .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Extractor {
    config: ExtractorConfig,
    change_id: Regex,
    hex_run: Regex,
}

impl Default for Extractor {
    fn default() -> Self {
        Extractor::new(ExtractorConfig::default())
    }
}

static DEFAULT_EXTRACTOR: LazyLock<Extractor> = LazyLock::new(Extractor::default);

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Token with all non-alphanumerics dropped, so `Change-Id:` reads as
/// `changeid`.
fn cue_form(token: &str) -> String {
    token
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

impl Extractor {
    pub fn new(config: ExtractorConfig) -> Self {
        let cues = config.cues.iter().map(|c| cue_form(c)).collect();
        Extractor {
            config: ExtractorConfig { cues, ..config },
            change_id: Regex::new(r"I[0-9a-fA-F]{40}").expect("static pattern"),
            hex_run: Regex::new(r"\b[0-9a-fA-F]+\b").expect("static pattern"),
        }
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    fn has_cue(&self, before: &str) -> bool {
        before
            .split_whitespace()
            .rev()
            .take(self.config.cue_window)
            .any(|tok| self.config.cues.contains(&cue_form(tok)))
    }

    pub fn extract(&self, text: &str, bug_id: &str) -> Vec<CommitRef> {
        let bytes = text.as_bytes();
        let mut found: Vec<(RefKind, usize, usize)> = Vec::new();
        let mut consumed: Vec<(usize, usize)> = Vec::new();

        for m in self.change_id.find_iter(text) {
            if bytes.get(m.end()).is_some_and(|b| is_word_byte(*b)) {
                continue;
            }
            found.push((RefKind::GerritChangeId, m.start(), m.end()));
            consumed.push((m.start(), m.end()));
        }

        for m in self.hex_run.find_iter(text) {
            let len = m.end() - m.start();
            if len < self.config.short_min || len > self.config.max_len {
                continue;
            }
            if consumed.iter().any(|&(s, e)| m.start() < e && s < m.end()) {
                continue;
            }
            if len < self.config.long_min && !self.has_cue(&text[..m.start()]) {
                continue;
            }
            found.push((RefKind::GitSha, m.start(), m.end()));
        }

        found.sort_by_key(|&(_, start, _)| start);
        let mut seen = HashSet::new();
        found
            .into_iter()
            .filter_map(|(kind, start, end)| {
                let value = normalize(kind, &text[start..end]);
                seen.insert((kind, value.clone())).then(|| CommitRef {
                    kind,
                    value,
                    span: (start, end),
                    source_bug_id: bug_id.to_string(),
                })
            })
            .collect()
    }
}

/// Extracts with the default grammar.
pub fn extract_commit_refs(text: &str, bug_id: &str) -> Vec<CommitRef> {
    DEFAULT_EXTRACTOR.extract(text, bug_id)
}

/// Annotated reference in an evaluation corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRef {
    pub kind: RefKind,
    pub value: String,
}

/// One line of the annotated extraction corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedText {
    pub bug_id: String,
    pub text: String,
    pub gold: Vec<GoldRef>,
}

/// `(precision, recall)` over `(kind, normalized value)` identities. An
/// empty prediction has precision 1; an empty gold set has recall 1.
pub fn extraction_metrics(predicted: &[CommitRef], gold: &[GoldRef]) -> (f64, f64) {
    let pred: HashSet<RefKey> = predicted.iter().map(CommitRef::key).collect();
    let gold: HashSet<RefKey> = gold.iter().map(|g| RefKey::new(g.kind, &g.value)).collect();
    let hits = pred.intersection(&gold).count() as f64;
    let precision = if pred.is_empty() {
        1.0
    } else {
        hits / pred.len() as f64
    };
    let recall = if gold.is_empty() {
        1.0
    } else {
        hits / gold.len() as f64
    };
    (precision, recall)
}
