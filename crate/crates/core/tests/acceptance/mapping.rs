//! Randomized component-map cases checked against a linear scan.

use std::collections::{BTreeMap, BTreeSet};

use multidimer_core::component_map::{ComponentMap, ComponentMapConfig, PathRule};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::oracle::{ensure, Check};

const REPOS: [&str; 3] = ["alpha", "beta", "gamma"];
const SEGMENTS: [&str; 7] = ["src", "net", "ne", "netx", "core", "a", "b"];

#[derive(Default, Debug)]
pub struct Coverage {
    pub cases: usize,
    /// At least two rules matched the path.
    pub nested: usize,
    /// A rule matched although the repository had its own entry.
    pub shadowed_repo: usize,
    /// A rule's prefix was a string prefix of the path but not a segment
    /// prefix.
    pub boundary_traps: usize,
    pub repo_fallbacks: usize,
    pub unmapped: usize,
}

struct Case {
    rules: Vec<PathRule>,
    repo_table: BTreeMap<String, String>,
    repo: String,
    path: String,
}

fn random_segments(rng: &mut ChaCha8Rng, max: u32) -> Vec<&'static str> {
    (0..rng.gen_range(1..=max))
        .map(|_| *SEGMENTS.choose(rng).unwrap())
        .collect()
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let mut seen = BTreeSet::new();
    let mut rules = Vec::new();
    for _ in 0..rng.gen_range(1u32..=8) {
        let repo = REPOS.choose(rng).unwrap().to_string();
        let prefix = random_segments(rng, 3).join("/");
        if seen.insert((repo.clone(), prefix.clone())) {
            rules.push(PathRule {
                repo,
                prefix,
                component: format!("C{}", rng.gen_range(0u32..5)),
            });
        }
    }
    if rng.gen_bool(0.5) {
        let parent = rules.choose(rng).unwrap().clone();
        let prefix = format!("{}/{}", parent.prefix, SEGMENTS.choose(rng).unwrap());
        if seen.insert((parent.repo.clone(), prefix.clone())) {
            rules.push(PathRule {
                repo: parent.repo,
                prefix,
                component: format!("C{}", rng.gen_range(0u32..5)),
            });
        }
    }
    let mut repo_table = BTreeMap::new();
    for repo in REPOS {
        if rng.gen_bool(0.5) {
            repo_table.insert(repo.to_string(), format!("C{}", rng.gen_range(0u32..5)));
        }
    }
    let base = rules.choose(rng).unwrap().clone();
    let (repo, path) = match rng.gen_range(0u32..4) {
        0 | 1 => {
            let tail = random_segments(rng, 2).join("/");
            (base.repo, format!("{}/{tail}/file.c", base.prefix))
        }
        2 => (base.repo, format!("{}x/file.c", base.prefix)),
        _ => (
            REPOS.choose(rng).unwrap().to_string(),
            format!("{}/file.c", random_segments(rng, 4).join("/")),
        ),
    };
    Case {
        rules,
        repo_table,
        repo,
        path,
    }
}

/// Scan every rule; keep the one with the most segments.
fn expected(case: &Case) -> Option<String> {
    let path: Vec<&str> = case.path.split('/').collect();
    case.rules
        .iter()
        .filter(|r| r.repo == case.repo)
        .filter(|r| {
            let prefix: Vec<&str> = r.prefix.split('/').collect();
            prefix.len() <= path.len() && prefix[..] == path[..prefix.len()]
        })
        .max_by_key(|r| r.prefix.split('/').count())
        .map(|r| r.component.clone())
        .or_else(|| case.repo_table.get(&case.repo).cloned())
}

fn build(rules: Vec<PathRule>, repo_table: &BTreeMap<String, String>) -> ComponentMap {
    ComponentMap::new(ComponentMapConfig {
        components: (0..5).map(|i| format!("C{i}")).collect(),
        repo_table: repo_table.clone(),
        path_table: rules,
    })
    .expect("valid table")
}

pub fn run(cases: usize, seed: u64) -> Result<Coverage, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cov = Coverage::default();
    for i in 0..cases {
        let case = random_case(&mut rng);
        let want = expected(&case);
        let map = build(case.rules.clone(), &case.repo_table);
        let got = map.map_file(&case.repo, &case.path).map(str::to_string);
        check(i, &case, &got, &want)?;

        let mut shuffled = case.rules.clone();
        shuffled.shuffle(&mut rng);
        let again = build(shuffled, &case.repo_table);
        let got2 = again.map_file(&case.repo, &case.path).map(str::to_string);
        ensure!(
            got2 == got,
            "case {i}: result depends on table order ({got:?} vs {got2:?})"
        );

        let matching: Vec<&PathRule> = case
            .rules
            .iter()
            .filter(|r| {
                r.repo == case.repo
                    && (case.path == r.prefix || case.path.starts_with(&format!("{}/", r.prefix)))
            })
            .collect();
        cov.cases += 1;
        if matching.len() >= 2 {
            cov.nested += 1;
        }
        if !matching.is_empty() && case.repo_table.contains_key(&case.repo) {
            cov.shadowed_repo += 1;
        }
        if case.rules.iter().any(|r| {
            r.repo == case.repo && case.path.starts_with(&r.prefix) && !matching.contains(&r)
        }) {
            cov.boundary_traps += 1;
        }
        match (&got, matching.is_empty()) {
            (None, _) => cov.unmapped += 1,
            (Some(_), true) => cov.repo_fallbacks += 1,
            _ => {}
        }
    }
    Ok(cov)
}

fn check(i: usize, case: &Case, got: &Option<String>, want: &Option<String>) -> Check {
    ensure!(
        got == want,
        "case {i}: {}:{} mapped to {got:?}, linear scan says {want:?}",
        case.repo,
        case.path
    );
    Ok(())
}
