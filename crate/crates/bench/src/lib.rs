//! Shared inputs for the criterion benches.

use std::sync::Arc;

use chrono::{TimeZone, Utc};
use multidimer_core::forge::{generate, GenSpec, Generated};
use multidimer_core::scm::FixtureBackend;
use multidimer_core::{AnalysisConfig, ComponentMap, CorpusQuery, ScmGateway};

pub fn corpus(n_bugs: usize) -> Generated {
    generate(&GenSpec {
        seed: 42,
        n_bugs,
        ..GenSpec::default()
    })
    .expect("default spec is valid")
}

pub fn config(generated: &Generated) -> AnalysisConfig {
    AnalysisConfig::new(
        generated.vocabulary.clone(),
        generated.analyzer.clone(),
        ComponentMap::new(generated.component_map.clone()).expect("generated map is valid"),
    )
    .expect("generated config is valid")
}

/// Fresh gateway, so every iteration pays for its lookups.
pub fn gateway(generated: &Generated) -> ScmGateway {
    let backend = FixtureBackend::from_records(generated.fixtures.iter().cloned());
    ScmGateway::new(
        Arc::new(backend),
        Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap(),
    )
}

pub fn whole_window() -> CorpusQuery {
    CorpusQuery::new(
        ["P1"],
        Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap(),
        Utc.with_ymd_and_hms(2100, 1, 1, 0, 0, 0).unwrap(),
    )
    .expect("non-empty window")
}
