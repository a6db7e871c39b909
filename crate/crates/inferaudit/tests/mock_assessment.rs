//! End-to-end assessments with the mock planner.

mod common;

use common::shared_fixture;
use inferaudit::agent::{run_assessment, AgentStateKind, MockPlanner, RunSettings};
use inferaudit::attack::AttackKind;
use inferaudit::trace::read_trace_dir;
use std::sync::Arc;

#[test]
fn four_attack_service_completes_with_all_sections() {
    let fixture = shared_fixture();
    let dir = tempfile::tempdir().unwrap();
    let svc = fixture
        .services
        .iter()
        .find(|s| s.name == "synth_attr")
        .unwrap();
    let outcome = run_assessment(
        &svc.info,
        &fixture.env,
        &svc.scoring,
        Arc::new(MockPlanner::new(7)),
        &RunSettings::deterministic(7),
        &dir.path().join("ws"),
    )
    .unwrap();
    assert!(outcome.complete, "incomplete: {:?}", outcome.outcomes);
    assert_eq!(outcome.confirmed.len(), 4);
    assert_eq!(outcome.controller_status, AgentStateKind::Completed);
    for attack in &outcome.outcomes {
        assert_eq!(
            attack.status.state,
            AgentStateKind::Completed,
            "{:?}: {}",
            attack.kind,
            attack.status.detail
        );
        assert!(attack.section.is_some(), "{:?} wrote no section", attack.kind);
        assert!(!attack.results.is_empty(), "{:?} has no results", attack.kind);
    }
    // Per-agent step ceilings.
    let traces = read_trace_dir(&outcome.trace_dir).unwrap();
    assert_eq!(traces.len(), 5);
    for trace in &traces {
        assert!(trace.steps.len() <= 50, "{} overflowed", trace.header.agent_id);
    }
    // The report carries the five parts per attack.
    let report = std::fs::read_to_string(&outcome.report_path).unwrap();
    for marker in [
        "1. Target service:",
        "2. Attack process:",
        "3. Results:",
        "4. Interpretation:",
        "5. Defense suggestions:",
    ] {
        assert!(report.contains(marker));
    }
}

#[test]
fn predict_only_service_runs_exactly_three_attacks() {
    let fixture = shared_fixture();
    let dir = tempfile::tempdir().unwrap();
    let svc = fixture
        .services
        .iter()
        .find(|s| s.name == "synth_five")
        .unwrap();
    let outcome = run_assessment(
        &svc.info,
        &fixture.env,
        &svc.scoring,
        Arc::new(MockPlanner::new(3)),
        &RunSettings::deterministic(3),
        &dir.path().join("ws"),
    )
    .unwrap();
    assert!(outcome.complete);
    let mut confirmed = outcome.confirmed.clone();
    confirmed.sort();
    assert_eq!(
        confirmed,
        vec![
            AttackKind::MembershipInference,
            AttackKind::ModelStealing,
            AttackKind::DataReconstruction,
        ]
    );
}

#[test]
fn unreachable_service_fails_fast_without_launching() {
    let fixture = shared_fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut info = fixture.services[0].info.clone();
    info.predict_url = "http://127.0.0.1:9/predict".into();
    let err = run_assessment(
        &info,
        &fixture.env,
        &fixture.services[0].scoring,
        Arc::new(MockPlanner::new(1)),
        &RunSettings::deterministic(1),
        &dir.path().join("ws"),
    )
    .unwrap_err();
    assert!(err.to_string().contains("not reachable"), "{err}");
    assert!(!dir.path().join("ws/traces").exists());
}
