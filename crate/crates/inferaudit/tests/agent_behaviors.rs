//! Runtime behaviors beyond the acceptance gate: provenance closure over
//! traces, workspace isolation, and the containment responses to scripted
//! faults.

mod common;

use common::shared_fixture;
use inferaudit::agent::{
    run_assessment, FaultScript, FaultyPlanner, MockPlanner, RunSettings, ATTACK_ACTIONS,
    CONTROLLER_ACTIONS,
};
use inferaudit::trace::read_trace_dir;
use serde_json::Value;
use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

fn space_for(attack: bool) -> &'static inferaudit::agent::ActionSpace {
    if attack {
        &ATTACK_ACTIONS
    } else {
        &CONTROLLER_ACTIONS
    }
}

/// Every non-free-text value in every executed action input must trace
/// back to the initial instruction or an earlier archived observation.
#[test]
fn provenance_closure_holds_over_clean_traces() {
    let fixture = shared_fixture();
    let dir = tempfile::tempdir().unwrap();
    let svc = fixture.services.iter().find(|s| s.name == "synth_faces").unwrap();
    let outcome = run_assessment(
        &svc.info,
        &fixture.env,
        &svc.scoring,
        Arc::new(MockPlanner::new(11)),
        &RunSettings::deterministic(11),
        &dir.path().join("ws"),
    )
    .unwrap();
    assert!(outcome.complete);
    let mut checked_values = 0usize;
    for trace in read_trace_dir(&outcome.trace_dir).unwrap() {
        let space = space_for(trace.header.attack.is_some());
        let mut sources = vec![trace.header.initial_instruction.clone()];
        for step in &trace.steps {
            let def = space.get(&step.action).expect("clean traces use known actions");
            for (key, value) in &step.action_input {
                let free = def
                    .params
                    .iter()
                    .find(|p| p.name == key.as_str())
                    .is_some_and(|p| p.free_text);
                if free {
                    continue;
                }
                let mut stack = vec![value.clone()];
                while let Some(v) = stack.pop() {
                    match v {
                        Value::String(s) if !s.is_empty() => {
                            assert!(
                                sources.iter().any(|src| src.contains(&s)),
                                "{}: step {} value {s:?} has no provenance",
                                trace.header.agent_id,
                                step.step
                            );
                            checked_values += 1;
                        }
                        Value::Number(n) => {
                            let token = n.to_string();
                            assert!(
                                sources.iter().any(|src| src.contains(&token)),
                                "{}: step {} number {token} has no provenance",
                                trace.header.agent_id,
                                step.step
                            );
                            checked_values += 1;
                        }
                        Value::Array(items) => stack.extend(items),
                        Value::Object(map) => stack.extend(map.into_iter().map(|(_, v)| v)),
                        _ => {}
                    }
                }
            }
            let full = std::fs::read_to_string(
                dir.path().join("ws").join(&step.observation_ref),
            )
            .unwrap_or_else(|_| step.observation_digest.clone());
            sources.push(full);
        }
    }
    assert!(checked_values > 50, "only {checked_values} values checked");
}

/// Workers own disjoint workspaces; nothing one agent writes lands in
/// another's directory, and every artifact an agent reports stays under
/// its own root.
#[test]
fn attack_agents_use_disjoint_workspaces() {
    let fixture = shared_fixture();
    let dir = tempfile::tempdir().unwrap();
    let svc = fixture.services.iter().find(|s| s.name == "synth_attr").unwrap();
    let outcome = run_assessment(
        &svc.info,
        &fixture.env,
        &svc.scoring,
        Arc::new(MockPlanner::new(5)),
        &RunSettings::deterministic(5),
        &dir.path().join("ws"),
    )
    .unwrap();
    assert!(outcome.complete);
    let agents_dir = dir.path().join("ws/agents");
    let mut roots = BTreeSet::new();
    for attack in &outcome.outcomes {
        let root = agents_dir.join(attack.kind.name());
        assert!(root.is_dir(), "{root:?} missing");
        roots.insert(root.clone());
        // Reported artifacts resolve inside this agent's own root.
        for result in &attack.results {
            for artifact in &result.artifact_paths {
                assert!(
                    artifact.is_relative(),
                    "artifact escapes its workspace: {artifact:?}"
                );
                assert!(root.join(artifact).is_file());
            }
        }
    }
    assert_eq!(roots.len(), 4);
}

#[test]
fn unknown_action_gets_corrective_observation_without_env_change() {
    let fixture = shared_fixture();
    let dir = tempfile::tempdir().unwrap();
    let svc = fixture.services.iter().find(|s| s.name == "synth_five").unwrap();
    let outcome = run_assessment(
        &svc.info,
        &fixture.env,
        &svc.scoring,
        Arc::new(FaultyPlanner::new(FaultScript::UnknownAction, 3)),
        &RunSettings::deterministic(3),
        &dir.path().join("ws"),
    )
    .unwrap();
    // The fault is contained: the run still completes.
    assert!(outcome.complete);
    let traces = read_trace_dir(&outcome.trace_dir).unwrap();
    let mut saw_fault = false;
    for trace in traces.iter().filter(|t| t.header.attack.is_some()) {
        for step in &trace.steps {
            if step.action == "Change Directory" {
                saw_fault = true;
                assert!(step.observation_digest.contains("unknown action"));
                // The corrective observation lists the legal action space.
                for name in ATTACK_ACTIONS.names() {
                    assert!(
                        step.observation_digest.contains(&name),
                        "observation does not list {name}"
                    );
                }
                assert_eq!(step.meta.get("hallucination_type1"), Some(&Value::Bool(true)));
            }
        }
    }
    assert!(saw_fault);
}

#[test]
fn fabricated_input_is_rejected_before_execution() {
    let fixture = shared_fixture();
    let dir = tempfile::tempdir().unwrap();
    let svc = fixture.services.iter().find(|s| s.name == "synth_five").unwrap();
    let outcome = run_assessment(
        &svc.info,
        &fixture.env,
        &svc.scoring,
        Arc::new(FaultyPlanner::new(FaultScript::FabricatedInput, 4)),
        &RunSettings::deterministic(4),
        &dir.path().join("ws"),
    )
    .unwrap();
    assert!(outcome.complete);
    let traces = read_trace_dir(&outcome.trace_dir).unwrap();
    let fault_step = traces
        .iter()
        .flat_map(|t| t.steps.iter())
        .find(|s| s.meta.get("hallucination_type2") == Some(&Value::Bool(true)))
        .expect("the fabricated input step is flagged");
    assert!(fault_step
        .observation_digest
        .contains("path/to/shadow_dataset"));
}

#[test]
fn premature_controller_final_answer_is_refused() {
    let fixture = shared_fixture();
    let dir = tempfile::tempdir().unwrap();
    let svc = fixture.services.iter().find(|s| s.name == "synth_five").unwrap();
    let outcome = run_assessment(
        &svc.info,
        &fixture.env,
        &svc.scoring,
        Arc::new(FaultyPlanner::new(FaultScript::PrematureFinal, 6)),
        &RunSettings::deterministic(6),
        &dir.path().join("ws"),
    )
    .unwrap();
    // Refused at step 1, recovered by the fallback policy afterwards.
    assert!(outcome.complete);
    let traces = read_trace_dir(&outcome.trace_dir).unwrap();
    let controller = traces.iter().find(|t| t.header.attack.is_none()).unwrap();
    let refusal = &controller.steps[0];
    assert_eq!(refusal.action, "Final Answer");
    assert_eq!(
        refusal.meta.get("refused_final_answer"),
        Some(&Value::String("zero_attacks".into()))
    );
    // The accepted final answer comes only after every agent is terminal.
    let last = controller.steps.last().unwrap();
    assert_eq!(last.action, "Final Answer");
    assert!(!last.meta.contains_key("refused_final_answer"));
}

#[test]
fn fabricated_metric_report_is_refused_then_corrected() {
    let fixture = shared_fixture();
    let dir = tempfile::tempdir().unwrap();
    let svc = fixture.services.iter().find(|s| s.name == "synth_five").unwrap();
    let outcome = run_assessment(
        &svc.info,
        &fixture.env,
        &svc.scoring,
        Arc::new(FaultyPlanner::new(FaultScript::FabricatedMetric, 8)),
        &RunSettings::deterministic(8),
        &dir.path().join("ws"),
    )
    .unwrap();
    assert!(outcome.complete, "refusal must not kill the run");
    let traces = read_trace_dir(&outcome.trace_dir).unwrap();
    let refused = traces
        .iter()
        .flat_map(|t| t.steps.iter())
        .find(|s| s.meta.get("hallucination_type3") == Some(&Value::Bool(true)))
        .expect("fabricated-metric refusal recorded");
    assert!(refused.observation_digest.contains("absent from every observation"));
    // The fabricated value never reaches a written report section.
    for attack_dir in std::fs::read_dir(dir.path().join("ws/agents")).unwrap() {
        let section = attack_dir.unwrap().path().join("report_section.md");
        if let Ok(text) = std::fs::read_to_string(section) {
            assert!(!text.contains("0.987654"));
        }
    }
}

#[test]
fn malformed_replies_consume_a_step_after_two_reprompts() {
    let fixture = shared_fixture();
    let dir = tempfile::tempdir().unwrap();
    let svc = fixture.services.iter().find(|s| s.name == "synth_five").unwrap();
    let outcome = run_assessment(
        &svc.info,
        &fixture.env,
        &svc.scoring,
        Arc::new(FaultyPlanner::new(FaultScript::MalformedPlan, 9)),
        &RunSettings::deterministic(9),
        &dir.path().join("ws"),
    )
    .unwrap();
    assert!(outcome.complete);
    let traces = read_trace_dir(&outcome.trace_dir).unwrap();
    let malformed: Vec<_> = traces
        .iter()
        .flat_map(|t| t.steps.iter())
        .filter(|s| s.action == "(malformed reply)")
        .collect();
    assert!(!malformed.is_empty());
    for step in malformed {
        assert_eq!(step.meta.get("malformed_plan"), Some(&Value::Bool(true)));
        assert!(step.observation_digest.contains("could not be parsed"));
    }
}

#[test]
fn list_files_stays_inside_the_environment() {
    let fixture = shared_fixture();
    let dir = tempfile::tempdir().unwrap();
    let svc = fixture.services.iter().find(|s| s.name == "synth_five").unwrap();
    // Reuse the runtime through a real run, then check the observation the
    // mock's List Files step produced.
    let outcome = run_assessment(
        &svc.info,
        &fixture.env,
        &svc.scoring,
        Arc::new(MockPlanner::new(13)),
        &RunSettings::deterministic(13),
        &dir.path().join("ws"),
    )
    .unwrap();
    let traces = read_trace_dir(&outcome.trace_dir).unwrap();
    let listing = traces
        .iter()
        .flat_map(|t| t.steps.iter())
        .find(|s| s.action == "List Files")
        .expect("the membership agent lists the environment");
    for file in [
        "available_datasets.json",
        "available_models.json",
        "available_tasks.json",
    ] {
        assert!(listing.observation_digest.contains(file));
    }
    assert!(!Path::new(&listing.observation_ref).is_absolute());
}
