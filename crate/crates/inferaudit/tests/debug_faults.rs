mod common;
use common::shared_fixture;
use inferaudit::agent::{run_assessment, FaultScript, FaultyPlanner, RunSettings};
use std::sync::Arc;

#[test]
#[ignore]
fn dump() {
    let fixture = shared_fixture();
    let svc = fixture.services.iter().find(|s| s.name == "synth_five").unwrap();
    for (script, seed) in [(FaultScript::FabricatedMetric, 8u64), (FaultScript::MalformedPlan, 9)] {
        let ws = std::path::PathBuf::from(format!("/tmp/dbg_{}", script.name()));
        let _ = std::fs::remove_dir_all(&ws);
        let outcome = run_assessment(
            &svc.info, &fixture.env, &svc.scoring,
            Arc::new(FaultyPlanner::new(script, seed)),
            &RunSettings::deterministic(seed), &ws,
        ).unwrap();
        println!("== {} complete={}", script.name(), outcome.complete);
        for o in &outcome.outcomes {
            println!("  {:?}: {:?} steps={} detail={}", o.kind, o.status.state, o.status.steps, o.status.detail);
        }
    }
}
