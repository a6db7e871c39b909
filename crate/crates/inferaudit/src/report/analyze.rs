//! Automated error analysis over traces.
//!
//! The analyzer recomputes its findings from the trace and the archived
//! observations rather than trusting runtime flags: fabricated action
//! names are checked against the header's action space, fabricated inputs
//! against prior-step provenance, and fabricated report values against the
//! numbers that actually appeared in observations.

use super::ReportError;
use crate::agent::{ActionSpace, ATTACK_ACTIONS, CONTROLLER_ACTIONS};
use crate::trace::{Trace, TraceStep};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::Path;

/// Per-trace findings in the error taxonomy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorFindings {
    pub agent_id: String,
    /// Premature final answer, zero-attack end, or evaluation data used as
    /// the shadow dataset.
    pub bad_plan: bool,
    pub bad_plan_reasons: Vec<String>,
    /// Schema-invalid action inputs or unparseable replies.
    pub instruction_violation: bool,
    /// The same error observation recurring at least three times.
    pub context_loss: bool,
    /// Fabricated action names.
    pub hallucination_type1: u32,
    /// Fabricated action-input values.
    pub hallucination_type2: u32,
    /// Fabricated performance values in the report.
    pub hallucination_type3: u32,
    /// Share of steps taken by the most frequent action.
    pub dominant_action_fraction: f64,
    /// Set when that share exceeds 0.7.
    pub dominant_action_flag: bool,
}

impl ErrorFindings {
    pub fn clean(&self) -> bool {
        !self.bad_plan
            && !self.instruction_violation
            && !self.context_loss
            && self.hallucination_type1 == 0
            && self.hallucination_type2 == 0
            && self.hallucination_type3 == 0
            && !self.dominant_action_flag
    }
}

const DOMINANT_ACTION_THRESHOLD: f64 = 0.7;
const CONTEXT_LOSS_REPEATS: usize = 3;

fn space_for(trace: &Trace) -> &'static ActionSpace {
    if trace.header.attack.is_some() {
        &ATTACK_ACTIONS
    } else {
        &CONTROLLER_ACTIONS
    }
}

/// Full observation for a step: the archived file when present, otherwise
/// the digest recorded in the trace.
fn observation_text(step: &TraceStep, workspace: &Path) -> String {
    let path = workspace.join(&step.observation_ref);
    std::fs::read_to_string(path).unwrap_or_else(|_| step.observation_digest.clone())
}

fn is_error_step(step: &TraceStep) -> bool {
    step.meta.get("error").and_then(Value::as_bool).unwrap_or(false)
        || step.observation_digest.starts_with("Error:")
}

fn collect_values(value: &Value, out: &mut Vec<String>) {
    match value {
        Value::String(s) => {
            if !s.is_empty() {
                out.push(s.clone());
            }
        }
        Value::Number(n) => out.push(n.to_string()),
        Value::Array(items) => items.iter().for_each(|v| collect_values(v, out)),
        Value::Object(map) => map.values().for_each(|v| collect_values(v, out)),
        _ => {}
    }
}

/// Analyzes one trace against its action space and observation archive
/// rooted at `workspace`.
pub fn analyze_trace(trace: &Trace, workspace: &Path) -> ErrorFindings {
    let space = space_for(trace);
    let mut findings = ErrorFindings {
        agent_id: trace.header.agent_id.clone(),
        bad_plan: false,
        bad_plan_reasons: Vec::new(),
        instruction_violation: false,
        context_loss: false,
        hallucination_type1: 0,
        hallucination_type2: 0,
        hallucination_type3: 0,
        dominant_action_fraction: 0.0,
        dominant_action_flag: false,
    };

    // Provenance sources grow step by step, mirroring the runtime.
    let mut sources: Vec<String> = vec![trace.header.initial_instruction.clone()];
    let mut observed_numbers: Vec<(String, f64)> = Vec::new();
    let mut action_counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut error_counts: BTreeMap<String, usize> = BTreeMap::new();

    for step in &trace.steps {
        *action_counts.entry(step.action.as_str()).or_default() += 1;

        // Type-I: the action is not in the declared space.
        let known = space.get(&step.action).is_some()
            || trace.header.action_space.iter().any(|a| a == &step.action);
        let malformed_marker = step.action == "(malformed reply)";
        if !known && !malformed_marker {
            findings.hallucination_type1 += 1;
        }

        // Type-II: input values with no provenance in prior observations
        // or the initial instruction. Free-text parameters are exempt.
        if let Some(def) = space.get(&step.action) {
            let mut ungrounded = 0;
            for (key, value) in &step.action_input {
                let free = def
                    .params
                    .iter()
                    .find(|p| p.name == key.as_str())
                    .is_some_and(|p| p.free_text);
                if free {
                    continue;
                }
                let mut values = Vec::new();
                collect_values(value, &mut values);
                for v in values {
                    if !sources.iter().any(|s| s.contains(&v)) {
                        ungrounded += 1;
                    }
                }
            }
            if ungrounded > 0 {
                findings.hallucination_type2 += 1;
            }
        }

        // Type-III: report numbers absent from every observation so far.
        if step.action == "Final Answer" {
            if let Some(report) = step.action_input.get("report").and_then(Value::as_str) {
                let fabricated =
                    crate::agent::fabricated_report_numbers(report, &observed_numbers);
                if !fabricated.is_empty() {
                    findings.hallucination_type3 += 1;
                }
            }
        }

        // Bad plans: refused finalizations and shadow/aux data drawn from
        // the evaluation scoring bundle (by the `eval` naming convention).
        if let Some(reason) = step.meta.get("refused_final_answer").and_then(Value::as_str) {
            findings.bad_plan = true;
            findings
                .bad_plan_reasons
                .push(format!("step {}: final answer refused ({reason})", step.step));
        }
        if step.meta.get("bad_plan").and_then(Value::as_bool).unwrap_or(false) {
            findings.bad_plan = true;
            findings
                .bad_plan_reasons
                .push(format!("step {}: flagged bad plan", step.step));
        }
        if step.action == "Execute Script" {
            if let Some(Value::Object(params)) = step.action_input.get("params") {
                for key in ["shadow_dataset_path", "aux_dataset_path"] {
                    if let Some(Value::String(path)) = params.get(key) {
                        let file = Path::new(path)
                            .file_name()
                            .map(|f| f.to_string_lossy().to_lowercase())
                            .unwrap_or_default();
                        if file.contains("eval") {
                            findings.bad_plan = true;
                            findings.bad_plan_reasons.push(format!(
                                "step {}: {key} points at evaluation scoring data ({path})",
                                step.step
                            ));
                        }
                    }
                }
            }
        }

        // Instruction following: schema violations and unparseable replies.
        if step
            .meta
            .get("schema_violation")
            .and_then(Value::as_bool)
            .unwrap_or(false)
            || step
                .meta
                .get("malformed_plan")
                .and_then(Value::as_bool)
                .unwrap_or(false)
        {
            findings.instruction_violation = true;
        }

        // Context loss: the same (action, error observation) recurring.
        if is_error_step(step) {
            let key = format!("{}\u{1}{}", step.action, step.observation_digest);
            *error_counts.entry(key).or_default() += 1;
        }

        let observation = observation_text(step, workspace);
        observed_numbers.extend(crate::agent::extract_report_numbers(&observation));
        sources.push(observation);
    }

    findings.context_loss = error_counts.values().any(|&n| n >= CONTEXT_LOSS_REPEATS);
    if !trace.steps.is_empty() {
        let max = action_counts.values().copied().max().unwrap_or(0);
        findings.dominant_action_fraction = max as f64 / trace.steps.len() as f64;
        findings.dominant_action_flag =
            findings.dominant_action_fraction > DOMINANT_ACTION_THRESHOLD;
    }
    findings
}

// ---------------------------------------------------------------------------
// Completion rate.
// ---------------------------------------------------------------------------

/// One assessment run: the traces of its controller and attack agents,
/// grouped under a target identifier.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub target: String,
    pub traces: Vec<Trace>,
}

/// A run counts as complete iff the controller reached a successful Final
/// Answer and every attack it confirmed ended with status `completed`.
pub fn run_is_complete(traces: &[Trace]) -> bool {
    let Some(controller) = traces.iter().find(|t| t.header.attack.is_none()) else {
        return false;
    };
    if controller.status() != "completed" {
        return false;
    }
    let finalized = controller.steps.iter().any(|s| {
        s.action == "Final Answer" && !s.meta.contains_key("refused_final_answer")
    });
    if !finalized {
        return false;
    }
    let confirmed: Vec<String> = controller
        .steps
        .iter()
        .rev()
        .find_map(|s| s.meta.get("confirmed").and_then(Value::as_array).cloned())
        .map(|values| {
            values
                .iter()
                .filter_map(|v| v.as_str().map(str::to_string))
                .collect()
        })
        .unwrap_or_default();
    if confirmed.is_empty() {
        return false;
    }
    confirmed.iter().all(|name| {
        traces.iter().any(|t| {
            t.header
                .attack
                .is_some_and(|k| k.name() == name)
                && t.status() == "completed"
        })
    })
}

/// Completion fraction per target plus overall.
pub fn completion_rate(
    runs: &[RunRecord],
) -> Result<(BTreeMap<String, f64>, f64), ReportError> {
    if runs.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut per_target: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for run in runs {
        let entry = per_target.entry(run.target.clone()).or_default();
        entry.1 += 1;
        if run_is_complete(&run.traces) {
            entry.0 += 1;
        }
    }
    let mut fractions = BTreeMap::new();
    let (mut complete, mut total) = (0usize, 0usize);
    for (target, (c, t)) in per_target {
        fractions.insert(target, c as f64 / t as f64);
        complete += c;
        total += t;
    }
    Ok((fractions, complete as f64 / total as f64))
}

// ---------------------------------------------------------------------------
// Step distributions.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepStats {
    pub attack: crate::attack::AttackKind,
    pub completed_runs: usize,
    pub incomplete_runs: usize,
    pub mean_steps: f64,
    pub min_steps: usize,
    pub max_steps: usize,
}

/// Per-attack step distributions over completed traces; incomplete traces
/// are counted separately and excluded from the means.
pub fn summarize_steps(traces: &[Trace]) -> Vec<StepStats> {
    let mut grouped: BTreeMap<crate::attack::AttackKind, (Vec<usize>, usize)> = BTreeMap::new();
    for trace in traces {
        let Some(kind) = trace.header.attack else {
            continue;
        };
        let entry = grouped.entry(kind).or_default();
        if trace.status() == "completed" {
            entry.0.push(trace.steps.len());
        } else {
            entry.1 += 1;
        }
    }
    grouped
        .into_iter()
        .map(|(attack, (steps, incomplete))| {
            let mean = if steps.is_empty() {
                0.0
            } else {
                steps.iter().sum::<usize>() as f64 / steps.len() as f64
            };
            StepStats {
                attack,
                completed_runs: steps.len(),
                incomplete_runs: incomplete,
                mean_steps: mean,
                min_steps: steps.iter().copied().min().unwrap_or(0),
                max_steps: steps.iter().copied().max().unwrap_or(0),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{TraceEnd, TraceHeader, TraceStep, TRACE_FORMAT_VERSION};
    use serde_json::Map;

    fn header(agent_id: &str, attack: Option<crate::attack::AttackKind>) -> TraceHeader {
        TraceHeader {
            format_version: TRACE_FORMAT_VERSION,
            run_id: "r".into(),
            agent_id: agent_id.into(),
            attack,
            initial_instruction: "environment_dir: /env\nrun_seed: 1".into(),
            action_space: if attack.is_some() {
                ATTACK_ACTIONS.names()
            } else {
                CONTROLLER_ACTIONS.names()
            },
        }
    }

    fn step(agent: &str, n: usize, action: &str, observation: &str) -> TraceStep {
        TraceStep {
            agent_id: agent.into(),
            step: n,
            t_start_ms: 0,
            t_end_ms: 1,
            reflection: String::new(),
            plan: String::new(),
            important_information: vec![],
            action: action.into(),
            action_input: Map::new(),
            observation_digest: observation.into(),
            observation_ref: format!("missing/{n}.txt"),
            input_tokens: 1,
            output_tokens: 1,
            meta: Map::new(),
        }
    }

    fn end(agent: &str, status: &str, steps: usize) -> TraceEnd {
        TraceEnd {
            agent_id: agent.into(),
            status: status.into(),
            steps,
        }
    }

    #[test]
    fn unknown_action_counts_as_type1() {
        let kind = crate::attack::AttackKind::ModelStealing;
        let trace = Trace {
            header: header("attack-model_stealing", Some(kind)),
            steps: vec![step(
                "attack-model_stealing",
                1,
                "Change Directory",
                "Error: unknown action",
            )],
            end: Some(end("attack-model_stealing", "failed", 1)),
        };
        let findings = analyze_trace(&trace, Path::new("/nonexistent"));
        assert_eq!(findings.hallucination_type1, 1);
    }

    #[test]
    fn fabricated_path_counts_as_type2() {
        let kind = crate::attack::AttackKind::ModelStealing;
        let mut s = step("a", 1, "Execute Script", "Error: rejected");
        s.action_input.insert("task".into(), "model_stealing".into());
        s.action_input.insert(
            "params".into(),
            serde_json::json!({"shadow_dataset_path": "path/to/shadow_dataset"}),
        );
        let trace = Trace {
            header: header("a", Some(kind)),
            steps: vec![s],
            end: Some(end("a", "failed", 1)),
        };
        let findings = analyze_trace(&trace, Path::new("/nonexistent"));
        assert!(findings.hallucination_type2 >= 1);
    }

    #[test]
    fn repeated_error_observations_mean_context_loss() {
        let kind = crate::attack::AttackKind::ModelStealing;
        let steps: Vec<TraceStep> = (1..=3)
            .map(|n| {
                step(
                    "a",
                    n,
                    "Execute Script",
                    "Error: missing required parameter: learning_rate",
                )
            })
            .collect();
        let trace = Trace {
            header: header("a", Some(kind)),
            steps,
            end: Some(end("a", "failed", 3)),
        };
        let findings = analyze_trace(&trace, Path::new("/nonexistent"));
        assert!(findings.context_loss);
    }

    #[test]
    fn dominant_action_fraction_is_flagged_over_0_7() {
        let kind = crate::attack::AttackKind::ModelStealing;
        let mut steps: Vec<TraceStep> = (1..=9)
            .map(|n| step("a", n, "List Files", "file listing"))
            .collect();
        steps.push(step("a", 10, "Final Answer", "done"));
        let trace = Trace {
            header: header("a", Some(kind)),
            steps,
            end: Some(end("a", "failed", 10)),
        };
        let findings = analyze_trace(&trace, Path::new("/nonexistent"));
        assert!((findings.dominant_action_fraction - 0.9).abs() < 1e-12);
        assert!(findings.dominant_action_flag);
    }

    #[test]
    fn completion_requires_controller_and_all_confirmed_attacks() {
        let kind = crate::attack::AttackKind::ModelStealing;
        let mut determine = step("controller", 1, "Determine Attacks", "confirmed: model_stealing");
        determine.meta.insert(
            "confirmed".into(),
            serde_json::json!(["model_stealing"]),
        );
        let final_answer = step("controller", 2, "Final Answer", "done");
        let controller = Trace {
            header: header("controller", None),
            steps: vec![determine, final_answer],
            end: Some(end("controller", "completed", 2)),
        };
        let attack_ok = Trace {
            header: header("attack-model_stealing", Some(kind)),
            steps: vec![],
            end: Some(end("attack-model_stealing", "completed", 5)),
        };
        assert!(run_is_complete(&[controller.clone(), attack_ok]));
        let attack_failed = Trace {
            header: header("attack-model_stealing", Some(kind)),
            steps: vec![],
            end: Some(end("attack-model_stealing", "failed", 5)),
        };
        assert!(!run_is_complete(&[controller, attack_failed]));
    }

    #[test]
    fn completion_rate_groups_by_target() {
        let kind = crate::attack::AttackKind::ModelStealing;
        let complete_run = || {
            let mut determine =
                step("controller", 1, "Determine Attacks", "confirmed: model_stealing");
            determine
                .meta
                .insert("confirmed".into(), serde_json::json!(["model_stealing"]));
            RunRecord {
                target: "svc".into(),
                traces: vec![
                    Trace {
                        header: header("controller", None),
                        steps: vec![determine, step("controller", 2, "Final Answer", "done")],
                        end: Some(end("controller", "completed", 2)),
                    },
                    Trace {
                        header: header("attack-model_stealing", Some(kind)),
                        steps: vec![],
                        end: Some(end("attack-model_stealing", "completed", 5)),
                    },
                ],
            }
        };
        let incomplete = RunRecord {
            target: "svc".into(),
            traces: vec![Trace {
                header: header("controller", None),
                steps: vec![],
                end: Some(end("controller", "failed", 50)),
            }],
        };
        let runs = vec![complete_run(), complete_run(), incomplete];
        let (per_target, overall) = completion_rate(&runs).unwrap();
        assert!((per_target["svc"] - 2.0 / 3.0).abs() < 1e-12);
        assert!((overall - 2.0 / 3.0).abs() < 1e-12);
        assert!(completion_rate(&[]).is_err());
    }

    #[test]
    fn step_summary_excludes_incomplete_runs_from_means() {
        let kind = crate::attack::AttackKind::DataReconstruction;
        let mk = |n: usize, status: &str| Trace {
            header: header("attack-data_reconstruction", Some(kind)),
            steps: (1..=n)
                .map(|i| step("attack-data_reconstruction", i, "List Files", "ok"))
                .collect(),
            end: Some(end("attack-data_reconstruction", status, n)),
        };
        let stats = summarize_steps(&[mk(5, "completed"), mk(7, "completed"), mk(50, "failed")]);
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].completed_runs, 2);
        assert_eq!(stats[0].incomplete_runs, 1);
        assert!((stats[0].mean_steps - 6.0).abs() < 1e-12);
    }
}
