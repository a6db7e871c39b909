//! Action spaces and the attack agent's action executor.
//!
//! Each action is a named, schema-checked operation. The choose/set
//! actions delegate their decision to the planner backend with a guideline
//! prompt — that is where the per-step domain knowledge lives — and then
//! validate the reply against the environment before acting on it.

use super::planner::{ChatMessage, Planner, DATA_CLOSE, DATA_OPEN};
use super::{AgentStateKind, EnvPaths, ScoringPaths, TargetServiceInfo};
use crate::attack::{self, AttackEnv, AttackError, AttackKind, AttackResult, TaskManifest};
use crate::data::{load_dataset_registry, load_model_registry};
use serde_json::{Map, Value};
use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Clone, Copy)]
pub struct ActionParam {
    pub name: &'static str,
    pub required: bool,
    /// Free-text inputs are exempt from the verbatim-provenance rule.
    pub free_text: bool,
}

const fn param(name: &'static str) -> ActionParam {
    ActionParam {
        name,
        required: true,
        free_text: false,
    }
}

const fn opt_param(name: &'static str) -> ActionParam {
    ActionParam {
        name,
        required: false,
        free_text: false,
    }
}

const fn free_param(name: &'static str) -> ActionParam {
    ActionParam {
        name,
        required: true,
        free_text: true,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ActionDef {
    pub name: &'static str,
    pub purpose: &'static str,
    pub params: &'static [ActionParam],
    pub guideline: &'static str,
}

#[derive(Debug, Clone)]
pub struct ActionSpace {
    pub actions: &'static [ActionDef],
}

impl ActionSpace {
    pub fn get(&self, name: &str) -> Option<&ActionDef> {
        self.actions.iter().find(|a| a.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.actions.iter().map(|a| a.name.to_string()).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for action in self.actions {
            let _ = writeln!(out, "* {} — {}", action.name, action.purpose);
            if !action.params.is_empty() {
                let params: Vec<String> = action
                    .params
                    .iter()
                    .map(|p| {
                        if p.required {
                            p.name.to_string()
                        } else {
                            format!("{}?", p.name)
                        }
                    })
                    .collect();
                let _ = writeln!(out, "  inputs: {}", params.join(", "));
            }
            if !action.guideline.is_empty() {
                let _ = writeln!(out, "  guideline: {}", action.guideline);
            }
        }
        out
    }
}

pub const CONTROLLER_ACTIONS: ActionSpace = ActionSpace {
    actions: &[
        ActionDef {
            name: "Determine Attacks",
            purpose: "Confirm which candidate attacks the environment can execute against this service",
            params: &[param("candidates")],
            guideline: "Candidates are attack names: membership inference, model stealing, data reconstruction, attribute inference. Confirmation is checked against the capability registry, not against the service's own text.",
        },
        ActionDef {
            name: "Launch AttackAgent",
            purpose: "Create an isolated environment and launch one AttackAgent per determined attack",
            params: &[param("attacks")],
            guideline: "Launch only attacks that were confirmed by Determine Attacks.",
        },
        ActionDef {
            name: "Monitor Attacks",
            purpose: "Check the status of ongoing attacks",
            params: &[],
            guideline: "Returns the latest status snapshot without blocking.",
        },
        ActionDef {
            name: "Final Answer",
            purpose: "Shut down the agents and environment once every attack is terminal",
            params: &[],
            guideline: "Refused while any launched agent is still running.",
        },
    ],
};

pub const ATTACK_ACTIONS: ActionSpace = ActionSpace {
    actions: &[
        ActionDef {
            name: "List Files",
            purpose: "List all files and folders in the given directory",
            params: &[param("path")],
            guideline: "Only the environment and workspace directories are listable.",
        },
        ActionDef {
            name: "Check Required Parameters",
            purpose: "Extract all parameters required to execute the given task",
            params: &[param("task")],
            guideline: "Run this before Set Parameters for the same task.",
        },
        ActionDef {
            name: "Choose Shadow Dataset",
            purpose: "Choose the most similar dataset as the shadow dataset",
            params: &[
                param("file"),
                free_param("task_description"),
                free_param("input_format"),
                free_param("output_format"),
                opt_param("target_attribute"),
            ],
            guideline: "Prefer datasets with the same target task, similar concept relevance, the same target label/attribute, and matching input/output formats and class counts.",
        },
        ActionDef {
            name: "Choose Attribute",
            purpose: "Choose attribute(s) as the shadow model's target label",
            params: &[
                param("file"),
                free_param("task_description"),
                param("shadow_dataset"),
                free_param("output_format"),
            ],
            guideline: "When no single label matches, combine multiple attributes into a single label whose class count matches the target's output format; multiple names come back comma-separated.",
        },
        ActionDef {
            name: "Choose Shadow Model Architecture",
            purpose: "Choose the most suitable model architecture",
            params: &[param("file"), param("access"), param("attack")],
            guideline: "Access is black-box. Attack is one of: membership inference attack, model stealing attack, data reconstruction attack, attribute inference attack. For model stealing a more powerful architecture is beneficial, but avoid tiers flagged for overfit risk; for membership inference pick a tier that mimics the target.",
        },
        ActionDef {
            name: "Set Parameters",
            purpose: "Set the learning rate, batch size, number of epochs, and dataset size",
            params: &[
                param("task"),
                param("dataset"),
                param("model"),
                param("attack"),
                free_param("purpose"),
            ],
            guideline: "Check Required Parameters must run first for the task. Pass model = (built-in) for tasks with fixed internal models. For membership inference start with a small dataset size to increase overfitting signal; for model stealing choose a larger number of training epochs and dataset size, within any advertised query budget.",
        },
        ActionDef {
            name: "Execute Script",
            purpose: "Execute the given attack task, explicitly passing its parameters",
            params: &[
                param("task"),
                ActionParam {
                    name: "params",
                    required: true,
                    free_text: false,
                },
            ],
            guideline: "params is a JSON object satisfying the task manifest; every value must be grounded in observations or the initial instruction.",
        },
        ActionDef {
            name: "Final Answer",
            purpose: "Write the per-attack report section and shut down this agent",
            params: &[free_param("report")],
            guideline: "The report may only cite metric values that appeared in observations.",
        },
    ],
};

/// Builds the immutable initial instruction for an attack agent. Paths
/// inside the run workspace never appear here: the agent's own directory
/// is implicit executor state, which keeps traces comparable across runs
/// in different workspaces.
pub fn attack_instruction(
    kind: AttackKind,
    info: &TargetServiceInfo,
    env: &EnvPaths,
    scoring: &ScoringPaths,
    run_seed: u64,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "role: attack:{}", kind.name());
    let _ = writeln!(
        out,
        "You are conducting a {} risk assessment of a deployed prediction service, end to end, without human input.",
        kind.display_name()
    );
    out.push_str(&render_service_info(info));
    let _ = writeln!(out, "access: black-box");
    let _ = writeln!(out, "environment_dir: {}", env.environment_dir.display());
    let _ = writeln!(out, "datasets_registry: {}", env.datasets_registry.display());
    let _ = writeln!(out, "models_registry: {}", env.models_registry.display());
    let _ = writeln!(out, "tasks_registry: {}", env.tasks_registry.display());
    let _ = writeln!(
        out,
        "available_tasks: {}",
        attack::default_manifests()
            .iter()
            .map(|m| m.name.clone())
            .collect::<Vec<_>>()
            .join(", ")
    );
    let _ = writeln!(out, "scoring_members: {}", scoring.members.display());
    let _ = writeln!(out, "scoring_nonmembers: {}", scoring.nonmembers.display());
    let _ = writeln!(out, "scoring_eval: {}", scoring.eval.display());
    let _ = writeln!(out, "scoring_probes: {}", scoring.probes.display());
    let _ = writeln!(out, "run_seed: {run_seed}");
    out.push_str("\n=== ACTION SPACE ===\n");
    out.push_str(&ATTACK_ACTIONS.render());
    out
}

/// Builds the controller's initial instruction.
pub fn controller_instruction(info: &TargetServiceInfo, env: &EnvPaths, run_seed: u64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "role: controller");
    let _ = writeln!(
        out,
        "You orchestrate a black-box inference-attack risk assessment of the service described below. Determine which attacks are executable, launch an isolated AttackAgent per attack, monitor them, and finalize only when all are terminal."
    );
    out.push_str(&render_service_info(info));
    let _ = writeln!(out, "access: black-box");
    let _ = writeln!(out, "datasets_registry: {}", env.datasets_registry.display());
    let _ = writeln!(out, "models_registry: {}", env.models_registry.display());
    let _ = writeln!(out, "run_seed: {run_seed}");
    out.push_str("\n=== ACTION SPACE ===\n");
    out.push_str(&CONTROLLER_ACTIONS.render());
    out
}

/// Renders the user-supplied service information. Free-text fields are
/// wrapped in data fences so downstream consumers treat them as data.
fn render_service_info(info: &TargetServiceInfo) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "task_description: {DATA_OPEN}\n{}\n{DATA_CLOSE}",
        info.task_description
    );
    let _ = writeln!(out, "predict_url: {}", info.predict_url);
    if let Some(url) = &info.embedding_url {
        let _ = writeln!(out, "embedding_url: {url}");
    }
    let _ = writeln!(
        out,
        "input_format: {DATA_OPEN}\n{}\n{DATA_CLOSE}",
        info.input_format
    );
    let _ = writeln!(
        out,
        "output_format: {DATA_OPEN}\n{}\n{DATA_CLOSE}",
        info.output_format
    );
    if let Some(c) = info.effective_class_count() {
        let _ = writeln!(out, "class_count: {c}");
    }
    if let Some(attr) = &info.sensitive_attribute {
        let _ = writeln!(out, "sensitive_attribute: {attr}");
    }
    if let Some(budget) = info.query_budget {
        let _ = writeln!(out, "query_budget: {budget}");
    }
    out
}

/// What one executed action produced.
pub struct ExecOutcome {
    pub observation: String,
    pub meta: Map<String, Value>,
    pub control: StepControl,
    pub sub_input_tokens: u64,
    pub sub_output_tokens: u64,
}

impl ExecOutcome {
    pub(crate) fn of(observation: String) -> Self {
        ExecOutcome {
            observation,
            meta: Map::new(),
            control: StepControl::Continue,
            sub_input_tokens: 0,
            sub_output_tokens: 0,
        }
    }

    pub(crate) fn error(message: String) -> Self {
        let mut outcome = ExecOutcome::of(format!("Error: {message}"));
        outcome.meta.insert("error".into(), true.into());
        outcome
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepControl {
    Continue,
    Finish { state: AgentStateKind, detail: String },
}

/// An agent's action surface.
pub trait ActionExecutor: Send {
    fn action_space(&self) -> &ActionSpace;
    fn execute(&mut self, action: &str, input: &Map<String, Value>) -> ExecOutcome;
}

/// Executor backing one AttackAgent. Owns its private workspace; the only
/// shared resources are the (read-only) environment registries, the
/// planner, and the remote service.
pub struct AttackExecutor {
    pub kind: AttackKind,
    env: EnvPaths,
    info: TargetServiceInfo,
    service: Arc<dyn crate::service::ServiceApi>,
    planner: Arc<dyn Planner>,
    workspace: PathBuf,
    temperature: f64,
    checked_tasks: HashSet<String>,
    results: BTreeMap<String, AttackResult>,
    /// Numbers that appeared in observations this agent produced, for the
    /// fabricated-metric refusal at Final Answer.
    observed_numbers: Vec<(String, f64)>,
}

impl AttackExecutor {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: AttackKind,
        env: EnvPaths,
        info: TargetServiceInfo,
        service: Arc<dyn crate::service::ServiceApi>,
        planner: Arc<dyn Planner>,
        workspace: PathBuf,
        temperature: f64,
    ) -> Self {
        AttackExecutor {
            kind,
            env,
            info,
            service,
            planner,
            workspace,
            temperature,
            checked_tasks: HashSet::new(),
            results: BTreeMap::new(),
            observed_numbers: Vec::new(),
        }
    }

    pub fn results(&self) -> &BTreeMap<String, AttackResult> {
        &self.results
    }

    fn select(&self, prompt: String, tokens: &mut (u64, u64)) -> Result<String, String> {
        let reply = self
            .planner
            .complete(&[ChatMessage::user(prompt)], self.temperature)
            .map_err(|e| e.to_string())?;
        tokens.0 += reply.input_tokens;
        tokens.1 += reply.output_tokens;
        Ok(reply.text.trim().to_string())
    }

    fn attack_env(&self) -> AttackEnv {
        AttackEnv {
            models_registry: self.env.models_registry.clone(),
            workspace: self.workspace.clone(),
        }
    }

    fn listable(&self, path: &Path) -> bool {
        path.starts_with(&self.env.environment_dir) || path.starts_with(&self.workspace)
    }

    fn do_list_files(&self, input: &Map<String, Value>) -> ExecOutcome {
        let Some(path) = input.get("path").and_then(Value::as_str) else {
            return ExecOutcome::error("List Files needs a string path".into());
        };
        let path = Path::new(path);
        if !self.listable(path) {
            return ExecOutcome::error(format!(
                "path {} is outside the environment and workspace",
                path.display()
            ));
        }
        match std::fs::read_dir(path) {
            Ok(entries) => {
                let mut names: Vec<String> = entries
                    .filter_map(|e| e.ok())
                    .map(|e| e.file_name().to_string_lossy().into_owned())
                    .collect();
                names.sort();
                ExecOutcome::of(names.join(", "))
            }
            Err(e) => ExecOutcome::error(format!("cannot list {}: {e}", path.display())),
        }
    }

    fn do_check_required_parameters(&mut self, input: &Map<String, Value>) -> ExecOutcome {
        let Some(task) = input.get("task").and_then(Value::as_str) else {
            return ExecOutcome::error("Check Required Parameters needs a task name".into());
        };
        let Some(manifest) = attack::task_manifest(task) else {
            return ExecOutcome::error(format!("unknown task: {task}"));
        };
        self.checked_tasks.insert(task.to_string());
        ExecOutcome::of(render_manifest(&manifest))
    }

    fn do_choose_shadow_dataset(&mut self, input: &Map<String, Value>) -> ExecOutcome {
        let Some(file) = input.get("file").and_then(Value::as_str) else {
            return ExecOutcome::error("Choose Shadow Dataset needs the registry file".into());
        };
        let registry_path = Path::new(file);
        let records = match load_dataset_registry(registry_path) {
            Ok(r) => r,
            Err(e) => return ExecOutcome::error(format!("cannot load {file}: {e}")),
        };
        if records.is_empty() {
            return ExecOutcome::error("the dataset registry is empty".into());
        }
        let target_attribute = input
            .get("target_attribute")
            .and_then(Value::as_str)
            .map(str::to_string);
        if let Some(attr) = &target_attribute {
            if !records
                .iter()
                .any(|r| r.attributes.iter().any(|a| &a.name == attr))
            {
                return ExecOutcome::error(format!(
                    "attack infeasible: no registry dataset carries attribute {attr}"
                ));
            }
        }
        let class_count = self.info.effective_class_count();
        let prompt = format!(
            "SELECTION TASK: choose_shadow_dataset\nGUIDELINE:\n{}\nCLASS_COUNT: {}\nTARGET_ATTRIBUTE: {}\nTARGET_TASK: {DATA_OPEN}\n{}\n{DATA_CLOSE}\nINPUT_FORMAT: {DATA_OPEN}\n{}\n{DATA_CLOSE}\nOUTPUT_FORMAT: {DATA_OPEN}\n{}\n{DATA_CLOSE}\nRECORDS:\n{}\nRespond with only the chosen dataset name.",
            ATTACK_ACTIONS.get("Choose Shadow Dataset").unwrap().guideline,
            class_count.map_or("unknown".into(), |c| c.to_string()),
            target_attribute.as_deref().unwrap_or("none"),
            input.get("task_description").and_then(Value::as_str).unwrap_or(""),
            input.get("input_format").and_then(Value::as_str).unwrap_or(""),
            input.get("output_format").and_then(Value::as_str).unwrap_or(""),
            serde_json::to_string(&records).expect("registry serializes"),
        );
        let mut tokens = (0, 0);
        let answer = match self.select(prompt, &mut tokens) {
            Ok(a) => a,
            Err(e) => return ExecOutcome::error(format!("selection call failed: {e}")),
        };
        let Some(record) = records.iter().find(|r| r.name == answer) else {
            let mut outcome = ExecOutcome::error(format!(
                "selected dataset {answer} is not in the registry"
            ));
            outcome.sub_input_tokens = tokens.0;
            outcome.sub_output_tokens = tokens.1;
            return outcome;
        };
        let registry_dir = registry_path.parent().unwrap_or_else(|| Path::new("."));
        let resolved = registry_dir.join(&record.path);
        let attrs: Vec<&str> = record.attributes.iter().map(|a| a.name.as_str()).collect();
        let matches = class_count == Some(record.num_classes);
        let mut outcome = ExecOutcome::of(format!(
            "selected dataset: {} (path: {})\ndataset_classes: {}\ndataset_matches_classes: {}\nattributes: [{}]\nguided by task, concept, label, and format similarity",
            record.name,
            resolved.display(),
            record.num_classes,
            if matches { "yes" } else { "no" },
            attrs.join(", "),
        ));
        outcome.sub_input_tokens = tokens.0;
        outcome.sub_output_tokens = tokens.1;
        outcome
    }

    fn do_choose_attribute(&mut self, input: &Map<String, Value>) -> ExecOutcome {
        let Some(file) = input.get("file").and_then(Value::as_str) else {
            return ExecOutcome::error("Choose Attribute needs the registry file".into());
        };
        let Some(dataset) = input.get("shadow_dataset").and_then(Value::as_str) else {
            return ExecOutcome::error("Choose Attribute needs the shadow dataset name".into());
        };
        let records = match load_dataset_registry(Path::new(file)) {
            Ok(r) => r,
            Err(e) => return ExecOutcome::error(format!("cannot load {file}: {e}")),
        };
        let Some(record) = records.iter().find(|r| r.name == dataset) else {
            return ExecOutcome::error(format!("dataset {dataset} is not in the registry"));
        };
        if record.attributes.is_empty() {
            return ExecOutcome::error(format!("dataset {dataset} has no annotated attributes"));
        }
        let class_count = self.info.effective_class_count();
        let prompt = format!(
            "SELECTION TASK: choose_attribute\nGUIDELINE:\n{}\nCLASS_COUNT: {}\nDATASET: {}\nATTRIBUTES:\n{}\nRespond with attribute name(s), comma-separated.",
            ATTACK_ACTIONS.get("Choose Attribute").unwrap().guideline,
            class_count.map_or("unknown".into(), |c| c.to_string()),
            dataset,
            serde_json::to_string(&record.attributes).expect("attributes serialize"),
        );
        let mut tokens = (0, 0);
        let answer = match self.select(prompt, &mut tokens) {
            Ok(a) => a,
            Err(e) => return ExecOutcome::error(format!("selection call failed: {e}")),
        };
        // Validate the names before reporting them.
        let names_part = answer.split('[').next().unwrap_or("").trim();
        let names: Vec<&str> = names_part
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect();
        let all_known = !names.is_empty()
            && names
                .iter()
                .all(|n| record.attributes.iter().any(|a| &a.name == n));
        if !all_known {
            let mut outcome =
                ExecOutcome::error(format!("selected attribute(s) {answer} not in {dataset}"));
            outcome.sub_input_tokens = tokens.0;
            outcome.sub_output_tokens = tokens.1;
            return outcome;
        }
        let mut outcome = ExecOutcome::of(format!("selected attribute(s): {answer}"));
        outcome.sub_input_tokens = tokens.0;
        outcome.sub_output_tokens = tokens.1;
        outcome
    }

    fn do_choose_architecture(&mut self, input: &Map<String, Value>) -> ExecOutcome {
        let Some(file) = input.get("file").and_then(Value::as_str) else {
            return ExecOutcome::error("Choose Shadow Model Architecture needs the registry file".into());
        };
        let attack_name = input.get("attack").and_then(Value::as_str).unwrap_or("");
        if AttackKind::parse(attack_name).is_none() {
            return ExecOutcome::error(format!("unknown attack name: {attack_name}"));
        }
        let records = match load_model_registry(Path::new(file)) {
            Ok(r) => r,
            Err(e) => return ExecOutcome::error(format!("cannot load {file}: {e}")),
        };
        if records.is_empty() {
            return ExecOutcome::error("the model registry is empty".into());
        }
        let prompt = format!(
            "SELECTION TASK: choose_shadow_model_architecture\nGUIDELINE:\n{}\nACCESS: {}\nATTACK: {}\nRECORDS:\n{}\nRespond with only the chosen name.",
            ATTACK_ACTIONS
                .get("Choose Shadow Model Architecture")
                .unwrap()
                .guideline,
            input.get("access").and_then(Value::as_str).unwrap_or("black-box"),
            attack_name,
            serde_json::to_string(&records).expect("registry serializes"),
        );
        let mut tokens = (0, 0);
        let answer = match self.select(prompt, &mut tokens) {
            Ok(a) => a,
            Err(e) => return ExecOutcome::error(format!("selection call failed: {e}")),
        };
        let Some(record) = records.iter().find(|r| r.name == answer) else {
            let mut outcome =
                ExecOutcome::error(format!("selected architecture {answer} is not registered"));
            outcome.sub_input_tokens = tokens.0;
            outcome.sub_output_tokens = tokens.1;
            return outcome;
        };
        let mut outcome = ExecOutcome::of(format!(
            "selected architecture: {} -- rank {}, hidden sizes {:?}",
            record.name, record.capacity_rank, record.hidden_sizes
        ));
        outcome.sub_input_tokens = tokens.0;
        outcome.sub_output_tokens = tokens.1;
        outcome
    }

    fn do_set_parameters(&mut self, input: &Map<String, Value>) -> ExecOutcome {
        let Some(task) = input.get("task").and_then(Value::as_str) else {
            return ExecOutcome::error("Set Parameters needs a task name".into());
        };
        if !self.checked_tasks.contains(task) {
            return ExecOutcome::error(format!(
                "run Check Required Parameters for task {task} before setting values"
            ));
        }
        let Some(manifest) = attack::task_manifest(task) else {
            return ExecOutcome::error(format!("unknown task: {task}"));
        };
        let prompt = format!(
            "SELECTION TASK: set_parameters\nGUIDELINE:\n{}\nTASK: {}\nDATASET: {}\nMODEL: {}\nATTACK: {}\nPURPOSE: {}\nQUERY_BUDGET: {}\nMANIFEST:\n{}\nRespond with lines `name = value -- reason`.",
            ATTACK_ACTIONS.get("Set Parameters").unwrap().guideline,
            task,
            input.get("dataset").and_then(Value::as_str).unwrap_or(""),
            input.get("model").and_then(Value::as_str).unwrap_or(""),
            input.get("attack").and_then(Value::as_str).unwrap_or(""),
            input.get("purpose").and_then(Value::as_str).unwrap_or(""),
            self.info
                .query_budget
                .map_or("none".into(), |b| b.to_string()),
            serde_json::to_string(&manifest).expect("manifest serializes"),
        );
        let mut tokens = (0, 0);
        let answer = match self.select(prompt, &mut tokens) {
            Ok(a) => a,
            Err(e) => return ExecOutcome::error(format!("selection call failed: {e}")),
        };
        // Keep only lines naming real manifest parameters.
        let mut kept = Vec::new();
        for line in answer.lines() {
            if let Some((name, _)) = line.split_once(" = ") {
                if manifest.parameters.iter().any(|p| p.name == name.trim()) {
                    kept.push(line.trim().to_string());
                }
            }
        }
        if kept.is_empty() {
            let mut outcome =
                ExecOutcome::error("the parameter selection produced no usable values".into());
            outcome.sub_input_tokens = tokens.0;
            outcome.sub_output_tokens = tokens.1;
            return outcome;
        }
        let mut outcome = ExecOutcome::of(format!(
            "parameters for task {task}:\n{}",
            kept.join("\n")
        ));
        outcome.sub_input_tokens = tokens.0;
        outcome.sub_output_tokens = tokens.1;
        outcome
    }

    fn do_execute_script(&mut self, input: &Map<String, Value>) -> ExecOutcome {
        let Some(task) = input.get("task").and_then(Value::as_str) else {
            return ExecOutcome::error("Execute Script needs a task name".into());
        };
        let Some(Value::Object(params)) = input.get("params") else {
            return ExecOutcome::error("Execute Script needs a params object".into());
        };
        let task = task.to_string();
        let params = params.clone();
        let env = self.attack_env();
        match attack::execute_task(&env, self.service.as_ref(), &task, &params) {
            Ok(result) => {
                let mut obs = format!("task {task} finished.\n");
                let _ = writeln!(
                    obs,
                    "metric {} = {}",
                    result.metric_name,
                    json_number(result.metric_value)
                );
                for (name, value) in &result.sub_results {
                    let _ = writeln!(obs, "sub {} = {}", name, json_number(*value));
                }
                let _ = writeln!(obs, "queries_used = {}", result.query_count);
                let _ = writeln!(obs, "partial = {}", result.partial);
                if !result.notes.is_empty() {
                    let _ = writeln!(obs, "notes: {}", result.notes.join("; "));
                }
                let _ = writeln!(
                    obs,
                    "artifacts: {}",
                    result
                        .artifact_paths
                        .iter()
                        .map(|p| p.display().to_string())
                        .collect::<Vec<_>>()
                        .join(", ")
                );
                self.results.insert(task.clone(), result.clone());
                let results_path = self.workspace.join("results.json");
                let all: Vec<&AttackResult> = self.results.values().collect();
                let _ = std::fs::create_dir_all(&self.workspace);
                let _ = std::fs::write(
                    &results_path,
                    serde_json::to_string_pretty(&all).expect("results serialize"),
                );
                let mut outcome = ExecOutcome::of(obs);
                outcome.meta.insert(
                    "result".into(),
                    serde_json::to_value(&result).expect("result serializes"),
                );
                outcome
            }
            Err(e) => {
                let mut outcome = match &e {
                    AttackError::Client(crate::service::ClientError::BudgetExhausted {
                        remaining,
                    }) => ExecOutcome::error(format!(
                        "query budget exhausted. remaining_budget = {remaining}"
                    )),
                    other => ExecOutcome::error(other.to_string()),
                };
                if matches!(
                    e,
                    AttackError::MissingParameter(_) | AttackError::InvalidParameter { .. }
                ) {
                    outcome.meta.insert("schema_violation".into(), true.into());
                }
                if matches!(e, AttackError::Infeasible(_)) {
                    outcome.meta.insert("infeasible".into(), true.into());
                }
                outcome
            }
        }
    }

    fn do_final_answer(&mut self, input: &Map<String, Value>) -> ExecOutcome {
        let report = input
            .get("report")
            .and_then(Value::as_str)
            .unwrap_or_default();
        if self.results.is_empty() {
            let mut outcome = ExecOutcome::error(
                "no attack result exists in the workspace yet; execute the task before reporting"
                    .into(),
            );
            outcome
                .meta
                .insert("refused_final_answer".into(), "no_results".into());
            return outcome;
        }
        // A report may only cite metric values that were observed.
        let fabricated = fabricated_numbers(report, &self.observed_numbers);
        if !fabricated.is_empty() {
            let mut outcome = ExecOutcome::error(format!(
                "report cites metric values absent from every observation: {}",
                fabricated.join(", ")
            ));
            outcome
                .meta
                .insert("refused_final_answer".into(), "fabricated_metric".into());
            outcome
                .meta
                .insert("hallucination_type3".into(), true.into());
            return outcome;
        }
        let path = self.workspace.join("report_section.md");
        if let Err(e) = std::fs::write(&path, report) {
            return ExecOutcome::error(format!("cannot write report section: {e}"));
        }
        let mut outcome = ExecOutcome::of(
            "report section written to report_section.md in this agent's workspace; attack complete"
                .to_string(),
        );
        outcome.control = StepControl::Finish {
            state: AgentStateKind::Completed,
            detail: "attack completed with a written report".into(),
        };
        outcome
    }
}

impl ActionExecutor for AttackExecutor {
    fn action_space(&self) -> &ActionSpace {
        &ATTACK_ACTIONS
    }

    fn execute(&mut self, action: &str, input: &Map<String, Value>) -> ExecOutcome {
        let outcome = match action {
            "List Files" => self.do_list_files(input),
            "Check Required Parameters" => self.do_check_required_parameters(input),
            "Choose Shadow Dataset" => self.do_choose_shadow_dataset(input),
            "Choose Attribute" => self.do_choose_attribute(input),
            "Choose Shadow Model Architecture" => self.do_choose_architecture(input),
            "Set Parameters" => self.do_set_parameters(input),
            "Execute Script" => self.do_execute_script(input),
            "Final Answer" => self.do_final_answer(input),
            other => ExecOutcome::error(format!("unhandled action {other}")),
        };
        self.observed_numbers
            .extend(extract_numbers(&outcome.observation));
        outcome
    }
}

fn render_manifest(manifest: &TaskManifest) -> String {
    let mut out = format!("parameters of task {}:\n", manifest.name);
    for p in &manifest.parameters {
        let required = if p.required { "required" } else { "optional" };
        let _ = write!(out, "- {} ({}, {})", p.name, p.semantic_type, required);
        if let Some(candidates) = &p.candidates {
            let rendered: Vec<String> = candidates
                .iter()
                .map(|v| match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect();
            let _ = write!(out, " [candidates: {}]", rendered.join(", "));
        }
        let _ = writeln!(out, ": {}", p.purpose);
    }
    let _ = writeln!(out, "purpose: {}", manifest.purpose);
    out
}

use crate::agent_json_number as json_number;

/// Pulls numeric literals out of free text.
pub(crate) fn extract_numbers(text: &str) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit()
            || (bytes[i] == b'-' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit())
        {
            let start = i;
            i += 1;
            while i < bytes.len()
                && (bytes[i].is_ascii_digit()
                    || bytes[i] == b'.'
                    || bytes[i] == b'e'
                    || bytes[i] == b'E'
                    || ((bytes[i] == b'-' || bytes[i] == b'+')
                        && matches!(bytes[i - 1], b'e' | b'E')))
            {
                i += 1;
            }
            let mut token = &text[start..i];
            while token.ends_with('.') || token.ends_with('e') || token.ends_with('E') {
                token = &token[..token.len() - 1];
            }
            if let Ok(value) = token.parse::<f64>() {
                out.push((token.to_string(), value));
            }
        } else {
            i += 1;
        }
    }
    out
}

fn ulp_close(a: f64, b: f64) -> bool {
    if a == b {
        return true;
    }
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let mut next = lo;
    for _ in 0..1 {
        next = f64::from_bits(next.to_bits() + 1);
    }
    next >= hi
}

/// Numbers in `report` with no exact-string or ±1-ulp match among the
/// observed numbers.
pub(crate) fn fabricated_numbers(report: &str, observed: &[(String, f64)]) -> Vec<String> {
    extract_numbers(report)
        .into_iter()
        .filter(|(token, value)| {
            !observed
                .iter()
                .any(|(seen_token, seen_value)| seen_token == token || ulp_close(*value, *seen_value))
        })
        .map(|(token, _)| token)
        .collect()
}
