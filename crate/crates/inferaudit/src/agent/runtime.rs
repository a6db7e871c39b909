//! The assessment runtime: the per-agent step loop, the controller's
//! orchestration (launch, monitor, finalize), and worker threads — one
//! isolated AttackAgent per confirmed attack.

use super::actions::{
    attack_instruction, controller_instruction, ActionDef, ActionExecutor, ActionSpace,
    AttackExecutor, ExecOutcome, StepControl, ATTACK_ACTIONS, CONTROLLER_ACTIONS,
};
use super::memory::{Memory, StepSummary};
use super::plan::{parse_plan, ActionPlan, RESPONSE_FORMAT_GUIDE};
use super::planner::{ChatMessage, Planner};
use super::{
    AgentError, AgentStateKind, AgentStatus, EnvPaths, ScoringPaths, TargetServiceInfo,
};
use crate::attack::{AttackKind, AttackResult};
use crate::service::ServiceClient;
use crate::trace::{TraceEnd, TraceHeader, TraceRecord, TraceStep, TraceWriter, TRACE_FORMAT_VERSION};
use serde_json::{Map, Value};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

pub const DEFAULT_MAX_STEPS: usize = 50;
pub const DEFAULT_RUNTIME_LIMIT_SECS: u64 = 5 * 3600;

/// Observation text beyond this many characters is truncated in memory and
/// in the trace digest; the full text is archived.
const OBSERVATION_BUDGET: usize = 2000;

/// Re-prompts allowed per step when the reply does not parse.
const PARSE_RETRIES: usize = 2;

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub seed: u64,
    pub max_steps: usize,
    pub runtime_limit: Duration,
    pub poll_interval: Duration,
    pub temperature: f64,
    /// Logical timestamps and gated monitoring, for byte-identical traces
    /// with offline planners.
    pub deterministic: bool,
}

impl RunSettings {
    pub fn deterministic(seed: u64) -> Self {
        RunSettings {
            seed,
            max_steps: DEFAULT_MAX_STEPS,
            runtime_limit: Duration::from_secs(DEFAULT_RUNTIME_LIMIT_SECS),
            poll_interval: Duration::from_millis(500),
            temperature: 0.0,
            deterministic: true,
        }
    }
}

// ---------------------------------------------------------------------------
// Shared state between the controller and its workers.
// ---------------------------------------------------------------------------

pub(crate) struct StatusBoard {
    inner: Mutex<BTreeMap<AttackKind, AgentStatus>>,
    cv: Condvar,
}

impl StatusBoard {
    fn new() -> Self {
        StatusBoard {
            inner: Mutex::new(BTreeMap::new()),
            cv: Condvar::new(),
        }
    }

    fn set(&self, kind: AttackKind, status: AgentStatus) {
        let mut guard = self.inner.lock().unwrap();
        if let Some(existing) = guard.get(&kind) {
            // pending -> running -> terminal, never backwards.
            assert!(
                status.state.rank() >= existing.state.rank(),
                "status of {kind:?} may not regress"
            );
        }
        guard.insert(kind, status);
        self.cv.notify_all();
    }

    fn snapshot(&self) -> BTreeMap<AttackKind, AgentStatus> {
        self.inner.lock().unwrap().clone()
    }

    fn all_terminal(statuses: &BTreeMap<AttackKind, AgentStatus>) -> bool {
        !statuses.is_empty() && statuses.values().all(|s| s.state.is_terminal())
    }

    fn wait_all_terminal(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut guard = self.inner.lock().unwrap();
        loop {
            if Self::all_terminal(&guard) {
                return true;
            }
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            let (next, _) = self.cv.wait_timeout(guard, deadline - now).unwrap();
            guard = next;
        }
    }
}

/// Holds workers until the controller has observed them running, so the
/// first monitor snapshot is the same in every run.
pub(crate) struct StartGate {
    open: Mutex<bool>,
    cv: Condvar,
}

impl StartGate {
    fn new(open: bool) -> Self {
        StartGate {
            open: Mutex::new(open),
            cv: Condvar::new(),
        }
    }

    fn open(&self) {
        let mut guard = self.open.lock().unwrap();
        *guard = true;
        self.cv.notify_all();
    }

    fn wait(&self) {
        let mut guard = self.open.lock().unwrap();
        while !*guard {
            guard = self.cv.wait(guard).unwrap();
        }
    }
}

// ---------------------------------------------------------------------------
// Provenance of action-input values.
// ---------------------------------------------------------------------------

/// Sources a value may be grounded in: the initial instruction plus every
/// archived (full) observation of this agent.
pub(crate) struct ProvenanceStore {
    sources: Vec<String>,
}

impl ProvenanceStore {
    fn new(initial_instruction: &str) -> Self {
        ProvenanceStore {
            sources: vec![initial_instruction.to_string()],
        }
    }

    fn add(&mut self, observation: &str) {
        self.sources.push(observation.to_string());
    }

    fn contains(&self, needle: &str) -> bool {
        self.sources.iter().any(|s| s.contains(needle))
    }
}

fn collect_ungrounded(value: &Value, store: &ProvenanceStore, out: &mut Vec<String>) {
    match value {
        Value::String(s) => {
            if !s.is_empty() && !store.contains(s) {
                out.push(s.clone());
            }
        }
        Value::Number(n) => {
            let token = n.to_string();
            if !store.contains(&token) {
                out.push(token);
            }
        }
        Value::Array(items) => {
            for item in items {
                collect_ungrounded(item, store, out);
            }
        }
        Value::Object(map) => {
            for item in map.values() {
                collect_ungrounded(item, store, out);
            }
        }
        Value::Bool(_) | Value::Null => {}
    }
}

/// Values in the action input that appear in no prior observation and not
/// in the initial instruction. Parameters declared free-text are exempt.
fn ungrounded_values(
    input: &Map<String, Value>,
    def: &ActionDef,
    store: &ProvenanceStore,
) -> Vec<String> {
    let mut out = Vec::new();
    for (key, value) in input {
        let free = def
            .params
            .iter()
            .find(|p| p.name == key)
            .is_some_and(|p| p.free_text);
        if !free {
            collect_ungrounded(value, store, &mut out);
        }
    }
    out.sort();
    out.dedup();
    out
}

fn schema_errors(input: &Map<String, Value>, def: &ActionDef) -> Option<String> {
    for p in def.params {
        if p.required && !input.contains_key(p.name) {
            return Some(format!(
                "missing required input '{}' for action {}",
                p.name, def.name
            ));
        }
    }
    for key in input.keys() {
        if !def.params.iter().any(|p| p.name == key) {
            return Some(format!("'{key}' is not an input of action {}", def.name));
        }
    }
    None
}

// ---------------------------------------------------------------------------
// The per-step loop body.
// ---------------------------------------------------------------------------

struct LoopCtx<'a> {
    agent_id: &'a str,
    archive_dir: &'a Path,
    archive_rel: &'a str,
    max_steps: usize,
    temperature: f64,
    deterministic: bool,
    started: Instant,
}

impl LoopCtx<'_> {
    fn now_ms(&self, step: usize, end: bool) -> u64 {
        if self.deterministic {
            (step as u64 - 1) * 2 + u64::from(end)
        } else {
            self.started.elapsed().as_millis() as u64
        }
    }
}

struct StepOutcome {
    control: StepControl,
    action: String,
}

/// One plan/act/observe step: prompt the planner (re-prompting malformed
/// replies), validate the action against the space, the schema, and the
/// provenance rule, execute it, archive the observation, advance memory,
/// and append the trace record.
#[allow(clippy::too_many_arguments)]
fn agent_step(
    step: usize,
    memory: &mut Memory,
    planner: &dyn Planner,
    executor: &mut dyn ActionExecutor,
    trace: &mut TraceWriter,
    store: &mut ProvenanceStore,
    ctx: &LoopCtx<'_>,
) -> Result<StepOutcome, AgentError> {
    let t_start = ctx.now_ms(step, false);
    // The window this step's prompt was built from, recorded for audits.
    let window_steps: Vec<Value> = memory.window().map(|s| s.step.into()).collect();
    let prompt = memory.render_prompt(step, ctx.max_steps);
    let mut messages = vec![ChatMessage::user(prompt)];
    let mut input_tokens = 0u64;
    let mut output_tokens = 0u64;
    let mut parsed: Option<ActionPlan> = None;
    let mut raw_reply = String::new();
    let mut parse_error = String::new();
    for _attempt in 0..=PARSE_RETRIES {
        let reply = planner.complete(&messages, ctx.temperature)?;
        input_tokens += reply.input_tokens;
        output_tokens += reply.output_tokens;
        raw_reply = reply.text.clone();
        match parse_plan(&reply.text) {
            Ok(plan) => {
                parsed = Some(plan);
                break;
            }
            Err(e) => {
                parse_error = e.to_string();
                messages.push(ChatMessage {
                    role: "assistant".into(),
                    content: reply.text,
                });
                messages.push(ChatMessage::user(format!(
                    "Your reply was not parseable: {parse_error}.\n{RESPONSE_FORMAT_GUIDE}"
                )));
            }
        }
    }

    let mut meta = Map::new();
    let (plan, mut outcome) = match parsed {
        Some(plan) => {
            let space: &ActionSpace = executor.action_space();
            match space.get(&plan.action) {
                None => {
                    // Type-I hallucination: a nonexistent action. The
                    // environment is untouched; the step is consumed.
                    meta.insert("hallucination_type1".into(), true.into());
                    meta.insert("error".into(), true.into());
                    let observation = format!(
                        "Error: unknown action '{}'. Legal actions: {}",
                        plan.action,
                        space.names().join(", ")
                    );
                    (plan, ExecOutcome::of(observation))
                }
                Some(def) => {
                    if let Some(problem) = schema_errors(&plan.action_input, def) {
                        meta.insert("schema_violation".into(), true.into());
                        meta.insert("error".into(), true.into());
                        (plan, ExecOutcome::of(format!("Error: {problem}")))
                    } else {
                        let ungrounded = ungrounded_values(&plan.action_input, def, store);
                        if !ungrounded.is_empty() {
                            // Type-II hallucination: fabricated input values.
                            meta.insert("hallucination_type2".into(), true.into());
                            meta.insert(
                                "ungrounded".into(),
                                Value::Array(
                                    ungrounded.iter().map(|v| v.as_str().into()).collect(),
                                ),
                            );
                            meta.insert("error".into(), true.into());
                            let observation = format!(
                                "Error: action input cites values with no provenance in any observation or the initial instruction: {}. Ground every value in observed facts first.",
                                ungrounded.join(", ")
                            );
                            (plan, ExecOutcome::of(observation))
                        } else {
                            let outcome = executor.execute(&plan.action, &plan.action_input);
                            (plan, outcome)
                        }
                    }
                }
            }
        }
        None => {
            // Malformed after retries: an instruction-following failure.
            meta.insert("malformed_plan".into(), true.into());
            meta.insert("instruction_violation".into(), true.into());
            meta.insert("error".into(), true.into());
            let plan = ActionPlan {
                reflection: String::new(),
                plan: raw_reply.chars().take(OBSERVATION_BUDGET).collect(),
                important_information: vec![],
                action: "(malformed reply)".into(),
                action_input: Map::new(),
            };
            let outcome = ExecOutcome::of(format!(
                "Error: reply could not be parsed after {PARSE_RETRIES} re-prompts: {parse_error}"
            ));
            (plan, outcome)
        }
    };
    input_tokens += outcome.sub_input_tokens;
    output_tokens += outcome.sub_output_tokens;
    meta.insert("window".into(), Value::Array(window_steps));
    for (key, value) in std::mem::take(&mut outcome.meta) {
        meta.insert(key, value);
    }

    // Archive the full observation; memory and trace hold the digest.
    let archive_name = format!("step_{step:03}.txt");
    std::fs::create_dir_all(ctx.archive_dir)?;
    std::fs::write(ctx.archive_dir.join(&archive_name), &outcome.observation)?;
    store.add(&outcome.observation);
    let digest = if outcome.observation.chars().count() > OBSERVATION_BUDGET {
        let mut d: String = outcome.observation.chars().take(OBSERVATION_BUDGET).collect();
        d.push_str(" … [truncated; full text archived]");
        d
    } else {
        outcome.observation.clone()
    };

    memory.advance(
        StepSummary {
            step,
            plan_text: plan.plan.clone(),
            action: plan.action.clone(),
            action_input: plan.action_input.clone(),
            observation: digest.clone(),
        },
        &plan.important_information,
    );

    let record = TraceStep {
        agent_id: ctx.agent_id.to_string(),
        step,
        t_start_ms: t_start,
        t_end_ms: ctx.now_ms(step, true),
        reflection: plan.reflection.clone(),
        plan: plan.plan.clone(),
        important_information: memory
            .important_information()
            .iter()
            .filter(|e| e.step == step)
            .cloned()
            .collect(),
        action: plan.action.clone(),
        action_input: plan.action_input.clone(),
        observation_digest: digest,
        observation_ref: format!("{}/{}", ctx.archive_rel, archive_name),
        input_tokens,
        output_tokens,
        meta,
    };
    trace.append(&TraceRecord::Step(Box::new(record)))?;
    Ok(StepOutcome {
        control: outcome.control,
        action: plan.action,
    })
}

// ---------------------------------------------------------------------------
// Attack workers.
// ---------------------------------------------------------------------------

#[derive(Clone)]
struct WorkerContext {
    run_id: String,
    info: TargetServiceInfo,
    env: EnvPaths,
    scoring: ScoringPaths,
    planner: Arc<dyn Planner>,
    workspace_root: PathBuf,
    settings: RunSettings,
    board: Arc<StatusBoard>,
    gate: Arc<StartGate>,
}

fn run_attack_agent(ctx: WorkerContext, kind: AttackKind) {
    ctx.gate.wait();
    let agent_id = format!("attack-{}", kind.name());
    let agent_dir = ctx.workspace_root.join("agents").join(kind.name());
    let archive_dir = agent_dir.join("observations");
    let archive_rel = format!("agents/{}/observations", kind.name());
    let started = Instant::now();

    let m0 = attack_instruction(kind, &ctx.info, &ctx.env, &ctx.scoring, ctx.settings.seed);
    let header = TraceHeader {
        format_version: TRACE_FORMAT_VERSION,
        run_id: ctx.run_id.clone(),
        agent_id: agent_id.clone(),
        attack: Some(kind),
        initial_instruction: m0.clone(),
        action_space: ATTACK_ACTIONS.names(),
    };
    let trace_path = ctx.workspace_root.join("traces").join(format!("{agent_id}.jsonl"));
    let mut trace = match TraceWriter::create(&trace_path, header) {
        Ok(t) => t,
        Err(e) => {
            ctx.board.set(
                kind,
                AgentStatus {
                    state: AgentStateKind::Failed,
                    steps: 0,
                    detail: format!("trace setup failed: {e}"),
                },
            );
            return;
        }
    };

    let client = Arc::new(ServiceClient::new(
        ctx.info.predict_url.clone(),
        ctx.info.embedding_url.clone(),
    ));
    let mut executor = AttackExecutor::new(
        kind,
        ctx.env.clone(),
        ctx.info.clone(),
        client,
        Arc::clone(&ctx.planner),
        agent_dir.clone(),
        ctx.settings.temperature,
    );
    let mut memory = Memory::new(m0.clone());
    let mut store = ProvenanceStore::new(&m0);
    let loop_ctx = LoopCtx {
        agent_id: &agent_id,
        archive_dir: &archive_dir,
        archive_rel: &archive_rel,
        max_steps: ctx.settings.max_steps,
        temperature: ctx.settings.temperature,
        deterministic: ctx.settings.deterministic,
        started,
    };

    let mut steps_taken = 0usize;
    let terminal = loop {
        let step = steps_taken + 1;
        if step > ctx.settings.max_steps {
            break (
                AgentStateKind::Failed,
                format!("step limit of {} reached", ctx.settings.max_steps),
            );
        }
        if started.elapsed() > ctx.settings.runtime_limit {
            break (AgentStateKind::Failed, "runtime limit reached".into());
        }
        match agent_step(
            step,
            &mut memory,
            ctx.planner.as_ref(),
            &mut executor,
            &mut trace,
            &mut store,
            &loop_ctx,
        ) {
            Ok(outcome) => {
                steps_taken = step;
                match outcome.control {
                    StepControl::Continue => {}
                    StepControl::Finish { state, detail } => break (state, detail),
                }
            }
            Err(e) => break (AgentStateKind::Failed, format!("step error: {e}")),
        }
    };

    let _ = trace.append(&TraceRecord::End(TraceEnd {
        agent_id: agent_id.clone(),
        status: terminal.0.name().to_string(),
        steps: steps_taken,
    }));
    ctx.board.set(
        kind,
        AgentStatus {
            state: terminal.0,
            steps: steps_taken,
            detail: terminal.1,
        },
    );
}

// ---------------------------------------------------------------------------
// Controller executor.
// ---------------------------------------------------------------------------

struct ControllerExecutor {
    worker_ctx: WorkerContext,
    confirmed: Vec<AttackKind>,
    launched: Vec<AttackKind>,
    handles: Vec<JoinHandle<()>>,
}

impl ControllerExecutor {
    fn new(worker_ctx: WorkerContext) -> Self {
        ControllerExecutor {
            worker_ctx,
            confirmed: Vec::new(),
            launched: Vec::new(),
            handles: Vec::new(),
        }
    }

    /// Capability check per candidate: the predict-based attacks need the
    /// prediction endpoint; attribute inference additionally needs the
    /// embedding endpoint, a named sensitive attribute, and a registry
    /// dataset carrying that attribute. Confirmation is structural — the
    /// service's free text has no say in it.
    fn do_determine(&mut self, input: &Map<String, Value>) -> ExecOutcome {
        let Some(Value::Array(candidates)) = input.get("candidates") else {
            return ExecOutcome::error("Determine Attacks needs a candidates array".into());
        };
        let info = &self.worker_ctx.info;
        let mut confirmed = Vec::new();
        let mut excluded = Vec::new();
        for candidate in candidates {
            let name = candidate.as_str().unwrap_or_default();
            let Some(kind) = AttackKind::parse(name) else {
                excluded.push(format!("{name} (no registered attack pipeline)"));
                continue;
            };
            if confirmed.contains(&kind) {
                excluded.push(format!("{name} (duplicate candidate)"));
                continue;
            }
            match kind {
                AttackKind::MembershipInference
                | AttackKind::ModelStealing
                | AttackKind::DataReconstruction => confirmed.push(kind),
                AttackKind::AttributeInference => {
                    if info.embedding_url.is_none() {
                        excluded.push(format!("{name} (service exposes no embedding endpoint)"));
                        continue;
                    }
                    let Some(attr) = &info.sensitive_attribute else {
                        excluded.push(format!("{name} (no sensitive attribute was provided)"));
                        continue;
                    };
                    let carrier = crate::data::load_dataset_registry(
                        &self.worker_ctx.env.datasets_registry,
                    )
                    .ok()
                    .is_some_and(|records| {
                        records
                            .iter()
                            .any(|r| r.attributes.iter().any(|a| &a.name == attr))
                    });
                    if carrier {
                        confirmed.push(kind);
                    } else {
                        excluded.push(format!(
                            "{name} (no environment dataset carries attribute {attr})"
                        ));
                    }
                }
            }
        }
        self.confirmed = confirmed.clone();
        let mut obs = format!(
            "confirmed: {}",
            confirmed
                .iter()
                .map(|k| k.name().to_string())
                .collect::<Vec<_>>()
                .join(", ")
        );
        if !excluded.is_empty() {
            obs.push_str(&format!("\nexcluded: {}", excluded.join("; ")));
        }
        let mut outcome = ExecOutcome::of(obs);
        outcome.meta.insert(
            "confirmed".into(),
            Value::Array(confirmed.iter().map(|k| k.name().into()).collect()),
        );
        outcome
    }

    fn do_launch(&mut self, input: &Map<String, Value>) -> ExecOutcome {
        let Some(Value::Array(attacks)) = input.get("attacks") else {
            return ExecOutcome::error("Launch AttackAgent needs an attacks array".into());
        };
        if !self.launched.is_empty() {
            return ExecOutcome::error("attack agents were already launched".into());
        }
        let mut kinds = Vec::new();
        let mut warnings = Vec::new();
        for attack in attacks {
            let name = attack.as_str().unwrap_or_default();
            let Some(kind) = AttackKind::parse(name) else {
                return ExecOutcome::error(format!("unknown attack {name}"));
            };
            if kinds.contains(&kind) {
                warnings.push(format!("duplicate attack {name} deduplicated"));
                continue;
            }
            if !self.confirmed.contains(&kind) {
                return ExecOutcome::error(format!(
                    "attack {name} was not confirmed by Determine Attacks"
                ));
            }
            kinds.push(kind);
        }
        if kinds.is_empty() {
            let mut outcome =
                ExecOutcome::error("zero attacks to launch; refusing to continue".into());
            outcome.meta.insert("bad_plan".into(), true.into());
            return outcome;
        }
        for &kind in &kinds {
            self.worker_ctx.board.set(
                kind,
                AgentStatus {
                    state: AgentStateKind::Running,
                    steps: 0,
                    detail: "launched".into(),
                },
            );
            let ctx = self.worker_ctx.clone();
            self.handles.push(std::thread::spawn(move || {
                let board = Arc::clone(&ctx.board);
                let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
                    run_attack_agent(ctx, kind)
                }));
                if let Err(panic) = result {
                    // A worker must always reach a terminal status, or the
                    // controller would monitor it forever.
                    let detail = panic
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_else(|| "worker panicked".into());
                    board.set(
                        kind,
                        AgentStatus {
                            state: AgentStateKind::Failed,
                            steps: 0,
                            detail: format!("worker panicked: {detail}"),
                        },
                    );
                }
            }));
        }
        self.launched = kinds.clone();
        let names: Vec<String> = kinds.iter().map(|k| k.name().to_string()).collect();
        let mut obs = format!(
            "launched: {} (one isolated AttackAgent per attack, each with a private workspace)",
            names.join(", ")
        );
        if !warnings.is_empty() {
            obs.push_str(&format!("\nwarnings: {}", warnings.join("; ")));
        }
        let mut outcome = ExecOutcome::of(obs);
        outcome.meta.insert(
            "launched".into(),
            Value::Array(names.iter().map(|n| n.as_str().into()).collect()),
        );
        outcome
    }

    fn do_monitor(&self) -> ExecOutcome {
        let statuses = self.worker_ctx.board.snapshot();
        if statuses.is_empty() {
            let mut outcome = ExecOutcome::of(
                "no attack agents have been launched yet; nothing to monitor".into(),
            );
            outcome.meta.insert("bad_plan_indicator".into(), true.into());
            return outcome;
        }
        let summary: Vec<String> = statuses
            .iter()
            .map(|(k, s)| format!("{}={}", k.name(), s.state.name()))
            .collect();
        let mut obs = format!("statuses: {}", summary.join(", "));
        for (kind, status) in &statuses {
            if status.state == AgentStateKind::Failed {
                obs.push_str(&format!(
                    "\n{} failed after {} steps: {}",
                    kind.name(),
                    status.steps,
                    status.detail
                ));
            }
        }
        let mut outcome = ExecOutcome::of(obs);
        let status_map: Map<String, Value> = statuses
            .iter()
            .map(|(k, s)| (k.name().to_string(), s.state.name().into()))
            .collect();
        outcome.meta.insert("statuses".into(), Value::Object(status_map));
        outcome
    }

    fn do_final_answer(&self) -> ExecOutcome {
        if self.launched.is_empty() {
            let mut outcome = ExecOutcome::error(
                "refusing to finalize: no attacks were launched; the assessment has not run"
                    .into(),
            );
            outcome
                .meta
                .insert("refused_final_answer".into(), "zero_attacks".into());
            outcome.meta.insert("bad_plan".into(), true.into());
            return outcome;
        }
        let statuses = self.worker_ctx.board.snapshot();
        if !StatusBoard::all_terminal(&statuses) {
            let pending: Vec<String> = statuses
                .iter()
                .filter(|(_, s)| !s.state.is_terminal())
                .map(|(k, _)| k.name().to_string())
                .collect();
            let mut outcome = ExecOutcome::error(format!(
                "refusing to finalize: agents still working: {}",
                pending.join(", ")
            ));
            outcome
                .meta
                .insert("refused_final_answer".into(), "premature".into());
            outcome.meta.insert("bad_plan".into(), true.into());
            return outcome;
        }
        let mut outcome =
            ExecOutcome::of("assessment finished; shutting down agents and environment".into());
        outcome.control = StepControl::Finish {
            state: AgentStateKind::Completed,
            detail: "all launched agents terminal; master report assembled".into(),
        };
        outcome
    }
}

impl ActionExecutor for ControllerExecutor {
    fn action_space(&self) -> &ActionSpace {
        &CONTROLLER_ACTIONS
    }

    fn execute(&mut self, action: &str, input: &Map<String, Value>) -> ExecOutcome {
        match action {
            "Determine Attacks" => self.do_determine(input),
            "Launch AttackAgent" => self.do_launch(input),
            "Monitor Attacks" => self.do_monitor(),
            "Final Answer" => self.do_final_answer(),
            other => ExecOutcome::error(format!("unhandled action {other}")),
        }
    }
}

// ---------------------------------------------------------------------------
// The full assessment.
// ---------------------------------------------------------------------------

/// Everything one attack contributed to the run.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub kind: AttackKind,
    pub status: AgentStatus,
    pub section: Option<String>,
    pub results: Vec<AttackResult>,
}

#[derive(Debug, Clone)]
pub struct AssessmentOutcome {
    pub complete: bool,
    pub controller_status: AgentStateKind,
    pub confirmed: Vec<AttackKind>,
    pub outcomes: Vec<AttackOutcome>,
    pub report_path: PathBuf,
    pub results_path: PathBuf,
    pub trace_dir: PathBuf,
    pub workspace: PathBuf,
    pub controller_steps: usize,
    pub total_steps: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// Runs the whole controller lifecycle against a reachable service:
/// determine, launch, monitor, final answer. Honors the per-agent step and
/// runtime limits and writes the report, results, traces, and the manifest
/// under `workspace`.
pub fn run_assessment(
    info: &TargetServiceInfo,
    env: &EnvPaths,
    scoring: &ScoringPaths,
    planner: Arc<dyn Planner>,
    settings: &RunSettings,
    workspace: &Path,
) -> Result<AssessmentOutcome, AgentError> {
    info.validate()?;
    let probe = ServiceClient::new(info.predict_url.clone(), info.embedding_url.clone());
    if !probe.reachable() {
        return Err(AgentError::ServiceUnreachable(info.predict_url.clone()));
    }
    std::fs::create_dir_all(workspace)?;
    let run_id = format!("run-{:08x}", settings.seed);
    let board = Arc::new(StatusBoard::new());
    let gate = Arc::new(StartGate::new(!settings.deterministic));
    let worker_ctx = WorkerContext {
        run_id: run_id.clone(),
        info: info.clone(),
        env: env.clone(),
        scoring: scoring.clone(),
        planner: Arc::clone(&planner),
        workspace_root: workspace.to_path_buf(),
        settings: settings.clone(),
        board: Arc::clone(&board),
        gate: Arc::clone(&gate),
    };

    let m0 = controller_instruction(info, env, settings.seed);
    let header = TraceHeader {
        format_version: TRACE_FORMAT_VERSION,
        run_id: run_id.clone(),
        agent_id: "controller".into(),
        attack: None,
        initial_instruction: m0.clone(),
        action_space: CONTROLLER_ACTIONS.names(),
    };
    let trace_dir = workspace.join("traces");
    let mut trace = TraceWriter::create(&trace_dir.join("controller.jsonl"), header)?;
    let archive_dir = workspace.join("observations/controller");
    let mut executor = ControllerExecutor::new(worker_ctx);
    let mut memory = Memory::new(m0.clone());
    let mut store = ProvenanceStore::new(&m0);
    let started = Instant::now();
    let loop_ctx = LoopCtx {
        agent_id: "controller",
        archive_dir: &archive_dir,
        archive_rel: "observations/controller",
        max_steps: settings.max_steps,
        temperature: settings.temperature,
        deterministic: settings.deterministic,
        started,
    };

    let mut controller_steps = 0usize;
    let mut gate_opened = !settings.deterministic;
    let terminal = loop {
        let step = controller_steps + 1;
        if step > settings.max_steps {
            break (
                AgentStateKind::Failed,
                format!("controller step limit of {} reached", settings.max_steps),
            );
        }
        if started.elapsed() > settings.runtime_limit {
            break (AgentStateKind::Failed, "controller runtime limit reached".into());
        }
        match agent_step(
            step,
            &mut memory,
            planner.as_ref(),
            &mut executor,
            &mut trace,
            &mut store,
            &loop_ctx,
        ) {
            Ok(outcome) => {
                controller_steps = step;
                match outcome.control {
                    StepControl::Finish { state, detail } => break (state, detail),
                    StepControl::Continue => {
                        if outcome.action == "Monitor Attacks" {
                            let statuses = board.snapshot();
                            if !statuses.is_empty() && !StatusBoard::all_terminal(&statuses) {
                                if settings.deterministic {
                                    if !gate_opened {
                                        gate.open();
                                        gate_opened = true;
                                    }
                                    // Workers always terminate (step and
                                    // runtime limits), so this cannot hang.
                                    board.wait_all_terminal(
                                        settings.runtime_limit.saturating_sub(started.elapsed())
                                            + Duration::from_secs(1),
                                    );
                                } else {
                                    std::thread::sleep(settings.poll_interval);
                                }
                            }
                        }
                    }
                }
            }
            Err(e) => break (AgentStateKind::Failed, format!("controller step error: {e}")),
        }
    };

    // Tear down: release any gated workers and collect them.
    gate.open();
    for handle in executor.handles.drain(..) {
        let _ = handle.join();
    }
    let _ = trace.append(&TraceRecord::End(TraceEnd {
        agent_id: "controller".into(),
        status: terminal.0.name().to_string(),
        steps: controller_steps,
    }));
    drop(trace);

    // Collect per-attack outcomes.
    let statuses = board.snapshot();
    let mut outcomes = Vec::new();
    for (&kind, status) in &statuses {
        let agent_dir = workspace.join("agents").join(kind.name());
        let section = std::fs::read_to_string(agent_dir.join("report_section.md")).ok();
        let results: Vec<AttackResult> = std::fs::read_to_string(agent_dir.join("results.json"))
            .ok()
            .and_then(|text| serde_json::from_str(&text).ok())
            .unwrap_or_default();
        outcomes.push(AttackOutcome {
            kind,
            status: status.clone(),
            section,
            results,
        });
    }

    let complete = terminal.0 == AgentStateKind::Completed
        && !executor.confirmed.is_empty()
        && executor
            .confirmed
            .iter()
            .all(|kind| {
                statuses
                    .get(kind)
                    .is_some_and(|s| s.state == AgentStateKind::Completed)
            });

    // Master report and machine-readable results.
    let report = crate::report::render_report(info, &outcomes, complete);
    let report_path = workspace.join("report.md");
    std::fs::write(&report_path, &report)?;
    let results_path = workspace.join("results.json");
    let results_doc = serde_json::json!({
        "run_id": run_id,
        "complete": complete,
        "confirmed": executor.confirmed.iter().map(|k| k.name()).collect::<Vec<_>>(),
        "attacks": outcomes.iter().map(|o| serde_json::json!({
            "attack": o.kind.name(),
            "status": o.status.state.name(),
            "steps": o.status.steps,
            "detail": o.status.detail,
            "results": o.results,
        })).collect::<Vec<_>>(),
    });
    std::fs::write(&results_path, serde_json::to_string_pretty(&results_doc).unwrap())?;

    let total_steps = controller_steps
        + statuses.values().map(|s| s.steps).sum::<usize>();
    let traces = crate::trace::read_trace_dir(&trace_dir)?;
    let input_tokens = traces.iter().map(|t| t.total_input_tokens()).sum();
    let output_tokens = traces.iter().map(|t| t.total_output_tokens()).sum();

    let manifest = serde_json::json!({
        "run_id": run_id,
        "complete": complete,
        "report": "report.md",
        "results": "results.json",
        "traces": "traces",
        "observation_archives": ["observations/controller", "agents/<attack>/observations"],
        "sections": outcomes.iter().map(|o| format!("agents/{}/report_section.md", o.kind.name())).collect::<Vec<_>>(),
    });
    std::fs::write(
        workspace.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap(),
    )?;

    Ok(AssessmentOutcome {
        complete,
        controller_status: terminal.0,
        confirmed: executor.confirmed.clone(),
        outcomes,
        report_path,
        results_path,
        trace_dir,
        workspace: workspace.to_path_buf(),
        controller_steps,
        total_steps,
        input_tokens,
        output_tokens,
    })
}
