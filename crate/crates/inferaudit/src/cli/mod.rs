//! Operator entry points.
//!
//! Every subcommand is non-interactive and exits with a documented code:
//! 0 on success (for `assess`: the run completed), 1 on error, 2 when an
//! assessment ran but did not complete. Flags mirror the run-config file
//! keys one to one; a config value applies only when the flag is absent.

use crate::agent::{
    run_assessment, EnvPaths, FaultScript, FaultyPlanner, MockPlanner, Planner, RemotePlanner,
    RemotePlannerConfig, RunSettings, ScoringPaths, TargetServiceInfo, DEFAULT_MAX_STEPS,
    DEFAULT_RUNTIME_LIMIT_SECS,
};
use crate::attack::{default_manifests, save_task_registry};
use crate::data::{
    default_model_records, generate_synthetic_dataset, load_dataset_registry,
    save_dataset_registry, save_model_registry, split_dataset, write_dataset, AttributeInfo,
    Dataset, DatasetRecord, DatasetSpec, ModelRecord,
};
use crate::report::{
    self, analyze_trace, completion_rate, default_price_table, summarize_steps, PriceTable,
    RunRecord,
};
use crate::service::{self, serve, ServiceConfig, TARGET_TRAIN_SPLIT};
use crate::trace::read_trace_dir;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

#[derive(Parser)]
#[command(
    name = "inferaudit",
    version,
    about = "Autonomous black-box inference-attack risk assessment for ML prediction services"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset, its splits, and registry entries.
    GenData(GenDataArgs),
    /// Train a target model and write its artifact plus scoring bundle.
    TrainTarget(TrainTargetArgs),
    /// Serve a trained artifact behind HTTP endpoints.
    Serve(ServeArgs),
    /// Run a full autonomous assessment against a reachable service.
    Assess(AssessArgs),
    /// Run a matrix of assessments and aggregate the results.
    Bench(BenchArgs),
    /// Analyze trace directories with the error taxonomy.
    Analyze(AnalyzeArgs),
}

/// Keys a run-config file may set; each applies only when the matching
/// flag is absent.
#[derive(Debug, Default, Deserialize)]
struct FileConfig {
    planner: Option<String>,
    seed: Option<u64>,
    max_steps: Option<usize>,
    runtime_limit_secs: Option<u64>,
    poll_interval_ms: Option<u64>,
    temperature: Option<f64>,
    price_table: Option<PathBuf>,
    workspace: Option<PathBuf>,
    env_dir: Option<PathBuf>,
    scoring_dir: Option<PathBuf>,
    remote: Option<RemotePlannerConfig>,
}

fn load_file_config(path: Option<&PathBuf>) -> Result<FileConfig, String> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| format!("bad config {}: {e}", p.display()))
        }
    }
}

fn load_price_table(path: Option<&PathBuf>) -> Result<PriceTable, String> {
    match path {
        None => Ok(default_price_table()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| format!("cannot read price table {}: {e}", p.display()))?;
            let table: PriceTable = serde_json::from_str(&text)
                .map_err(|e| format!("bad price table {}: {e}", p.display()))?;
            table.validate().map_err(|e| e.to_string())?;
            Ok(table)
        }
    }
}

fn make_planner(
    choice: &str,
    seed: u64,
    remote: Option<&RemotePlannerConfig>,
) -> Result<Arc<dyn Planner>, String> {
    if choice == "mock" {
        return Ok(Arc::new(MockPlanner::new(seed)));
    }
    if choice == "remote" {
        let config = remote
            .cloned()
            .ok_or("remote planner selected but no `remote` config block was given")?;
        return Ok(Arc::new(RemotePlanner::new(config)));
    }
    if let Some(script) = choice.strip_prefix("faulty:") {
        let script = FaultScript::parse(script)
            .ok_or_else(|| format!("unknown faulty script `{script}`"))?;
        return Ok(Arc::new(FaultyPlanner::new(script, seed)));
    }
    Err(format!(
        "unknown planner `{choice}` (expected mock, remote, or faulty:<script>)"
    ))
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

#[derive(Args)]
struct GenDataArgs {
    /// Dataset spec JSON file.
    #[arg(long)]
    spec: PathBuf,
    /// Environment directory receiving the shadow data and registries.
    #[arg(long)]
    env_dir: PathBuf,
    /// Directory receiving the target-side splits.
    #[arg(long)]
    targets_dir: PathBuf,
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<(), String> {
    let text = std::fs::read_to_string(&args.spec)
        .map_err(|e| format!("cannot read spec {}: {e}", args.spec.display()))?;
    let spec: DatasetSpec =
        serde_json::from_str(&text).map_err(|e| format!("bad dataset spec: {e}"))?;
    let root = generate_synthetic_dataset(&spec).map_err(|e| e.to_string())?;
    let parts = split_dataset(
        &root,
        &[
            (TARGET_TRAIN_SPLIT, 0.25),
            ("target_eval", 0.25),
            ("assessment", 0.5),
        ],
        spec.seed,
    )
    .map_err(|e| e.to_string())?;

    std::fs::create_dir_all(args.env_dir.join("data")).map_err(|e| e.to_string())?;
    let shadow_rel = format!("data/{}_shadow.bin", spec.name);
    write_dataset(&args.env_dir.join(&shadow_rel), &parts[2]).map_err(|e| e.to_string())?;

    let registry_path = args.env_dir.join("available_datasets.json");
    let mut records = if registry_path.exists() {
        load_dataset_registry(&registry_path).map_err(|e| e.to_string())?
    } else {
        Vec::new()
    };
    if records.iter().any(|r| r.name == spec.name) {
        return Err(format!("dataset {} is already registered", spec.name));
    }
    records.push(DatasetRecord {
        name: spec.name.clone(),
        num_classes: spec.n_classes,
        input_size: spec.n_features,
        class_names: (0..spec.n_classes).map(|i| format!("class_{i}")).collect(),
        path: shadow_rel,
        common_tasks: spec
            .common_tasks
            .clone()
            .unwrap_or_else(|| format!("synthetic {}-way cluster classification", spec.n_classes)),
        attributes: spec
            .attributes
            .iter()
            .map(|a| AttributeInfo {
                name: a.name.clone(),
                num_classes: a.num_classes,
            })
            .collect(),
        extra: Default::default(),
    });
    save_dataset_registry(&registry_path, &records).map_err(|e| e.to_string())?;

    let models_path = args.env_dir.join("available_models.json");
    if !models_path.exists() {
        save_model_registry(&models_path, &default_model_records()).map_err(|e| e.to_string())?;
    }
    let tasks_path = args.env_dir.join("available_tasks.json");
    if !tasks_path.exists() {
        save_task_registry(&tasks_path, &default_manifests()).map_err(|e| e.to_string())?;
    }

    let target_dir = args.targets_dir.join(&spec.name);
    write_dataset(&target_dir.join("target_train.bin"), &parts[0]).map_err(|e| e.to_string())?;
    write_dataset(&target_dir.join("target_eval.bin"), &parts[1]).map_err(|e| e.to_string())?;
    println!(
        "generated {}: {} samples ({} target_train / {} target_eval / {} shadow); registry now has {} datasets",
        spec.name,
        root.len(),
        parts[0].len(),
        parts[1].len(),
        parts[2].len(),
        records.len(),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train-target
// ---------------------------------------------------------------------------

#[derive(Args)]
struct TrainTargetArgs {
    /// Target training split container.
    #[arg(long)]
    train: PathBuf,
    /// Target evaluation split container.
    #[arg(long)]
    eval: PathBuf,
    /// Model registry name (resolved via --env-dir) or unset with --hidden.
    #[arg(long)]
    model: Option<String>,
    /// Hidden layer widths, comma separated (overrides --model).
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    env_dir: Option<PathBuf>,
    /// Combine these attributes (comma separated) into the task label
    /// before training.
    #[arg(long)]
    task_attributes: Option<String>,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the artifact and scoring bundle.
    #[arg(long)]
    out_dir: PathBuf,
}

fn relabel_with_attributes(ds: &Dataset, attrs: &str) -> Result<Dataset, String> {
    let names: Vec<&str> = attrs.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let composite = crate::data::combine_attributes(ds, &names).map_err(|e| e.to_string())?;
    Ok(ds.with_labels(
        composite.labels.clone(),
        composite.num_classes,
        "composite_task",
    ))
}

fn cmd_train_target(args: &TrainTargetArgs) -> Result<(), String> {
    let mut train = crate::data::read_dataset(&args.train).map_err(|e| e.to_string())?;
    let mut eval = crate::data::read_dataset(&args.eval).map_err(|e| e.to_string())?;
    if let Some(attrs) = &args.task_attributes {
        train = relabel_with_attributes(&train, attrs)?;
        eval = relabel_with_attributes(&eval, attrs)?;
    }
    let record = match (&args.hidden, &args.model) {
        (Some(hidden), _) => ModelRecord {
            name: "custom".into(),
            hidden_sizes: hidden
                .split(',')
                .map(|s| s.trim().parse().map_err(|e| format!("bad hidden size: {e}")))
                .collect::<Result<Vec<usize>, String>>()?,
            capacity_rank: 0,
            note: String::new(),
            overfit_risk: false,
            extra: Default::default(),
        },
        (None, Some(name)) => {
            let env_dir = args
                .env_dir
                .as_ref()
                .ok_or("--model needs --env-dir to resolve the registry")?;
            crate::data::load_model_registry(&env_dir.join("available_models.json"))
                .map_err(|e| e.to_string())?
                .into_iter()
                .find(|r| &r.name == name)
                .ok_or_else(|| format!("model {name} not in registry"))?
        }
        (None, None) => return Err("pass --model <name> or --hidden <sizes>".into()),
    };
    let config = crate::nn::TrainConfig {
        learning_rate: args.learning_rate,
        batch_size: args.batch_size,
        epochs: args.epochs,
        loss_kind: crate::nn::LossKind::HardCe,
        seed: args.seed,
    };
    let artifact = args.out_dir.join("target_model.bin");
    let summary =
        service::train_target(&train, &record, &config, &artifact).map_err(|e| e.to_string())?;
    let (model, _) = crate::nn::read_model(&artifact).map_err(|e| e.to_string())?;
    let eval_acc =
        crate::nn::evaluate(&model, &eval.inputs, &eval.labels).map_err(|e| e.to_string())?;
    service::write_scoring_bundle(&train, &eval, &args.out_dir.join("scoring"), args.seed, 400)
        .map_err(|e| e.to_string())?;
    println!(
        "trained target: train_accuracy = {:.4}, eval_accuracy = {:.4}, artifact = {}",
        summary.train_accuracy,
        eval_acc,
        artifact.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// serve
// ---------------------------------------------------------------------------

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    artifact: PathBuf,
    #[arg(long, default_value = "127.0.0.1:0")]
    addr: String,
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long, default_value_t = false)]
    expose_embedding: bool,
}

fn cmd_serve(args: &ServeArgs) -> Result<(), String> {
    let addr = args
        .addr
        .parse()
        .map_err(|e| format!("bad --addr {}: {e}", args.addr))?;
    let config = ServiceConfig {
        artifact_path: args.artifact.clone(),
        expose_embedding: args.expose_embedding,
        query_budget: args.budget,
        addr,
    };
    let handle = serve(&config).map_err(|e| e.to_string())?;
    println!("serving on http://{}", handle.addr());
    println!("predict: {}", handle.predict_url());
    if args.expose_embedding {
        println!("embedding: {}", handle.embedding_url());
    }
    if let Some(budget) = args.budget {
        println!("query budget: {budget} input rows");
    }
    // Runs until the process is killed.
    loop {
        std::thread::sleep(Duration::from_secs(3600));
    }
}

// ---------------------------------------------------------------------------
// assess
// ---------------------------------------------------------------------------

#[derive(Args)]
struct AssessArgs {
    /// Target service description JSON.
    #[arg(long)]
    service_info: PathBuf,
    /// Run-config file; flags win over its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env_dir: Option<PathBuf>,
    #[arg(long)]
    scoring_dir: Option<PathBuf>,
    #[arg(long)]
    workspace: Option<PathBuf>,
    /// mock, remote, or faulty:<script>.
    #[arg(long)]
    planner: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Per-agent runtime limit in seconds.
    #[arg(long)]
    runtime_limit: Option<u64>,
    #[arg(long)]
    price_table: Option<PathBuf>,
}

struct ResolvedAssess {
    info: TargetServiceInfo,
    env: EnvPaths,
    scoring: ScoringPaths,
    workspace: PathBuf,
    planner: Arc<dyn Planner>,
    settings: RunSettings,
    prices: PriceTable,
}

fn resolve_assess(args: &AssessArgs) -> Result<ResolvedAssess, String> {
    let file = load_file_config(args.config.as_ref())?;
    let text = std::fs::read_to_string(&args.service_info)
        .map_err(|e| format!("cannot read {}: {e}", args.service_info.display()))?;
    let info: TargetServiceInfo =
        serde_json::from_str(&text).map_err(|e| format!("bad service info: {e}"))?;
    let env_dir = args
        .env_dir
        .clone()
        .or(file.env_dir)
        .ok_or("--env-dir is required (flag or config)")?;
    let scoring_dir = args
        .scoring_dir
        .clone()
        .or(file.scoring_dir)
        .ok_or("--scoring-dir is required (flag or config)")?;
    let workspace = args
        .workspace
        .clone()
        .or(file.workspace)
        .ok_or("--workspace is required (flag or config)")?;
    let planner_choice = args
        .planner
        .clone()
        .or(file.planner)
        .unwrap_or_else(|| "mock".into());
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let planner = make_planner(&planner_choice, seed, file.remote.as_ref())?;
    let deterministic = planner_choice != "remote";
    let settings = RunSettings {
        seed,
        max_steps: args.max_steps.or(file.max_steps).unwrap_or(DEFAULT_MAX_STEPS),
        runtime_limit: Duration::from_secs(
            args.runtime_limit
                .or(file.runtime_limit_secs)
                .unwrap_or(DEFAULT_RUNTIME_LIMIT_SECS),
        ),
        poll_interval: Duration::from_millis(file.poll_interval_ms.unwrap_or(500)),
        temperature: file.temperature.unwrap_or(0.0),
        deterministic,
    };
    let prices = load_price_table(args.price_table.as_ref().or(file.price_table.as_ref()))?;
    Ok(ResolvedAssess {
        info,
        env: EnvPaths::under(&env_dir),
        scoring: ScoringPaths::under(&scoring_dir),
        workspace,
        planner,
        settings,
        prices,
    })
}

fn cmd_assess(args: &AssessArgs) -> Result<i32, String> {
    let resolved = resolve_assess(args)?;
    let outcome = run_assessment(
        &resolved.info,
        &resolved.env,
        &resolved.scoring,
        resolved.planner,
        &resolved.settings,
        &resolved.workspace,
    )
    .map_err(|e| e.to_string())?;
    let cost =
        report::cost_of_tokens(outcome.input_tokens, outcome.output_tokens, &resolved.prices);
    println!(
        "assessment {}: {} confirmed attack(s), {} total steps, {} input / {} output tokens (cost {:.3} {})",
        if outcome.complete { "complete" } else { "incomplete" },
        outcome.confirmed.len(),
        outcome.total_steps,
        outcome.input_tokens,
        outcome.output_tokens,
        cost,
        resolved.prices.currency,
    );
    println!("report: {}", outcome.report_path.display());
    println!("traces: {}", outcome.trace_dir.display());
    Ok(if outcome.complete { 0 } else { 2 })
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

#[derive(Args)]
struct BenchArgs {
    /// Matrix JSON file.
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    workspace: PathBuf,
    #[arg(long)]
    planner: Option<String>,
    #[arg(long)]
    price_table: Option<PathBuf>,
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Deserialize)]
struct BenchMatrix {
    runs: Vec<BenchEntry>,
}

#[derive(Deserialize, Clone)]
struct BenchEntry {
    name: String,
    service_info: PathBuf,
    env_dir: PathBuf,
    scoring_dir: PathBuf,
    #[serde(default = "default_runs")]
    runs: usize,
    #[serde(default)]
    base_seed: u64,
}

fn default_runs() -> usize {
    5
}

type BenchRow = (String, u64, crate::agent::AssessmentOutcome);

fn cmd_bench(args: &BenchArgs) -> Result<(), String> {
    let text = std::fs::read_to_string(&args.matrix)
        .map_err(|e| format!("cannot read matrix {}: {e}", args.matrix.display()))?;
    let matrix: BenchMatrix =
        serde_json::from_str(&text).map_err(|e| format!("bad matrix: {e}"))?;
    if matrix.runs.is_empty() {
        return Err("bench matrix is empty".into());
    }
    let planner_choice = args.planner.clone().unwrap_or_else(|| "mock".into());
    let prices = load_price_table(args.price_table.as_ref())?;
    let max_steps = args.max_steps.unwrap_or(DEFAULT_MAX_STEPS);

    // Distinct services run concurrently; runs against one service are
    // serialized so its ledger stays interpretable.
    let mut handles = Vec::new();
    for entry in matrix.runs.clone() {
        let workspace = args.workspace.clone();
        let planner_choice = planner_choice.clone();
        handles.push(std::thread::spawn(move || -> Result<Vec<BenchRow>, String> {
            let text = std::fs::read_to_string(&entry.service_info)
                .map_err(|e| format!("cannot read {}: {e}", entry.service_info.display()))?;
            let info: TargetServiceInfo =
                serde_json::from_str(&text).map_err(|e| format!("bad service info: {e}"))?;
            let mut outcomes = Vec::new();
            for run in 0..entry.runs {
                let seed = entry.base_seed + run as u64;
                let planner = make_planner(&planner_choice, seed, None)?;
                let mut settings = RunSettings::deterministic(seed);
                settings.max_steps = max_steps;
                settings.deterministic = planner_choice != "remote";
                let run_workspace = workspace.join(&entry.name).join(format!("run_{run}"));
                let outcome = run_assessment(
                    &info,
                    &EnvPaths::under(&entry.env_dir),
                    &ScoringPaths::under(&entry.scoring_dir),
                    planner,
                    &settings,
                    &run_workspace,
                )
                .map_err(|e| e.to_string())?;
                outcomes.push((entry.name.clone(), seed, outcome));
            }
            Ok(outcomes)
        }));
    }

    let mut rows = Vec::new();
    for handle in handles {
        rows.extend(handle.join().map_err(|_| "bench worker panicked")??);
    }

    // Aggregate: completion rate, mean steps, mean cost, metric means.
    let mut per_target: BTreeMap<String, Vec<&crate::agent::AssessmentOutcome>> = BTreeMap::new();
    for (name, _, outcome) in &rows {
        per_target.entry(name.clone()).or_default().push(outcome);
    }
    println!(
        "{:<14} {:>5} {:>9} {:>7} {:>9}  metrics",
        "target", "runs", "complete", "steps", "cost"
    );
    let mut bench_doc = Vec::new();
    for (name, outcomes) in &per_target {
        let runs = outcomes.len();
        let complete = outcomes.iter().filter(|o| o.complete).count();
        let mean_steps =
            outcomes.iter().map(|o| o.total_steps).sum::<usize>() as f64 / runs as f64;
        let mean_cost = outcomes
            .iter()
            .map(|o| report::cost_of_tokens(o.input_tokens, o.output_tokens, &prices))
            .sum::<f64>()
            / runs as f64;
        let mut metric_acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for outcome in outcomes {
            for attack in &outcome.outcomes {
                for result in &attack.results {
                    let key = format!("{}:{}", attack.kind.name(), result.metric_name);
                    let entry = metric_acc.entry(key).or_default();
                    entry.0 += result.metric_value;
                    entry.1 += 1;
                }
            }
        }
        let metrics: Vec<String> = metric_acc
            .iter()
            .map(|(k, (sum, n))| format!("{k}={:.3}", sum / *n as f64))
            .collect();
        println!(
            "{name:<14} {runs:>5} {:>8.0}% {mean_steps:>7.1} {mean_cost:>9.4}  {}",
            100.0 * complete as f64 / runs as f64,
            metrics.join(" ")
        );
        bench_doc.push(serde_json::json!({
            "target": name,
            "runs": runs,
            "completion_rate": complete as f64 / runs as f64,
            "mean_steps": mean_steps,
            "mean_cost": mean_cost,
            "metric_means": metric_acc.iter().map(|(k, (sum, n))| {
                (k.clone(), sum / *n as f64)
            }).collect::<BTreeMap<String, f64>>(),
        }));
    }
    std::fs::create_dir_all(&args.workspace).map_err(|e| e.to_string())?;
    std::fs::write(
        args.workspace.join("bench.json"),
        serde_json::to_string_pretty(&bench_doc).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    println!(
        "aggregate written to {}",
        args.workspace.join("bench.json").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

#[derive(Args)]
struct AnalyzeArgs {
    /// One or more run workspaces (each with a traces/ directory), or trace
    /// directories themselves.
    #[arg(long, required = true)]
    trace_dir: Vec<PathBuf>,
    /// Where to write findings.json (defaults to the first trace dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), String> {
    let mut findings_doc = Vec::new();
    let mut run_records = Vec::new();
    for dir in &args.trace_dir {
        let (trace_dir, workspace) = if dir.join("traces").is_dir() {
            (dir.join("traces"), dir.clone())
        } else {
            (
                dir.clone(),
                dir.parent().map(Path::to_path_buf).unwrap_or_else(|| dir.clone()),
            )
        };
        let traces = read_trace_dir(&trace_dir).map_err(|e| e.to_string())?;
        if traces.is_empty() {
            return Err(format!("no traces found under {}", trace_dir.display()));
        }
        for trace in &traces {
            let findings = analyze_trace(trace, &workspace);
            println!(
                "{}/{}: {}",
                dir.display(),
                findings.agent_id,
                if findings.clean() {
                    "clean".to_string()
                } else {
                    format!(
                        "bad_plan={} instr={} context_loss={} h1={} h2={} h3={} dominant={:.2}",
                        findings.bad_plan,
                        findings.instruction_violation,
                        findings.context_loss,
                        findings.hallucination_type1,
                        findings.hallucination_type2,
                        findings.hallucination_type3,
                        findings.dominant_action_fraction,
                    )
                }
            );
            findings_doc.push(serde_json::to_value(&findings).unwrap());
        }
        run_records.push(RunRecord {
            target: dir.display().to_string(),
            traces: traces.clone(),
        });
        for stat in summarize_steps(&traces) {
            println!(
                "  steps[{}]: mean {:.2} (min {}, max {}), incomplete {}",
                stat.attack.name(),
                stat.mean_steps,
                stat.min_steps,
                stat.max_steps,
                stat.incomplete_runs
            );
        }
    }
    if let Ok((per_target, overall)) = completion_rate(&run_records) {
        for (target, rate) in per_target {
            println!("completion[{target}] = {rate:.2}");
        }
        println!("completion[overall] = {overall:.2}");
    }
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.trace_dir[0].join("findings.json"));
    std::fs::write(&out, serde_json::to_string_pretty(&findings_doc).unwrap())
        .map_err(|e| e.to_string())?;
    println!("findings written to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------

/// Parses arguments and runs a subcommand; the return value is the process
/// exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result: Result<i32, String> = match &cli.command {
        Command::GenData(args) => cmd_gen_data(args).map(|()| 0),
        Command::TrainTarget(args) => cmd_train_target(args).map(|()| 0),
        Command::Serve(args) => cmd_serve(args).map(|()| 0),
        Command::Assess(args) => cmd_assess(args),
        Command::Bench(args) => cmd_bench(args).map(|()| 0),
        Command::Analyze(args) => cmd_analyze(args).map(|()| 0),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            1
        }
    }
}
