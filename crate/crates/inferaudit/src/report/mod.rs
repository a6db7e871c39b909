//! Report rendering, token-cost accounting, and the trace-based error
//! analyzer.

mod analyze;

pub use analyze::{
    analyze_trace, completion_rate, run_is_complete, summarize_steps, ErrorFindings, RunRecord,
    StepStats,
};

use crate::agent::{AgentStateKind, AttackOutcome, TargetServiceInfo};
use crate::attack::AttackKind;
use crate::trace::Trace;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("invalid price table: {0}")]
    InvalidPrice(String),
    #[error("no traces to analyze")]
    Empty,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Trace(#[from] crate::trace::TraceError),
}

// ---------------------------------------------------------------------------
// Cost accounting.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriceTable {
    /// Price per million input tokens.
    pub input_per_million: f64,
    /// Price per million output tokens.
    pub output_per_million: f64,
    pub currency: String,
}

impl PriceTable {
    pub fn validate(&self) -> Result<(), ReportError> {
        if self.input_per_million < 0.0 || self.output_per_million < 0.0 {
            return Err(ReportError::InvalidPrice("prices must be >= 0".into()));
        }
        Ok(())
    }
}

/// Default prices (USD per million tokens) for the reference planner tier.
pub fn default_price_table() -> PriceTable {
    PriceTable {
        input_per_million: 2.50,
        output_per_million: 10.00,
        currency: "USD".into(),
    }
}

/// Total cost of one trace: token sums times per-million prices. Token
/// counts are exact integers; the only rounding is the caller's display.
pub fn cost_of(trace: &Trace, prices: &PriceTable) -> Result<f64, ReportError> {
    prices.validate()?;
    Ok(cost_of_tokens(
        trace.total_input_tokens(),
        trace.total_output_tokens(),
        prices,
    ))
}

pub fn cost_of_tokens(input_tokens: u64, output_tokens: u64, prices: &PriceTable) -> f64 {
    input_tokens as f64 * prices.input_per_million / 1e6
        + output_tokens as f64 * prices.output_per_million / 1e6
}

// ---------------------------------------------------------------------------
// Risk rubric and defenses.
// ---------------------------------------------------------------------------

/// Declared risk thresholds, shown in the report so a non-expert can see
/// the rubric the labels came from.
pub const RISK_RUBRIC: &str = "\
- membership inference: best attack accuracy > 0.75 is HIGH, > 0.60 is ELEVATED, otherwise LOW.
- model stealing: surrogate-target agreement > 0.80 is HIGH, > 0.60 is ELEVATED, otherwise LOW.
- data reconstruction: reconstruction MSE below half the mean-input baseline is HIGH, below the baseline is ELEVATED, otherwise LOW.
- attribute inference: accuracy more than 0.25 above the majority baseline is HIGH, more than 0.10 above is ELEVATED, otherwise LOW.";

fn defenses_for(kind: AttackKind) -> &'static str {
    match kind {
        AttackKind::MembershipInference => {
            "Reduce overfitting (early stopping, stronger regularization, more training data), \
             train with differential privacy, or return only top-k labels instead of full \
             posteriors."
        }
        AttackKind::ModelStealing => {
            "Enforce per-client query budgets and rate limits, perturb or round returned \
             posteriors, and watermark model outputs to detect extracted copies."
        }
        AttackKind::DataReconstruction => {
            "Round or truncate posterior precision, return labels instead of full probability \
             vectors, and add calibrated noise to outputs."
        }
        AttackKind::AttributeInference => {
            "Restrict or remove the embedding endpoint, noise embeddings before release, and \
             audit representations for correlations with sensitive attributes."
        }
    }
}

struct RiskCall {
    label: &'static str,
    rationale: String,
}

fn best_metric(outcome: &AttackOutcome, name_contains: &str) -> Option<f64> {
    outcome
        .results
        .iter()
        .filter(|r| r.metric_name.contains(name_contains) || name_contains.is_empty())
        .map(|r| r.metric_value)
        .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
}

fn sub_metric(outcome: &AttackOutcome, name: &str) -> Option<f64> {
    outcome
        .results
        .iter()
        .flat_map(|r| r.sub_results.iter())
        .find(|(n, _)| n == name)
        .map(|&(_, v)| v)
}

fn risk_call(outcome: &AttackOutcome) -> RiskCall {
    match outcome.kind {
        AttackKind::MembershipInference => {
            let best = best_metric(outcome, "").unwrap_or(0.0);
            let label = if best > 0.75 {
                "HIGH"
            } else if best > 0.60 {
                "ELEVATED"
            } else {
                "LOW"
            };
            RiskCall {
                label,
                rationale: format!(
                    "the best membership-inference accuracy observed was {best:.3}; 0.5 would \
                     mean members are indistinguishable"
                ),
            }
        }
        AttackKind::ModelStealing => match sub_metric(outcome, "target_agreement") {
            Some(agreement) => {
                let label = if agreement > 0.80 {
                    "HIGH"
                } else if agreement > 0.60 {
                    "ELEVATED"
                } else {
                    "LOW"
                };
                RiskCall {
                    label,
                    rationale: format!(
                        "a surrogate trained only on query responses matches the service's \
                         predictions on {agreement:.3} of evaluation inputs"
                    ),
                }
            }
            None => {
                let acc = best_metric(outcome, "eval_accuracy").unwrap_or(0.0);
                RiskCall {
                    label: if acc > 0.60 { "ELEVATED" } else { "LOW" },
                    rationale: format!(
                        "agreement was not measured (query budget); the surrogate reached \
                         {acc:.3} task accuracy from query responses alone"
                    ),
                }
            }
        },
        AttackKind::DataReconstruction => {
            let mse = best_metric(outcome, "reconstruction_mse").unwrap_or(f64::INFINITY);
            let baseline = sub_metric(outcome, "mean_input_baseline_mse").unwrap_or(0.0);
            let label = if mse < 0.5 * baseline {
                "HIGH"
            } else if mse < baseline {
                "ELEVATED"
            } else {
                "LOW"
            };
            RiskCall {
                label,
                rationale: format!(
                    "reconstructions reach MSE {mse:.4} against {baseline:.4} for a baseline \
                     that ignores the service outputs entirely"
                ),
            }
        }
        AttackKind::AttributeInference => {
            let acc = best_metric(outcome, "attribute_accuracy").unwrap_or(0.0);
            let baseline = sub_metric(outcome, "majority_baseline").unwrap_or(0.0);
            let label = if acc > baseline + 0.25 {
                "HIGH"
            } else if acc > baseline + 0.10 {
                "ELEVATED"
            } else {
                "LOW"
            };
            RiskCall {
                label,
                rationale: format!(
                    "the sensitive attribute was predicted from embeddings with accuracy \
                     {acc:.3} against a majority baseline of {baseline:.3}"
                ),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Report rendering.
// ---------------------------------------------------------------------------

/// Renders the non-expert master report: one section per attack with the
/// five mandated parts — target description, attack process, results with
/// metric values, a risk explanation, and defense suggestions. Failed
/// attacks state the failure instead of metrics.
pub fn render_report(
    info: &TargetServiceInfo,
    outcomes: &[AttackOutcome],
    complete: bool,
) -> String {
    let mut out = String::new();
    out.push_str("# Inference-attack risk assessment\n\n");
    out.push_str(&format!(
        "Overall status: {}\n\n",
        if complete {
            "complete — every feasible attack finished"
        } else {
            "incomplete — see the per-attack status lines"
        }
    ));
    out.push_str("## Target service\n\n");
    out.push_str(&format!("- Task: {}\n", info.task_description));
    out.push_str(&format!("- Prediction endpoint: {}\n", info.predict_url));
    if let Some(url) = &info.embedding_url {
        out.push_str(&format!("- Embedding endpoint: {url}\n"));
    }
    out.push_str(&format!("- Input format: {}\n", info.input_format));
    out.push_str(&format!("- Output format: {}\n", info.output_format));
    if let Some(attr) = &info.sensitive_attribute {
        out.push_str(&format!("- Sensitive attribute under audit: {attr}\n"));
    }
    if let Some(budget) = info.query_budget {
        out.push_str(&format!("- Advertised query budget: {budget}\n"));
    }
    out.push_str("\n## Risk rubric\n\nLabels below follow these declared thresholds:\n\n");
    out.push_str(RISK_RUBRIC);
    out.push_str("\n\n");

    for outcome in outcomes {
        out.push_str(&format!("## {}\n\n", capitalize(outcome.kind.display_name())));
        out.push_str(&format!(
            "1. Target service: {} behind {} (black-box access only).\n",
            info.task_description.lines().next().unwrap_or(""),
            info.predict_url
        ));
        if outcome.status.state != AgentStateKind::Completed {
            out.push_str(&format!(
                "2. Status: this attack did not complete ({}) after {} steps: {}\n",
                outcome.status.state.name(),
                outcome.status.steps,
                outcome.status.detail
            ));
            out.push_str("3. Results: none — the attack failed before producing metrics.\n");
            out.push_str("4. Interpretation: no risk estimate is available from this run.\n");
            out.push_str(&format!(
                "5. Defense suggestions: {}\n\n",
                defenses_for(outcome.kind)
            ));
            continue;
        }
        out.push_str("2. Attack process: ");
        match &outcome.section {
            Some(section) => {
                let process = section
                    .lines()
                    .find(|l| l.starts_with("Process:"))
                    .map(|l| l.trim_start_matches("Process:").trim())
                    .unwrap_or("executed by the attack agent; see the archived section");
                out.push_str(process);
                out.push('\n');
            }
            None => out.push_str("executed by the attack agent (no section archived).\n"),
        }
        out.push_str("3. Results:\n");
        for result in &outcome.results {
            out.push_str(&format!(
                "   - {} {} = {}\n",
                result.task,
                result.metric_name,
                super::agent_json_number(result.metric_value)
            ));
            for (name, value) in &result.sub_results {
                out.push_str(&format!(
                    "   - {} {} = {}\n",
                    result.task,
                    name,
                    super::agent_json_number(*value)
                ));
            }
            if result.partial {
                out.push_str("   - note: partial result; the query budget ran out mid-attack\n");
            }
        }
        let risk = risk_call(outcome);
        out.push_str(&format!(
            "4. Interpretation: risk is {} — {}.\n",
            risk.label, risk.rationale
        ));
        out.push_str(&format!(
            "5. Defense suggestions: {}\n\n",
            defenses_for(outcome.kind)
        ));
    }
    out
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}
