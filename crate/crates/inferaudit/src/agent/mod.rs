//! Controller/attack-agent runtime.
//!
//! One controller plans over its own action space, confirms which attacks
//! the environment can execute, launches an isolated worker per attack, and
//! finalizes only when every worker is terminal. Each worker runs the same
//! plan/act/observe loop over the attack action space. Planning is
//! delegated to a pluggable backend; the runtime enforces the memory
//! window, the anti-hallucination rules, and the step/time limits.

mod actions;
pub mod injection;
mod memory;
mod plan;
mod planner;
mod runtime;

pub use actions::{
    attack_instruction, controller_instruction, ActionDef, ActionExecutor, ActionParam,
    ActionSpace, AttackExecutor, ExecOutcome, StepControl, ATTACK_ACTIONS, CONTROLLER_ACTIONS,
};
pub(crate) use actions::{extract_numbers as extract_report_numbers, fabricated_numbers as fabricated_report_numbers};
pub use memory::{Memory, StepSummary, MEMORY_WINDOW};
pub use plan::{parse_plan, render_plan, ActionPlan, PlanParseError};
pub use planner::{
    parse_chat_completion, ChatMessage, FaultScript, FaultyPlanner, MockPlanner, Planner,
    PlannerError, PlannerReply, RemotePlanner, RemotePlannerConfig,
};
pub use runtime::{
    run_assessment, AssessmentOutcome, AttackOutcome, RunSettings, DEFAULT_MAX_STEPS,
    DEFAULT_RUNTIME_LIMIT_SECS,
};

use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("planner error: {0}")]
    Planner(#[from] PlannerError),
    #[error("trace error: {0}")]
    Trace(#[from] crate::trace::TraceError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid target service info: {0}")]
    InvalidServiceInfo(String),
    #[error("target service is not reachable at {0}")]
    ServiceUnreachable(String),
    #[error("run aborted: {0}")]
    Aborted(String),
}

/// User-supplied description of the audited service.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetServiceInfo {
    pub task_description: String,
    pub predict_url: String,
    #[serde(default)]
    pub embedding_url: Option<String>,
    pub input_format: String,
    pub output_format: String,
    /// Explicit class count; when absent it is parsed from the output
    /// format text (e.g. "8-dim posteriors").
    #[serde(default)]
    pub class_count: Option<usize>,
    #[serde(default)]
    pub sensitive_attribute: Option<String>,
    #[serde(default)]
    pub query_budget: Option<u64>,
}

impl TargetServiceInfo {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.predict_url.trim().is_empty() {
            return Err(AgentError::InvalidServiceInfo(
                "a predict endpoint is required".into(),
            ));
        }
        if let Some(c) = self.effective_class_count() {
            if c < 2 {
                return Err(AgentError::InvalidServiceInfo(format!(
                    "class count {c} must be at least 2"
                )));
            }
        }
        if let Some(b) = self.query_budget {
            if b == 0 {
                return Err(AgentError::InvalidServiceInfo(
                    "query budget must be at least 1 when set".into(),
                ));
            }
        }
        Ok(())
    }

    /// The declared class count, or the first `N-dim` / `N classes` /
    /// `N-class` figure found in the output format text.
    pub fn effective_class_count(&self) -> Option<usize> {
        if self.class_count.is_some() {
            return self.class_count;
        }
        parse_class_count(&self.output_format)
    }
}

fn parse_class_count(text: &str) -> Option<usize> {
    let lowered = text.to_lowercase();
    for (i, _) in lowered.match_indices(|c: char| c.is_ascii_digit()) {
        // Start of a digit run only.
        if i > 0 && lowered.as_bytes()[i - 1].is_ascii_digit() {
            continue;
        }
        let digits: String = lowered[i..].chars().take_while(char::is_ascii_digit).collect();
        let rest = &lowered[i + digits.len()..];
        let rest = rest.trim_start_matches([' ', '-']);
        if rest.starts_with("dim") || rest.starts_with("class") {
            if let Ok(n) = digits.parse() {
                return Some(n);
            }
        }
    }
    None
}

/// Locations of the environment files every agent reads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvPaths {
    pub environment_dir: PathBuf,
    pub datasets_registry: PathBuf,
    pub models_registry: PathBuf,
    pub tasks_registry: PathBuf,
}

impl EnvPaths {
    /// Conventional layout under one environment directory.
    pub fn under(dir: &std::path::Path) -> EnvPaths {
        EnvPaths {
            environment_dir: dir.to_path_buf(),
            datasets_registry: dir.join("available_datasets.json"),
            models_registry: dir.join("available_models.json"),
            tasks_registry: dir.join("available_tasks.json"),
        }
    }
}

/// Ground-truth scoring bundles for one target service.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoringPaths {
    pub members: PathBuf,
    pub nonmembers: PathBuf,
    pub eval: PathBuf,
    pub probes: PathBuf,
}

impl ScoringPaths {
    pub fn under(dir: &std::path::Path) -> ScoringPaths {
        ScoringPaths {
            members: dir.join("members.bin"),
            nonmembers: dir.join("nonmembers.bin"),
            eval: dir.join("eval.bin"),
            probes: dir.join("probes.bin"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStateKind {
    Pending,
    Running,
    Completed,
    Failed,
}

impl AgentStateKind {
    pub fn is_terminal(&self) -> bool {
        matches!(self, AgentStateKind::Completed | AgentStateKind::Failed)
    }

    pub fn name(&self) -> &'static str {
        match self {
            AgentStateKind::Pending => "pending",
            AgentStateKind::Running => "running",
            AgentStateKind::Completed => "completed",
            AgentStateKind::Failed => "failed",
        }
    }

    fn rank(&self) -> u8 {
        match self {
            AgentStateKind::Pending => 0,
            AgentStateKind::Running => 1,
            AgentStateKind::Completed | AgentStateKind::Failed => 2,
        }
    }
}

/// One attack agent's lifecycle snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentStatus {
    pub state: AgentStateKind,
    pub steps: usize,
    pub detail: String,
}

impl AgentStatus {
    pub fn pending() -> Self {
        AgentStatus {
            state: AgentStateKind::Pending,
            steps: 0,
            detail: String::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_count_parses_common_phrasings() {
        assert_eq!(parse_class_count("8-dim posteriors"), Some(8));
        assert_eq!(parse_class_count("a vector of 5 classes"), Some(5));
        assert_eq!(parse_class_count("4-class posterior row"), Some(4));
        assert_eq!(parse_class_count("softmax scores"), None);
        assert_eq!(parse_class_count("float64 posteriors"), None);
    }

    #[test]
    fn service_info_validation() {
        let mut info = TargetServiceInfo {
            task_description: "t".into(),
            predict_url: "http://x/predict".into(),
            embedding_url: None,
            input_format: "rows".into(),
            output_format: "8-dim posteriors".into(),
            class_count: None,
            sensitive_attribute: None,
            query_budget: None,
        };
        info.validate().unwrap();
        assert_eq!(info.effective_class_count(), Some(8));
        info.class_count = Some(1);
        assert!(info.validate().is_err());
        info.class_count = None;
        info.predict_url = " ".into();
        assert!(info.validate().is_err());
    }

    #[test]
    fn status_rank_is_monotone() {
        assert!(AgentStateKind::Pending.rank() < AgentStateKind::Running.rank());
        assert!(AgentStateKind::Running.rank() < AgentStateKind::Completed.rank());
        assert!(!AgentStateKind::Running.is_terminal());
        assert!(AgentStateKind::Failed.is_terminal());
    }
}
