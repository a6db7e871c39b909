//! Planner response format and parsing.
//!
//! Every planner reply must carry five sections, in order:
//!
//! ```text
//! Reflection: <what the last observation means>
//! Plan: <what to do next and why>
//! Important Information:
//! - key: value
//! Action: <name from the action space>
//! Action Input: {"param": value, ...}
//! ```
//!
//! Planner output is untrusted text; the parser never panics and reports
//! which section is missing or malformed so the step can be re-prompted.

use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanParseError {
    #[error("missing section: {0}")]
    MissingSection(&'static str),
    #[error("Action Input is not a JSON object: {0}")]
    BadActionInput(String),
    #[error("Important Information entry is not `- key: value`: {0}")]
    BadImportantInformation(String),
}

/// One parsed planner step.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionPlan {
    pub reflection: String,
    pub plan: String,
    /// Newly recorded facts, in order.
    pub important_information: Vec<(String, String)>,
    pub action: String,
    pub action_input: Map<String, Value>,
}

const SECTIONS: [&str; 5] = [
    "Reflection:",
    "Plan:",
    "Important Information:",
    "Action:",
    "Action Input:",
];

/// Splits the raw text at the section headers, which must appear in order
/// at the start of a line.
fn split_sections(raw: &str) -> Result<Vec<String>, PlanParseError> {
    let mut positions = Vec::with_capacity(SECTIONS.len());
    let mut search_from = 0;
    for (i, header) in SECTIONS.iter().enumerate() {
        let found = raw[search_from..]
            .match_indices(header)
            .map(|(off, _)| search_from + off)
            .find(|&abs| abs == 0 || raw.as_bytes()[abs - 1] == b'\n');
        match found {
            Some(abs) => {
                positions.push(abs);
                search_from = abs + header.len();
            }
            None => {
                return Err(PlanParseError::MissingSection(
                    SECTIONS[i].trim_end_matches(':'),
                ))
            }
        }
    }
    let mut parts = Vec::with_capacity(SECTIONS.len());
    for (i, &start) in positions.iter().enumerate() {
        let body_start = start + SECTIONS[i].len();
        let body_end = positions.get(i + 1).copied().unwrap_or(raw.len());
        parts.push(raw[body_start..body_end].trim().to_string());
    }
    Ok(parts)
}

fn parse_important_information(
    body: &str,
) -> Result<Vec<(String, String)>, PlanParseError> {
    let mut entries = Vec::new();
    for line in body.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some(item) = line.strip_prefix("- ") else {
            return Err(PlanParseError::BadImportantInformation(line.to_string()));
        };
        if item.trim() == "none" {
            continue;
        }
        let Some((key, value)) = item.split_once(':') else {
            return Err(PlanParseError::BadImportantInformation(line.to_string()));
        };
        entries.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(entries)
}

/// Parses a raw planner reply into an [`ActionPlan`].
pub fn parse_plan(raw: &str) -> Result<ActionPlan, PlanParseError> {
    let parts = split_sections(raw)?;
    let important_information = parse_important_information(&parts[2])?;
    let action = parts[3].lines().next().unwrap_or("").trim().to_string();
    if action.is_empty() {
        return Err(PlanParseError::MissingSection("Action"));
    }
    let input_text = parts[4].trim();
    let action_input = if input_text.is_empty() {
        Map::new()
    } else {
        match serde_json::from_str::<Value>(input_text) {
            Ok(Value::Object(map)) => map,
            Ok(other) => {
                return Err(PlanParseError::BadActionInput(format!(
                    "expected an object, got {other}"
                )))
            }
            Err(e) => return Err(PlanParseError::BadActionInput(e.to_string())),
        }
    };
    Ok(ActionPlan {
        reflection: parts[0].clone(),
        plan: parts[1].clone(),
        important_information,
        action,
        action_input,
    })
}

/// Renders a plan back into the response format (used by the mock planner
/// and by tests that need well-formed replies).
pub fn render_plan(plan: &ActionPlan) -> String {
    let mut out = String::new();
    out.push_str("Reflection: ");
    out.push_str(&plan.reflection);
    out.push_str("\nPlan: ");
    out.push_str(&plan.plan);
    out.push_str("\nImportant Information:\n");
    if plan.important_information.is_empty() {
        out.push_str("- none\n");
    } else {
        for (k, v) in &plan.important_information {
            out.push_str(&format!("- {k}: {v}\n"));
        }
    }
    out.push_str("Action: ");
    out.push_str(&plan.action);
    out.push_str("\nAction Input: ");
    out.push_str(
        &serde_json::to_string(&Value::Object(plan.action_input.clone()))
            .expect("serializing a json map cannot fail"),
    );
    out.push('\n');
    out
}

/// Instructions appended to every planning prompt.
pub const RESPONSE_FORMAT_GUIDE: &str = "\
Respond with exactly these sections, in this order:
Reflection: what the latest observation tells you.
Plan: the immediate next step and why.
Important Information:
- key: value lines recording verified facts (paths, names, parameter values) from observations; `- none` if nothing new.
Action: one action name from the action space, exactly as listed.
Action Input: a single JSON object with the action's inputs. Every value must come verbatim from the initial instruction, an observation, or recorded Important Information.";
