//! Agent memory: the immutable initial instruction, a sliding window of
//! the last three (plan, observation) pairs, and the cumulative Important
//! Information ledger.

use crate::trace::IiEntry;
use serde_json::{Map, Value};
use std::collections::VecDeque;

pub const MEMORY_WINDOW: usize = 3;

/// One remembered step.
#[derive(Debug, Clone)]
pub struct StepSummary {
    pub step: usize,
    pub plan_text: String,
    pub action: String,
    pub action_input: Map<String, Value>,
    /// Truncated observation as shown to the planner.
    pub observation: String,
}

#[derive(Debug, Clone)]
pub struct Memory {
    initial_instruction: String,
    window: VecDeque<StepSummary>,
    important: Vec<IiEntry>,
}

impl Memory {
    pub fn new(initial_instruction: String) -> Self {
        Memory {
            initial_instruction,
            window: VecDeque::with_capacity(MEMORY_WINDOW + 1),
            important: Vec::new(),
        }
    }

    pub fn initial_instruction(&self) -> &str {
        &self.initial_instruction
    }

    pub fn window(&self) -> impl Iterator<Item = &StepSummary> {
        self.window.iter()
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn important_information(&self) -> &[IiEntry] {
        &self.important
    }

    /// Records a step: merges its Important Information entries (a repeated
    /// key updates the value in place, keeping its original position) and
    /// advances the window, dropping anything older than the last three.
    pub fn advance(&mut self, summary: StepSummary, new_entries: &[(String, String)]) {
        for (key, value) in new_entries {
            match self.important.iter_mut().find(|e| &e.key == key) {
                Some(existing) => {
                    existing.value = value.clone();
                    existing.step = summary.step;
                }
                None => self.important.push(IiEntry {
                    key: key.clone(),
                    value: value.clone(),
                    step: summary.step,
                }),
            }
        }
        self.window.push_back(summary);
        while self.window.len() > MEMORY_WINDOW {
            self.window.pop_front();
        }
    }

    /// Renders the planning prompt: role-free body holding the initial
    /// instruction, the cumulative ledger, and the last-three window.
    pub fn render_prompt(&self, step: usize, max_steps: usize) -> String {
        let mut out = String::new();
        out.push_str("=== INITIAL INSTRUCTION ===\n");
        out.push_str(&self.initial_instruction);
        out.push_str("\n\n=== IMPORTANT INFORMATION (cumulative) ===\n");
        if self.important.is_empty() {
            out.push_str("(none recorded yet)\n");
        } else {
            for entry in &self.important {
                out.push_str(&format!(
                    "- {}: {} (step {})\n",
                    entry.key, entry.value, entry.step
                ));
            }
        }
        out.push_str(&format!(
            "\n=== RECENT STEPS (last {MEMORY_WINDOW}) ===\n"
        ));
        if self.window.is_empty() {
            out.push_str("(no steps taken yet)\n");
        } else {
            for s in &self.window {
                out.push_str(&format!("--- step {} ---\n", s.step));
                out.push_str(&format!("Plan: {}\n", s.plan_text));
                out.push_str(&format!("Action: {}\n", s.action));
                out.push_str(&format!(
                    "Action Input: {}\n",
                    serde_json::to_string(&Value::Object(s.action_input.clone()))
                        .expect("serializing a json map cannot fail")
                ));
                out.push_str(&format!("Observation: {}\n", s.observation));
            }
        }
        out.push_str(&format!("\nCurrent step: {step} of {max_steps}\n"));
        out.push_str("\n=== RESPONSE FORMAT ===\n");
        out.push_str(super::plan::RESPONSE_FORMAT_GUIDE);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(step: usize) -> StepSummary {
        StepSummary {
            step,
            plan_text: format!("plan {step}"),
            action: "List Files".into(),
            action_input: Map::new(),
            observation: format!("obs {step}"),
        }
    }

    #[test]
    fn window_holds_exactly_the_last_three() {
        let mut memory = Memory::new("m0".into());
        for step in 1..=4 {
            memory.advance(summary(step), &[]);
        }
        let steps: Vec<usize> = memory.window().map(|s| s.step).collect();
        assert_eq!(steps, vec![2, 3, 4]);
    }

    #[test]
    fn important_information_accumulates_across_window_eviction() {
        let mut memory = Memory::new("m0".into());
        memory.advance(summary(1), &[("path".into(), "/a".into())]);
        for step in 2..=5 {
            memory.advance(summary(step), &[]);
        }
        assert_eq!(memory.important_information()[0].value, "/a");
        assert_eq!(memory.window_len(), 3);
    }

    #[test]
    fn repeated_keys_update_in_place() {
        let mut memory = Memory::new("m0".into());
        memory.advance(summary(1), &[("k".into(), "v1".into())]);
        memory.advance(
            summary(2),
            &[("j".into(), "x".into()), ("k".into(), "v2".into())],
        );
        let entries = memory.important_information();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].key, "k");
        assert_eq!(entries[0].value, "v2");
        assert_eq!(entries[0].step, 2);
    }

    #[test]
    fn prompt_contains_instruction_window_and_ledger() {
        let mut memory = Memory::new("the instruction body".into());
        memory.advance(summary(1), &[("k".into(), "v".into())]);
        let prompt = memory.render_prompt(2, 50);
        assert!(prompt.contains("the instruction body"));
        assert!(prompt.contains("- k: v (step 1)"));
        assert!(prompt.contains("--- step 1 ---"));
        assert!(prompt.contains("Current step: 2 of 50"));
    }
}
