//! Append-only step traces.
//!
//! One line-delimited JSON record per event: a header carrying the agent's
//! initial instruction and action space, one record per step, and an end
//! record with the terminal status. Traces are both the runtime's audit log
//! and the input to completion-rate, cost, and error analysis.

use crate::attack::AttackKind;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported trace format version {0}")]
    Version(u32),
    #[error("malformed trace: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format_version: u32,
    pub run_id: String,
    pub agent_id: String,
    #[serde(default)]
    pub attack: Option<AttackKind>,
    pub initial_instruction: String,
    pub action_space: Vec<String>,
}

/// An Important Information entry: key, value, and the step that recorded it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IiEntry {
    pub key: String,
    pub value: String,
    pub step: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStep {
    pub agent_id: String,
    pub step: usize,
    pub t_start_ms: u64,
    pub t_end_ms: u64,
    pub reflection: String,
    pub plan: String,
    pub important_information: Vec<IiEntry>,
    pub action: String,
    pub action_input: Map<String, Value>,
    /// Truncated observation, as held in memory.
    pub observation_digest: String,
    /// Workspace-relative path of the archived full observation.
    pub observation_ref: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Machine-readable extras (validation flags, structured results).
    #[serde(default)]
    pub meta: Map<String, Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEnd {
    pub agent_id: String,
    pub status: String,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Header(TraceHeader),
    Step(Box<TraceStep>),
    End(TraceEnd),
}

/// A fully parsed per-agent trace.
#[derive(Debug, Clone)]
pub struct Trace {
    pub header: TraceHeader,
    pub steps: Vec<TraceStep>,
    pub end: Option<TraceEnd>,
}

impl Trace {
    pub fn status(&self) -> &str {
        self.end.as_ref().map_or("unknown", |e| e.status.as_str())
    }

    pub fn total_input_tokens(&self) -> u64 {
        self.steps.iter().map(|s| s.input_tokens).sum()
    }

    pub fn total_output_tokens(&self) -> u64 {
        self.steps.iter().map(|s| s.output_tokens).sum()
    }
}

pub struct TraceWriter {
    out: BufWriter<fs::File>,
    path: PathBuf,
}

impl TraceWriter {
    pub fn create(path: &Path, header: TraceHeader) -> Result<Self, TraceError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let file = fs::File::create(path)?;
        let mut writer = TraceWriter {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        };
        writer.append(&TraceRecord::Header(header))?;
        Ok(writer)
    }

    pub fn append(&mut self, record: &TraceRecord) -> Result<(), TraceError> {
        let line = serde_json::to_string(record)
            .map_err(|e| TraceError::Malformed(e.to_string()))?;
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Parses a trace from its line-delimited text. Treats the input as
/// untrusted: every line must parse, the first record must be a header
/// with a supported version, and steps must belong to the header's agent.
pub fn parse_trace(text: &str) -> Result<Trace, TraceError> {
    let mut header: Option<TraceHeader> = None;
    let mut steps = Vec::new();
    let mut end = None;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = serde_json::from_str(line).map_err(|e| TraceError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        match record {
            TraceRecord::Header(h) => {
                if header.is_some() {
                    return Err(TraceError::Malformed("duplicate header".into()));
                }
                if h.format_version != TRACE_FORMAT_VERSION {
                    return Err(TraceError::Version(h.format_version));
                }
                header = Some(h);
            }
            TraceRecord::Step(s) => {
                let h = header
                    .as_ref()
                    .ok_or_else(|| TraceError::Malformed("step before header".into()))?;
                if s.agent_id != h.agent_id {
                    return Err(TraceError::Malformed(format!(
                        "step for agent {} in trace of {}",
                        s.agent_id, h.agent_id
                    )));
                }
                steps.push(*s);
            }
            TraceRecord::End(e) => {
                if header.is_none() {
                    return Err(TraceError::Malformed("end before header".into()));
                }
                if end.is_some() {
                    return Err(TraceError::Malformed("duplicate end record".into()));
                }
                end = Some(e);
            }
        }
    }
    let header = header.ok_or_else(|| TraceError::Malformed("missing header".into()))?;
    Ok(Trace { header, steps, end })
}

pub fn read_trace(path: &Path) -> Result<Trace, TraceError> {
    let text = fs::read_to_string(path)?;
    parse_trace(&text)
}

/// Reads every `*.jsonl` trace in a directory, sorted by file name.
pub fn read_trace_dir(dir: &Path) -> Result<Vec<Trace>, TraceError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_trace(p)).collect()
}
