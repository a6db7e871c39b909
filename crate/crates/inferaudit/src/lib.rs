//! Autonomous black-box risk assessment of ML prediction services.
//!
//! `inferaudit` probes a deployed classification service through its public
//! endpoints only and estimates how much it leaks: whether training-set
//! membership can be told apart, whether the model's functionality can be
//! stolen, whether inputs can be reconstructed from posteriors, and whether
//! sensitive attributes leak through embeddings. The whole assessment is
//! driven by a controller/worker agent loop so that a non-expert can point
//! it at a service and read the resulting report.
//!
//! The crate is organised by subsystem:
//!
//! - [`nn`] — small dense-network training kernel (f64, deterministic).
//! - [`data`] — synthetic dataset generation, splits, and the registry
//!   files the agents read.
//! - [`service`] — the audited target service: training, HTTP endpoints,
//!   and the query-budget ledger.
//! - [`attack`] — the four attack pipelines plus their task manifests.
//! - [`agent`] — controller/attack-agent loop, memory, plan parsing, and
//!   planner backends (mock, faulty, remote).
//! - [`trace`] — append-only step logs shared by the runtime and analysis.
//! - [`report`] — report rendering, cost accounting, and the trace-based
//!   error analyzer.
//! - [`cli`] — operator entry points.

pub mod agent;
pub mod attack;
pub mod cli;
pub mod data;
pub mod nn;
pub mod report;
pub mod rng;
pub mod service;
pub mod trace;

pub use rng::Rng;

/// Canonical textual form of an f64, shared by observations, reports, and
/// the fabricated-value checks so a quoted value always matches its first
/// appearance character for character.
pub(crate) fn agent_json_number(v: f64) -> String {
    serde_json::to_string(&v).unwrap_or_else(|_| v.to_string())
}
