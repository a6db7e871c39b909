//! The four inference-attack pipelines and their task manifests.
//!
//! Each pipeline is a parameterized task: the runtime dispatches
//! [`execute_task`] with a parameter mapping that must satisfy the task's
//! manifest. Pipelines only touch the target through [`ServiceApi`] — they
//! are black-box attacks — and they account every input row they send.

mod attribute;
mod manifest;
mod mia;
mod reconstruction;
mod stealing;

pub use attribute::run_attribute_inference;
pub use manifest::{
    default_manifests, load_task_registry, save_task_registry, task_manifest, ParamSpec,
    TaskManifest, TASKS_FORMAT_VERSION,
};
pub use mia::{run_metric_mia, run_neural_mia};
pub use reconstruction::run_data_reconstruction;
pub use stealing::{importance_select, run_model_stealing, SelectionStrategy};

use crate::data::{read_dataset, DataError, Dataset, ModelRecord};
use crate::nn::{LossKind, Matrix, NnError, TrainConfig};
use crate::service::{ClientError, ServiceApi};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("unknown task: {0}")]
    UnknownTask(String),
    #[error("missing required parameter: {0}")]
    MissingParameter(String),
    #[error("invalid parameter {name}: {message}")]
    InvalidParameter { name: String, message: String },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("attack infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Artifact(#[from] crate::nn::ArtifactError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    MembershipInference,
    ModelStealing,
    DataReconstruction,
    AttributeInference,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [
        AttackKind::MembershipInference,
        AttackKind::ModelStealing,
        AttackKind::DataReconstruction,
        AttackKind::AttributeInference,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::MembershipInference => "membership_inference",
            AttackKind::ModelStealing => "model_stealing",
            AttackKind::DataReconstruction => "data_reconstruction",
            AttackKind::AttributeInference => "attribute_inference",
        }
    }

    pub fn display_name(&self) -> &'static str {
        match self {
            AttackKind::MembershipInference => "membership inference",
            AttackKind::ModelStealing => "model stealing",
            AttackKind::DataReconstruction => "data reconstruction",
            AttackKind::AttributeInference => "attribute inference",
        }
    }

    pub fn parse(name: &str) -> Option<AttackKind> {
        let normalized = name.trim().to_lowercase().replace([' ', '-'], "_");
        let normalized = normalized
            .strip_suffix("_attack")
            .unwrap_or(&normalized)
            .to_string();
        AttackKind::ALL.into_iter().find(|k| k.name() == normalized)
    }
}

/// Outcome of one pipeline run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackResult {
    pub attack: AttackKind,
    pub task: String,
    pub metric_name: String,
    pub metric_value: f64,
    pub sub_results: Vec<(String, f64)>,
    pub artifact_paths: Vec<PathBuf>,
    /// Input rows this run sent to the service.
    pub query_count: u64,
    /// Set when the service budget ran out mid-attack; the metrics reflect
    /// whatever was obtained before the refusal.
    pub partial: bool,
    pub notes: Vec<String>,
}

/// Environment the pipelines resolve names and write artifacts through.
#[derive(Debug, Clone)]
pub struct AttackEnv {
    pub models_registry: PathBuf,
    pub workspace: PathBuf,
}

impl AttackEnv {
    pub fn resolve_model(&self, name: &str) -> Result<ModelRecord, AttackError> {
        let records = crate::data::load_model_registry(&self.models_registry)?;
        records
            .into_iter()
            .find(|r| r.name == name)
            .ok_or_else(|| AttackError::InvalidParameter {
                name: "shadow_model".into(),
                message: format!("model {name} is not in the registry"),
            })
    }
}

/// Service wrapper that counts admitted input rows, so a pipeline's
/// reported query count can be checked against the service ledger.
pub struct CountingService<'a> {
    inner: &'a dyn ServiceApi,
    rows: AtomicU64,
}

impl<'a> CountingService<'a> {
    pub fn new(inner: &'a dyn ServiceApi) -> Self {
        CountingService {
            inner,
            rows: AtomicU64::new(0),
        }
    }

    pub fn count(&self) -> u64 {
        self.rows.load(Ordering::SeqCst)
    }
}

impl ServiceApi for CountingService<'_> {
    fn predict(&self, inputs: &Matrix) -> Result<Matrix, ClientError> {
        let out = self.inner.predict(inputs)?;
        self.rows.fetch_add(inputs.rows() as u64, Ordering::SeqCst);
        Ok(out)
    }

    fn embedding(&self, inputs: &Matrix) -> Result<Matrix, ClientError> {
        let out = self.inner.embedding(inputs)?;
        self.rows.fetch_add(inputs.rows() as u64, Ordering::SeqCst);
        Ok(out)
    }
}

/// Rows per request when walking a large input set.
pub(crate) const QUERY_CHUNK: usize = 256;

/// What a chunked query loop produced before any budget refusal.
pub(crate) struct Queried {
    pub rows: Matrix,
    pub budget_exhausted: bool,
}

pub(crate) fn query_service_chunked(
    service: &dyn ServiceApi,
    inputs: &Matrix,
    embedding: bool,
) -> Result<Queried, AttackError> {
    let mut collected: Vec<Vec<f64>> = Vec::with_capacity(inputs.rows());
    let all: Vec<usize> = (0..inputs.rows()).collect();
    for block in all.chunks(QUERY_CHUNK) {
        let sub = inputs.select_rows(block);
        let result = if embedding {
            service.embedding(&sub)
        } else {
            service.predict(&sub)
        };
        match result {
            Ok(m) => collected.extend(m.iter_rows().map(|r| r.to_vec())),
            Err(ClientError::BudgetExhausted { .. }) => {
                return Ok(Queried {
                    rows: Matrix::from_rows(&collected),
                    budget_exhausted: true,
                })
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Queried {
        rows: Matrix::from_rows(&collected),
        budget_exhausted: false,
    })
}

/// Shared hyperparameters extracted from a task's parameter mapping.
#[derive(Debug, Clone)]
pub struct CommonParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dataset_size: usize,
    pub seed: u64,
}

impl CommonParams {
    pub fn train_config(&self, loss_kind: LossKind, n: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size.min(n.max(1)),
            epochs: self.epochs,
            loss_kind,
            seed: self.seed,
        }
    }
}

pub(crate) struct Params<'a> {
    map: &'a Map<String, Value>,
}

impl<'a> Params<'a> {
    pub fn new(map: &'a Map<String, Value>) -> Self {
        Params { map }
    }

    pub fn string(&self, name: &str) -> Result<String, AttackError> {
        match self.map.get(name) {
            None => Err(AttackError::MissingParameter(name.into())),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(other) => Err(AttackError::InvalidParameter {
                name: name.into(),
                message: format!("expected a string, got {other}"),
            }),
        }
    }

    pub fn opt_string(&self, name: &str) -> Result<Option<String>, AttackError> {
        match self.map.get(name) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(AttackError::InvalidParameter {
                name: name.into(),
                message: format!("expected a string, got {other}"),
            }),
        }
    }

    pub fn f64(&self, name: &str) -> Result<f64, AttackError> {
        match self.map.get(name) {
            None => Err(AttackError::MissingParameter(name.into())),
            Some(v) => v.as_f64().ok_or_else(|| AttackError::InvalidParameter {
                name: name.into(),
                message: format!("expected a number, got {v}"),
            }),
        }
    }

    pub fn usize(&self, name: &str) -> Result<usize, AttackError> {
        match self.map.get(name) {
            None => Err(AttackError::MissingParameter(name.into())),
            Some(v) => v
                .as_u64()
                .map(|u| u as usize)
                .ok_or_else(|| AttackError::InvalidParameter {
                    name: name.into(),
                    message: format!("expected a non-negative integer, got {v}"),
                }),
        }
    }

    pub fn opt_u64(&self, name: &str) -> Result<Option<u64>, AttackError> {
        match self.map.get(name) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(Some)
                .ok_or_else(|| AttackError::InvalidParameter {
                    name: name.into(),
                    message: format!("expected a non-negative integer, got {v}"),
                }),
        }
    }

    pub fn common(&self) -> Result<CommonParams, AttackError> {
        let learning_rate = self.f64("learning_rate")?;
        if !(learning_rate > 0.0) {
            return Err(AttackError::InvalidParameter {
                name: "learning_rate".into(),
                message: "must be > 0".into(),
            });
        }
        Ok(CommonParams {
            learning_rate,
            batch_size: self.usize("batch_size")?,
            epochs: self.usize("epochs")?,
            dataset_size: self.usize("dataset_size")?,
            seed: self.f64("seed")? as u64,
        })
    }
}

/// Loads a dataset and takes a seeded subset of `dataset_size` rows.
pub(crate) fn load_sized_subset(
    path: &str,
    dataset_size: usize,
    seed: u64,
    note: &str,
) -> Result<Dataset, AttackError> {
    let full = read_dataset(Path::new(path))?;
    if full.is_empty() {
        return Err(AttackError::Precondition(format!("dataset {path} is empty")));
    }
    if dataset_size > full.len() {
        return Err(AttackError::InvalidParameter {
            name: "dataset_size".into(),
            message: format!("{dataset_size} exceeds the {} samples in {path}", full.len()),
        });
    }
    let indices = crate::rng::Rng::seed_from(seed).sample_indices(full.len(), dataset_size);
    Ok(full.select(&indices, note))
}

/// Guards the disjointness invariant: data a pipeline trains on must not
/// descend from the target's training split.
pub(crate) fn assert_not_target_train(ds: &Dataset, context: &str) -> Result<(), AttackError> {
    if ds
        .provenance
        .lineage
        .iter()
        .any(|l| l == crate::service::TARGET_TRAIN_SPLIT)
    {
        return Err(AttackError::Precondition(format!(
            "{context} descends from the target training split ({:?})",
            ds.provenance.lineage
        )));
    }
    Ok(())
}

/// Validates a parameter mapping against a task manifest and dispatches to
/// the pipeline. Observation-friendly errors name the offending parameter.
pub fn execute_task(
    env: &AttackEnv,
    service: &dyn ServiceApi,
    task: &str,
    params: &Map<String, Value>,
) -> Result<AttackResult, AttackError> {
    let manifest = task_manifest(task).ok_or_else(|| AttackError::UnknownTask(task.into()))?;
    for spec in &manifest.parameters {
        if spec.required && !params.contains_key(&spec.name) {
            return Err(AttackError::MissingParameter(spec.name.clone()));
        }
    }
    for key in params.keys() {
        if !manifest.parameters.iter().any(|p| &p.name == key) {
            return Err(AttackError::InvalidParameter {
                name: key.clone(),
                message: format!("not a parameter of task {task}"),
            });
        }
    }
    let counting = CountingService::new(service);
    let mut result = match task {
        manifest::TASK_MIA_METRIC => mia::run_metric_mia_task(env, &counting, params)?,
        manifest::TASK_MIA_NEURAL => mia::run_neural_mia_task(env, &counting, params)?,
        manifest::TASK_STEALING => stealing::run_stealing_task(env, &counting, params)?,
        manifest::TASK_RECONSTRUCTION => {
            reconstruction::run_reconstruction_task(env, &counting, params)?
        }
        manifest::TASK_ATTRIBUTE => attribute::run_attribute_task(env, &counting, params)?,
        _ => return Err(AttackError::UnknownTask(task.into())),
    };
    result.query_count = counting.count();
    result.task = task.to_string();
    Ok(result)
}
