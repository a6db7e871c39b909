//! Task manifests: what each attack task is for and which parameters it
//! takes, including the enumerable candidate values that define the size
//! of the configuration search space.

use super::AttackError;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fs;
use std::path::Path;

pub const TASKS_FORMAT_VERSION: u32 = 1;

pub const TASK_MIA_METRIC: &str = "membership_inference_metric";
pub const TASK_MIA_NEURAL: &str = "membership_inference_neural";
pub const TASK_STEALING: &str = "model_stealing";
pub const TASK_RECONSTRUCTION: &str = "data_reconstruction";
pub const TASK_ATTRIBUTE: &str = "attribute_inference";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub semantic_type: String,
    pub purpose: String,
    pub required: bool,
    /// Enumerable candidate values; the count feeds the search-space size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub name: String,
    pub purpose: String,
    pub parameters: Vec<ParamSpec>,
}

impl TaskManifest {
    /// Candidate-value counts of the enumerable parameters, in order.
    pub fn candidate_counts(&self) -> Vec<u64> {
        self.parameters
            .iter()
            .filter_map(|p| p.candidates.as_ref().map(|c| c.len() as u64))
            .collect()
    }

    fn validate(&self) -> Result<(), AttackError> {
        let mut names: Vec<&str> = self.parameters.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.parameters.len() {
            return Err(AttackError::InvalidParameter {
                name: self.name.clone(),
                message: "duplicate parameter names in manifest".into(),
            });
        }
        Ok(())
    }
}

fn p(name: &str, semantic_type: &str, purpose: &str, required: bool) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        semantic_type: semantic_type.into(),
        purpose: purpose.into(),
        required,
        candidates: None,
    }
}

fn p_cand(name: &str, semantic_type: &str, purpose: &str, candidates: Vec<Value>) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        semantic_type: semantic_type.into(),
        purpose: purpose.into(),
        required: true,
        candidates: Some(candidates),
    }
}

fn training_params() -> Vec<ParamSpec> {
    vec![
        p_cand(
            "learning_rate",
            "positive real",
            "step size for shadow/attack model training",
            vec![0.01.into(), 0.001.into(), 0.0001.into()],
        ),
        p_cand(
            "batch_size",
            "positive integer",
            "mini-batch size for training",
            vec![32.into(), 64.into(), 128.into()],
        ),
        p_cand(
            "epochs",
            "non-negative integer",
            "training epochs; more epochs increase fit and overfit",
            vec![50.into(), 150.into(), 300.into()],
        ),
        p_cand(
            "dataset_size",
            "positive integer",
            "how many samples to draw from the chosen dataset",
            vec![400.into(), 800.into(), 1600.into()],
        ),
        p(
            "seed",
            "integer",
            "seed controlling every random choice in the run",
            true,
        ),
    ]
}

/// The built-in task manifests.
pub fn default_manifests() -> Vec<TaskManifest> {
    let mut tasks = Vec::new();

    let mut mia_params = vec![
        p(
            "shadow_dataset_path",
            "path",
            "dataset used to train the shadow model; must be disjoint from the target's training data",
            true,
        ),
        p(
            "task_attributes",
            "attribute name(s)",
            "when set, combine these comma-separated attributes into the shadow task label so its class count matches the target",
            false,
        ),
        p(
            "shadow_model",
            "model name",
            "registry architecture for the shadow model",
            true,
        ),
        p(
            "members_path",
            "path",
            "scoring set of known training members (ground truth, balanced with nonmembers)",
            true,
        ),
        p(
            "nonmembers_path",
            "path",
            "scoring set of known nonmembers (ground truth, balanced with members)",
            true,
        ),
    ];
    mia_params.extend(training_params());
    tasks.push(TaskManifest {
        name: TASK_MIA_METRIC.into(),
        purpose: "Membership inference with per-class thresholds over correctness, confidence, \
                  entropy, and modified-entropy scores fit on shadow data."
            .into(),
        parameters: mia_params.clone(),
    });
    tasks.push(TaskManifest {
        name: TASK_MIA_NEURAL.into(),
        purpose: "Membership inference with a small classifier over sorted shadow posteriors."
            .into(),
        parameters: mia_params,
    });

    let mut stealing_params = vec![
        p(
            "shadow_dataset_path",
            "path",
            "pool of candidate query inputs for labeling by the target",
            true,
        ),
        p(
            "shadow_model",
            "model name",
            "registry architecture for the stolen surrogate",
            true,
        ),
        p(
            "eval_path",
            "path",
            "labeled evaluation set for surrogate accuracy and agreement",
            true,
        ),
        ParamSpec {
            name: "selection_strategy".into(),
            semantic_type: "enum".into(),
            purpose: "how query samples are chosen from the pool when it exceeds dataset_size"
                .into(),
            required: true,
            candidates: Some(vec!["random".into(), "importance".into()]),
        },
        p(
            "query_budget",
            "positive integer",
            "known service query limit, when the target advertises one",
            false,
        ),
    ];
    stealing_params.extend(training_params());
    tasks.push(TaskManifest {
        name: TASK_STEALING.into(),
        purpose: "Trains a surrogate on target posteriors as pseudo-labels to replicate the \
                  service's functionality."
            .into(),
        parameters: stealing_params,
    });

    let mut recon_params = vec![
        p(
            "aux_dataset_path",
            "path",
            "auxiliary inputs from a similar distribution, queried to train the inversion model",
            true,
        ),
        p(
            "probes_path",
            "path",
            "held-out target training inputs, used only to score reconstruction error",
            true,
        ),
    ];
    recon_params.extend(training_params());
    tasks.push(TaskManifest {
        name: TASK_RECONSTRUCTION.into(),
        purpose: "Trains an inversion model mapping service posteriors back to inputs and scores \
                  reconstruction MSE against held-out training inputs."
            .into(),
        parameters: recon_params,
    });

    let mut attr_params = vec![
        p(
            "shadow_dataset_path",
            "path",
            "attribute-annotated dataset queried for embeddings to train the attack model",
            true,
        ),
        p(
            "attribute",
            "attribute name(s)",
            "sensitive attribute to infer; comma-separated names are combined into one label",
            true,
        ),
        p(
            "eval_path",
            "path",
            "attribute-annotated evaluation set for attack accuracy",
            true,
        ),
    ];
    attr_params.extend(training_params());
    tasks.push(TaskManifest {
        name: TASK_ATTRIBUTE.into(),
        purpose: "Trains a two-layer classifier from service embeddings to a sensitive attribute \
                  unrelated to the service task."
            .into(),
        parameters: attr_params,
    });

    tasks
}

/// Looks up a built-in manifest. Stable across calls.
pub fn task_manifest(name: &str) -> Option<TaskManifest> {
    default_manifests().into_iter().find(|t| t.name == name)
}

#[derive(Serialize, Deserialize)]
struct TaskRegistryFile {
    format_version: u32,
    tasks: Vec<TaskManifest>,
}

pub fn save_task_registry(path: &Path, tasks: &[TaskManifest]) -> Result<(), AttackError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let file = TaskRegistryFile {
        format_version: TASKS_FORMAT_VERSION,
        tasks: tasks.to_vec(),
    };
    fs::write(path, serde_json::to_string_pretty(&file).expect("serialize"))?;
    Ok(())
}

pub fn load_task_registry(path: &Path) -> Result<Vec<TaskManifest>, AttackError> {
    let text = fs::read_to_string(path)?;
    let file: TaskRegistryFile = serde_json::from_str(&text).map_err(crate::data::DataError::from)?;
    if file.format_version != TASKS_FORMAT_VERSION {
        return Err(AttackError::InvalidParameter {
            name: "format_version".into(),
            message: format!("unsupported tasks format_version {}", file.format_version),
        });
    }
    for task in &file.tasks {
        task.validate()?;
    }
    Ok(file.tasks)
}
