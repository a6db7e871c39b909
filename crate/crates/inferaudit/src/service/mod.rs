//! The audited target service.
//!
//! A small web service that loads a trained model artifact and exposes it
//! behind black-box JSON endpoints: `POST /predict` always, and
//! `POST /embedding` when configured. Nothing else about the model leaks
//! through the wire — no parameters, gradients, training data, or
//! architecture. An optional query budget counts scored input rows across
//! all endpoints and refuses anything beyond it.

mod client;
mod ledger;
mod server;
pub mod wire;

pub use client::{ChunkedOutcome, ClientError, LocalService, ServiceApi, ServiceClient};
pub use ledger::{BudgetRefusal, Endpoint, LedgerSnapshot, QueryLedger};
pub use server::{serve, ServiceHandle};

use crate::data::Dataset;
use crate::data::ModelRecord;
use crate::nn::{self, LossKind, Model, NnError, TrainConfig};
use serde::{Deserialize, Serialize};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("model artifact error: {0}")]
    Artifact(#[from] nn::ArtifactError),
    #[error("training error: {0}")]
    Train(#[from] NnError),
    #[error("partition lineage {0:?} is not from the target training split")]
    WrongLineage(Vec<String>),
    #[error("embedding endpoint requires a hidden layer")]
    NoHiddenLayer,
    #[error("failed to bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub artifact_path: PathBuf,
    #[serde(default)]
    pub expose_embedding: bool,
    #[serde(default)]
    pub query_budget: Option<u64>,
    /// Bind address; port 0 picks an ephemeral port.
    pub addr: SocketAddr,
}

/// Canonical split name that marks data as the target's training half.
pub const TARGET_TRAIN_SPLIT: &str = "target_train";

/// Summary returned by [`train_target`] alongside the written artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetTrainReport {
    pub artifact_path: PathBuf,
    pub train_accuracy: f64,
    pub epochs: usize,
    pub final_loss: f64,
}

/// Trains a target model on a `target_train` partition and writes the
/// artifact with its training lineage in the metadata.
pub fn train_target(
    partition: &Dataset,
    record: &ModelRecord,
    config: &TrainConfig,
    artifact_path: &Path,
) -> Result<TargetTrainReport, ServiceError> {
    if !partition
        .provenance
        .lineage
        .iter()
        .any(|l| l == TARGET_TRAIN_SPLIT)
    {
        return Err(ServiceError::WrongLineage(
            partition.provenance.lineage.clone(),
        ));
    }
    let mut layer_sizes = vec![partition.n_features()];
    layer_sizes.extend_from_slice(&record.hidden_sizes);
    layer_sizes.push(partition.n_classes);
    let model = nn::init_model(&layer_sizes, config.seed)?;
    let batch = nn::Batch {
        inputs: partition.inputs.clone(),
        targets: nn::Targets::Classes(partition.labels.clone()),
    };
    let (trained, history) = nn::train(model, &batch, config)?;
    let train_accuracy = nn::evaluate(&trained, &partition.inputs, &partition.labels)?;
    let meta = serde_json::json!({
        "source": partition.provenance.source,
        "lineage": partition.provenance.lineage,
        "model_record": record.name,
        "train_config": config,
        "train_accuracy": train_accuracy,
    });
    nn::write_model(artifact_path, &trained, &meta.to_string())?;
    Ok(TargetTrainReport {
        artifact_path: artifact_path.to_path_buf(),
        train_accuracy,
        epochs: config.epochs,
        final_loss: *history.last().unwrap(),
    })
}

/// Default training recipe for target models: cross-entropy, Adam,
/// learning rate 1e-3, batch size 64, 300 epochs.
pub fn default_target_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 64,
        epochs: 300,
        loss_kind: LossKind::HardCe,
        seed,
    }
}

/// Loads an artifact and validates it can back the given config.
pub(crate) fn load_for_serving(config: &ServiceConfig) -> Result<Model, ServiceError> {
    let (model, _meta) = nn::read_model(&config.artifact_path)?;
    if config.expose_embedding && model.layer_sizes().len() < 3 {
        return Err(ServiceError::NoHiddenLayer);
    }
    Ok(model)
}

/// Writes the auditor-side scoring bundle for one target: balanced
/// member/nonmember sets, the labeled evaluation set, and the
/// reconstruction probes (target training inputs, scoring only).
pub fn write_scoring_bundle(
    target_train: &Dataset,
    target_eval: &Dataset,
    dir: &Path,
    seed: u64,
    cap: usize,
) -> Result<crate::agent::ScoringPaths, ServiceError> {
    std::fs::create_dir_all(dir)?;
    let n = cap.min(target_train.len()).min(target_eval.len());
    let mut rng = crate::rng::Rng::seed_from(seed).derive(11);
    let member_idx = rng.sample_indices(target_train.len(), n);
    let nonmember_idx = rng.sample_indices(target_eval.len(), n);
    let members = target_train.select(&member_idx, "scoring_members");
    let nonmembers = target_eval.select(&nonmember_idx, "scoring_nonmembers");
    let probes_idx = rng.sample_indices(target_train.len(), 200.min(target_train.len()));
    let probes = target_train.select(&probes_idx, "scoring_probes");
    let paths = crate::agent::ScoringPaths::under(dir);
    crate::data::write_dataset(&paths.members, &members)?;
    crate::data::write_dataset(&paths.nonmembers, &nonmembers)?;
    crate::data::write_dataset(&paths.eval, target_eval)?;
    crate::data::write_dataset(&paths.probes, &probes)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_dataset, split_dataset, tests::small_spec};

    fn record() -> ModelRecord {
        ModelRecord {
            name: "medium".into(),
            hidden_sizes: vec![64, 32],
            capacity_rank: 2,
            note: String::new(),
            overfit_risk: false,
            extra: Default::default(),
        }
    }

    #[test]
    fn train_target_overfits_and_round_trips() {
        let mut spec = small_spec();
        spec.n_samples = 400;
        spec.noise_scale = 2.5;
        let root = generate_synthetic_dataset(&spec).unwrap();
        let parts = split_dataset(
            &root,
            &[(TARGET_TRAIN_SPLIT, 0.5), ("target_eval", 0.5)],
            1,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("target.bin");
        let report = train_target(&parts[0], &record(), &default_target_config(7), &path).unwrap();
        assert!(report.train_accuracy >= 0.99, "{}", report.train_accuracy);
        // The held-out half must score materially lower in this regime.
        let (model, meta) = nn::read_model(&path).unwrap();
        let eval_acc = nn::evaluate(&model, &parts[1].inputs, &parts[1].labels).unwrap();
        assert!(
            eval_acc <= report.train_accuracy - 0.15,
            "train {} vs eval {eval_acc}",
            report.train_accuracy
        );
        assert!(meta.contains("target_train"));
        // Reload evaluates identically.
        let again = nn::evaluate(&model, &parts[0].inputs, &parts[0].labels).unwrap();
        assert_eq!(again, report.train_accuracy);
    }

    #[test]
    fn early_stopped_target_shrinks_the_gap() {
        let mut spec = small_spec();
        spec.n_samples = 400;
        spec.noise_scale = 2.5;
        let root = generate_synthetic_dataset(&spec).unwrap();
        let parts = split_dataset(
            &root,
            &[(TARGET_TRAIN_SPLIT, 0.5), ("target_eval", 0.5)],
            1,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();

        let overfit_path = dir.path().join("overfit.bin");
        let overfit =
            train_target(&parts[0], &record(), &default_target_config(7), &overfit_path).unwrap();
        let (m_over, _) = nn::read_model(&overfit_path).unwrap();
        let gap_over = overfit.train_accuracy
            - nn::evaluate(&m_over, &parts[1].inputs, &parts[1].labels).unwrap();

        let mut early_cfg = default_target_config(7);
        early_cfg.epochs = 5;
        let early_path = dir.path().join("early.bin");
        let early = train_target(&parts[0], &record(), &early_cfg, &early_path).unwrap();
        let (m_early, _) = nn::read_model(&early_path).unwrap();
        let gap_early = early.train_accuracy
            - nn::evaluate(&m_early, &parts[1].inputs, &parts[1].labels).unwrap();

        assert!(
            gap_early < gap_over,
            "early gap {gap_early} vs overfit gap {gap_over}"
        );
    }

    #[test]
    fn train_target_rejects_foreign_lineage() {
        let root = generate_synthetic_dataset(&small_spec()).unwrap();
        let parts = split_dataset(&root, &[("assessment", 0.5), ("other", 0.5)], 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = train_target(
            &parts[0],
            &record(),
            &default_target_config(0),
            &dir.path().join("x.bin"),
        )
        .unwrap_err();
        assert!(matches!(err, ServiceError::WrongLineage(_)));
    }
}

