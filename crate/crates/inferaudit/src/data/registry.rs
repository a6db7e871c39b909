//! Registry files the agents read: available datasets and available models.
//!
//! These are plain JSON so that a record can be pasted into a planner
//! prompt verbatim. Unknown fields are preserved round-trip.

use super::DataError;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fs;
use std::path::Path;

pub const REGISTRY_FORMAT_VERSION: u32 = 1;

/// Hidden-layer sizes a model record may declare; keeps every registry
/// entry trainable on the host this runs on.
const MAX_HIDDEN_LAYERS: usize = 8;
const MAX_HIDDEN_WIDTH: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeInfo {
    pub name: String,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub name: String,
    pub num_classes: usize,
    pub input_size: usize,
    pub class_names: Vec<String>,
    /// Path to the dataset container, relative to the registry file.
    pub path: String,
    pub common_tasks: String,
    #[serde(default)]
    pub attributes: Vec<AttributeInfo>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub name: String,
    /// Hidden layer widths; input/output widths come from the dataset.
    pub hidden_sizes: Vec<usize>,
    /// Relative capacity rank within the registry (higher = more capacity).
    pub capacity_rank: u32,
    pub note: String,
    /// Marked when the tier is large enough to overfit small shadow sets.
    #[serde(default)]
    pub overfit_risk: bool,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct DatasetRegistryFile {
    format_version: u32,
    datasets: Vec<DatasetRecord>,
}

#[derive(Serialize, Deserialize)]
struct ModelRegistryFile {
    format_version: u32,
    models: Vec<ModelRecord>,
}

fn validate_dataset_record(record: &DatasetRecord, registry_dir: &Path) -> Result<(), DataError> {
    if record.name.is_empty() {
        return Err(DataError::Validation("dataset record with empty name".into()));
    }
    if record.num_classes < 2 {
        return Err(DataError::Validation(format!(
            "dataset {}: num_classes {} < 2",
            record.name, record.num_classes
        )));
    }
    if !record.class_names.is_empty() && record.class_names.len() != record.num_classes {
        return Err(DataError::Validation(format!(
            "dataset {}: {} class names for {} classes",
            record.name,
            record.class_names.len(),
            record.num_classes
        )));
    }
    for a in &record.attributes {
        if a.num_classes < 2 {
            return Err(DataError::Validation(format!(
                "dataset {}: attribute {} has {} classes",
                record.name, a.name, a.num_classes
            )));
        }
    }
    let resolved = registry_dir.join(&record.path);
    if !resolved.exists() {
        return Err(DataError::Validation(format!(
            "dataset {}: path {} does not resolve (looked at {})",
            record.name,
            record.path,
            resolved.display()
        )));
    }
    Ok(())
}

fn validate_model_record(record: &ModelRecord) -> Result<(), DataError> {
    if record.name.is_empty() {
        return Err(DataError::Validation("model record with empty name".into()));
    }
    if record.hidden_sizes.is_empty() {
        return Err(DataError::Validation(format!(
            "model {}: no hidden layers",
            record.name
        )));
    }
    if record.hidden_sizes.len() > MAX_HIDDEN_LAYERS {
        return Err(DataError::Validation(format!(
            "model {}: {} hidden layers exceeds the resource bound of {}",
            record.name,
            record.hidden_sizes.len(),
            MAX_HIDDEN_LAYERS
        )));
    }
    if record.hidden_sizes.iter().any(|&s| s == 0 || s > MAX_HIDDEN_WIDTH) {
        return Err(DataError::Validation(format!(
            "model {}: hidden width outside 1..={}",
            record.name, MAX_HIDDEN_WIDTH
        )));
    }
    Ok(())
}

/// The stock model tiers registered by environment bootstrap.
pub fn default_model_records() -> Vec<ModelRecord> {
    vec![
        ModelRecord {
            name: "small".into(),
            hidden_sizes: vec![16],
            capacity_rank: 1,
            note: "one narrow hidden layer; fast, limited capacity".into(),
            overfit_risk: false,
            extra: Default::default(),
        },
        ModelRecord {
            name: "medium".into(),
            hidden_sizes: vec![64, 32],
            capacity_rank: 2,
            note: "two hidden layers; the general-purpose tier".into(),
            overfit_risk: false,
            extra: Default::default(),
        },
        ModelRecord {
            name: "large".into(),
            hidden_sizes: vec![256, 128],
            capacity_rank: 3,
            note: "wide stack; prone to overfitting small shadow sets".into(),
            overfit_risk: true,
            extra: Default::default(),
        },
    ]
}

/// Parses and structurally validates a dataset registry; path resolution
/// is the loader's job since it needs the registry's directory.
pub fn parse_dataset_registry(text: &str) -> Result<Vec<DatasetRecord>, DataError> {
    let file: DatasetRegistryFile = serde_json::from_str(text)?;
    if file.format_version != REGISTRY_FORMAT_VERSION {
        return Err(DataError::Validation(format!(
            "unsupported registry format_version {}",
            file.format_version
        )));
    }
    Ok(file.datasets)
}

pub fn parse_model_registry(text: &str) -> Result<Vec<ModelRecord>, DataError> {
    let file: ModelRegistryFile = serde_json::from_str(text)?;
    if file.format_version != REGISTRY_FORMAT_VERSION {
        return Err(DataError::Validation(format!(
            "unsupported registry format_version {}",
            file.format_version
        )));
    }
    for record in &file.models {
        validate_model_record(record)?;
    }
    Ok(file.models)
}

pub fn load_dataset_registry(path: &Path) -> Result<Vec<DatasetRecord>, DataError> {
    let text = fs::read_to_string(path)?;
    let records = parse_dataset_registry(&text)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    for record in &records {
        validate_dataset_record(record, dir)?;
    }
    Ok(records)
}

pub fn load_model_registry(path: &Path) -> Result<Vec<ModelRecord>, DataError> {
    let text = fs::read_to_string(path)?;
    parse_model_registry(&text)
}

pub fn save_dataset_registry(path: &Path, records: &[DatasetRecord]) -> Result<(), DataError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let file = DatasetRegistryFile {
        format_version: REGISTRY_FORMAT_VERSION,
        datasets: records.to_vec(),
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn save_model_registry(path: &Path, records: &[ModelRecord]) -> Result<(), DataError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let file = ModelRegistryFile {
        format_version: REGISTRY_FORMAT_VERSION,
        models: records.to_vec(),
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}
