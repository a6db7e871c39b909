//! Attribute inference: a two-layer classifier from service embeddings to
//! a sensitive attribute unrelated to the service task.

use super::{
    assert_not_target_train, load_sized_subset, query_service_chunked, AttackEnv, AttackError,
    AttackKind, AttackResult, CommonParams, Params,
};
use crate::data::{combine_attributes, read_dataset, Dataset};
use crate::nn::{self, LossKind};
use crate::service::{ClientError, ServiceApi};
use serde_json::{Map, Value};
use std::path::Path;

const ATTACK_HIDDEN: usize = 32;

/// Resolves an attribute parameter: a single name, or comma-separated
/// names combined into one mixed-radix label.
fn attribute_labels(ds: &Dataset, attribute: &str) -> Result<(Vec<usize>, usize), AttackError> {
    let names: Vec<&str> = attribute.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if names.is_empty() {
        return Err(AttackError::InvalidParameter {
            name: "attribute".into(),
            message: "no attribute names given".into(),
        });
    }
    for name in &names {
        if ds.attribute(name).is_none() {
            return Err(AttackError::Precondition(format!(
                "dataset {} does not carry attribute {name}",
                ds.provenance.source
            )));
        }
    }
    let composite = combine_attributes(ds, &names)?;
    Ok((composite.labels, composite.num_classes))
}

/// Trains the embedding-to-attribute attack model on service embeddings of
/// the shadow set and reports accuracy on the evaluation set, along with
/// the majority-class baseline.
pub fn run_attribute_inference(
    shadow: &Dataset,
    attribute: &str,
    common: &CommonParams,
    service: &dyn ServiceApi,
    eval: &Dataset,
    workspace: &Path,
) -> Result<AttackResult, AttackError> {
    assert_not_target_train(shadow, "attribute shadow dataset")?;
    if shadow.is_empty() || eval.is_empty() {
        return Err(AttackError::Precondition("empty shadow or eval set".into()));
    }
    let (shadow_attr, attr_classes) = attribute_labels(shadow, attribute)?;
    let (eval_attr, eval_classes) = attribute_labels(eval, attribute)?;
    if attr_classes != eval_classes {
        return Err(AttackError::Precondition(format!(
            "attribute class count differs between shadow ({attr_classes}) and eval ({eval_classes})"
        )));
    }

    let shadow_emb = match query_service_chunked(service, &shadow.inputs, true) {
        Ok(q) => q,
        Err(AttackError::Client(ClientError::EndpointMissing(msg))) => {
            return Err(AttackError::Infeasible(format!(
                "attribute inference requires the embedding endpoint: {msg}"
            )))
        }
        Err(e) => return Err(e),
    };
    let mut partial = shadow_emb.budget_exhausted;
    let got = shadow_emb.rows.rows();
    if got < 4 {
        return Err(AttackError::Precondition(
            "too few shadow embeddings obtained".into(),
        ));
    }

    // Two fully connected layers: embedding -> hidden -> attribute.
    let layer_sizes = [shadow_emb.rows.cols(), ATTACK_HIDDEN, attr_classes];
    let model = nn::init_model(&layer_sizes, common.seed)?;
    let config = common.train_config(LossKind::HardCe, got);
    let batch = nn::Batch {
        inputs: shadow_emb.rows,
        targets: nn::Targets::Classes(shadow_attr[..got].to_vec()),
    };
    let (model, _) = nn::train(model, &batch, &config)?;

    let eval_emb = query_service_chunked(service, &eval.inputs, true)?;
    partial |= eval_emb.budget_exhausted;
    let got = eval_emb.rows.rows();
    if got == 0 {
        return Err(AttackError::Precondition(
            "budget exhausted before any evaluation embedding was obtained".into(),
        ));
    }
    let eval_labels = &eval_attr[..got];
    let accuracy = nn::evaluate(&model, &eval_emb.rows, eval_labels)?;

    // Majority baseline over the scored eval labels.
    let mut counts = vec![0usize; attr_classes];
    for &l in eval_labels {
        counts[l] += 1;
    }
    let baseline = counts.iter().copied().max().unwrap_or(0) as f64 / got as f64;

    let artifact = std::path::PathBuf::from(format!("artifacts/attribute_attack_{}.bin", common.seed));
    nn::write_model(&workspace.join(&artifact), &model, "{\"role\":\"attribute_attack_model\"}")?;

    Ok(AttackResult {
        attack: AttackKind::AttributeInference,
        task: String::new(),
        metric_name: "attribute_accuracy".into(),
        metric_value: accuracy,
        sub_results: vec![("majority_baseline".into(), baseline)],
        artifact_paths: vec![artifact],
        query_count: 0,
        partial,
        notes: vec![format!("attribute = {attribute}")],
    })
}

pub(super) fn run_attribute_task(
    env: &AttackEnv,
    service: &dyn ServiceApi,
    params: &Map<String, Value>,
) -> Result<AttackResult, AttackError> {
    let p = Params::new(params);
    let common = p.common()?;
    let shadow = load_sized_subset(
        &p.string("shadow_dataset_path")?,
        common.dataset_size,
        common.seed,
        "attr_shadow_subset",
    )?;
    let attribute = p.string("attribute")?;
    let eval = read_dataset(Path::new(&p.string("eval_path")?))?;
    run_attribute_inference(&shadow, &attribute, &common, service, &eval, &env.workspace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_dataset, split_dataset, tests::small_spec};
    use crate::service::LocalService;

    #[test]
    fn missing_embedding_endpoint_is_infeasible() {
        let spec = small_spec();
        let root = generate_synthetic_dataset(&spec).unwrap();
        let parts = split_dataset(&root, &[("shadow", 0.5), ("eval", 0.5)], 0).unwrap();
        let target = nn::init_model(&[root.n_features(), 16, root.n_classes], 0).unwrap();
        let service = LocalService::new(target, false, None);
        let common = CommonParams {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 10,
            dataset_size: 64,
            seed: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        let err = run_attribute_inference(
            &parts[0],
            "attr_a",
            &common,
            &service,
            &parts[1],
            dir.path(),
        )
        .unwrap_err();
        assert!(matches!(err, AttackError::Infeasible(_)), "{err}");
    }

    #[test]
    fn absent_attribute_is_a_precondition_error() {
        let spec = small_spec();
        let root = generate_synthetic_dataset(&spec).unwrap();
        let parts = split_dataset(&root, &[("shadow", 0.5), ("eval", 0.5)], 0).unwrap();
        let target = nn::init_model(&[root.n_features(), 16, root.n_classes], 0).unwrap();
        let service = LocalService::new(target, true, None);
        let common = CommonParams {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 10,
            dataset_size: 64,
            seed: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        let err = run_attribute_inference(
            &parts[0],
            "no_such_attribute",
            &common,
            &service,
            &parts[1],
            dir.path(),
        )
        .unwrap_err();
        assert!(matches!(err, AttackError::Precondition(_)), "{err}");
    }
}
