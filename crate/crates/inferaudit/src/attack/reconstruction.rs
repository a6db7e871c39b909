//! Data reconstruction: train an inversion model from service posteriors
//! back to inputs, scored against held-out target training inputs.

use super::{
    assert_not_target_train, load_sized_subset, query_service_chunked, AttackEnv, AttackError,
    AttackKind, AttackResult, CommonParams, Params,
};
use crate::data::{read_dataset, Dataset};
use crate::nn::{self, LossKind, Matrix};
use crate::service::ServiceApi;
use serde_json::{Map, Value};
use std::path::Path;

const INVERSION_HIDDEN: [usize; 2] = [32, 32];

fn mean_squared_error(a: &Matrix, b: &Matrix) -> f64 {
    debug_assert_eq!(a.rows(), b.rows());
    debug_assert_eq!(a.cols(), b.cols());
    let n = (a.rows() * a.cols()) as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

/// Queries the service on auxiliary inputs, trains posterior-to-input
/// inversion with MSE, and reports the mean reconstruction error over the
/// probe set against the mean-input baseline. The probe inputs are ground
/// truth for scoring only; nothing trains on them.
pub fn run_data_reconstruction(
    aux: &Dataset,
    common: &CommonParams,
    service: &dyn ServiceApi,
    probes: &Dataset,
    workspace: &Path,
) -> Result<AttackResult, AttackError> {
    if aux.is_empty() {
        return Err(AttackError::Precondition("empty auxiliary set".into()));
    }
    if probes.is_empty() {
        return Err(AttackError::Precondition("empty probe set".into()));
    }
    assert_not_target_train(aux, "auxiliary dataset")?;

    let queried = query_service_chunked(service, &aux.inputs, false)?;
    let mut partial = queried.budget_exhausted;
    let got = queried.rows.rows();
    if got == 0 {
        return Err(AttackError::Precondition(
            "budget exhausted before any auxiliary posterior was obtained".into(),
        ));
    }
    let keep: Vec<usize> = (0..got).collect();
    let aux_inputs = aux.inputs.select_rows(&keep);
    let aux_posteriors = queried.rows;

    // Inversion model: posterior -> input.
    let n_classes = aux_posteriors.cols();
    let mut layer_sizes = vec![n_classes];
    layer_sizes.extend_from_slice(&INVERSION_HIDDEN);
    layer_sizes.push(aux.n_features());
    let inversion = nn::init_model(&layer_sizes, common.seed)?;
    let config = common.train_config(LossKind::Mse, aux_inputs.rows());
    let batch = nn::Batch {
        inputs: aux_posteriors,
        targets: nn::Targets::Values(aux_inputs.clone()),
    };
    let (inversion, _) = nn::train(inversion, &batch, &config)?;

    // Score: reconstruct the probes from their service posteriors.
    let probe_queried = query_service_chunked(service, &probes.inputs, false)?;
    partial |= probe_queried.budget_exhausted;
    let got = probe_queried.rows.rows();
    if got == 0 {
        return Err(AttackError::Precondition(
            "budget exhausted before any probe posterior was obtained".into(),
        ));
    }
    let keep: Vec<usize> = (0..got).collect();
    let probe_truth = probes.inputs.select_rows(&keep);
    let reconstructed = nn::forward(&inversion, &probe_queried.rows)?.logits;
    let mse = mean_squared_error(&reconstructed, &probe_truth);

    // Baseline: predict the auxiliary mean input for every probe.
    let mean_input = aux_inputs.col_means();
    let mut baseline = Matrix::zeros(probe_truth.rows(), probe_truth.cols());
    for i in 0..baseline.rows() {
        baseline.row_mut(i).copy_from_slice(&mean_input);
    }
    let baseline_mse = mean_squared_error(&baseline, &probe_truth);

    let artifact = std::path::PathBuf::from(format!("artifacts/inversion_model_{}.bin", common.seed));
    nn::write_model(&workspace.join(&artifact), &inversion, "{\"role\":\"inversion_model\"}")?;

    Ok(AttackResult {
        attack: AttackKind::DataReconstruction,
        task: String::new(),
        metric_name: "reconstruction_mse".into(),
        metric_value: mse,
        sub_results: vec![("mean_input_baseline_mse".into(), baseline_mse)],
        artifact_paths: vec![artifact],
        query_count: 0,
        partial,
        notes: vec![],
    })
}

pub(super) fn run_reconstruction_task(
    env: &AttackEnv,
    service: &dyn ServiceApi,
    params: &Map<String, Value>,
) -> Result<AttackResult, AttackError> {
    let p = Params::new(params);
    let common = p.common()?;
    let aux = load_sized_subset(
        &p.string("aux_dataset_path")?,
        common.dataset_size,
        common.seed,
        "aux_subset",
    )?;
    let probes = read_dataset(Path::new(&p.string("probes_path")?))?;
    run_data_reconstruction(&aux, &common, service, &probes, &env.workspace)
}
