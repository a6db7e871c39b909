//! Model stealing: label a query set through the service and train a
//! surrogate on the posteriors, optionally picking the query set by
//! importance under a budget.

use super::{
    assert_not_target_train, query_service_chunked, AttackEnv, AttackError, AttackKind,
    AttackResult, CommonParams, Params,
};
use crate::data::{read_dataset, Dataset, ModelRecord};
use crate::nn::{self, argmax, LossKind, Matrix, TrainConfig};
use crate::rng::Rng;
use crate::service::ServiceApi;
use serde_json::{Map, Value};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionStrategy {
    Random,
    Importance,
}

impl SelectionStrategy {
    pub fn parse(s: &str) -> Result<Self, AttackError> {
        match s {
            "random" => Ok(SelectionStrategy::Random),
            "importance" => Ok(SelectionStrategy::Importance),
            other => Err(AttackError::InvalidParameter {
                name: "selection_strategy".into(),
                message: format!("unknown strategy {other}; expected random or importance"),
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SelectionStrategy::Random => "random",
            SelectionStrategy::Importance => "importance",
        }
    }
}

/// Fraction of the selection budget spent on random seed queries that
/// train the ranking proxy.
const SEED_FRACTION: f64 = 0.2;
const PROXY_HIDDEN: [usize; 1] = [32];
const PROXY_EPOCHS: usize = 100;

/// Outcome of importance selection: the chosen candidate indices plus the
/// posteriors already obtained for the seed subset (reusable as labels).
#[derive(Debug)]
pub struct Selection {
    pub indices: Vec<usize>,
    pub seed_indices: Vec<usize>,
    pub seed_posteriors: Matrix,
}

/// Selects `n` of the candidate rows by uncertainty: a random seed subset
/// is labeled through the service, a proxy surrogate is trained on it, and
/// the remaining candidates are ranked by the proxy's top-2 posterior
/// margin (smallest first). Returns seed plus top-ranked to fill exactly
/// `n`. `n == candidates` short-circuits to the identity with no queries.
pub fn importance_select(
    candidates: &Matrix,
    n: usize,
    service: &dyn ServiceApi,
    seed: u64,
) -> Result<Selection, AttackError> {
    if n > candidates.rows() {
        return Err(AttackError::Precondition(format!(
            "cannot select {n} from {} candidates",
            candidates.rows()
        )));
    }
    if n == candidates.rows() {
        return Ok(Selection {
            indices: (0..n).collect(),
            seed_indices: vec![],
            seed_posteriors: Matrix::zeros(0, 0),
        });
    }
    let seed_count = ((n as f64 * SEED_FRACTION).round() as usize).clamp(1, n);
    let mut rng = Rng::seed_from(seed).derive(3);
    let mut order: Vec<usize> = (0..candidates.rows()).collect();
    rng.shuffle(&mut order);
    let seed_indices: Vec<usize> = order[..seed_count].to_vec();

    let seed_inputs = candidates.select_rows(&seed_indices);
    let queried = query_service_chunked(service, &seed_inputs, false)?;
    if queried.budget_exhausted || queried.rows.rows() < seed_indices.len() {
        return Err(AttackError::Precondition(
            "budget exhausted while labeling the selection seed subset".into(),
        ));
    }
    let seed_posteriors = queried.rows;

    // Proxy surrogate on the seed labels.
    let n_classes = seed_posteriors.cols();
    let mut layer_sizes = vec![candidates.cols()];
    layer_sizes.extend_from_slice(&PROXY_HIDDEN);
    layer_sizes.push(n_classes);
    let proxy = nn::init_model(&layer_sizes, seed.wrapping_add(17))?;
    let config = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 32.min(seed_count),
        epochs: PROXY_EPOCHS,
        loss_kind: LossKind::SoftCe,
        seed: seed.wrapping_add(17),
    };
    let batch = nn::Batch {
        inputs: seed_inputs,
        targets: nn::Targets::Soft(seed_posteriors.clone()),
    };
    let (proxy, _) = nn::train(proxy, &batch, &config)?;

    // Rank the rest by smallest top-2 margin under the proxy.
    let rest: Vec<usize> = order[seed_count..].to_vec();
    let rest_inputs = candidates.select_rows(&rest);
    let fwd = nn::forward(&proxy, &rest_inputs)?;
    let mut ranked: Vec<(usize, f64)> = rest
        .iter()
        .enumerate()
        .map(|(local, &orig)| {
            let mut row = fwd.posteriors.row(local).to_vec();
            row.sort_by(|a, b| b.total_cmp(a));
            let margin = row[0] - row.get(1).copied().unwrap_or(0.0);
            (orig, margin)
        })
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let mut indices = seed_indices.clone();
    indices.extend(ranked.iter().take(n - seed_count).map(|&(i, _)| i));
    Ok(Selection {
        indices,
        seed_indices,
        seed_posteriors,
    })
}

/// Runs the stealing pipeline: picks a query set from the pool, labels it
/// through the service, trains the surrogate on soft labels, and scores
/// accuracy on the evaluation set (plus target agreement when no budget
/// constrains scoring queries).
#[allow(clippy::too_many_arguments)]
pub fn run_model_stealing(
    pool: &Dataset,
    surrogate_record: &ModelRecord,
    common: &CommonParams,
    service: &dyn ServiceApi,
    eval: &Dataset,
    strategy: SelectionStrategy,
    known_budget: Option<u64>,
    workspace: &Path,
) -> Result<AttackResult, AttackError> {
    assert_not_target_train(pool, "stealing query pool")?;
    if pool.is_empty() {
        return Err(AttackError::Precondition("empty query pool".into()));
    }
    if eval.is_empty() {
        return Err(AttackError::Precondition("empty evaluation set".into()));
    }
    let n = common.dataset_size.min(pool.len());
    if let Some(budget) = known_budget {
        if (n as u64) > budget && strategy != SelectionStrategy::Importance {
            return Err(AttackError::Precondition(format!(
                "requested {n} query samples but the service budget is {budget}; \
                 enable importance selection or reduce dataset_size"
            )));
        }
    }
    // Under a known budget, select exactly what the budget admits.
    let n = match known_budget {
        Some(budget) => n.min(budget as usize),
        None => n,
    };
    if n == 0 {
        return Err(AttackError::Precondition(
            "query budget admits no samples".into(),
        ));
    }

    let mut notes = vec![format!("selection_strategy = {}", strategy.name())];
    let mut partial = false;

    // Build the labeled training set (x, P(x)).
    let (train_inputs, train_posteriors) = match strategy {
        SelectionStrategy::Random => {
            let indices = Rng::seed_from(common.seed).derive(2).sample_indices(pool.len(), n);
            let inputs = pool.inputs.select_rows(&indices);
            let queried = query_service_chunked(service, &inputs, false)?;
            partial |= queried.budget_exhausted;
            let got = queried.rows.rows();
            if got == 0 {
                return Err(AttackError::Precondition(
                    "budget exhausted before any pseudo-label was obtained".into(),
                ));
            }
            let keep: Vec<usize> = (0..got).collect();
            (inputs.select_rows(&keep), queried.rows)
        }
        SelectionStrategy::Importance => {
            let selection = importance_select(&pool.inputs, n, service, common.seed)?;
            let seed_set: std::collections::HashSet<usize> =
                selection.seed_indices.iter().copied().collect();
            let fresh: Vec<usize> = selection
                .indices
                .iter()
                .copied()
                .filter(|i| !seed_set.contains(i))
                .collect();
            let fresh_inputs = pool.inputs.select_rows(&fresh);
            let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
            let mut posteriors: Vec<Vec<f64>> = Vec::with_capacity(n);
            for (local, &orig) in selection.seed_indices.iter().enumerate() {
                rows.push(pool.inputs.row(orig).to_vec());
                posteriors.push(selection.seed_posteriors.row(local).to_vec());
            }
            if !fresh.is_empty() {
                let queried = query_service_chunked(service, &fresh_inputs, false)?;
                partial |= queried.budget_exhausted;
                for (local, row) in queried.rows.iter_rows().enumerate() {
                    rows.push(pool.inputs.row(fresh[local]).to_vec());
                    posteriors.push(row.to_vec());
                }
            }
            (Matrix::from_rows(&rows), Matrix::from_rows(&posteriors))
        }
    };

    // Train the surrogate on soft labels; epochs == 0 keeps the untrained
    // initialization so a baseline run reports chance-level agreement.
    let n_classes = train_posteriors.cols();
    let mut layer_sizes = vec![pool.n_features()];
    layer_sizes.extend_from_slice(&surrogate_record.hidden_sizes);
    layer_sizes.push(n_classes);
    let surrogate = nn::init_model(&layer_sizes, common.seed)?;
    let surrogate = if common.epochs == 0 {
        notes.push("epochs = 0: surrogate left at initialization".into());
        surrogate
    } else {
        let config = common.train_config(LossKind::SoftCe, train_inputs.rows());
        let batch = nn::Batch {
            inputs: train_inputs.clone(),
            targets: nn::Targets::Soft(train_posteriors),
        };
        let (surrogate, _) = nn::train(surrogate, &batch, &config)?;
        surrogate
    };

    let eval_accuracy = nn::evaluate(&surrogate, &eval.inputs, &eval.labels)?;
    let mut sub_results = vec![("queries_used".into(), train_inputs.rows() as f64)];

    // Agreement costs eval-set queries; skip it when a budget is known so
    // the attack itself stays within the limitation.
    if known_budget.is_none() {
        let queried = query_service_chunked(service, &eval.inputs, false)?;
        if !queried.budget_exhausted && queried.rows.rows() == eval.len() {
            let fwd = nn::forward(&surrogate, &eval.inputs)?;
            let agree = (0..eval.len())
                .filter(|&i| argmax(fwd.posteriors.row(i)) == argmax(queried.rows.row(i)))
                .count();
            sub_results.push(("target_agreement".into(), agree as f64 / eval.len() as f64));
        } else {
            partial = true;
            notes.push("budget exhausted while measuring target agreement".into());
        }
    } else {
        notes.push("agreement skipped under a known query budget".into());
    }

    let artifact = std::path::PathBuf::from(format!("artifacts/stolen_surrogate_{}.bin", common.seed));
    nn::write_model(&workspace.join(&artifact), &surrogate, "{\"role\":\"stolen_surrogate\"}")?;

    Ok(AttackResult {
        attack: AttackKind::ModelStealing,
        task: String::new(),
        metric_name: "eval_accuracy".into(),
        metric_value: eval_accuracy,
        sub_results,
        artifact_paths: vec![artifact],
        query_count: 0,
        partial,
        notes,
    })
}

pub(super) fn run_stealing_task(
    env: &AttackEnv,
    service: &dyn ServiceApi,
    params: &Map<String, Value>,
) -> Result<AttackResult, AttackError> {
    let p = Params::new(params);
    let common = p.common()?;
    let pool_path = p.string("shadow_dataset_path")?;
    let pool = read_dataset(Path::new(&pool_path))?;
    let record = env.resolve_model(&p.string("shadow_model")?)?;
    let eval = read_dataset(Path::new(&p.string("eval_path")?))?;
    let strategy = SelectionStrategy::parse(&p.string("selection_strategy")?)?;
    let budget = p.opt_u64("query_budget")?;
    run_model_stealing(
        &pool,
        &record,
        &common,
        service,
        &eval,
        strategy,
        budget,
        &env.workspace,
    )
}
