//! Mini-batch Adam training loop.

use super::{loss_and_grads, Batch, Model, NnError, TrainConfig};
use crate::rng::Rng;

/// Adam first/second moment buffers, one slot per parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    fn step(&mut self, model: &mut Model, grads: &super::Gradients, lr: f64) {
        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - BETA1.powf(t);
        let bc2 = 1.0 - BETA2.powf(t);
        let mut flat = vec![0.0; self.m.len()];
        grads.for_each(|g, k| flat[k] = g);
        let (m, v) = (&mut self.m, &mut self.v);
        model.apply_update(|p, k| {
            let g = flat[k];
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * g;
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        });
    }
}

/// Trains `model` on `dataset` and returns it with the per-epoch loss
/// history (`history.len() == epochs`). Batch order is reshuffled every
/// epoch from the config seed, so the whole run is deterministic. A
/// non-finite loss aborts with a diagnostic instead of continuing.
pub fn train(
    model: Model,
    dataset: &Batch,
    config: &TrainConfig,
) -> Result<(Model, Vec<f64>), NnError> {
    if dataset.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    config.validate(dataset.len())?;
    let mut model = model;
    let mut adam = AdamState::new(model.param_count());
    let base_rng = Rng::seed_from(config.seed);
    let n = dataset.len();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        base_rng.derive(epoch as u64).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = dataset.select(chunk);
            let (loss, grads) = loss_and_grads(&model, &batch, config.loss_kind)?;
            if !loss.is_finite() {
                return Err(NnError::Diverged { epoch, loss });
            }
            adam.step(&mut model, &grads, config.learning_rate);
            epoch_loss += loss * chunk.len() as f64;
        }
        let mean = epoch_loss / n as f64;
        if !mean.is_finite() {
            return Err(NnError::Diverged { epoch, loss: mean });
        }
        history.push(mean);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{evaluate, init_model, LossKind, Matrix, Targets};

    fn clustered_dataset(n: usize, d: usize, c: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = Rng::seed_from(seed);
        let centers: Vec<Vec<f64>> = (0..c)
            .map(|_| (0..d).map(|_| rng.normal() * 2.0).collect())
            .collect();
        let mut inputs = Matrix::zeros(n, d);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = i % c;
            labels.push(y);
            let row = inputs.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v = centers[y][j] + rng.normal() * 0.8;
            }
        }
        (inputs, labels)
    }

    #[test]
    fn overfits_a_small_split() {
        let (inputs, labels) = clustered_dataset(200, 8, 4, 1);
        let model = init_model(&[8, 32, 16, 4], 2).unwrap();
        let dataset = Batch {
            inputs: inputs.clone(),
            targets: Targets::Classes(labels.clone()),
        };
        let config = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 300,
            loss_kind: LossKind::HardCe,
            seed: 3,
        };
        let (trained, history) = train(model, &dataset, &config).unwrap();
        assert_eq!(history.len(), 300);
        assert!(history[299] < history[0]);
        let acc = evaluate(&trained, &inputs, &labels).unwrap();
        assert!(acc >= 0.99, "train accuracy {acc}");
    }

    #[test]
    fn rejects_zero_epochs() {
        let (inputs, labels) = clustered_dataset(16, 4, 2, 0);
        let model = init_model(&[4, 8, 2], 0).unwrap();
        let dataset = Batch {
            inputs,
            targets: Targets::Classes(labels),
        };
        let config = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 0,
            loss_kind: LossKind::HardCe,
            seed: 0,
        };
        assert!(matches!(
            train(model, &dataset, &config),
            Err(NnError::InvalidConfig(_))
        ));
    }

    #[test]
    fn rejects_batch_larger_than_dataset() {
        let (inputs, labels) = clustered_dataset(8, 4, 2, 0);
        let model = init_model(&[4, 2], 0).unwrap();
        let dataset = Batch {
            inputs,
            targets: Targets::Classes(labels),
        };
        let config = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 9,
            epochs: 1,
            loss_kind: LossKind::HardCe,
            seed: 0,
        };
        assert!(matches!(
            train(model, &dataset, &config),
            Err(NnError::InvalidConfig(_))
        ));
    }

    #[test]
    fn identical_seeds_reproduce_weights() {
        let (inputs, labels) = clustered_dataset(64, 6, 3, 4);
        let dataset = Batch {
            inputs,
            targets: Targets::Classes(labels),
        };
        let config = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 20,
            loss_kind: LossKind::HardCe,
            seed: 9,
        };
        let run = || {
            let model = init_model(&[6, 12, 3], 5).unwrap();
            train(model, &dataset, &config).unwrap()
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
    }

    #[test]
    fn divergence_is_reported() {
        // An absurd learning rate under a squared loss overflows within a
        // couple of steps; the loop must abort, not clamp.
        let (inputs, _) = clustered_dataset(32, 4, 2, 0);
        let model = init_model(&[4, 16, 2], 0).unwrap();
        let dataset = Batch {
            inputs,
            targets: Targets::Values(Matrix::zeros(32, 2)),
        };
        let config = TrainConfig {
            learning_rate: 1e80,
            batch_size: 8,
            epochs: 5,
            loss_kind: LossKind::Mse,
            seed: 0,
        };
        match train(model, &dataset, &config) {
            Err(NnError::Diverged { .. }) | Err(NnError::NonFinite(_)) => {}
            other => {
                let summary = other.map(|(_, h)| h);
                panic!("expected divergence, got {summary:?}");
            }
        }
    }
}
