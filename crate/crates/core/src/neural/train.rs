//! Mini-batch Adam training of one member on mean cross-entropy.

use super::config::ModelConfig;
use super::model::Model;
use super::params::ModelParams;
use super::NeuralError;
use crate::seeds::derive_seed;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub tokens: Vec<usize>,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub params: ModelParams,
    /// Mean training loss of each epoch.
    pub loss_history: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Adam {
        Adam { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPSILON);
        }
    }
}

fn dropout_masks(rng: &mut ChaCha8Rng, dims: &[usize], rate: f64) -> Vec<Vec<f64>> {
    let keep = 1.0 / (1.0 - rate);
    dims.iter().map(|&d| (0..d).map(|_| if rng.gen_bool(rate) { 0.0 } else { keep }).collect()).collect()
}

/// Trains a fresh member from `config.seed`. The shuffle order, the init and
/// any dropout masks all derive from that seed, so the result is bit-for-bit
/// reproducible.
pub fn train_member(
    config: &ModelConfig,
    vocab_size: usize,
    n_labels: usize,
    data: &[TrainingExample],
) -> Result<TrainingRun, NeuralError> {
    config.validate().map_err(NeuralError::InvalidConfig)?;
    if data.is_empty() {
        return Err(NeuralError::EmptyTrainingData);
    }
    if let Some(bad) = data.iter().find(|ex| ex.label >= n_labels) {
        return Err(NeuralError::LabelOutOfRange { label: bad.label, n_labels });
    }
    let params = ModelParams::init(config, vocab_size, n_labels);
    let mut model = Model::new(config.clone(), params);
    let mut adam = Adam::new(model.params.values.len());
    let mut grad = vec![0.0; model.params.values.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[1]));
    let mut mask_dims = vec![2 * config.hidden_dim];
    mask_dims.extend_from_slice(&config.ff_dims);
    let mut loss_history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut mask_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[2, epoch as u64, batch as u64]));
            let mut batch_loss = 0.0;
            for &i in chunk {
                let example = &data[i];
                let masks = (config.dropout > 0.0).then(|| dropout_masks(&mut mask_rng, &mask_dims, config.dropout));
                let trace = model.trace(&example.tokens, masks)?;
                batch_loss += model.backward(&trace, example.label, &mut grad);
            }
            if !batch_loss.is_finite() {
                return Err(NeuralError::NonFiniteLoss { epoch, batch });
            }
            epoch_loss += batch_loss;
            let scale = 1.0 / chunk.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            if config.clip_norm > 0.0 {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > config.clip_norm {
                    let s = config.clip_norm / norm;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
            }
            adam.update(&mut model.params.values, &grad, config.learning_rate);
        }
        loss_history.push(epoch_loss / data.len() as f64);
    }
    Ok(TrainingRun { params: model.params, loss_history })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two labels: label 0 utterances contain token 2, label 1 contain token 3.
    fn toy() -> Vec<TrainingExample> {
        (0..50)
            .map(|i| {
                let label = i % 2;
                let filler = 4 + (i % 5);
                TrainingExample { tokens: vec![filler, 2 + label, filler + 1], label }
            })
            .collect()
    }

    fn config() -> ModelConfig {
        ModelConfig {
            embedding_dim: 8,
            hidden_dim: 6,
            ff_dims: vec![8],
            epochs: 5,
            batch_size: 8,
            seed: 3,
            ..ModelConfig::default()
        }
    }

    fn mean_loss(params: &ModelParams, data: &[TrainingExample]) -> f64 {
        let model = Model::new(config(), params.clone());
        data.iter().map(|ex| model.loss(&ex.tokens, ex.label).unwrap()).sum::<f64>() / data.len() as f64
    }

    #[test]
    fn loss_decreases_on_toy_set() {
        let data = toy();
        let initial = mean_loss(&ModelParams::init(&config(), 10, 2), &data);
        let run = train_member(&config(), 10, 2, &data).unwrap();
        assert_eq!(run.loss_history.len(), 5);
        let last = *run.loss_history.last().unwrap();
        assert!(last < initial, "{last} !< {initial}");
        assert!(last < run.loss_history[0]);
        assert!(mean_loss(&run.params, &data) < initial);
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let c = ModelConfig { learning_rate: 0.0, ..config() };
        let run = train_member(&c, 10, 2, &toy()).unwrap();
        assert_eq!(run.params, ModelParams::init(&c, 10, 2));
    }

    #[test]
    fn bit_identical_reruns() {
        let a = train_member(&config(), 10, 2, &toy()).unwrap();
        let b = train_member(&config(), 10, 2, &toy()).unwrap();
        assert_eq!(a.params.values, b.params.values);
        assert_eq!(a.loss_history, b.loss_history);
        let dropout = ModelConfig { dropout: 0.3, ..config() };
        let c = train_member(&dropout, 10, 2, &toy()).unwrap();
        let d = train_member(&dropout, 10, 2, &toy()).unwrap();
        assert_eq!(c.params.values, d.params.values);
        assert_ne!(c.params.values, a.params.values);
    }

    #[test]
    fn errors() {
        assert!(matches!(train_member(&config(), 10, 2, &[]), Err(NeuralError::EmptyTrainingData)));
        let bad = vec![TrainingExample { tokens: vec![2], label: 5 }];
        assert!(matches!(train_member(&config(), 10, 2, &bad), Err(NeuralError::LabelOutOfRange { .. })));
        let huge = ModelConfig { learning_rate: f64::INFINITY, ..config() };
        assert!(train_member(&huge, 10, 2, &toy()).is_err());
    }

    #[test]
    fn non_finite_loss_names_epoch_and_batch() {
        // Saturate the output layer so the gold probability underflows to 0.
        let c = ModelConfig { learning_rate: 1e6, clip_norm: 0.0, epochs: 3, ..config() };
        match train_member(&c, 10, 2, &toy()) {
            Err(NeuralError::NonFiniteLoss { epoch, batch }) => assert!(epoch < 3 && batch < 7),
            other => panic!("expected non-finite loss, got {:?}", other.map(|r| r.loss_history)),
        }
    }
}
