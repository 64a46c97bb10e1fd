use super::config::EnsembleSpec;
use super::model::Model;
use super::train::{train_member, TrainingExample};
use super::{Distribution, EmbeddingTriple, NeuralError};
use crate::corpus::{Corpus, Gold, Utterance, UtteranceId, Vocabulary};
use rayon::prelude::*;
use std::collections::BTreeSet;

/// Member probabilities are floored here before taking logs, so a single
/// zero cannot annihilate a label.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Member {
    pub id: usize,
    pub model: Model,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub vocabulary: Vocabulary,
    pub labels: Vec<String>,
    pub members: Vec<Member>,
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-label geometric mean of member distributions, renormalized. Members
/// are combined in ascending id order regardless of input order.
pub fn geometric_mean(members: &[(usize, &Distribution)]) -> Distribution {
    let mut ordered: Vec<&(usize, &Distribution)> = members.iter().collect();
    ordered.sort_by_key(|(id, _)| *id);
    let n_labels = ordered[0].1.probs.len();
    let mut log_mean = vec![0.0; n_labels];
    for (_, dist) in &ordered {
        for (acc, &p) in log_mean.iter_mut().zip(&dist.probs) {
            *acc += p.max(PROBABILITY_FLOOR).ln();
        }
    }
    let m = ordered.len() as f64;
    log_mean.iter_mut().for_each(|l| *l /= m);
    Distribution { probs: super::model::softmax(&log_mean) }
}

impl Ensemble {
    /// Trains every member of `spec` in parallel; member `i` is seeded from
    /// `(seed, i)` so the result does not depend on scheduling.
    pub fn train(
        spec: &EnsembleSpec,
        seed: u64,
        vocabulary: Vocabulary,
        labels: Vec<String>,
        data: &[TrainingExample],
    ) -> Result<(Ensemble, Vec<Vec<f64>>), NeuralError> {
        spec.validate().map_err(NeuralError::InvalidConfig)?;
        let configs = spec.member_configs(seed);
        let runs: Vec<_> = configs
            .par_iter()
            .map(|config| train_member(config, vocabulary.len(), labels.len(), data))
            .collect::<Result<_, _>>()?;
        let mut members = Vec::with_capacity(runs.len());
        let mut histories = Vec::with_capacity(runs.len());
        for (id, (config, run)) in configs.into_iter().zip(runs).enumerate() {
            members.push(Member { id, model: Model::new(config, run.params) });
            histories.push(run.loss_history);
        }
        Ok((Ensemble { vocabulary, labels, members }, histories))
    }

    pub fn encode(&self, corpus: &Corpus, u: &Utterance) -> Vec<usize> {
        self.vocabulary.encode(corpus.model_tokens(u))
    }

    /// Training examples for in-domain utterances; OOD ones are skipped.
    pub fn training_examples<'a>(
        vocabulary: &Vocabulary,
        corpus: &Corpus,
        utterances: impl IntoIterator<Item = &'a Utterance>,
    ) -> Vec<TrainingExample> {
        utterances
            .into_iter()
            .filter_map(|u| {
                u.gold
                    .domain()
                    .map(|label| TrainingExample { tokens: vocabulary.encode(corpus.model_tokens(u)), label })
            })
            .collect()
    }

    pub fn member_forward(
        &self,
        member: usize,
        tokens: &[usize],
    ) -> Result<(Distribution, EmbeddingTriple), NeuralError> {
        let m = &self.members[member];
        let (dist, mut taps) = m.model.forward(tokens)?;
        taps.model_id = m.id;
        Ok((dist, taps))
    }

    pub fn member_distributions(&self, tokens: &[usize]) -> Result<Vec<Distribution>, NeuralError> {
        self.members.iter().map(|m| m.model.predict(tokens)).collect()
    }

    pub fn predict(&self, tokens: &[usize]) -> Result<Distribution, NeuralError> {
        let dists = self.member_distributions(tokens)?;
        Ok(self.combine(&dists))
    }

    /// Geometric mean of already computed member distributions, in member order.
    pub fn combine(&self, dists: &[Distribution]) -> Distribution {
        let pairs: Vec<(usize, &Distribution)> = self.members.iter().map(|m| m.id).zip(dists).collect();
        geometric_mean(&pairs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub error_rate: f64,
    /// Per member (in member order), ids of the utterances it misclassifies.
    pub member_errors: Vec<BTreeSet<UtteranceId>>,
    pub member_error_rates: Vec<f64>,
    /// (utterance id, gold, ensemble prediction) in dataset order.
    pub predictions: Vec<(UtteranceId, usize, usize)>,
}

/// Ensemble top-1 error plus per-member error sets over an in-domain dataset.
pub fn evaluate<'a>(
    ensemble: &Ensemble,
    corpus: &Corpus,
    dataset: impl IntoIterator<Item = &'a Utterance>,
) -> Result<Evaluation, NeuralError> {
    let dataset: Vec<&Utterance> = dataset.into_iter().collect();
    if dataset.is_empty() {
        return Err(NeuralError::EmptyDataset);
    }
    let rows: Vec<(UtteranceId, usize, Vec<usize>, usize)> = dataset
        .par_iter()
        .map(|u| {
            let gold = match u.gold {
                Gold::Domain(label) => label,
                Gold::OutOfDomain => return Err(NeuralError::OutOfDomainInDataset(u.id)),
            };
            let dists = ensemble.member_distributions(&ensemble.encode(corpus, u))?;
            let member_predictions = dists.iter().map(Distribution::argmax).collect();
            Ok((u.id, gold, member_predictions, ensemble.combine(&dists).argmax()))
        })
        .collect::<Result<_, NeuralError>>()?;
    let mut member_errors = vec![BTreeSet::new(); ensemble.members.len()];
    let mut wrong = 0usize;
    let mut predictions = Vec::with_capacity(rows.len());
    for (id, gold, member_predictions, predicted) in rows {
        for (m, &p) in member_predictions.iter().enumerate() {
            if p != gold {
                member_errors[m].insert(id);
            }
        }
        if predicted != gold {
            wrong += 1;
        }
        predictions.push((id, gold, predicted));
    }
    let n = predictions.len() as f64;
    Ok(Evaluation {
        error_rate: wrong as f64 / n,
        member_error_rates: member_errors.iter().map(|e| e.len() as f64 / n).collect(),
        member_errors,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(p: &[f64]) -> Distribution {
        Distribution { probs: p.to_vec() }
    }

    #[test]
    fn two_member_hand_case() {
        let (a, b) = (d(&[0.9, 0.1]), d(&[0.5, 0.5]));
        let g = geometric_mean(&[(0, &a), (1, &b)]);
        // sqrt(0.45) = 0.670820, sqrt(0.05) = 0.223607, normalized.
        let (x, y) = (0.45f64.sqrt(), 0.05f64.sqrt());
        assert!((g.probs[0] - x / (x + y)).abs() < 1e-12);
        assert!((g.probs[0] - 0.75).abs() < 1e-12);
        assert!((g.probs[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn single_member_identity_and_uniform() {
        let a = d(&[0.2, 0.3, 0.5]);
        let g = geometric_mean(&[(4, &a)]);
        for (x, y) in g.probs.iter().zip(&a.probs) {
            assert!((x - y).abs() < 1e-15);
        }
        let u = Distribution::uniform(4);
        let g = geometric_mean(&[(0, &u), (1, &u), (2, &u)]);
        assert!(g.probs.iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn zero_probability_is_floored() {
        let (a, b) = (d(&[1.0, 0.0]), d(&[0.0, 1.0]));
        let g = geometric_mean(&[(0, &a), (1, &b)]);
        assert!((g.probs[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[0.25, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }
}
