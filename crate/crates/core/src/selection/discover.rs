use super::SelectionError;
use crate::corpus::{Corpus, LabelId, Utterance, UtteranceId};
use crate::neural::{evaluate, Ensemble, NeuralError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// A dev utterance misclassified by at least one member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionError {
    pub utterance_id: UtteranceId,
    pub gold_label: LabelId,
    pub ensemble_predicted_label: LabelId,
    pub erring_member_ids: BTreeSet<usize>,
}

/// One [`PredictionError`] per dev utterance that any member gets wrong,
/// sorted by utterance id. The ensemble itself may still be right.
pub fn discover_errors<'a>(
    ensemble: &Ensemble,
    corpus: &Corpus,
    dev: impl IntoIterator<Item = &'a Utterance>,
) -> Result<Vec<PredictionError>, SelectionError> {
    let evaluation = evaluate(ensemble, corpus, dev).map_err(|e| match e {
        NeuralError::EmptyDataset => SelectionError::EmptyDevSet,
        other => other.into(),
    })?;
    let mut errors: Vec<PredictionError> = evaluation
        .predictions
        .iter()
        .filter_map(|&(id, gold, predicted)| {
            let erring: BTreeSet<usize> = ensemble
                .members
                .iter()
                .zip(&evaluation.member_errors)
                .filter(|(_, errs)| errs.contains(&id))
                .map(|(m, _)| m.id)
                .collect();
            (!erring.is_empty()).then_some(PredictionError {
                utterance_id: id,
                gold_label: gold,
                ensemble_predicted_label: predicted,
                erring_member_ids: erring,
            })
        })
        .collect();
    errors.sort_by_key(|e| e.utterance_id);
    Ok(errors)
}
