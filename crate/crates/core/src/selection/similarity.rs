//! Expansion of prediction errors into the pool by kNN under every embedding
//! function of every erring member.

use super::{
    knn_query, Candidate, CandidateSet, EmbeddingStore, Layer, PredictionError, Provenance, SelectionError, Strategy,
};
use crate::corpus::{Corpus, UtteranceId};
use crate::neural::Ensemble;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionBudget {
    /// Neighbors per (error, member, layer) query.
    pub k: usize,
    /// Maximum number of candidates over all errors.
    pub total_budget: usize,
}

impl SelectionBudget {
    pub fn new(k: usize, total_budget: usize) -> Result<SelectionBudget, SelectionError> {
        let budget = SelectionBudget { k, total_budget };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<(), SelectionError> {
        if self.k == 0 {
            return Err(SelectionError::InvalidBudget("k must be at least 1".into()));
        }
        if self.total_budget == 0 {
            return Err(SelectionError::InvalidBudget("total budget must be at least 1".into()));
        }
        Ok(())
    }

    /// Upper bound on candidates one error can contribute: 3·k per erring member.
    pub fn per_error_cap(&self, error: &PredictionError) -> usize {
        error.erring_member_ids.len() * Layer::ALL.len() * self.k
    }
}

/// Per-error union of neighbors: candidate id → its provenance records.
type Expansion = BTreeMap<UtteranceId, Vec<Provenance>>;

fn expand_error(
    error: &PredictionError,
    ensemble: &Ensemble,
    corpus: &Corpus,
    index: &BTreeMap<UtteranceId, usize>,
    store: &EmbeddingStore,
    k: usize,
    exclude: &HashSet<UtteranceId>,
) -> Result<Expansion, SelectionError> {
    let position = *index.get(&error.utterance_id).ok_or(SelectionError::UnknownUtterance(error.utterance_id))?;
    let tokens = ensemble.encode(corpus, &corpus.utterances[position]);
    let mut expansion = Expansion::new();
    for &member_id in &error.erring_member_ids {
        let member = ensemble
            .members
            .iter()
            .position(|m| m.id == member_id)
            .ok_or(SelectionError::MissingMatrix { member: member_id, layer: Layer::Su })?;
        let (_, taps) = ensemble.member_forward(member, &tokens)?;
        for (layer, query) in [(Layer::Su, &taps.su), (Layer::Ff, &taps.ff), (Layer::Sm, &taps.sm)] {
            for (rank, neighbor) in knn_query(store, query, member_id, layer, k)?.into_iter().enumerate() {
                if exclude.contains(&neighbor.utterance_id) {
                    continue;
                }
                expansion.entry(neighbor.utterance_id).or_default().push(Provenance {
                    source_error_id: error.utterance_id,
                    member_id,
                    layer,
                    rank: rank + 1,
                    distance: neighbor.distance,
                });
            }
        }
    }
    Ok(expansion)
}

fn best_distance(records: &[Provenance]) -> f64 {
    records.iter().map(|p| p.distance).min_by(f64::total_cmp).unwrap_or(f64::INFINITY)
}

/// Union-over-embedding-function kNN selection.
///
/// Every erring member of every error queries its three embedding functions
/// for `budget.k` neighbors; `exclude` (already labeled or previously
/// selected ids) is filtered out. Candidates are deduplicated globally with
/// their provenance concatenated. When more than `budget.total_budget`
/// remain, errors claim candidates round-robin in utterance-id order, each
/// taking its own candidates nearest first. The result is ordered by claiming
/// error, then by distance to that error.
pub fn select_similarity(
    errors: &[PredictionError],
    ensemble: &Ensemble,
    corpus: &Corpus,
    store: &EmbeddingStore,
    budget: &SelectionBudget,
    exclude: &HashSet<UtteranceId>,
) -> Result<CandidateSet, SelectionError> {
    budget.validate()?;
    let mut errors: Vec<&PredictionError> = errors.iter().collect();
    errors.sort_by_key(|e| e.utterance_id);
    let index = corpus.index();
    let expansions: Vec<Expansion> = errors
        .par_iter()
        .map(|e| expand_error(e, ensemble, corpus, &index, store, budget.k, exclude))
        .collect::<Result<_, _>>()?;

    // Each error's queue, nearest first.
    let queues: Vec<Vec<(f64, UtteranceId)>> = expansions
        .iter()
        .map(|exp| {
            let mut q: Vec<(f64, UtteranceId)> = exp.iter().map(|(&id, recs)| (best_distance(recs), id)).collect();
            q.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            q
        })
        .collect();

    let mut claimed: BTreeMap<UtteranceId, usize> = BTreeMap::new();
    let mut cursors = vec![0usize; queues.len()];
    'rounds: loop {
        let mut progressed = false;
        for (e, queue) in queues.iter().enumerate() {
            while cursors[e] < queue.len() && claimed.contains_key(&queue[cursors[e]].1) {
                cursors[e] += 1;
            }
            if cursors[e] < queue.len() {
                if claimed.len() == budget.total_budget {
                    break 'rounds;
                }
                claimed.insert(queue[cursors[e]].1, e);
                cursors[e] += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }

    let mut candidates: Vec<(usize, f64, Candidate)> = claimed
        .into_iter()
        .map(|(id, e)| {
            let provenance: Vec<Provenance> =
                expansions.iter().filter_map(|exp| exp.get(&id)).flatten().cloned().collect();
            let own = best_distance(&expansions[e][&id]);
            let candidate =
                Candidate { utterance_id: id, assigned_error: Some(errors[e].utterance_id), score: None, provenance };
            (e, own, candidate)
        })
        .collect();
    candidates.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.utterance_id.cmp(&b.2.utterance_id)));
    Ok(CandidateSet { strategy: Strategy::Similarity, candidates: candidates.into_iter().map(|c| c.2).collect() })
}
