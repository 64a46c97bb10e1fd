//! Which original errors the augmented model fixes, against how many selected
//! examples each error pulled in and how many of them share its label.

use super::HarnessError;
use crate::corpus::{Corpus, Gold, UtteranceId};
use crate::neural::Ensemble;
use crate::selection::{AnnotationResult, CandidateSet, PredictionError};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Lower edges of the candidate-count buckets; the last bucket is open.
pub const COUNT_BUCKET_EDGES: [usize; 5] = [1, 21, 41, 61, 81];
/// Lower edges of the agreement buckets; the last one includes 1.0.
pub const AGREEMENT_BUCKET_EDGES: [f64; 4] = [0.0, 0.25, 0.5, 0.75];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRow {
    pub error_id: UtteranceId,
    pub gold: String,
    pub before_predicted: String,
    pub after_predicted: String,
    /// The augmented ensemble predicts the gold label.
    pub corrected: bool,
    /// Labeled candidates with a provenance record from this error.
    pub candidate_count: usize,
    /// Of those, the ones whose gold label equals the error's.
    pub agreeing_count: usize,
    /// `agreeing_count / candidate_count`; null without candidates.
    pub agreement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionBucket {
    pub label: String,
    pub errors: usize,
    pub corrected: usize,
    /// Null for an empty bucket.
    pub correction_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionAnalysis {
    pub rows: Vec<CorrectionRow>,
    /// Errors with at least one candidate, by candidate count: 1–20, 21–40, 41–60, 61–80, 81+.
    pub by_candidate_count: Vec<CorrectionBucket>,
    /// Errors with at least one candidate, by agreement quartile.
    pub by_agreement: Vec<CorrectionBucket>,
}

/// Index into [`COUNT_BUCKET_EDGES`]; `None` for zero candidates.
pub fn count_bucket(count: usize) -> Option<usize> {
    (count >= 1).then(|| COUNT_BUCKET_EDGES.iter().rposition(|&edge| count >= edge).unwrap())
}

/// Index into [`AGREEMENT_BUCKET_EDGES`].
pub fn agreement_bucket(agreement: f64) -> usize {
    AGREEMENT_BUCKET_EDGES.iter().rposition(|&edge| agreement >= edge).unwrap_or(0)
}

fn bucket_labels() -> (Vec<String>, Vec<String>) {
    let counts = COUNT_BUCKET_EDGES
        .iter()
        .enumerate()
        .map(|(i, &lo)| match COUNT_BUCKET_EDGES.get(i + 1) {
            Some(&next) => format!("{lo}-{}", next - 1),
            None => format!("{lo}+"),
        })
        .collect();
    let agreement = AGREEMENT_BUCKET_EDGES
        .iter()
        .enumerate()
        .map(|(i, &lo)| match AGREEMENT_BUCKET_EDGES.get(i + 1) {
            Some(&next) => format!("[{lo},{next})"),
            None => format!("[{lo},1]"),
        })
        .collect();
    (counts, agreement)
}

fn aggregate(labels: Vec<String>, members: impl Iterator<Item = (usize, bool)>) -> Vec<CorrectionBucket> {
    let mut buckets: Vec<CorrectionBucket> = labels
        .into_iter()
        .map(|label| CorrectionBucket { label, errors: 0, corrected: 0, correction_rate: None })
        .collect();
    for (b, corrected) in members {
        buckets[b].errors += 1;
        buckets[b].corrected += corrected as usize;
    }
    for b in &mut buckets {
        b.correction_rate = (b.errors > 0).then(|| b.corrected as f64 / b.errors as f64);
    }
    buckets
}

impl CorrectionAnalysis {
    /// Buckets recomputed from `rows`.
    pub fn from_rows(rows: Vec<CorrectionRow>) -> CorrectionAnalysis {
        let (count_labels, agreement_labels) = bucket_labels();
        let by_candidate_count = aggregate(
            count_labels,
            rows.iter().filter_map(|r| count_bucket(r.candidate_count).map(|b| (b, r.corrected))),
        );
        let by_agreement = aggregate(
            agreement_labels,
            rows.iter().filter_map(|r| r.agreement.map(|a| (agreement_bucket(a), r.corrected))),
        );
        CorrectionAnalysis { rows, by_candidate_count, by_agreement }
    }
}

/// Per-error correction outcome of `after` (trained with the selected data)
/// relative to the labeled candidates in `annotation` attributed to each error.
pub fn analyze_corrections(
    before: &Ensemble,
    after: &Ensemble,
    corpus: &Corpus,
    errors: &[PredictionError],
    candidates: &CandidateSet,
    annotation: &AnnotationResult,
) -> Result<CorrectionAnalysis, HarnessError> {
    let index = corpus.index();
    let labels: HashMap<UtteranceId, usize> = annotation.labeled.iter().copied().collect();
    let mut rows = Vec::with_capacity(errors.len());
    for e in errors {
        let u = index
            .get(&e.utterance_id)
            .map(|&p| &corpus.utterances[p])
            .ok_or(crate::selection::SelectionError::UnknownUtterance(e.utterance_id))?;
        let before_predicted = before.predict(&before.encode(corpus, u))?.argmax();
        let after_predicted = after.predict(&after.encode(corpus, u))?.argmax();
        let attributed: Vec<usize> = candidates
            .candidates
            .iter()
            .filter(|c| c.attributed_to(e.utterance_id))
            .filter_map(|c| labels.get(&c.utterance_id).copied())
            .collect();
        let agreeing_count = attributed.iter().filter(|&&l| l == e.gold_label).count();
        let name = |l: usize| corpus.label_name(Gold::Domain(l)).to_string();
        rows.push(CorrectionRow {
            error_id: e.utterance_id,
            gold: name(e.gold_label),
            before_predicted: name(before_predicted),
            after_predicted: name(after_predicted),
            corrected: after_predicted == e.gold_label,
            candidate_count: attributed.len(),
            agreeing_count,
            agreement: (!attributed.is_empty()).then(|| agreeing_count as f64 / attributed.len() as f64),
        });
    }
    Ok(CorrectionAnalysis::from_rows(rows))
}
