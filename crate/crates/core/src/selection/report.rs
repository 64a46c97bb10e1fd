use super::{CandidateSet, PredictionError, SelectionError};
use crate::corpus::{Corpus, Gold, UtteranceId};
use std::collections::BTreeSet;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportNeighbor {
    pub utterance_id: UtteranceId,
    pub text: String,
    /// Gold label name, `__OOD__` for out-of-domain.
    pub label: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorNeighbors {
    pub error_id: UtteranceId,
    pub text: String,
    pub gold: String,
    pub predicted: String,
    /// Candidates with at least one provenance record from this error, nearest first.
    pub neighbors: Vec<ReportNeighbor>,
    /// Distinct gold labels among the neighbors; out-of-domain counts as one label.
    pub distinct_labels: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborReport {
    pub errors: Vec<ErrorNeighbors>,
}

/// Lists each error next to the candidates it pulled in and their gold labels.
pub fn neighbor_report(
    errors: &[PredictionError],
    candidates: &CandidateSet,
    corpus: &Corpus,
) -> Result<NeighborReport, SelectionError> {
    let index = corpus.index();
    let lookup =
        |id: UtteranceId| index.get(&id).map(|&p| &corpus.utterances[p]).ok_or(SelectionError::UnknownUtterance(id));
    let mut report = NeighborReport::default();
    for e in errors {
        let u = lookup(e.utterance_id)?;
        let mut neighbors = Vec::new();
        for c in &candidates.candidates {
            if let Some(distance) = c.best_distance_for(e.utterance_id) {
                let n = lookup(c.utterance_id)?;
                neighbors.push(ReportNeighbor {
                    utterance_id: n.id,
                    text: corpus.text(n),
                    label: corpus.label_name(n.gold).to_string(),
                    distance,
                });
            }
        }
        neighbors.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.utterance_id.cmp(&b.utterance_id)));
        let distinct_labels = neighbors.iter().map(|n| n.label.as_str()).collect::<BTreeSet<_>>().len();
        report.errors.push(ErrorNeighbors {
            error_id: e.utterance_id,
            text: corpus.text(u),
            gold: corpus.label_name(u.gold).to_string(),
            predicted: corpus.label_name(Gold::Domain(e.ensemble_predicted_label)).to_string(),
            neighbors,
            distinct_labels,
        });
    }
    Ok(report)
}

impl fmt::Display for NeighborReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.errors {
            writeln!(f, "error {} gold={} predicted={} | {}", e.error_id, e.gold, e.predicted, e.text)?;
            for n in &e.neighbors {
                writeln!(f, "  {} label={} distance={:.4} | {}", n.utterance_id, n.label, n.distance, n.text)?;
            }
            writeln!(f, "  distinct_labels={}", e.distinct_labels)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{RawUtterance, Split};
    use crate::selection::{Candidate, Layer, Provenance, Strategy};

    fn corpus() -> Corpus {
        let mut raw = vec![RawUtterance {
            id: 0,
            tokens: vec!["play".into(), "it".into()],
            context: vec![],
            label: "music".into(),
            split: Split::Dev,
        }];
        for (i, label) in ["music", "radio", "music", "__OOD__", "radio"].iter().enumerate() {
            raw.push(RawUtterance {
                id: 10 + i as u64,
                tokens: vec![format!("w{i}")],
                context: vec![],
                label: label.to_string(),
                split: Split::Pool,
            });
        }
        Corpus::from_raw(raw).unwrap()
    }

    fn error() -> PredictionError {
        PredictionError {
            utterance_id: 0,
            gold_label: 0,
            ensemble_predicted_label: 1,
            erring_member_ids: [2].into_iter().collect(),
        }
    }

    fn neighbor(id: u64, distance: f64) -> Candidate {
        Candidate {
            utterance_id: id,
            assigned_error: Some(0),
            score: None,
            provenance: vec![Provenance { source_error_id: 0, member_id: 2, layer: Layer::Sm, rank: 1, distance }],
        }
    }

    #[test]
    fn counts_distinct_labels() {
        let set = CandidateSet {
            strategy: Strategy::Similarity,
            candidates: (0..5).map(|i| neighbor(10 + i, 1.0 - i as f64 * 0.1)).collect(),
        };
        let report = neighbor_report(&[error()], &set, &corpus()).unwrap();
        assert_eq!(report.errors[0].neighbors.len(), 5);
        assert_eq!(report.errors[0].neighbors[0].utterance_id, 14);
        let text = report.to_string();
        assert!(text.contains("distinct_labels=3"), "{text}");
        assert!(text.starts_with("error 0 gold=music predicted=radio | play it\n"));
    }

    #[test]
    fn error_without_neighbors() {
        let set = CandidateSet { strategy: Strategy::Similarity, candidates: vec![] };
        let report = neighbor_report(&[error()], &set, &corpus()).unwrap();
        assert!(report.errors[0].neighbors.is_empty());
        assert_eq!(report.to_string(), "error 0 gold=music predicted=radio | play it\n  distinct_labels=0\n");
    }
}
