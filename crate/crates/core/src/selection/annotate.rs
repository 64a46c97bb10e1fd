use super::{CandidateSet, SelectionError};
use crate::corpus::{Corpus, Gold, LabelId, Split, UtteranceId};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// One oracle grading; `gold` is `None` for an out-of-domain utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grading {
    pub utterance_id: UtteranceId,
    pub gold: Option<LabelId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnnotationResult {
    pub graded_count: usize,
    /// In-domain gradings, in candidate order.
    pub labeled: Vec<(UtteranceId, LabelId)>,
    pub ood_discarded_count: usize,
    pub gradings: Vec<Grading>,
}

impl AnnotationResult {
    /// Fraction of gradings spent on out-of-domain utterances; 0 when nothing was graded.
    pub fn ood_rate(&self) -> f64 {
        if self.graded_count == 0 {
            0.0
        } else {
            self.ood_discarded_count as f64 / self.graded_count as f64
        }
    }

    /// One grading per line with the label name, `__OOD__` for discards.
    pub fn write_jsonl<W: Write>(&self, corpus: &Corpus, mut out: W) -> Result<(), SelectionError> {
        #[derive(Serialize)]
        struct Line<'a> {
            utterance_id: UtteranceId,
            label: &'a str,
            discarded: bool,
        }
        for g in &self.gradings {
            let gold = g.gold.map_or(Gold::OutOfDomain, Gold::Domain);
            let line =
                Line { utterance_id: g.utterance_id, label: corpus.label_name(gold), discarded: g.gold.is_none() };
            serde_json::to_writer(&mut out, &line).map_err(|e| SelectionError::Io(e.into()))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Grades candidates in set order until `grading_cap` gradings are spent
/// (unbounded when `None`) or the candidates run out. Out-of-domain gradings
/// count against the cap but yield no label.
pub fn annotate_with_oracle(
    candidates: &CandidateSet,
    corpus: &Corpus,
    grading_cap: Option<usize>,
) -> Result<AnnotationResult, SelectionError> {
    let index = corpus.index();
    let mut result = AnnotationResult::default();
    for id in candidates.ids() {
        let u = index.get(&id).map(|&p| &corpus.utterances[p]).ok_or(SelectionError::NotInPool(id))?;
        if u.split != Split::Pool {
            return Err(SelectionError::NotInPool(id));
        }
    }
    for id in candidates.ids().take(grading_cap.unwrap_or(usize::MAX)) {
        let gold = corpus.utterances[index[&id]].gold.domain();
        result.graded_count += 1;
        match gold {
            Some(label) => result.labeled.push((id, label)),
            None => result.ood_discarded_count += 1,
        }
        result.gradings.push(Grading { utterance_id: id, gold });
    }
    Ok(result)
}
