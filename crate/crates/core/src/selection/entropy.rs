use super::{Candidate, CandidateSet, SelectionError, Strategy};
use crate::corpus::{Corpus, Utterance, UtteranceId};
use crate::neural::{Distribution, Ensemble};
use rayon::prelude::*;

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy_score(dist: &Distribution) -> f64 {
    -dist.probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Sorts `(id, score)` pairs by descending score, lower id first on ties.
pub fn rank_by_entropy(mut scored: Vec<(UtteranceId, f64)>) -> Vec<(UtteranceId, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
}

/// Top-`n` pool utterances by entropy of the ensemble distribution.
pub fn select_entropy<'a>(
    ensemble: &Ensemble,
    corpus: &Corpus,
    pool: impl IntoIterator<Item = &'a Utterance>,
    n: usize,
) -> Result<CandidateSet, SelectionError> {
    let pool: Vec<&Utterance> = pool.into_iter().collect();
    if n > pool.len() {
        return Err(SelectionError::NotEnoughPool { requested: n, pool: pool.len() });
    }
    let scored: Vec<(UtteranceId, f64)> = pool
        .par_iter()
        .map(|u| Ok((u.id, entropy_score(&ensemble.predict(&ensemble.encode(corpus, u))?))))
        .collect::<Result<_, SelectionError>>()?;
    Ok(CandidateSet {
        strategy: Strategy::Entropy,
        candidates: rank_by_entropy(scored)
            .into_iter()
            .take(n)
            .map(|(id, score)| Candidate { score: Some(score), ..Candidate::plain(id) })
            .collect(),
    })
}
