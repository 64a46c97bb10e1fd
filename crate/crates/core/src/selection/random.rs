use super::{Candidate, CandidateSet, SelectionError, Strategy};
use crate::corpus::UtteranceId;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Uniform sample of `n` pool ids without replacement. The sample is the
/// first `n` entries of a seeded shuffle, so a larger `n` extends a smaller one.
pub fn select_random(pool: &[UtteranceId], n: usize, seed: u64) -> Result<CandidateSet, SelectionError> {
    if n > pool.len() {
        return Err(SelectionError::NotEnoughPool { requested: n, pool: pool.len() });
    }
    let mut ids = pool.to_vec();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ids.truncate(n);
    Ok(CandidateSet { strategy: Strategy::Random, candidates: ids.into_iter().map(Candidate::plain).collect() })
}
