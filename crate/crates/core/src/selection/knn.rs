use super::{EmbeddingStore, Layer, SelectionError};
use crate::corpus::UtteranceId;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub utterance_id: UtteranceId,
    /// Euclidean distance on the raw embeddings.
    pub distance: f64,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact top-`k` pool utterances by Euclidean distance to `query` under one
/// member's `layer` embedding. Ties go to the lower utterance id.
pub fn knn_query(
    store: &EmbeddingStore,
    query: &[f64],
    member: usize,
    layer: Layer,
    k: usize,
) -> Result<Vec<Neighbor>, SelectionError> {
    let matrix = store.matrix(member, layer)?;
    if query.len() != matrix.dim {
        return Err(SelectionError::DimensionMismatch { query: query.len(), matrix: matrix.dim, member, layer });
    }
    let mut scored: Vec<(f64, UtteranceId)> =
        (0..matrix.rows).map(|i| (squared_distance(query, matrix.row(i)), store.ids[i])).collect();
    let order = |a: &(f64, UtteranceId), b: &(f64, UtteranceId)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let k = k.min(scored.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(order);
    Ok(scored.into_iter().map(|(d2, id)| Neighbor { utterance_id: id, distance: d2.sqrt() }).collect())
}
