//! Candidate selection: prediction-error discovery, per-member/per-layer pool
//! embeddings, union-over-embedding-function kNN expansion, the entropy and
//! random baselines, and oracle annotation with out-of-domain accounting.

mod annotate;
mod discover;
mod entropy;
mod knn;
mod random;
mod report;
mod similarity;
mod store;

pub use annotate::{annotate_with_oracle, AnnotationResult, Grading};
pub use discover::{discover_errors, PredictionError};
pub use entropy::{entropy_score, rank_by_entropy, select_entropy};
pub use knn::{knn_query, Neighbor};
pub use random::select_random;
pub use report::{neighbor_report, ErrorNeighbors, NeighborReport, ReportNeighbor};
pub use similarity::{select_similarity, SelectionBudget};
pub use store::{embed_pool, read_matrix, write_matrix, EmbeddingStore, Matrix};

use crate::corpus::{CorpusError, UtteranceId};
use crate::neural::NeuralError;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("empty dev set")]
    EmptyDevSet,
    #[error("empty pool")]
    EmptyPool,
    #[error("requested {requested} candidates from a pool of {pool}")]
    NotEnoughPool { requested: usize, pool: usize },
    #[error("query has dimension {query}, matrix for member {member} layer {layer} has {matrix}")]
    DimensionMismatch { query: usize, matrix: usize, member: usize, layer: Layer },
    #[error("no embeddings for member {member} layer {layer}")]
    MissingMatrix { member: usize, layer: Layer },
    #[error("utterance {0} not found in corpus")]
    UnknownUtterance(UtteranceId),
    #[error("candidate {0} is not a pool utterance")]
    NotInPool(UtteranceId),
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("malformed embedding file: {0}")]
    MalformedStore(String),
    #[error("malformed candidate file line {line}: {message}")]
    MalformedCandidates { line: usize, message: String },
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// The three embedding functions tapped from each member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    /// Input to the summarization layer.
    Su,
    /// Input to the feed-forward layers.
    Ff,
    /// Input to the softmax layer.
    Sm,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::Su, Layer::Ff, Layer::Sm];

    pub fn tag(self) -> &'static str {
        match self {
            Layer::Su => "su",
            Layer::Ff => "ff",
            Layer::Sm => "sm",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Layer> {
        Layer::ALL.into_iter().find(|l| l.tag() == tag)
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Similarity,
    Entropy,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Similarity, Strategy::Entropy, Strategy::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Similarity => "similarity",
            Strategy::Entropy => "entropy",
            Strategy::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Strategy> {
        Strategy::ALL.into_iter().find(|st| st.as_str() == s)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Why a pool utterance was proposed: it ranked `rank` (1-based) among the
/// neighbors of `source_error_id` under `member_id`'s `layer` embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub source_error_id: UtteranceId,
    pub member_id: usize,
    pub layer: Layer,
    pub rank: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub utterance_id: UtteranceId,
    /// Error that claimed this candidate during budget allocation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assigned_error: Option<UtteranceId>,
    /// Strategy score (entropy in nats for the entropy sampler).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub provenance: Vec<Provenance>,
}

impl Candidate {
    pub fn plain(utterance_id: UtteranceId) -> Candidate {
        Candidate { utterance_id, assigned_error: None, score: None, provenance: Vec::new() }
    }

    /// Smallest distance among the records contributed by `error`.
    pub fn best_distance_for(&self, error: UtteranceId) -> Option<f64> {
        self.provenance.iter().filter(|p| p.source_error_id == error).map(|p| p.distance).min_by(f64::total_cmp)
    }

    pub fn attributed_to(&self, error: UtteranceId) -> bool {
        self.provenance.iter().any(|p| p.source_error_id == error)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub strategy: Strategy,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = UtteranceId> + '_ {
        self.candidates.iter().map(|c| c.utterance_id)
    }

    /// One candidate per line, each tagged with the strategy.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), SelectionError> {
        for candidate in &self.candidates {
            serde_json::to_writer(&mut out, &CandidateLine::new(self.strategy, candidate.clone()))
                .map_err(|e| SelectionError::Io(e.into()))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<CandidateSet, SelectionError> {
        let mut strategy = None;
        let mut candidates = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| SelectionError::MalformedCandidates { line: i + 1, message };
            let parsed: CandidateLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            match strategy {
                None => strategy = Some(parsed.strategy),
                Some(s) if s != parsed.strategy => return Err(bad("mixed strategies".into())),
                Some(_) => {}
            }
            candidates.push(parsed.into_candidate());
        }
        Ok(CandidateSet { strategy: strategy.unwrap_or(Strategy::Similarity), candidates })
    }
}

/// On-disk form of one candidate.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CandidateLine {
    strategy: Strategy,
    utterance_id: UtteranceId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    assigned_error: Option<UtteranceId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(default)]
    provenance: Vec<Provenance>,
}

impl CandidateLine {
    fn new(strategy: Strategy, c: Candidate) -> CandidateLine {
        CandidateLine {
            strategy,
            utterance_id: c.utterance_id,
            assigned_error: c.assigned_error,
            score: c.score,
            provenance: c.provenance,
        }
    }

    fn into_candidate(self) -> Candidate {
        Candidate {
            utterance_id: self.utterance_id,
            assigned_error: self.assigned_error,
            score: self.score,
            provenance: self.provenance,
        }
    }
}
