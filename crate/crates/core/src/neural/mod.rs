//! Recurrent text classifier, trainer, gradient verification and the
//! geometric-mean ensemble.

mod checkpoint;
mod config;
mod ensemble;
mod gradcheck;
mod model;
mod params;
mod train;

pub use checkpoint::{load_ensemble, save_ensemble, EnsembleCheckpoint};
pub use config::{EnsembleSpec, ModelConfig, SuTap, SummarizationMode};
pub use ensemble::{argmax, evaluate, geometric_mean, Ensemble, Evaluation, Member, PROBABILITY_FLOOR};
pub use gradcheck::{gradient_check, gradient_check_with, GradCheckReport, MIN_CHECKED_COORDINATES};
pub use model::{softmax, Model, Trace};
pub use params::{Layout, ModelParams, TensorSpec};
pub use train::{train_member, TrainingExample, TrainingRun};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("token id {token} outside vocabulary of size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("empty token sequence")]
    EmptyInput,
    #[error("label id {label} outside label set of size {n_labels}")]
    LabelOutOfRange { label: usize, n_labels: usize },
    #[error("no training data")]
    EmptyTrainingData,
    #[error("empty evaluation set")]
    EmptyDataset,
    #[error("utterance {0} is out-of-domain; evaluation needs in-domain labels")]
    OutOfDomainInDataset(u64),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint vocabulary hash {found} does not match corpus vocabulary {expected}")]
    VocabularyMismatch { expected: String, found: String },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Probability distribution over label ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub probs: Vec<f64>,
}

impl Distribution {
    pub fn uniform(n: usize) -> Distribution {
        Distribution { probs: vec![1.0 / n as f64; n] }
    }

    /// Highest-probability label, lowest id on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

/// The three fixed-size vectors tapped from one member for one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTriple {
    pub model_id: usize,
    pub su: Vec<f64>,
    pub ff: Vec<f64>,
    pub sm: Vec<f64>,
}
