//! Utterance data model, tokenization, vocabulary and the synthetic corpus
//! generator.
//!
//! A [`Corpus`] owns the utterances plus the interned label and context-feature
//! tables. Labels and context features are interned in first-appearance order,
//! so a corpus loaded from disk is identical to the one that was saved.

mod generator;
mod io;
mod tokenize;
mod vocab;

pub use generator::{generate_synthetic_corpus, GeneratorSpec, SplitSizes};
pub use io::{load_corpus, read_corpus, save_corpus, write_corpus};
pub use tokenize::tokenize;
pub use vocab::{build_vocabulary, vocabulary_from, Vocabulary, PAD_ID, UNK_ID};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use thiserror::Error;

/// Label string that marks an out-of-domain utterance in corpus files.
pub const OOD_LABEL: &str = "__OOD__";

/// Prefix given to context features when they are fed to the model as tokens.
pub const CONTEXT_TOKEN_PREFIX: &str = "#ctx:";

pub type UtteranceId = u64;
pub type LabelId = usize;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no training data")]
    NoTrainingData,
    #[error("infeasible generator spec: {0}")]
    InfeasibleSpec(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate utterance id {id}")]
    DuplicateId { line: usize, id: UtteranceId },
    #[error("utterance {id}: {message}")]
    InvalidUtterance { id: UtteranceId, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    BaselineTrain,
    Dev,
    Pool,
    BlindTest,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::BaselineTrain, Split::Dev, Split::Pool, Split::BlindTest];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::BaselineTrain => "baseline_train",
            Split::Dev => "dev",
            Split::Pool => "pool",
            Split::BlindTest => "blind_test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|split| split.as_str() == s)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Gold annotation of an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gold {
    Domain(LabelId),
    OutOfDomain,
}

impl Gold {
    pub fn domain(self) -> Option<LabelId> {
        match self {
            Gold::Domain(label) => Some(label),
            Gold::OutOfDomain => None,
        }
    }

    pub fn is_ood(self) -> bool {
        matches!(self, Gold::OutOfDomain)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub id: UtteranceId,
    pub tokens: Vec<String>,
    /// Interned ids into [`Corpus::context_features`].
    pub context: Vec<usize>,
    pub gold: Gold,
    pub split: Split,
}

/// An utterance with label and context still in string form; the unit the
/// generator and the file loader produce before interning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawUtterance {
    pub id: UtteranceId,
    pub tokens: Vec<String>,
    pub context: Vec<String>,
    pub label: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
    /// Domain label names, indexed by [`LabelId`].
    pub labels: Vec<String>,
    pub context_features: Vec<String>,
}

impl Corpus {
    /// Interns labels and context features in first-appearance order and
    /// checks the corpus invariants.
    pub fn from_raw(raw: Vec<RawUtterance>) -> Result<Corpus, CorpusError> {
        let mut label_ids: HashMap<String, usize> = HashMap::new();
        let mut context_ids: HashMap<String, usize> = HashMap::new();
        let mut corpus = Corpus::default();
        let mut seen = HashSet::new();
        for (index, r) in raw.into_iter().enumerate() {
            if !seen.insert(r.id) {
                return Err(CorpusError::DuplicateId { line: index + 1, id: r.id });
            }
            let gold = if r.label == OOD_LABEL {
                Gold::OutOfDomain
            } else {
                let next = corpus.labels.len();
                let id = *label_ids.entry(r.label.clone()).or_insert_with(|| {
                    corpus.labels.push(r.label.clone());
                    next
                });
                Gold::Domain(id)
            };
            let context = r
                .context
                .iter()
                .map(|feature| {
                    let next = corpus.context_features.len();
                    *context_ids.entry(feature.clone()).or_insert_with(|| {
                        corpus.context_features.push(feature.clone());
                        next
                    })
                })
                .collect();
            let utterance = Utterance { id: r.id, tokens: r.tokens, context, gold, split: r.split };
            validate_utterance(&utterance)?;
            corpus.utterances.push(utterance);
        }
        Ok(corpus)
    }

    pub fn to_raw(&self) -> Vec<RawUtterance> {
        self.utterances
            .iter()
            .map(|u| RawUtterance {
                id: u.id,
                tokens: u.tokens.clone(),
                context: u.context.iter().map(|&c| self.context_features[c].clone()).collect(),
                label: self.label_name(u.gold).to_string(),
                split: u.split,
            })
            .collect()
    }

    pub fn label_name(&self, gold: Gold) -> &str {
        match gold {
            Gold::Domain(label) => &self.labels[label],
            Gold::OutOfDomain => OOD_LABEL,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Utterance> + '_ {
        self.utterances.iter().filter(move |u| u.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Index from utterance id to position in `utterances`.
    pub fn index(&self) -> BTreeMap<UtteranceId, usize> {
        self.utterances.iter().enumerate().map(|(pos, u)| (u.id, pos)).collect()
    }

    /// Model input tokens: context features (prefixed) followed by the text tokens.
    pub fn model_tokens<'a>(&'a self, u: &'a Utterance) -> impl Iterator<Item = String> + 'a {
        u.context
            .iter()
            .map(|&c| format!("{CONTEXT_TOKEN_PREFIX}{}", self.context_features[c]))
            .chain(u.tokens.iter().cloned())
    }

    pub fn text(&self, u: &Utterance) -> String {
        u.tokens.join(" ")
    }
}

fn validate_utterance(u: &Utterance) -> Result<(), CorpusError> {
    if u.tokens.is_empty() {
        return Err(CorpusError::InvalidUtterance { id: u.id, message: "empty token sequence".into() });
    }
    if u.gold.is_ood() && u.split != Split::Pool {
        return Err(CorpusError::InvalidUtterance {
            id: u.id,
            message: format!("out-of-domain label in split {}", u.split),
        });
    }
    Ok(())
}
