//! JSON checkpoint of a whole ensemble. The vocabulary itself is not stored;
//! its hash is, and loading rebuilds the vocabulary from the corpus and
//! refuses a mismatch.

use super::config::ModelConfig;
use super::ensemble::{Ensemble, Member};
use super::model::Model;
use super::params::{Layout, ModelParams};
use super::NeuralError;
use crate::corpus::{build_vocabulary, Corpus};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

const FORMAT: &str = "simsel-ensemble/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberRecord {
    pub id: usize,
    pub config: ModelConfig,
    pub tensors: Vec<TensorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleCheckpoint {
    pub format: String,
    pub vocabulary_hash: String,
    pub vocabulary_size: usize,
    pub vocabulary_min_count: usize,
    pub labels: Vec<String>,
    pub members: Vec<MemberRecord>,
}

impl EnsembleCheckpoint {
    pub fn from_ensemble(ensemble: &Ensemble, min_count: usize) -> EnsembleCheckpoint {
        let members = ensemble
            .members
            .iter()
            .map(|m| MemberRecord {
                id: m.id,
                config: m.model.config.clone(),
                tensors: m
                    .model
                    .params
                    .layout
                    .tensors
                    .iter()
                    .map(|t| TensorRecord {
                        name: t.name.clone(),
                        shape: [t.rows, t.cols],
                        data: m.model.params.values[t.range()].to_vec(),
                    })
                    .collect(),
            })
            .collect();
        EnsembleCheckpoint {
            format: FORMAT.into(),
            vocabulary_hash: ensemble.vocabulary.hash(),
            vocabulary_size: ensemble.vocabulary.len(),
            vocabulary_min_count: min_count,
            labels: ensemble.labels.clone(),
            members,
        }
    }

    /// Rebuilds the ensemble against `corpus`, whose `baseline_train` split
    /// must reproduce the stored vocabulary.
    pub fn into_ensemble(self, corpus: &Corpus) -> Result<Ensemble, NeuralError> {
        let bad = |m: String| NeuralError::Checkpoint(m);
        if self.format != FORMAT {
            return Err(bad(format!("unknown format {:?}", self.format)));
        }
        let vocabulary = build_vocabulary(corpus, self.vocabulary_min_count)
            .map_err(|e| bad(format!("cannot rebuild vocabulary: {e}")))?;
        if vocabulary.hash() != self.vocabulary_hash {
            return Err(NeuralError::VocabularyMismatch { expected: vocabulary.hash(), found: self.vocabulary_hash });
        }
        let mut members = Vec::with_capacity(self.members.len());
        for record in self.members {
            record.config.validate().map_err(NeuralError::InvalidConfig)?;
            let layout = Layout::new(&record.config, vocabulary.len(), self.labels.len());
            if record.tensors.len() != layout.tensors.len() {
                return Err(bad(format!("member {}: expected {} tensors", record.id, layout.tensors.len())));
            }
            let mut params = ModelParams::zeros(layout);
            for (spec, tensor) in params.layout.tensors.clone().iter().zip(record.tensors) {
                if tensor.name != spec.name || tensor.shape != [spec.rows, spec.cols] || tensor.data.len() != spec.len()
                {
                    return Err(bad(format!(
                        "member {}: tensor {} has shape {:?}, expected {} {:?}",
                        record.id,
                        tensor.name,
                        tensor.shape,
                        spec.name,
                        [spec.rows, spec.cols]
                    )));
                }
                params.values[spec.range()].copy_from_slice(&tensor.data);
            }
            if !params.is_finite() {
                return Err(bad(format!("member {}: non-finite parameter", record.id)));
            }
            members.push(Member { id: record.id, model: Model::new(record.config, params) });
        }
        if members.is_empty() {
            return Err(bad("no members".into()));
        }
        Ok(Ensemble { vocabulary, labels: self.labels, members })
    }
}

pub fn save_ensemble(ensemble: &Ensemble, min_count: usize, path: impl AsRef<Path>) -> Result<(), NeuralError> {
    let path = path.as_ref();
    let io = |source| NeuralError::Io { path: path.display().to_string(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    serde_json::to_writer(&mut out, &EnsembleCheckpoint::from_ensemble(ensemble, min_count))
        .map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
    out.flush().map_err(io)
}

pub fn load_ensemble(path: impl AsRef<Path>, corpus: &Corpus) -> Result<Ensemble, NeuralError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| NeuralError::Io { path: path.display().to_string(), source })?;
    let checkpoint: EnsembleCheckpoint =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
    checkpoint.into_ensemble(corpus)
}
