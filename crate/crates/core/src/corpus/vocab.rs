use super::{Corpus, CorpusError, Split, Utterance};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Token-to-id map. Ids 0 and 1 are padding and unknown; real tokens follow in
/// lexicographic order so the mapping does not depend on corpus order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Vocabulary {
        let mut all = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        all.extend(tokens);
        let index = all.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens: all, index }
    }

    /// Total number of ids, specials included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: impl IntoIterator<Item = S>) -> Vec<usize> {
        tokens.into_iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Hex SHA-256 over the id-ordered token list.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for token in &self.tokens {
            hasher.update(token.as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(hasher.finalize())
    }
}

/// Builds the vocabulary from the `baseline_train` split only; tokens seen
/// fewer than `min_count` times are left to map to the unknown id.
pub fn build_vocabulary(corpus: &Corpus, min_count: usize) -> Result<Vocabulary, CorpusError> {
    vocabulary_from(corpus, corpus.split(Split::BaselineTrain), min_count)
}

/// Same rule as [`build_vocabulary`] over an arbitrary training set.
pub fn vocabulary_from<'a>(
    corpus: &Corpus,
    training: impl IntoIterator<Item = &'a Utterance>,
    min_count: usize,
) -> Result<Vocabulary, CorpusError> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut any = false;
    for u in training {
        any = true;
        for token in corpus.model_tokens(u) {
            *counts.entry(token).or_default() += 1;
        }
    }
    if !any {
        return Err(CorpusError::NoTrainingData);
    }
    Ok(Vocabulary::from_tokens(counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).map(|(t, _)| t)))
}
