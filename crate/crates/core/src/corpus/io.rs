//! JSONL persistence. One object per line:
//! `{"id": 3, "tokens": [...] | "text": "...", "context": [...], "label": "...", "split": "dev"}`.

use super::{tokenize, Corpus, CorpusError, RawUtterance, Split};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    context: Vec<String>,
    label: String,
    split: String,
}

pub fn read_corpus<R: Read>(reader: R) -> Result<Corpus, CorpusError> {
    let mut raw = Vec::new();
    let mut ids = HashSet::new();
    for (index, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = index + 1;
        let malformed = |message: String| CorpusError::Malformed { line: line_no, message };
        let line = line.map_err(|e| malformed(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let tokens = match (record.text, record.tokens) {
            (Some(text), None) => tokenize(&text),
            (None, Some(tokens)) => tokens,
            _ => return Err(malformed("exactly one of `text` or `tokens` is required".into())),
        };
        if tokens.is_empty() {
            return Err(malformed("utterance has no tokens".into()));
        }
        let split =
            Split::parse(&record.split).ok_or_else(|| malformed(format!("unknown split {:?}", record.split)))?;
        if !ids.insert(record.id) {
            return Err(CorpusError::DuplicateId { line: line_no, id: record.id });
        }
        raw.push((
            line_no,
            RawUtterance { id: record.id, tokens, context: record.context, label: record.label, split },
        ));
    }
    let lines: std::collections::HashMap<u64, usize> = raw.iter().map(|(l, r)| (r.id, *l)).collect();
    Corpus::from_raw(raw.into_iter().map(|(_, r)| r).collect()).map_err(|e| match e {
        CorpusError::InvalidUtterance { id, message } => CorpusError::Malformed { line: lines[&id], message },
        other => other,
    })
}

pub fn write_corpus<W: Write>(corpus: &Corpus, writer: W) -> Result<(), std::io::Error> {
    let mut out = BufWriter::new(writer);
    for r in corpus.to_raw() {
        let record = Record {
            id: r.id,
            text: None,
            tokens: Some(r.tokens),
            context: r.context,
            label: r.label,
            split: r.split.as_str().to_string(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    read_corpus(file)
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io { path: path.display().to_string(), source };
    let file = File::create(path).map_err(io_err)?;
    write_corpus(corpus, file).map_err(io_err)
}
