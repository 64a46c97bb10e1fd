//! Dense per-(member, layer) matrices of pool embeddings.
//!
//! Binary file layout, all integers and floats little-endian:
//! `b"SSEM"`, member id (u32), layer tag (2 ASCII bytes: su/ff/sm), rows (u64),
//! dim (u64), `rows × dim` f64 values row-major, then `rows` u64 utterance ids.

use super::{Layer, SelectionError};
use crate::corpus::{Corpus, Utterance, UtteranceId};
use crate::neural::{EmbeddingTriple, Ensemble};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::io::{Read, Write};

const MAGIC: &[u8; 4] = b"SSEM";

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    /// Pool position → utterance id.
    pub ids: Vec<UtteranceId>,
    pub matrices: BTreeMap<(usize, Layer), Matrix>,
}

impl EmbeddingStore {
    pub fn matrix(&self, member: usize, layer: Layer) -> Result<&Matrix, SelectionError> {
        self.matrices.get(&(member, layer)).ok_or(SelectionError::MissingMatrix { member, layer })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn save_dir(&self, dir: impl AsRef<std::path::Path>) -> Result<(), SelectionError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for &(member, layer) in self.matrices.keys() {
            let file = std::fs::File::create(dir.join(format!("member{member}_{layer}.emb")))?;
            write_matrix(self, member, layer, std::io::BufWriter::new(file))?;
        }
        Ok(())
    }
}

fn tap(triple: &EmbeddingTriple, layer: Layer) -> &[f64] {
    match layer {
        Layer::Su => &triple.su,
        Layer::Ff => &triple.ff,
        Layer::Sm => &triple.sm,
    }
}

/// Runs every member over every pool utterance and keeps all three taps.
pub fn embed_pool<'a>(
    ensemble: &Ensemble,
    corpus: &Corpus,
    pool: impl IntoIterator<Item = &'a Utterance>,
) -> Result<EmbeddingStore, SelectionError> {
    let pool: Vec<&Utterance> = pool.into_iter().collect();
    if pool.is_empty() {
        return Err(SelectionError::EmptyPool);
    }
    let triples: Vec<Vec<EmbeddingTriple>> = pool
        .par_iter()
        .map(|u| {
            let tokens = ensemble.encode(corpus, u);
            (0..ensemble.members.len()).map(|m| ensemble.member_forward(m, &tokens).map(|(_, t)| t)).collect()
        })
        .collect::<Result<_, _>>()?;
    let mut matrices = BTreeMap::new();
    for (m, member) in ensemble.members.iter().enumerate() {
        for layer in Layer::ALL {
            let dim = tap(&triples[0][m], layer).len();
            let mut data = Vec::with_capacity(dim * pool.len());
            for row in &triples {
                data.extend_from_slice(tap(&row[m], layer));
            }
            matrices.insert((member.id, layer), Matrix { rows: pool.len(), dim, data });
        }
    }
    Ok(EmbeddingStore { ids: pool.iter().map(|u| u.id).collect(), matrices })
}

pub fn write_matrix<W: Write>(
    store: &EmbeddingStore,
    member: usize,
    layer: Layer,
    mut out: W,
) -> Result<(), SelectionError> {
    let matrix = store.matrix(member, layer)?;
    out.write_all(MAGIC)?;
    out.write_all(&(member as u32).to_le_bytes())?;
    out.write_all(layer.tag().as_bytes())?;
    out.write_all(&(matrix.rows as u64).to_le_bytes())?;
    out.write_all(&(matrix.dim as u64).to_le_bytes())?;
    for v in &matrix.data {
        out.write_all(&v.to_le_bytes())?;
    }
    for id in &store.ids {
        out.write_all(&id.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads one matrix file: (member id, layer, matrix, position → id map).
pub fn read_matrix<R: Read>(mut input: R) -> Result<(usize, Layer, Matrix, Vec<UtteranceId>), SelectionError> {
    let bad = |m: &str| SelectionError::MalformedStore(m.to_string());
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut u32b = [0u8; 4];
    let mut u64b = [0u8; 8];
    let mut tag = [0u8; 2];
    input.read_exact(&mut u32b).map_err(|_| bad("truncated header"))?;
    let member = u32::from_le_bytes(u32b) as usize;
    input.read_exact(&mut tag).map_err(|_| bad("truncated header"))?;
    let layer = std::str::from_utf8(&tag).ok().and_then(Layer::from_tag).ok_or_else(|| bad("unknown layer tag"))?;
    input.read_exact(&mut u64b).map_err(|_| bad("truncated header"))?;
    let rows = u64::from_le_bytes(u64b) as usize;
    input.read_exact(&mut u64b).map_err(|_| bad("truncated header"))?;
    let dim = u64::from_le_bytes(u64b) as usize;
    let mut data = Vec::with_capacity(rows * dim);
    for _ in 0..rows * dim {
        input.read_exact(&mut u64b).map_err(|_| bad("truncated data"))?;
        data.push(f64::from_le_bytes(u64b));
    }
    let mut ids = Vec::with_capacity(rows);
    for _ in 0..rows {
        input.read_exact(&mut u64b).map_err(|_| bad("truncated id map"))?;
        ids.push(u64::from_le_bytes(u64b));
    }
    if input.read(&mut [0u8; 1])? != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok((member, layer, Matrix { rows, dim, data }, ids))
}
