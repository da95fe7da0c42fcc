//! Contextual token embeddings, mention embeddings and per-type pivots.
//!
//! Binary embedding file layout (all little-endian):
//!
//! ```text
//! u32 magic "TFEM" | u32 version (1) | u32 record count | u32 dim
//! repeated: u32 record-index | u32 token-index | dim × f32
//! ```
//!
//! The text fallback holds one vector per line: `record token v1 ... vd`.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use thiserror::Error;

use crate::corpus::{Corpus, Mention, Split};
use crate::exec;
use crate::linalg::{dot, Matrix};

pub const EMBEDDING_MAGIC: u32 = u32::from_le_bytes(*b"TFEM");
pub const EMBEDDING_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("mention {mention}: no vector for record {record} token {token}")]
    MissingToken {
        mention: usize,
        record: usize,
        token: usize,
    },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("non-finite value in vector for record {record} token {token}")]
    NonFinite { record: u32, token: u32 },
    #[error("vector width {got}, expected {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("duplicate vector for record {record} token {token}")]
    Duplicate { record: u32, token: u32 },
    #[error("bad embedding file: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingFormat {
    Binary,
    Text,
}

impl std::str::FromStr for EmbeddingFormat {
    type Err = EmbedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" | "bin" => Ok(Self::Binary),
            "text" | "txt" => Ok(Self::Text),
            other => Err(EmbedError::Format(format!("unknown format {other:?}"))),
        }
    }
}

/// Per-(record, token) vectors of a fixed width.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenEmbeddingTable {
    dim: usize,
    index: HashMap<(u32, u32), usize>,
    keys: Vec<(u32, u32)>,
    data: Vec<f32>,
}

impl TokenEmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            index: HashMap::new(),
            keys: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn insert(&mut self, record: u32, token: u32, vector: &[f32]) -> Result<(), EmbedError> {
        if vector.len() != self.dim {
            return Err(EmbedError::WidthMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite { record, token });
        }
        if self.index.contains_key(&(record, token)) {
            return Err(EmbedError::Duplicate { record, token });
        }
        self.index.insert((record, token), self.keys.len());
        self.keys.push((record, token));
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn get(&self, record: usize, token: usize) -> Option<&[f32]> {
        let key = (u32::try_from(record).ok()?, u32::try_from(token).ok()?);
        self.index
            .get(&key)
            .map(|&k| &self.data[k * self.dim..(k + 1) * self.dim])
    }

    /// Divides every stored vector by `factor`.
    pub fn scaled(&self, factor: f32) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v /= factor);
        out
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, EmbedError> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        let word = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap());
        if word(0) != EMBEDDING_MAGIC {
            return Err(EmbedError::Format("bad magic".into()));
        }
        if word(1) != EMBEDDING_VERSION {
            return Err(EmbedError::Format(format!(
                "unsupported version {}",
                word(1)
            )));
        }
        let count = word(2) as usize;
        let dim = word(3) as usize;
        let mut table = Self::new(dim);
        let mut buf = vec![0u8; 8 + 4 * dim];
        let mut vector = vec![0f32; dim];
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            let record = u32::from_le_bytes(buf[0..4].try_into().unwrap());
            let token = u32::from_le_bytes(buf[4..8].try_into().unwrap());
            for (k, v) in vector.iter_mut().enumerate() {
                let o = 8 + 4 * k;
                *v = f32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
            }
            table.insert(record, token, &vector)?;
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(EmbedError::Format(
                "trailing bytes after last record".into(),
            ));
        }
        Ok(table)
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), EmbedError> {
        let count =
            u32::try_from(self.len()).map_err(|_| EmbedError::Format("too many vectors".into()))?;
        for word in [EMBEDDING_MAGIC, EMBEDDING_VERSION, count, self.dim as u32] {
            w.write_all(&word.to_le_bytes())?;
        }
        for (k, &(record, token)) in self.keys.iter().enumerate() {
            w.write_all(&record.to_le_bytes())?;
            w.write_all(&token.to_le_bytes())?;
            for v in &self.data[k * self.dim..(k + 1) * self.dim] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Text format. The width comes from the first line.
    pub fn read_text<R: BufRead>(r: R) -> Result<Self, EmbedError> {
        let mut table: Option<Self> = None;
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(first) = parts.next() else { continue };
            let bad = |what: &str| EmbedError::Format(format!("line {}: {what}", idx + 1));
            let record: u32 = first.parse().map_err(|_| bad("bad record index"))?;
            let token: u32 = parts
                .next()
                .ok_or_else(|| bad("missing token index"))?
                .parse()
                .map_err(|_| bad("bad token index"))?;
            let vector = parts
                .map(str::parse::<f32>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad("bad vector component"))?;
            let t = table.get_or_insert_with(|| Self::new(vector.len()));
            t.insert(record, token, &vector)?;
        }
        table.ok_or_else(|| EmbedError::Format("empty embedding file".into()))
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<(), EmbedError> {
        for (k, &(record, token)) in self.keys.iter().enumerate() {
            write!(w, "{record} {token}")?;
            for v in &self.data[k * self.dim..(k + 1) * self.dim] {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path, format: EmbeddingFormat) -> Result<Self, EmbedError> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        match format {
            EmbeddingFormat::Binary => Self::read_binary(file),
            EmbeddingFormat::Text => Self::read_text(file),
        }
    }
}

/// Mean of the span's token vectors.
pub fn mention_embedding(
    mention: &Mention,
    table: &TokenEmbeddingTable,
) -> Result<Vec<f64>, EmbedError> {
    let mut acc = vec![0.0f64; table.dim()];
    for t in mention.start..mention.end {
        let v = table
            .get(mention.record, t)
            .ok_or(EmbedError::MissingToken {
                mention: mention.id,
                record: mention.record,
                token: t,
            })?;
        for (a, &x) in acc.iter_mut().zip(v) {
            *a += x as f64;
        }
    }
    let n = mention.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Mention embeddings for every mention of the corpus, one row per id.
pub fn mention_embeddings(
    corpus: &Corpus,
    table: &TokenEmbeddingTable,
) -> Result<Matrix, EmbedError> {
    let rows = exec::map_range(corpus.mentions.len(), |i| {
        mention_embedding(&corpus.mentions[i], table)
    });
    let mut data = Vec::with_capacity(corpus.mentions.len() * table.dim());
    for row in rows {
        data.extend(row?);
    }
    Ok(Matrix::from_vec(corpus.mentions.len(), table.dim(), data))
}

/// Cosine similarity, clamped to [-1, 1].
///
/// The denominator is `sqrt(|u|²·|v|²)` so that `cosine(u, u)` is exactly 1.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, EmbedError> {
    let uu = dot(u, u);
    let vv = dot(v, v);
    if uu == 0.0 || vv == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok((dot(u, v) / (uu * vv).sqrt()).clamp(-1.0, 1.0))
}

/// Per-type centroid of training-mention embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct PivotSet {
    pivots: Matrix,
    support: Vec<usize>,
}

impl PivotSet {
    pub fn from_parts(pivots: Matrix, support: Vec<usize>) -> Self {
        assert_eq!(pivots.rows(), support.len());
        Self { pivots, support }
    }

    pub fn type_count(&self) -> usize {
        self.support.len()
    }

    pub fn dim(&self) -> usize {
        self.pivots.cols()
    }

    pub fn pivot(&self, ty: usize) -> &[f64] {
        self.pivots.row(ty)
    }

    pub fn support(&self, ty: usize) -> usize {
        self.support[ty]
    }

    /// A type nobody trained on has no pivot.
    pub fn is_usable(&self, ty: usize) -> bool {
        self.support[ty] > 0 && self.pivots.row(ty).iter().any(|&x| x != 0.0)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.pivots
    }
}

/// Averages the embeddings of every training mention carrying each type.
/// A mention with several labels contributes to each of them.
pub fn compute_pivots(corpus: &Corpus, embeddings: &Matrix) -> PivotSet {
    let y = corpus.type_count();
    let dim = embeddings.cols();
    let mut sums = Matrix::zeros(y, dim);
    let mut support = vec![0usize; y];
    for m in corpus.mentions.iter().filter(|m| m.split == Split::Train) {
        for &label in &m.labels {
            support[label] += 1;
            for (s, &e) in sums.row_mut(label).iter_mut().zip(embeddings.row(m.id)) {
                *s += e;
            }
        }
    }
    for (ty, &n) in support.iter().enumerate() {
        if n > 0 {
            sums.row_mut(ty).iter_mut().for_each(|s| *s /= n as f64);
        } else {
            log::warn!("type {ty} has no training mentions; its pivot is unusable");
        }
    }
    PivotSet {
        pivots: sums,
        support,
    }
}
