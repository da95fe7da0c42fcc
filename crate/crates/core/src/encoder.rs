//! Phase-I mention representations.
//!
//! A row is the concatenation `[lpos; left; mention; right; rpos]`. The
//! built-in encoder fills the blocks with light-weight pooled encoders:
//!
//! * mention: mean of learned byte embeddings over the mention text;
//! * left/right context: mean of the contextual token vectors in a window
//!   that includes the mention tokens, through a shared affine map and tanh;
//! * left/right position: mean of learned embeddings of the clipped relative
//!   offsets of the context tokens on that side (offset 0 when the side is
//!   empty).
//!
//! Externally computed representations can be loaded instead; see
//! [`load_representations`].

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Mention};
use crate::embed::{EmbedError, TokenEmbeddingTable};
use crate::exec;
use crate::linalg::{axpy, dot, Matrix};

pub const REPRESENTATION_MAGIC: u32 = u32::from_le_bytes(*b"TFRP");
pub const MAX_SEQ: usize = 100;
const BYTE_VOCAB: usize = 256;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("block {block} has width {got}, layout expects {expected}")]
    BlockWidth {
        block: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("representation file: {0}")]
    Format(String),
    #[error("representation file has {got} rows, corpus has {expected} mentions")]
    RowCount { expected: usize, got: usize },
    #[error("layout must have positive width")]
    EmptyLayout,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Block widths: `mention` (d), per-direction `context` (c), per-side `position` (p).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepresentationLayout {
    pub mention: usize,
    pub context: usize,
    pub position: usize,
}

impl Default for RepresentationLayout {
    fn default() -> Self {
        Self {
            mention: 200,
            context: 100,
            position: 25,
        }
    }
}

pub const BLOCK_NAMES: [&str; 5] = ["lpos", "left", "mention", "right", "rpos"];

impl RepresentationLayout {
    /// `d + 2c + 2p`
    pub fn width(&self) -> usize {
        self.mention + 2 * self.context + 2 * self.position
    }

    pub fn block_widths(&self) -> [usize; 5] {
        [
            self.position,
            self.context,
            self.mention,
            self.context,
            self.position,
        ]
    }

    /// Start offset of each block in a row.
    pub fn offsets(&self) -> [usize; 5] {
        let w = self.block_widths();
        let mut o = [0; 5];
        for k in 1..5 {
            o[k] = o[k - 1] + w[k - 1];
        }
        o
    }

    pub fn split<'a>(&self, row: &'a [f64]) -> [&'a [f64]; 5] {
        let o = self.offsets();
        let w = self.block_widths();
        std::array::from_fn(|k| &row[o[k]..o[k] + w[k]])
    }
}

/// Concatenates blocks in layout order.
pub fn assemble(
    layout: &RepresentationLayout,
    blocks: [&[f64]; 5],
) -> Result<Vec<f64>, EncoderError> {
    let mut row = Vec::with_capacity(layout.width());
    for ((block, expected), name) in blocks.iter().zip(layout.block_widths()).zip(BLOCK_NAMES) {
        if block.len() != expected {
            return Err(EncoderError::BlockWidth {
                block: name,
                expected,
                got: block.len(),
            });
        }
        row.extend_from_slice(block);
    }
    Ok(row)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layout: RepresentationLayout,
    /// Context tokens taken on each side of the mention.
    pub window: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layout: RepresentationLayout::default(),
            window: 5,
        }
    }
}

/// Trainable encoder weights.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    /// 256 × d byte embeddings.
    pub char_emb: Matrix,
    /// c × d_e context projection.
    pub ctx_weight: Matrix,
    pub ctx_bias: Vec<f64>,
    /// (2·MAX_SEQ + 1) × p offset embeddings; row `MAX_SEQ` is offset 0.
    pub pos_emb: Matrix,
}

impl EncoderParams {
    pub fn init<R: Rng>(layout: &RepresentationLayout, token_dim: usize, rng: &mut R) -> Self {
        let mut uniform = |rows: usize, cols: usize, scale: f64| {
            Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..=scale))
        };
        let glorot = (6.0 / (layout.context + token_dim) as f64).sqrt();
        Self {
            char_emb: uniform(BYTE_VOCAB, layout.mention, 0.1),
            ctx_weight: uniform(layout.context, token_dim, glorot),
            ctx_bias: vec![0.0; layout.context],
            pos_emb: uniform(2 * MAX_SEQ + 1, layout.position, 0.1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            char_emb: Matrix::zeros(self.char_emb.rows(), self.char_emb.cols()),
            ctx_weight: Matrix::zeros(self.ctx_weight.rows(), self.ctx_weight.cols()),
            ctx_bias: vec![0.0; self.ctx_bias.len()],
            pos_emb: Matrix::zeros(self.pos_emb.rows(), self.pos_emb.cols()),
        }
    }

    pub fn layout(&self) -> RepresentationLayout {
        RepresentationLayout {
            mention: self.char_emb.cols(),
            context: self.ctx_weight.rows(),
            position: self.pos_emb.cols(),
        }
    }

    pub fn token_dim(&self) -> usize {
        self.ctx_weight.cols()
    }

    pub fn slices(&self) -> [&[f64]; 4] {
        [
            self.char_emb.as_slice(),
            self.ctx_weight.as_slice(),
            &self.ctx_bias,
            self.pos_emb.as_slice(),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.char_emb.as_mut_slice(),
            self.ctx_weight.as_mut_slice(),
            &mut self.ctx_bias,
            self.pos_emb.as_mut_slice(),
        ]
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Mean of the byte embeddings of `text`; zero for empty text.
pub fn encode_mention_block(text: &[u8], char_emb: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; char_emb.cols()];
    if text.is_empty() {
        return out;
    }
    for &b in text {
        axpy(1.0, char_emb.row(b as usize), &mut out);
    }
    let n = text.len() as f64;
    out.iter_mut().for_each(|x| *x /= n);
    out
}

/// Mention text as bytes, tokens joined by single spaces.
pub fn mention_text(corpus: &Corpus, mention: &Mention) -> Vec<u8> {
    corpus.mention_tokens(mention).join(" ").into_bytes()
}

/// Mean token vectors of the left window `[start - window, end)` and the
/// right window `[start, end + window)`, clipped to the sentence.
pub fn context_inputs(
    mention: &Mention,
    sentence_len: usize,
    table: &TokenEmbeddingTable,
    window: usize,
) -> Result<(Vec<f64>, Vec<f64>), EmbedError> {
    let mean = |lo: usize, hi: usize| -> Result<Vec<f64>, EmbedError> {
        let mut acc = vec![0.0; table.dim()];
        for t in lo..hi {
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
        if hi > lo {
            let n = (hi - lo) as f64;
            acc.iter_mut().for_each(|a| *a /= n);
        }
        Ok(acc)
    };
    let left = mean(mention.start.saturating_sub(window), mention.end)?;
    let right = mean(mention.start, (mention.end + window).min(sentence_len))?;
    Ok((left, right))
}

fn context_block(input: &[f64], params: &EncoderParams) -> Vec<f64> {
    (0..params.ctx_weight.rows())
        .map(|r| (dot(params.ctx_weight.row(r), input) + params.ctx_bias[r]).tanh())
        .collect()
}

/// `(tanh(W·left + b), tanh(W·right + b))`
pub fn encode_context_blocks(
    left_input: &[f64],
    right_input: &[f64],
    params: &EncoderParams,
) -> (Vec<f64>, Vec<f64>) {
    (
        context_block(left_input, params),
        context_block(right_input, params),
    )
}

/// Offset-table rows for the context tokens left and right of the mention.
/// Offsets are relative to the nearest mention boundary and clipped to
/// `[-MAX_SEQ, MAX_SEQ]`.
pub fn position_buckets(mention: &Mention, sentence_len: usize) -> (Vec<usize>, Vec<usize>) {
    let bucket = |offset: isize| {
        (offset.clamp(-(MAX_SEQ as isize), MAX_SEQ as isize) + MAX_SEQ as isize) as usize
    };
    let left = (0..mention.start)
        .map(|j| bucket(j as isize - mention.start as isize))
        .collect();
    let right = (mention.end..sentence_len)
        .map(|j| bucket(j as isize - (mention.end as isize - 1)))
        .collect();
    (left, right)
}

fn position_block(buckets: &[usize], pos_emb: &Matrix) -> Vec<f64> {
    if buckets.is_empty() {
        return pos_emb.row(MAX_SEQ).to_vec();
    }
    let mut out = vec![0.0; pos_emb.cols()];
    for &b in buckets {
        axpy(1.0, pos_emb.row(b), &mut out);
    }
    let n = buckets.len() as f64;
    out.iter_mut().for_each(|x| *x /= n);
    out
}

pub fn encode_position_blocks(
    left: &[usize],
    right: &[usize],
    pos_emb: &Matrix,
) -> (Vec<f64>, Vec<f64>) {
    (
        position_block(left, pos_emb),
        position_block(right, pos_emb),
    )
}

/// Inputs of one mention that do not change during training.
#[derive(Clone, Debug, PartialEq)]
struct MentionFeatures {
    text: Vec<u8>,
    left_input: Vec<f64>,
    right_input: Vec<f64>,
    left_buckets: Vec<usize>,
    right_buckets: Vec<usize>,
}

/// The built-in Phase-I encoder bound to a corpus.
#[derive(Clone, Debug)]
pub struct SimpleEncoder {
    config: EncoderConfig,
    params: EncoderParams,
    features: Vec<MentionFeatures>,
}

impl SimpleEncoder {
    pub fn new(
        corpus: &Corpus,
        table: &TokenEmbeddingTable,
        config: EncoderConfig,
        params: EncoderParams,
    ) -> Result<Self, EncoderError> {
        if config.layout.width() == 0 {
            return Err(EncoderError::EmptyLayout);
        }
        if params.layout() != config.layout || params.token_dim() != table.dim() {
            return Err(EncoderError::Format(
                "encoder parameters do not match the layout or embedding width".into(),
            ));
        }
        let features = exec::map_range(corpus.mentions.len(), |i| {
            let m = &corpus.mentions[i];
            let len = corpus.sentence(m).len();
            let (left_input, right_input) = context_inputs(m, len, table, config.window)?;
            let (left_buckets, right_buckets) = position_buckets(m, len);
            Ok(MentionFeatures {
                text: mention_text(corpus, m),
                left_input,
                right_input,
                left_buckets,
                right_buckets,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>, EmbedError>>()?;
        Ok(Self {
            config,
            params,
            features,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut EncoderParams {
        &mut self.params
    }

    pub fn mention_count(&self) -> usize {
        self.features.len()
    }

    fn encode_one(&self, i: usize) -> Vec<f64> {
        let f = &self.features[i];
        let p = &self.params;
        let men = encode_mention_block(&f.text, &p.char_emb);
        let (left, right) = encode_context_blocks(&f.left_input, &f.right_input, p);
        let (lpos, rpos) = encode_position_blocks(&f.left_buckets, &f.right_buckets, &p.pos_emb);
        assemble(&self.config.layout, [&lpos, &left, &men, &right, &rpos])
            .expect("layout checked at construction")
    }

    /// The N × f representation matrix.
    pub fn encode_all(&self) -> Matrix {
        let f = self.config.layout.width();
        let mut x = Matrix::zeros(self.features.len(), f);
        exec::for_each_row(x.as_mut_slice(), f, |i, row| {
            row.copy_from_slice(&self.encode_one(i))
        });
        x
    }

    /// Parameter gradients given `dx = ∂L/∂X`.
    pub fn backward(&self, dx: &Matrix) -> EncoderParams {
        let layout = self.config.layout;
        let p = &self.params;
        exec::chunked_reduce(
            self.features.len(),
            || p.zeros_like(),
            |grad, i| {
                let row = dx.row(i);
                if row.iter().all(|&v| v == 0.0) {
                    return;
                }
                let f = &self.features[i];
                let [d_lpos, d_left, d_men, d_right, d_rpos] = layout.split(row);

                if !f.text.is_empty() {
                    let scale = 1.0 / f.text.len() as f64;
                    for &b in &f.text {
                        axpy(scale, d_men, grad.char_emb.row_mut(b as usize));
                    }
                }

                for (input, d_out) in [(&f.left_input, d_left), (&f.right_input, d_right)] {
                    let out = context_block(input, p);
                    for r in 0..out.len() {
                        let g = d_out[r] * (1.0 - out[r] * out[r]);
                        if g != 0.0 {
                            axpy(g, input, grad.ctx_weight.row_mut(r));
                            grad.ctx_bias[r] += g;
                        }
                    }
                }

                for (buckets, d_out) in [(&f.left_buckets, d_lpos), (&f.right_buckets, d_rpos)] {
                    if buckets.is_empty() {
                        axpy(1.0, d_out, grad.pos_emb.row_mut(MAX_SEQ));
                    } else {
                        let scale = 1.0 / buckets.len() as f64;
                        for &b in buckets.iter() {
                            axpy(scale, d_out, grad.pos_emb.row_mut(b));
                        }
                    }
                }
            },
            |total, part| total.add_assign(&part),
        )
    }
}

/// Where Phase-I representations come from.
#[derive(Clone, Debug)]
pub enum Phase1 {
    /// Trainable built-in encoder.
    Builtin(Box<SimpleEncoder>),
    /// Fixed, externally computed matrix; Phase-I training is skipped.
    File(Matrix),
}

impl Phase1 {
    pub fn representations(&self) -> Matrix {
        match self {
            Phase1::Builtin(enc) => enc.encode_all(),
            Phase1::File(x) => x.clone(),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Phase1::Builtin(enc) => enc.config.layout.width(),
            Phase1::File(x) => x.cols(),
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, Phase1::Builtin(_))
    }
}

/// Header `u32 magic "TFRP" | u32 N | u32 f`, then N·f little-endian f32, row-major.
pub fn save_representations<W: Write>(x: &Matrix, mut w: W) -> Result<(), EncoderError> {
    let n = u32::try_from(x.rows()).map_err(|_| EncoderError::Format("too many rows".into()))?;
    let f = u32::try_from(x.cols()).map_err(|_| EncoderError::Format("too many columns".into()))?;
    for word in [REPRESENTATION_MAGIC, n, f] {
        w.write_all(&word.to_le_bytes())?;
    }
    for &v in x.as_slice() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Reads a representation file; `expected_rows` guards against a file made
/// for a different corpus.
pub fn load_representations<R: Read>(
    mut r: R,
    expected_rows: Option<usize>,
) -> Result<Matrix, EncoderError> {
    let mut header = [0u8; 12];
    r.read_exact(&mut header)?;
    let word = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap());
    if word(0) != REPRESENTATION_MAGIC {
        return Err(EncoderError::Format("bad magic".into()));
    }
    let (n, f) = (word(1) as usize, word(2) as usize);
    if let Some(expected) = expected_rows {
        if expected != n {
            return Err(EncoderError::RowCount { expected, got: n });
        }
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 4 * n * f {
        return Err(EncoderError::Format(format!(
            "header declares {n}x{f} values but the body holds {} bytes",
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(EncoderError::Format("non-finite value".into()));
    }
    Ok(Matrix::from_vec(n, f, data))
}
