//! Binary parameter files.
//!
//! All integers are little-endian u32 and all values little-endian f64,
//! row-major.
//!
//! * GCN: `f h k`, then the hidden weights (f × h) and output weights (h × k).
//! * Labels: `Y k`, then the Y × k embeddings and Y biases.
//! * Encoder: magic `"TFEN"`, `d c d_e p`, then byte embeddings, context
//!   weights, context bias and offset embeddings.

use std::io::{self, Read, Write};
use std::path::Path;

use crate::encoder::{EncoderParams, MAX_SEQ};
use crate::gcn::GcnParameters;
use crate::linalg::Matrix;
use crate::typing::LabelEmbeddings;

pub const ENCODER_MAGIC: u32 = u32::from_le_bytes(*b"TFEN");

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn write_u32s<W: Write>(w: &mut W, words: &[usize]) -> io::Result<()> {
    for &x in words {
        let x = u32::try_from(x).map_err(|_| invalid("dimension exceeds u32"))?;
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<f64>> {
    let mut buf = vec![0u8; n.checked_mul(8).ok_or_else(|| invalid("size overflow"))?];
    r.read_exact(&mut buf)?;
    let values: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite parameter"));
    }
    Ok(values)
}

fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> io::Result<Matrix> {
    Ok(Matrix::from_vec(rows, cols, read_f64s(r, rows * cols)?))
}

fn expect_end<R: Read>(r: &mut R) -> io::Result<()> {
    let mut extra = [0u8; 1];
    match r.read(&mut extra)? {
        0 => Ok(()),
        _ => Err(invalid("trailing bytes after parameters")),
    }
}

pub fn write_gcn<W: Write>(params: &GcnParameters, mut w: W) -> io::Result<()> {
    let (f, h, k) = params.dims();
    write_u32s(&mut w, &[f, h, k])?;
    write_f64s(&mut w, params.hidden_weights().as_slice())?;
    write_f64s(&mut w, params.output_weights().as_slice())
}

pub fn read_gcn<R: Read>(mut r: R) -> io::Result<GcnParameters> {
    let (f, h, k) = (read_u32(&mut r)?, read_u32(&mut r)?, read_u32(&mut r)?);
    let hidden_weights = read_matrix(&mut r, f, h)?;
    let output_weights = read_matrix(&mut r, h, k)?;
    expect_end(&mut r)?;
    GcnParameters::new(hidden_weights, output_weights).map_err(|e| invalid(e.to_string()))
}

pub fn write_labels<W: Write>(labels: &LabelEmbeddings, mut w: W) -> io::Result<()> {
    write_u32s(&mut w, &[labels.type_count(), labels.width()])?;
    write_f64s(&mut w, labels.vectors.as_slice())?;
    write_f64s(&mut w, &labels.bias)
}

pub fn read_labels<R: Read>(mut r: R) -> io::Result<LabelEmbeddings> {
    let (y, k) = (read_u32(&mut r)?, read_u32(&mut r)?);
    let vectors = read_matrix(&mut r, y, k)?;
    let bias = read_f64s(&mut r, y)?;
    expect_end(&mut r)?;
    Ok(LabelEmbeddings { vectors, bias })
}

pub fn write_encoder<W: Write>(params: &EncoderParams, mut w: W) -> io::Result<()> {
    let layout = params.layout();
    write_u32s(&mut w, &[ENCODER_MAGIC as usize])?;
    write_u32s(
        &mut w,
        &[
            layout.mention,
            layout.context,
            params.token_dim(),
            layout.position,
        ],
    )?;
    for s in params.slices() {
        write_f64s(&mut w, s)?;
    }
    Ok(())
}

pub fn read_encoder<R: Read>(mut r: R) -> io::Result<EncoderParams> {
    if read_u32(&mut r)? != ENCODER_MAGIC as usize {
        return Err(invalid("not an encoder checkpoint"));
    }
    let (d, c, de, p) = (
        read_u32(&mut r)?,
        read_u32(&mut r)?,
        read_u32(&mut r)?,
        read_u32(&mut r)?,
    );
    let char_emb = read_matrix(&mut r, 256, d)?;
    let ctx_weight = read_matrix(&mut r, c, de)?;
    let ctx_bias = read_f64s(&mut r, c)?;
    let pos_emb = read_matrix(&mut r, 2 * MAX_SEQ + 1, p)?;
    expect_end(&mut r)?;
    Ok(EncoderParams {
        char_emb,
        ctx_weight,
        ctx_bias,
        pos_emb,
    })
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}
