//! Binary checkpoint: encoder tables plus the optional predictor head.
//! Fixed little-endian layout, written and read in one pass; the format is
//! the determinism boundary, so nothing here depends on platform or clock.
//!
//! Layout:
//!   magic "SCFCKPT\0" | version u32 | num_users u64 | num_items u64 |
//!   d u64 | layers u64 | user table f64[num_users*d] |
//!   item table f64[num_items*d] | predictor tag u8 | predictor tables
//!
//! Predictor tags: 0 none, 1 linear (W d*d, b d), 2 two-layer
//! (W1, b1, W2, b2). All matrices row-major f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::encoders::EncoderParams;
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::selfcf::Predictor;

const MAGIC: &[u8; 8] = b"SCFCKPT\0";

/// Format version stamped into every checkpoint header.
pub const CHECKPOINT_VERSION: u32 = 1;

fn write_matrix(w: &mut impl Write, m: &DenseMatrix) -> std::io::Result<()> {
    for &v in m.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_matrix(r: &mut impl Read, rows: usize, cols: usize) -> Result<DenseMatrix> {
    let mut m = DenseMatrix::zeros(rows, cols);
    let mut buf = [0u8; 8];
    for v in m.values_mut() {
        r.read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("truncated matrix data: {e}")))?;
        *v = f64::from_le_bytes(buf);
        if !v.is_finite() {
            return Err(Error::Checkpoint("non-finite value in stored table".into()));
        }
    }
    Ok(m)
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &EncoderParams,
    predictor: Option<&Predictor>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);

    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io_err)?;
    for dim in [
        params.num_users() as u64,
        params.num_items() as u64,
        params.d() as u64,
        params.layers as u64,
    ] {
        w.write_all(&dim.to_le_bytes()).map_err(io_err)?;
    }
    write_matrix(&mut w, &params.user_embed).map_err(io_err)?;
    write_matrix(&mut w, &params.item_embed).map_err(io_err)?;

    match predictor {
        None => w.write_all(&[0u8]).map_err(io_err)?,
        Some(Predictor::Linear { weight, bias }) => {
            w.write_all(&[1u8]).map_err(io_err)?;
            write_matrix(&mut w, weight).map_err(io_err)?;
            write_matrix(&mut w, bias).map_err(io_err)?;
        }
        Some(Predictor::TwoLayer { w1, b1, w2, b2 }) => {
            w.write_all(&[2u8]).map_err(io_err)?;
            for m in [w1, b1, w2, b2] {
                write_matrix(&mut w, m).map_err(io_err)?;
            }
        }
    }
    w.flush().map_err(io_err)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(EncoderParams, Option<Predictor>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Checkpoint(format!("too short for header: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("magic bytes do not match".into()));
    }
    let mut v4 = [0u8; 4];
    r.read_exact(&mut v4)
        .map_err(|e| Error::Checkpoint(format!("missing version: {e}")))?;
    let version = u32::from_le_bytes(v4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version {version} not supported (expected {CHECKPOINT_VERSION})"
        )));
    }

    let mut v8 = [0u8; 8];
    let mut read_u64 = |r: &mut BufReader<File>| -> Result<u64> {
        r.read_exact(&mut v8)
            .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
        Ok(u64::from_le_bytes(v8))
    };
    let num_users = read_u64(&mut r)? as usize;
    let num_items = read_u64(&mut r)? as usize;
    let d = read_u64(&mut r)? as usize;
    let layers = read_u64(&mut r)? as usize;
    if num_users == 0 || num_items == 0 || d == 0 {
        return Err(Error::Checkpoint(format!(
            "degenerate shape {num_users}x{num_items}x{d}"
        )));
    }

    let user_embed = read_matrix(&mut r, num_users, d)?;
    let item_embed = read_matrix(&mut r, num_items, d)?;
    let params = EncoderParams {
        user_embed,
        item_embed,
        layers,
    };

    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)
        .map_err(|e| Error::Checkpoint(format!("missing predictor tag: {e}")))?;
    let predictor = match tag[0] {
        0 => None,
        1 => Some(Predictor::Linear {
            weight: read_matrix(&mut r, d, d)?,
            bias: read_matrix(&mut r, 1, d)?,
        }),
        2 => Some(Predictor::TwoLayer {
            w1: read_matrix(&mut r, d, d)?,
            b1: read_matrix(&mut r, 1, d)?,
            w2: read_matrix(&mut r, d, d)?,
            b2: read_matrix(&mut r, 1, d)?,
        }),
        t => return Err(Error::Checkpoint(format!("unknown predictor tag {t}"))),
    };

    let mut rest = [0u8; 1];
    match r.read(&mut rest) {
        Ok(0) => Ok((params, predictor)),
        Ok(_) => Err(Error::Checkpoint("trailing bytes after predictor".into())),
        Err(e) => Err(Error::Checkpoint(format!("read failure at tail: {e}"))),
    }
}
