//! Little-endian binary files for embeddings and full training state.
//!
//! Both layouts start with the same header: an 8-byte magic, then `u64`
//! fields `version, scalar_bytes, M, N, d, L`. The embedding file follows with
//! row-major `e0_user` (M×d) and `e0_item` (N×d). The full checkpoint appends
//! `W1`, `W2`, the Adam step and, for each of the four tensors in that order,
//! its first and second moment buffers.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::optim::Param;
use crate::scalar::Scalar;
use crate::trainer::ModelParams;

pub const EMBEDDING_MAGIC: [u8; 8] = *b"SCFEMBED";
pub const CHECKPOINT_MAGIC: [u8; 8] = *b"SCFCKPT\0";
pub const FORMAT_VERSION: u64 = 1;

const HEADER_BYTES: usize = 8 + 6 * 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub version: u64,
    pub scalar_bytes: u64,
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub layers: usize,
}

impl Header {
    fn write(&self, magic: &[u8; 8], out: &mut Vec<u8>) {
        out.extend_from_slice(magic);
        for v in [
            self.version,
            self.scalar_bytes,
            self.num_users as u64,
            self.num_items as u64,
            self.dim as u64,
            self.layers as u64,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn read(bytes: &[u8], magic: &[u8; 8], path: &Path) -> Result<Self> {
        if bytes.len() < HEADER_BYTES {
            return Err(Error::format(
                path.display().to_string(),
                "truncated header",
            ));
        }
        if &bytes[..8] != magic {
            return Err(Error::format(path.display().to_string(), "bad magic"));
        }
        let field = |k: usize| {
            u64::from_le_bytes(bytes[8 + 8 * k..16 + 8 * k].try_into().expect("8 bytes"))
        };
        let header = Header {
            version: field(0),
            scalar_bytes: field(1),
            num_users: field(2) as usize,
            num_items: field(3) as usize,
            dim: field(4) as usize,
            layers: field(5) as usize,
        };
        if header.version != FORMAT_VERSION {
            return Err(Error::format(
                path.display().to_string(),
                format!("unsupported version {}", header.version),
            ));
        }
        Ok(header)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end =
            end.ok_or_else(|| Error::format(self.path.display().to_string(), "truncated payload"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn matrix<T: Scalar>(&mut self, rows: usize, cols: usize) -> Result<Array2<T>> {
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(T::BYTES))
            .ok_or_else(|| {
                Error::format(self.path.display().to_string(), "matrix size overflows")
            })?;
        let raw = self.take(n)?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        Ok(Array2::from_shape_vec((rows, cols), data).expect("length matches shape"))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.path.display().to_string(),
                "trailing bytes",
            ));
        }
        Ok(())
    }
}

fn push_matrix<T: Scalar>(m: &Array2<T>, out: &mut Vec<u8>) {
    for &x in m.iter() {
        x.write_le(out);
    }
}

fn check_width<T: Scalar>(header: &Header, path: &Path) -> Result<()> {
    if header.scalar_bytes != T::BYTES as u64 {
        return Err(Error::format(
            path.display().to_string(),
            format!(
                "stored {}-byte scalars, expected {}",
                header.scalar_bytes,
                T::BYTES
            ),
        ));
    }
    Ok(())
}

/// Reads only the header of either file kind.
pub fn read_header(path: &Path) -> Result<Header> {
    let bytes = fs::read(path)?;
    let magic = if bytes.starts_with(&CHECKPOINT_MAGIC) {
        &CHECKPOINT_MAGIC
    } else {
        &EMBEDDING_MAGIC
    };
    Header::read(&bytes, magic, path)
}

pub fn encode_embeddings<T: Scalar>(
    e0_user: &Array2<T>,
    e0_item: &Array2<T>,
    layers: usize,
) -> Vec<u8> {
    let header = Header {
        version: FORMAT_VERSION,
        scalar_bytes: T::BYTES as u64,
        num_users: e0_user.nrows(),
        num_items: e0_item.nrows(),
        dim: e0_user.ncols(),
        layers,
    };
    let mut out = Vec::with_capacity(HEADER_BYTES + (e0_user.len() + e0_item.len()) * T::BYTES);
    header.write(&EMBEDDING_MAGIC, &mut out);
    push_matrix(e0_user, &mut out);
    push_matrix(e0_item, &mut out);
    out
}

pub fn save_embeddings<T: Scalar>(
    path: &Path,
    e0_user: &Array2<T>,
    e0_item: &Array2<T>,
    layers: usize,
) -> Result<()> {
    fs::write(path, encode_embeddings(e0_user, e0_item, layers))?;
    Ok(())
}

pub fn load_embeddings<T: Scalar>(path: &Path) -> Result<(Header, Array2<T>, Array2<T>)> {
    let bytes = fs::read(path)?;
    let header = Header::read(&bytes, &EMBEDDING_MAGIC, path)?;
    check_width::<T>(&header, path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: HEADER_BYTES,
        path,
    };
    let eu = r.matrix(header.num_users, header.dim)?;
    let ei = r.matrix(header.num_items, header.dim)?;
    r.finish()?;
    Ok((header, eu, ei))
}

pub fn encode_checkpoint<T: Scalar>(params: &ModelParams<T>, layers: usize) -> Vec<u8> {
    let header = Header {
        version: FORMAT_VERSION,
        scalar_bytes: T::BYTES as u64,
        num_users: params.num_users(),
        num_items: params.num_items(),
        dim: params.dim(),
        layers,
    };
    let mut out = Vec::new();
    header.write(&CHECKPOINT_MAGIC, &mut out);
    for m in params.values() {
        push_matrix(m, &mut out);
    }
    out.extend_from_slice(&params.step.to_le_bytes());
    for p in [&params.e0_user, &params.e0_item, &params.w1, &params.w2] {
        push_matrix(&p.m, &mut out);
        push_matrix(&p.v, &mut out);
    }
    out
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    params: &ModelParams<T>,
    layers: usize,
) -> Result<()> {
    fs::write(path, encode_checkpoint(params, layers))?;
    Ok(())
}

/// Restores parameters with zeroed gradient buffers.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(Header, ModelParams<T>)> {
    let bytes = fs::read(path)?;
    let header = Header::read(&bytes, &CHECKPOINT_MAGIC, path)?;
    check_width::<T>(&header, path)?;
    let (m, n, d) = (header.num_users, header.num_items, header.dim);
    let shapes = [(m, d), (n, d), (2 * d, 2 * d), (2 * d, 1)];
    let mut r = Reader {
        bytes: &bytes,
        pos: HEADER_BYTES,
        path,
    };
    let mut values = Vec::with_capacity(4);
    for &(rows, cols) in &shapes {
        values.push(r.matrix::<T>(rows, cols)?);
    }
    let step = r.u64()?;
    let mut tensors = Vec::with_capacity(4);
    for (value, &(rows, cols)) in values.into_iter().zip(&shapes) {
        let mut p = Param::new(value);
        p.m = r.matrix(rows, cols)?;
        p.v = r.matrix(rows, cols)?;
        tensors.push(p);
    }
    r.finish()?;
    let mut it = tensors.into_iter();
    let mut next = || it.next().expect("four tensors");
    let params = ModelParams {
        e0_user: next(),
        e0_item: next(),
        w1: next(),
        w2: next(),
        step,
    };
    Ok((header, params))
}
