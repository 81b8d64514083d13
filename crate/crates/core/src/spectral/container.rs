//! Binary container for [`SpectralOps`]. All integers are u64 and all floats f64,
//! little-endian:
//!
//! ```text
//! magic "MMSPEC\0\0" | version u32 | n | k | hash length | hash bytes
//! mass[n] | eigenvalues[k] | eigenvectors[n*k] (row-major)
//! laplacian, grad_x, grad_y as CSR: nnz | row_ptr[n+1] | col_idx[nnz] | values[nnz]
//! frames[n*9] | degenerate[n] (one byte each)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{SparseMatrix, SpectralOps};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: [u8; 8] = *b"MMSPEC\0\0";
pub const CONTAINER_VERSION: u32 = 1;

pub fn write_operators(ops: &SpectralOps, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode(ops, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_operators(path: impl AsRef<Path>) -> Result<SpectralOps> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode(&mut BufReader::new(file)).map_err(|e| match e {
        DecodeError::Io(e) => Error::io(path, e),
        DecodeError::Format(message) => Error::Format {
            path: path.to_path_buf(),
            location: "spectral container".into(),
            message,
        },
    })
}

fn write_f64s(w: &mut impl Write, xs: &[f64]) -> std::io::Result<()> {
    xs.iter().try_for_each(|&x| w.write_f64::<LE>(x))
}

fn write_usizes(w: &mut impl Write, xs: &[usize]) -> std::io::Result<()> {
    xs.iter().try_for_each(|&x| w.write_u64::<LE>(x as u64))
}

fn encode(ops: &SpectralOps, w: &mut impl Write) -> std::io::Result<()> {
    let n = ops.num_vertices();
    w.write_all(&CONTAINER_MAGIC)?;
    w.write_u32::<LE>(CONTAINER_VERSION)?;
    w.write_u64::<LE>(n as u64)?;
    w.write_u64::<LE>(ops.num_eigenpairs() as u64)?;
    w.write_u64::<LE>(ops.mesh_hash.len() as u64)?;
    w.write_all(ops.mesh_hash.as_bytes())?;
    write_f64s(w, &ops.mass)?;
    write_f64s(w, &ops.eigenvalues)?;
    write_f64s(w, ops.eigenvectors.data())?;
    for m in [&ops.laplacian, &ops.grad_x, &ops.grad_y] {
        w.write_u64::<LE>(m.nnz() as u64)?;
        write_usizes(w, &m.row_ptr)?;
        write_usizes(w, &m.col_idx)?;
        write_f64s(w, &m.values)?;
    }
    for f in &ops.frames {
        for axis in f {
            write_f64s(w, axis)?;
        }
    }
    for &d in &ops.degenerate_gradient {
        w.write_u8(d as u8)?;
    }
    Ok(())
}

enum DecodeError {
    Io(std::io::Error),
    Format(String),
}

impl From<std::io::Error> for DecodeError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            DecodeError::Format("truncated file".into())
        } else {
            DecodeError::Io(e)
        }
    }
}

const MAX_LEN: u64 = 1 << 32;

fn read_len(r: &mut impl Read, what: &str) -> Result<usize, DecodeError> {
    let v = r.read_u64::<LE>()?;
    if v > MAX_LEN {
        return Err(DecodeError::Format(format!("implausible {what}: {v}")));
    }
    Ok(v as usize)
}

fn read_f64s(r: &mut impl Read, len: usize) -> Result<Vec<f64>, DecodeError> {
    let mut out = vec![0.0; len];
    r.read_f64_into::<LE>(&mut out)?;
    Ok(out)
}

fn read_usizes(r: &mut impl Read, len: usize, bound: usize) -> Result<Vec<usize>, DecodeError> {
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let v = r.read_u64::<LE>()?;
        if v > bound as u64 {
            return Err(DecodeError::Format(format!("index {v} exceeds {bound}")));
        }
        out.push(v as usize);
    }
    Ok(out)
}

fn read_csr(r: &mut impl Read, n: usize) -> Result<SparseMatrix, DecodeError> {
    let nnz = read_len(r, "nonzero count")?;
    let row_ptr = read_usizes(r, n + 1, nnz)?;
    if row_ptr[0] != 0 || row_ptr[n] != nnz || row_ptr.windows(2).any(|w| w[0] > w[1]) {
        return Err(DecodeError::Format("malformed row pointers".into()));
    }
    let col_idx = read_usizes(r, nnz, n.saturating_sub(1))?;
    let values = read_f64s(r, nnz)?;
    Ok(SparseMatrix {
        rows: n,
        cols: n,
        row_ptr,
        col_idx,
        values,
    })
}

fn decode(r: &mut impl Read) -> Result<SpectralOps, DecodeError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != CONTAINER_MAGIC {
        return Err(DecodeError::Format("bad magic bytes".into()));
    }
    let version = r.read_u32::<LE>()?;
    if version != CONTAINER_VERSION {
        return Err(DecodeError::Format(format!(
            "unsupported version {version}, expected {CONTAINER_VERSION}"
        )));
    }
    let n = read_len(r, "vertex count")?;
    let k = read_len(r, "eigenpair count")?;
    let hash_len = read_len(r, "hash length")?;
    let mut hash = vec![0u8; hash_len];
    r.read_exact(&mut hash)?;
    let mesh_hash =
        String::from_utf8(hash).map_err(|_| DecodeError::Format("hash is not UTF-8".into()))?;
    let mass = read_f64s(r, n)?;
    let eigenvalues = read_f64s(r, k)?;
    let eigenvectors = Tensor::from_vec(n, k, read_f64s(r, n * k)?);
    let laplacian = read_csr(r, n)?;
    let grad_x = read_csr(r, n)?;
    let grad_y = read_csr(r, n)?;
    let flat = read_f64s(r, n * 9)?;
    let frames = flat
        .chunks_exact(9)
        .map(|c| [[c[0], c[1], c[2]], [c[3], c[4], c[5]], [c[6], c[7], c[8]]])
        .collect();
    let mut degenerate = vec![0u8; n];
    r.read_exact(&mut degenerate)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(DecodeError::Format("trailing bytes".into()));
    }
    Ok(SpectralOps::from_parts(
        laplacian,
        mass,
        eigenvalues,
        eigenvectors,
        grad_x,
        grad_y,
        frames,
        degenerate.into_iter().map(|d| d != 0).collect(),
        mesh_hash,
    ))
}
