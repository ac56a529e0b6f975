//! Flat binary containers for operators and streaming checkpoints.
//!
//! All integers are `u64` little-endian, all reals `f64` little-endian,
//! matrices row-major.
//!
//! Operator file:
//! ```text
//! magic "RREDMDOP" | K | λ | M | K·K operator entries
//! ```
//! Checkpoint file:
//! ```text
//! magic "RREDMDCK" | K | λ | M | refresh_period
//! | N | include_constant (u8) | include_identity (u8) | R | bandwidth | R·N centers
//! | Ĝ (K·K) | Ĝ⁻¹ (K·K) | A (K·K)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lifting::Dictionary;
use crate::scalar::Scalar;
use crate::stream::KoopmanModel;

pub const OPERATOR_MAGIC: &[u8; 8] = b"RREDMDOP";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RREDMDCK";

// guards against absurd allocations from a corrupted header
const MAX_DIM: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorFile<T: Scalar> {
    pub operator: DMatrix<T>,
    pub lambda: T,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub dictionary: Dictionary<T>,
    pub model: KoopmanModel<T>,
}

fn write_matrix<W: Write, T: Scalar>(w: &mut W, m: &DMatrix<T>) -> Result<()> {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            w.write_f64::<LE>(m[(r, c)].to_f64_lossy())?;
        }
    }
    Ok(())
}

fn read_matrix<R: Read, T: Scalar>(r: &mut R, rows: usize, cols: usize) -> Result<DMatrix<T>> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = T::of(read_f64(r)?);
        }
    }
    Ok(m)
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::format("file is truncated")
    } else {
        Error::Io(e)
    }
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    r.read_f64::<LE>().map_err(truncated)
}

fn read_dim<R: Read>(r: &mut R, what: &str) -> Result<usize> {
    let v = r.read_u64::<LE>().map_err(truncated)?;
    if v > MAX_DIM {
        return Err(Error::format(format!("{what} = {v} is implausibly large")));
    }
    Ok(v as usize)
}

fn read_magic<R: Read>(r: &mut R, expect: &[u8; 8]) -> Result<()> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != expect {
        return Err(Error::format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(expect)
        )));
    }
    Ok(())
}

fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut extra = [0u8; 1];
    match r.read(&mut extra)? {
        0 => Ok(()),
        _ => Err(Error::format("trailing bytes after payload")),
    }
}

pub fn write_operator<W: Write, T: Scalar>(w: &mut W, op: &OperatorFile<T>) -> Result<()> {
    let k = op.operator.nrows();
    if op.operator.ncols() != k {
        return Err(Error::config("operator must be square"));
    }
    w.write_all(OPERATOR_MAGIC)?;
    w.write_u64::<LE>(k as u64)?;
    w.write_f64::<LE>(op.lambda.to_f64_lossy())?;
    w.write_u64::<LE>(op.m as u64)?;
    write_matrix(w, &op.operator)
}

pub fn read_operator<R: Read, T: Scalar>(r: &mut R) -> Result<OperatorFile<T>> {
    read_magic(r, OPERATOR_MAGIC)?;
    let k = read_dim(r, "K")?;
    let lambda = T::of(read_f64(r)?);
    let m = r.read_u64::<LE>().map_err(truncated)? as usize;
    let operator = read_matrix(r, k, k)?;
    expect_eof(r)?;
    Ok(OperatorFile {
        operator,
        lambda,
        m,
    })
}

pub fn save_operator<T: Scalar>(path: &Path, op: &OperatorFile<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_operator(&mut w, op)?;
    w.flush()?;
    Ok(())
}

pub fn load_operator<T: Scalar>(path: &Path) -> Result<OperatorFile<T>> {
    read_operator(&mut BufReader::new(File::open(path)?))
}

pub fn write_checkpoint<W: Write, T: Scalar>(w: &mut W, ck: &Checkpoint<T>) -> Result<()> {
    let d = &ck.dictionary;
    let m = &ck.model;
    if d.total_dim() != m.dim() {
        return Err(Error::config("dictionary and model dimensions disagree"));
    }
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u64::<LE>(m.dim() as u64)?;
    w.write_f64::<LE>(m.lambda().to_f64_lossy())?;
    w.write_u64::<LE>(m.samples() as u64)?;
    w.write_u64::<LE>(m.refresh_period() as u64)?;
    w.write_u64::<LE>(d.state_dim() as u64)?;
    w.write_u8(u8::from(d.includes_constant()))?;
    w.write_u8(u8::from(d.includes_identity()))?;
    w.write_u64::<LE>(d.num_rbf() as u64)?;
    w.write_f64::<LE>(d.bandwidth().to_f64_lossy())?;
    write_matrix(w, d.centers())?;
    write_matrix(w, m.g_hat())?;
    write_matrix(w, m.g_hat_inv())?;
    write_matrix(w, m.a())
}

pub fn read_checkpoint<R: Read, T: Scalar>(r: &mut R) -> Result<Checkpoint<T>> {
    read_magic(r, CHECKPOINT_MAGIC)?;
    let k = read_dim(r, "K")?;
    let lambda = T::of(read_f64(r)?);
    let m = r.read_u64::<LE>().map_err(truncated)? as usize;
    let refresh = r.read_u64::<LE>().map_err(truncated)? as usize;
    let n = read_dim(r, "N")?;
    let flag = |v: u8| match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(Error::format(format!("invalid flag byte {v}"))),
    };
    let include_constant = flag(r.read_u8().map_err(truncated)?)?;
    let include_identity = flag(r.read_u8().map_err(truncated)?)?;
    let num_rbf = read_dim(r, "R")?;
    let bandwidth = T::of(read_f64(r)?);
    let centers = read_matrix(r, num_rbf, n)?;
    let dictionary = Dictionary::new(n, include_constant, include_identity, centers, bandwidth)
        .map_err(|e| Error::format(format!("stored dictionary is invalid: {e}")))?;
    if dictionary.total_dim() != k {
        return Err(Error::format(format!(
            "stored dictionary lifts to {} but header says K = {k}",
            dictionary.total_dim()
        )));
    }
    let g_hat = read_matrix(r, k, k)?;
    let g_hat_inv = read_matrix(r, k, k)?;
    let a = read_matrix(r, k, k)?;
    expect_eof(r)?;
    let model = KoopmanModel::from_parts(lambda, g_hat, g_hat_inv, a, m, refresh)
        .map_err(|e| Error::format(e.to_string()))?;
    Ok(Checkpoint { dictionary, model })
}

pub fn save_checkpoint<T: Scalar>(path: &Path, ck: &Checkpoint<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, ck)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

/// Writes a matrix as plain CSV, one row per line, 17 significant digits.
pub fn write_matrix_csv<W: Write, T: Scalar>(w: &mut W, m: &DMatrix<T>) -> Result<()> {
    for r in 0..m.nrows() {
        let line: Vec<String> = (0..m.ncols())
            .map(|c| format!("{:.16e}", m[(r, c)].to_f64_lossy()))
            .collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn save_matrix_csv<T: Scalar>(path: &Path, m: &DMatrix<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix_csv(&mut w, m)?;
    w.flush()?;
    Ok(())
}
