//! On-disk formats. Binary files start with a four-byte magic and a `u32`
//! version, followed by little-endian `u64` sizes and `f64` payloads stored
//! row-major. Correspondences and labels are plain text, one integer per line.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported {magic} version {version}")]
    UnsupportedVersion { magic: &'static str, version: u32 },
    #[error("truncated or unreadable payload: {0}")]
    Truncated(io::Error),
    #[error("implausible size {0}")]
    BadSize(u64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, FormatError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn open(path: &Path) -> Result<BufReader<File>, FormatError> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

fn write_header<W: Write>(w: &mut W, magic: &[u8; 4]) -> io::Result<()> {
    w.write_all(magic)?;
    w.write_all(&VERSION.to_le_bytes())
}

fn read_header<R: Read>(r: &mut R, magic: &'static str) -> Result<(), FormatError> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m).map_err(FormatError::Truncated)?;
    if &m != magic.as_bytes() {
        return Err(FormatError::BadMagic {
            expected: magic.into(),
            found: String::from_utf8_lossy(&m).into_owned(),
        });
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v).map_err(FormatError::Truncated)?;
    let version = u32::from_le_bytes(v);
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion { magic, version });
    }
    Ok(())
}

fn write_u64<W: Write>(w: &mut W, v: usize) -> io::Result<()> {
    w.write_all(&(v as u64).to_le_bytes())
}

fn read_u64<R: Read>(r: &mut R) -> Result<usize, FormatError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(FormatError::Truncated)?;
    let v = u64::from_le_bytes(b);
    // guards allocation against corrupt headers
    if v > (1 << 40) {
        return Err(FormatError::BadSize(v));
    }
    Ok(v as usize)
}

fn write_f64s<W: Write>(w: &mut W, values: impl IntoIterator<Item = f64>) -> io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>, FormatError> {
    let mut bytes = vec![0u8; count.checked_mul(8).ok_or(FormatError::BadSize(count as u64))?];
    r.read_exact(&mut bytes).map_err(FormatError::Truncated)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn write_matrix<W: Write>(w: &mut W, m: &DMatrix<f64>) -> io::Result<()> {
    for i in 0..m.nrows() {
        write_f64s(w, m.row(i).iter().copied())?;
    }
    Ok(())
}

fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<DMatrix<f64>, FormatError> {
    let data = read_f64s(r, rows.checked_mul(cols).ok_or(FormatError::BadSize(rows as u64))?)?;
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// Basis cache: `SPEC`, n, k, eigenvalues, `Φ` (n×k).
pub fn write_spec<W: Write>(w: &mut W, eigenvalues: &[f64], phi: &DMatrix<f64>) -> io::Result<()> {
    write_header(w, b"SPEC")?;
    write_u64(w, phi.nrows())?;
    write_u64(w, phi.ncols())?;
    write_f64s(w, eigenvalues.iter().copied())?;
    write_matrix(w, phi)
}

pub fn read_spec<R: Read>(r: &mut R) -> Result<(Vec<f64>, DMatrix<f64>), FormatError> {
    read_header(r, "SPEC")?;
    let n = read_u64(r)?;
    let k = read_u64(r)?;
    let evals = read_f64s(r, k)?;
    Ok((evals, read_matrix(r, n, k)?))
}

/// Feature matrix: `FMAT`, rows, cols, values.
pub fn write_fmat<W: Write>(w: &mut W, m: &DMatrix<f64>) -> io::Result<()> {
    write_header(w, b"FMAT")?;
    write_u64(w, m.nrows())?;
    write_u64(w, m.ncols())?;
    write_matrix(w, m)
}

pub fn read_fmat<R: Read>(r: &mut R) -> Result<DMatrix<f64>, FormatError> {
    read_header(r, "FMAT")?;
    let rows = read_u64(r)?;
    let cols = read_u64(r)?;
    read_matrix(r, rows, cols)
}

/// Functional maps: `FMAP`, k, `C_xy`, `C_yx`.
pub fn write_fmap<W: Write>(w: &mut W, c_xy: &DMatrix<f64>, c_yx: &DMatrix<f64>) -> io::Result<()> {
    write_header(w, b"FMAP")?;
    write_u64(w, c_xy.nrows())?;
    write_matrix(w, c_xy)?;
    write_matrix(w, c_yx)
}

pub fn read_fmap<R: Read>(r: &mut R) -> Result<(DMatrix<f64>, DMatrix<f64>), FormatError> {
    read_header(r, "FMAP")?;
    let k = read_u64(r)?;
    Ok((read_matrix(r, k, k)?, read_matrix(r, k, k)?))
}

/// One dense layer: weights (in×out) and bias (1×out).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub weight: DMatrix<f64>,
    pub bias: DMatrix<f64>,
}

/// Refiner weights: `RFNW`, layer count, then per layer `in`, `out`, the
/// weight matrix and the bias row.
pub fn write_rfnw<W: Write>(w: &mut W, layers: &[LayerWeights]) -> io::Result<()> {
    write_header(w, b"RFNW")?;
    write_u64(w, layers.len())?;
    for l in layers {
        write_u64(w, l.weight.nrows())?;
        write_u64(w, l.weight.ncols())?;
        write_matrix(w, &l.weight)?;
        write_matrix(w, &l.bias)?;
    }
    Ok(())
}

pub fn read_rfnw<R: Read>(r: &mut R) -> Result<Vec<LayerWeights>, FormatError> {
    read_header(r, "RFNW")?;
    let count = read_u64(r)?;
    (0..count)
        .map(|_| {
            let (i, o) = (read_u64(r)?, read_u64(r)?);
            Ok(LayerWeights {
                weight: read_matrix(r, i, o)?,
                bias: read_matrix(r, 1, o)?,
            })
        })
        .collect()
}

fn save_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), FormatError> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn save_spec(path: &Path, eigenvalues: &[f64], phi: &DMatrix<f64>) -> Result<(), FormatError> {
    save_with(path, |w| write_spec(w, eigenvalues, phi))
}

pub fn load_spec(path: &Path) -> Result<(Vec<f64>, DMatrix<f64>), FormatError> {
    read_spec(&mut open(path)?)
}

pub fn save_fmat(path: &Path, m: &DMatrix<f64>) -> Result<(), FormatError> {
    save_with(path, |w| write_fmat(w, m))
}

pub fn load_fmat(path: &Path) -> Result<DMatrix<f64>, FormatError> {
    read_fmat(&mut open(path)?)
}

pub fn save_fmap(path: &Path, c_xy: &DMatrix<f64>, c_yx: &DMatrix<f64>) -> Result<(), FormatError> {
    save_with(path, |w| write_fmap(w, c_xy, c_yx))
}

pub fn load_fmap(path: &Path) -> Result<(DMatrix<f64>, DMatrix<f64>), FormatError> {
    read_fmap(&mut open(path)?)
}

pub fn save_rfnw(path: &Path, layers: &[LayerWeights]) -> Result<(), FormatError> {
    save_with(path, |w| write_rfnw(w, layers))
}

pub fn load_rfnw(path: &Path) -> Result<Vec<LayerWeights>, FormatError> {
    read_rfnw(&mut open(path)?)
}

/// One non-negative integer per line; blank lines and `#` comments skipped.
pub fn read_indices<R: BufRead>(r: R) -> Result<Vec<usize>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(FormatError::Truncated)?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(t.parse().map_err(|e| FormatError::Parse {
            line: i + 1,
            message: format!("{t:?}: {e}"),
        })?);
    }
    Ok(out)
}

pub fn write_indices<W: Write>(w: &mut W, values: &[usize]) -> io::Result<()> {
    for v in values {
        writeln!(w, "{v}")?;
    }
    Ok(())
}

/// Correspondence or label file.
pub fn load_indices(path: &Path) -> Result<Vec<usize>, FormatError> {
    read_indices(open(path)?)
}

pub fn save_indices(path: &Path, values: &[usize]) -> Result<(), FormatError> {
    save_with(path, |w| write_indices(w, values))
}
