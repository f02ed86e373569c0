//! Dense tensors and the flat binary tensor file format.
//!
//! A tensor file is a sequence of records. Each record is
//!
//! ```text
//! u32 ndims | u32 dims[ndims] | f32 data[prod(dims)]
//! ```
//!
//! all little-endian, data row-major. Weight sets store one record per
//! layer; input files store one record per image.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorFileError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("truncated tensor record {record}: {what}")]
    Truncated { record: usize, what: &'static str },
    #[error("tensor record {record} has {ndims} dims (expected 1..=8)")]
    BadRank { record: usize, ndims: u32 },
    #[error("tensor record {record} has a zero-sized dimension")]
    ZeroDim { record: usize },
    #[error("tensor file contains no records")]
    Empty,
}

/// Height × width × channels, in neurons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Dims3 {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Dims3 {
    pub const fn new(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c }
    }

    pub fn count(&self) -> usize {
        self.h * self.w * self.c
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, ch: usize) -> usize {
        (y * self.w + x) * self.c + ch
    }
}

impl From<[usize; 3]> for Dims3 {
    fn from(d: [usize; 3]) -> Self {
        Self::new(d[0], d[1], d[2])
    }
}

impl From<Dims3> for [usize; 3] {
    fn from(d: Dims3) -> Self {
        [d.h, d.w, d.c]
    }
}

impl std::fmt::Display for Dims3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

/// Row-major real tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { dims, data }
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self { dims, data: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

pub fn write_tensors<W: Write>(mut out: W, tensors: &[Tensor]) -> io::Result<()> {
    for t in tensors {
        out.write_all(&(t.dims.len() as u32).to_le_bytes())?;
        for &d in &t.dims {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &t.data {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_tensors<R: Read>(mut input: R) -> Result<Vec<Tensor>, TensorFileError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cursor = 0usize;
    let take_u32 = |cursor: &mut usize| -> Option<u32> {
        let b = bytes.get(*cursor..*cursor + 4)?;
        *cursor += 4;
        Some(u32::from_le_bytes(b.try_into().unwrap()))
    };
    let mut out = Vec::new();
    while cursor < bytes.len() {
        let record = out.len();
        let ndims = take_u32(&mut cursor).ok_or(TensorFileError::Truncated {
            record,
            what: "rank",
        })?;
        if !(1..=8).contains(&ndims) {
            return Err(TensorFileError::BadRank { record, ndims });
        }
        let mut dims = Vec::with_capacity(ndims as usize);
        for _ in 0..ndims {
            let d = take_u32(&mut cursor).ok_or(TensorFileError::Truncated {
                record,
                what: "dims",
            })?;
            if d == 0 {
                return Err(TensorFileError::ZeroDim { record });
            }
            dims.push(d as usize);
        }
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let v = take_u32(&mut cursor).ok_or(TensorFileError::Truncated {
                record,
                what: "data",
            })?;
            data.push(f32::from_bits(v) as f64);
        }
        out.push(Tensor { dims, data });
    }
    if out.is_empty() {
        return Err(TensorFileError::Empty);
    }
    Ok(out)
}

pub fn load_tensor_file(path: &Path) -> Result<Vec<Tensor>, TensorFileError> {
    read_tensors(fs::File::open(path)?)
}

pub fn save_tensor_file(path: &Path, tensors: &[Tensor]) -> io::Result<()> {
    let mut buf = Vec::new();
    write_tensors(&mut buf, tensors)?;
    fs::write(path, buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_multiple_records() {
        let ts = vec![
            Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 0.25, -8.0]),
            Tensor::new(vec![1], vec![42.0]),
        ];
        let mut buf = Vec::new();
        write_tensors(&mut buf, &ts).unwrap();
        assert_eq!(buf.len(), (4 + 8 + 24) + (4 + 4 + 4));
        assert_eq!(&buf[0..4], &2u32.to_le_bytes());
        assert_eq!(read_tensors(&buf[..]).unwrap(), ts);
    }

    #[test]
    fn truncated_data_is_reported() {
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[Tensor::new(vec![2], vec![1.0, 2.0])]).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(matches!(
            read_tensors(&buf[..]),
            Err(TensorFileError::Truncated { what: "data", .. })
        ));
        assert!(matches!(read_tensors(&[][..]), Err(TensorFileError::Empty)));
        assert!(matches!(
            read_tensors(&0u32.to_le_bytes()[..]),
            Err(TensorFileError::BadRank { .. })
        ));
    }
}
