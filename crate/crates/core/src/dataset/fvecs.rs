//! `.fvecs` vector files: each record is a little-endian `i32` dimension
//! followed by that many little-endian `f32` values.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use super::DatasetError;

pub fn read_fvecs(path: impl AsRef<Path>) -> Result<Vec<Vec<f32>>, DatasetError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DatasetError::io(path, e))?;
    decode_fvecs(&bytes)
}

pub fn decode_fvecs(bytes: &[u8]) -> Result<Vec<Vec<f32>>, DatasetError> {
    let mut out = Vec::new();
    let mut offset = 0usize;
    let mut expected_dim: Option<usize> = None;
    while offset < bytes.len() {
        let header = bytes
            .get(offset..offset + 4)
            .ok_or(DatasetError::CorruptRecord { offset })?;
        let dim = i32::from_le_bytes(header.try_into().unwrap());
        if dim <= 0 {
            return Err(DatasetError::CorruptRecord { offset });
        }
        let dim = dim as usize;
        if let Some(expected) = expected_dim {
            if expected != dim {
                return Err(DatasetError::DimMismatch {
                    expected,
                    found: dim,
                    record: out.len(),
                });
            }
        }
        expected_dim = Some(dim);
        let body = bytes
            .get(offset + 4..offset + 4 + dim * 4)
            .ok_or(DatasetError::CorruptRecord { offset })?;
        out.push(
            body.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
        offset += 4 + dim * 4;
    }
    Ok(out)
}

pub fn write_fvecs<V: AsRef<[f32]>>(path: impl AsRef<Path>, vectors: &[V]) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let io_err = |e: io::Error| DatasetError::io(path, e);
    if let Some(first) = vectors.first() {
        let expected = first.as_ref().len();
        if expected == 0 {
            return Err(DatasetError::CorruptRecord { offset: 0 });
        }
        if let Some((record, v)) = vectors
            .iter()
            .enumerate()
            .find(|(_, v)| v.as_ref().len() != expected)
        {
            return Err(DatasetError::DimMismatch {
                expected,
                found: v.as_ref().len(),
                record,
            });
        }
    }
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for v in vectors {
        let v = v.as_ref();
        w.write_all(&(v.len() as i32).to_le_bytes()).map_err(io_err)?;
        for x in v {
            w.write_all(&x.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}
