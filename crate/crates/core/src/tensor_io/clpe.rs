//! CLPE embedding container.
//!
//! Layout (little-endian):
//! - magic `b"CLPE"`
//! - version: u32 (= 1)
//! - flags: u32, bit 0 set when a global embedding follows the header
//! - height, width, dim: u32
//! - optional global embedding: dim * f32
//! - pixel embeddings: height * width * dim * f32, row-major

use std::fs;
use std::path::Path;

use super::{DenseEmbeddingMap, ScalarMap, TensorIoError};

pub const MAGIC: [u8; 4] = *b"CLPE";
pub const VERSION: u32 = 1;
pub const FLAG_GLOBAL: u32 = 1;
pub const HEADER_LEN: usize = 24;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, field: &'static str) -> Result<&'a [u8], TensorIoError> {
        let available = self.buf.len() - self.pos;
        if available < len {
            return Err(TensorIoError::Truncated {
                field,
                offset: self.pos,
                expected: len,
                available,
            });
        }
        let out = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32, TensorIoError> {
        let bytes = self.take(4, field)?;
        Ok(u32::from_le_bytes(bytes.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize, field: &'static str) -> Result<Vec<f32>, TensorIoError> {
        let len = count.checked_mul(4).ok_or_else(|| TensorIoError::InvalidHeader {
            field,
            reason: "byte length overflows".into(),
        })?;
        let start = self.pos;
        let bytes = self.take(len, field)?;
        bytes
            .chunks_exact(4)
            .enumerate()
            .map(|(index, chunk)| {
                let v = f32::from_le_bytes(chunk.try_into().unwrap());
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(TensorIoError::NonFiniteData {
                        field,
                        index,
                        offset: Some(start + index * 4),
                    })
                }
            })
            .collect()
    }
}

pub fn decode_embedding_map(bytes: &[u8]) -> Result<DenseEmbeddingMap, TensorIoError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(TensorIoError::BadMagic { found: magic.to_vec() });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(TensorIoError::VersionUnsupported { version });
    }
    let flags = r.u32("flags")?;
    if flags & !FLAG_GLOBAL != 0 {
        return Err(TensorIoError::InvalidHeader {
            field: "flags",
            reason: format!("unknown flag bits {flags:#x}"),
        });
    }
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    let dim = r.u32("dim")? as usize;
    for (field, value) in [("height", height), ("width", width), ("dim", dim)] {
        if value == 0 {
            return Err(TensorIoError::InvalidHeader {
                field,
                reason: "must be at least 1".into(),
            });
        }
    }
    let count = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(dim))
        .ok_or_else(|| TensorIoError::InvalidHeader {
            field: "dim",
            reason: "height*width*dim overflows".into(),
        })?;

    let global_embedding = if flags & FLAG_GLOBAL != 0 {
        Some(r.f32s(dim, "global_embedding")?)
    } else {
        None
    };
    let data = r.f32s(count, "data")?;
    if r.pos != bytes.len() {
        return Err(TensorIoError::TrailingBytes {
            offset: r.pos,
            extra: bytes.len() - r.pos,
        });
    }
    Ok(DenseEmbeddingMap {
        height,
        width,
        dim,
        data,
        global_embedding,
    })
}

pub fn encode_embedding_map(map: &DenseEmbeddingMap) -> Result<Vec<u8>, TensorIoError> {
    map.validate()?;
    let header_u32 = |v: usize, field: &'static str| {
        u32::try_from(v).map_err(|_| TensorIoError::InvalidHeader {
            field,
            reason: format!("{v} does not fit in u32"),
        })
    };
    let height = header_u32(map.height, "height")?;
    let width = header_u32(map.width, "width")?;
    let dim = header_u32(map.dim, "dim")?;
    let global_len = map.global_embedding.as_ref().map_or(0, Vec::len);

    let mut out = Vec::with_capacity(HEADER_LEN + 4 * (global_len + map.data.len()));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let flags = if map.global_embedding.is_some() { FLAG_GLOBAL } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&height.to_le_bytes());
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    if let Some(global) = &map.global_embedding {
        for v in global {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in &map.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn load_embedding_map(path: impl AsRef<Path>) -> Result<DenseEmbeddingMap, TensorIoError> {
    let bytes = fs::read(path)?;
    decode_embedding_map(&bytes)
}

pub fn save_embedding_map(map: &DenseEmbeddingMap, path: impl AsRef<Path>) -> Result<(), TensorIoError> {
    let bytes = encode_embedding_map(map)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Scalar maps are stored as CLPE with `dim == 1` and no global embedding.
pub fn decode_scalar_map(bytes: &[u8]) -> Result<ScalarMap, TensorIoError> {
    let map = decode_embedding_map(bytes)?;
    if map.dim != 1 {
        return Err(TensorIoError::InvalidHeader {
            field: "dim",
            reason: format!("scalar map must have dim 1, found {}", map.dim),
        });
    }
    if map.global_embedding.is_some() {
        return Err(TensorIoError::InvalidHeader {
            field: "flags",
            reason: "scalar map must not carry a global embedding".into(),
        });
    }
    Ok(ScalarMap {
        height: map.height,
        width: map.width,
        values: map.data,
    })
}

pub fn encode_scalar_map(map: &ScalarMap) -> Result<Vec<u8>, TensorIoError> {
    map.validate()?;
    encode_embedding_map(&DenseEmbeddingMap {
        height: map.height,
        width: map.width,
        dim: 1,
        data: map.values.clone(),
        global_embedding: None,
    })
}

pub fn load_scalar_map(path: impl AsRef<Path>) -> Result<ScalarMap, TensorIoError> {
    decode_scalar_map(&fs::read(path)?)
}

pub fn save_scalar_map(map: &ScalarMap, path: impl AsRef<Path>) -> Result<(), TensorIoError> {
    fs::write(path, encode_scalar_map(map)?)?;
    Ok(())
}
