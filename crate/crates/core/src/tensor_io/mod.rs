//! File formats shared with the embedding exporter: CLPE embedding maps,
//! vocabulary JSON, and binary PGM masks.

mod clpe;
mod pgm;
mod types;
mod vocab;

use thiserror::Error;

pub use clpe::{
    decode_embedding_map, decode_scalar_map, encode_embedding_map, encode_scalar_map, load_embedding_map,
    load_scalar_map, save_embedding_map, save_scalar_map, FLAG_GLOBAL, HEADER_LEN, MAGIC, VERSION,
};
pub use pgm::{decode_mask, decode_pgm, encode_mask, encode_pgm, load_mask, save_mask, GrayImage};
pub use types::{BinaryMask, DenseEmbeddingMap, ScalarMap, TextEmbedding, Vocabulary};
pub use vocab::{load_vocabulary, parse_vocabulary, save_vocabulary, vocabulary_to_json};

#[derive(Debug, Error)]
pub enum TensorIoError {
    #[error("bad magic {found:?}, expected \"CLPE\"")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported format version {version}")]
    VersionUnsupported { version: u32 },
    #[error("invalid header field `{field}`: {reason}")]
    InvalidHeader { field: &'static str, reason: String },
    #[error("truncated `{field}` at byte {offset}: need {expected} bytes, {available} available")]
    Truncated {
        field: &'static str,
        offset: usize,
        expected: usize,
        available: usize,
    },
    #[error("{extra} trailing bytes at byte {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("non-finite value in `{field}` at element {index}{}", offset.map(|o| format!(" (byte {o})")).unwrap_or_default())]
    NonFiniteData {
        field: &'static str,
        index: usize,
        offset: Option<usize>,
    },
    #[error("parse error at {location}: {reason}")]
    Parse { location: String, reason: String },
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("empty label")]
    EmptyLabel,
    #[error("zero-norm vector for label {0:?}")]
    ZeroNormVector(String),
    #[error("known_count {known_count} exceeds {entries} entries")]
    KnownCountOutOfRange { known_count: usize, entries: usize },
    #[error("non-binary mask pixel {value} at byte {offset}")]
    NonBinaryPixel { offset: usize, value: u8 },
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
}
