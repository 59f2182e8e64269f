//! Vocabulary JSON: `{"dim": d, "known_count": n, "entries": [{"label": s, "vector": [..]}]}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TensorIoError, TextEmbedding, Vocabulary};

#[derive(Debug, Serialize, Deserialize)]
struct VocabularyFile {
    dim: usize,
    known_count: usize,
    entries: Vec<EntryFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EntryFile {
    label: String,
    vector: Vec<f32>,
}

pub fn parse_vocabulary(bytes: &[u8]) -> Result<Vocabulary, TensorIoError> {
    let file: VocabularyFile = serde_json::from_slice(bytes).map_err(|e| TensorIoError::Parse {
        location: format!("line {} column {}", e.line(), e.column()),
        reason: e.to_string(),
    })?;
    for entry in &file.entries {
        if entry.vector.len() != file.dim {
            return Err(TensorIoError::DimensionMismatch {
                what: format!("vector of {:?}", entry.label),
                expected: file.dim,
                found: entry.vector.len(),
            });
        }
    }
    let entries = file
        .entries
        .into_iter()
        .map(|e| TextEmbedding::new(e.label, e.vector))
        .collect();
    Vocabulary::new(entries, file.known_count)
}

pub fn vocabulary_to_json(vocab: &Vocabulary) -> Vec<u8> {
    let file = VocabularyFile {
        dim: vocab.dim().unwrap_or(0),
        known_count: vocab.known_count(),
        entries: vocab
            .entries()
            .iter()
            .map(|e| EntryFile {
                label: e.label.clone(),
                vector: e.vector.clone(),
            })
            .collect(),
    };
    serde_json::to_vec(&file).expect("vocabulary serializes")
}

pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<Vocabulary, TensorIoError> {
    parse_vocabulary(&fs::read(path)?)
}

pub fn save_vocabulary(vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<(), TensorIoError> {
    fs::write(path, vocabulary_to_json(vocab))?;
    Ok(())
}
