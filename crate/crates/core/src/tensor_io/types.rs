use std::collections::HashSet;

use super::TensorIoError;

/// Per-pixel image embeddings, row-major `[height][width][dim]`, plus an
/// optional image-level embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseEmbeddingMap {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub data: Vec<f32>,
    pub global_embedding: Option<Vec<f32>>,
}

impl DenseEmbeddingMap {
    pub fn new(
        height: usize,
        width: usize,
        dim: usize,
        data: Vec<f32>,
        global_embedding: Option<Vec<f32>>,
    ) -> Result<Self, TensorIoError> {
        let map = Self {
            height,
            width,
            dim,
            data,
            global_embedding,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<(), TensorIoError> {
        for (field, value) in [("height", self.height), ("width", self.width), ("dim", self.dim)] {
            if value == 0 {
                return Err(TensorIoError::InvalidHeader {
                    field,
                    reason: "must be at least 1".into(),
                });
            }
        }
        let expected = self
            .height
            .checked_mul(self.width)
            .and_then(|n| n.checked_mul(self.dim))
            .ok_or_else(|| TensorIoError::InvalidHeader {
                field: "dim",
                reason: "height*width*dim overflows".into(),
            })?;
        if self.data.len() != expected {
            return Err(TensorIoError::DimensionMismatch {
                what: "data".into(),
                expected,
                found: self.data.len(),
            });
        }
        if let Some(global) = &self.global_embedding {
            if global.len() != self.dim {
                return Err(TensorIoError::DimensionMismatch {
                    what: "global_embedding".into(),
                    expected: self.dim,
                    found: global.len(),
                });
            }
            if let Some(index) = global.iter().position(|v| !v.is_finite()) {
                return Err(TensorIoError::NonFiniteData {
                    field: "global_embedding",
                    index,
                    offset: None,
                });
            }
        }
        if let Some(index) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(TensorIoError::NonFiniteData {
                field: "data",
                index,
                offset: None,
            });
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    /// Embedding at flat row-major pixel index.
    pub fn pixel(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub label: String,
    pub vector: Vec<f32>,
}

impl TextEmbedding {
    pub fn new(label: impl Into<String>, vector: Vec<f32>) -> Self {
        Self {
            label: label.into(),
            vector,
        }
    }

    pub fn validate(&self) -> Result<(), TensorIoError> {
        if self.label.is_empty() {
            return Err(TensorIoError::EmptyLabel);
        }
        if let Some(index) = self.vector.iter().position(|v| !v.is_finite()) {
            return Err(TensorIoError::NonFiniteData {
                field: "vector",
                index,
                offset: None,
            });
        }
        let norm_sq: f64 = self.vector.iter().map(|&v| f64::from(v) * f64::from(v)).sum();
        if norm_sq <= 0.0 {
            return Err(TensorIoError::ZeroNormVector(self.label.clone()));
        }
        Ok(())
    }
}

/// Ordered text embeddings. The first `known_count` entries form the known
/// vocabulary; the rest are labels discovered at inference time.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    entries: Vec<TextEmbedding>,
    known_count: usize,
}

impl Vocabulary {
    pub fn new(entries: Vec<TextEmbedding>, known_count: usize) -> Result<Self, TensorIoError> {
        if known_count > entries.len() {
            return Err(TensorIoError::KnownCountOutOfRange {
                known_count,
                entries: entries.len(),
            });
        }
        let mut seen = HashSet::with_capacity(entries.len());
        let dim = entries.first().map(|e| e.vector.len());
        for entry in &entries {
            entry.validate()?;
            if !seen.insert(entry.label.as_str()) {
                return Err(TensorIoError::DuplicateLabel(entry.label.clone()));
            }
            if let Some(dim) = dim {
                if entry.vector.len() != dim {
                    return Err(TensorIoError::DimensionMismatch {
                        what: format!("vector of {:?}", entry.label),
                        expected: dim,
                        found: entry.vector.len(),
                    });
                }
            }
        }
        Ok(Self { entries, known_count })
    }

    pub fn entries(&self) -> &[TextEmbedding] {
        &self.entries
    }

    pub fn known_count(&self) -> usize {
        self.known_count
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Embedding dimension, `None` for an empty vocabulary.
    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.vector.len())
    }

    pub fn known(&self) -> &[TextEmbedding] {
        &self.entries[..self.known_count]
    }

    pub fn unknown(&self) -> &[TextEmbedding] {
        &self.entries[self.known_count..]
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.label.as_str())
    }

    pub fn contains_label(&self, label: &str) -> bool {
        self.entries.iter().any(|e| e.label == label)
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.label == label)
    }

    /// Appends `extra` to the unknown suffix, keeping the known prefix.
    pub fn extended_with(&self, extra: &[TextEmbedding]) -> Result<Self, TensorIoError> {
        let mut entries = self.entries.clone();
        entries.extend_from_slice(extra);
        Self::new(entries, self.known_count)
    }

    /// Copy of the known prefix only.
    pub fn known_only(&self) -> Self {
        Self {
            entries: self.known().to_vec(),
            known_count: self.known_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self, TensorIoError> {
        if bits.len() != height * width {
            return Err(TensorIoError::DimensionMismatch {
                what: "mask bits".into(),
                expected: height * width,
                found: bits.len(),
            });
        }
        Ok(Self { height, width, bits })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn same_shape(&self, height: usize, width: usize) -> bool {
        self.height == height && self.width == width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl ScalarMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self, TensorIoError> {
        let map = Self { height, width, values };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<(), TensorIoError> {
        if self.values.len() != self.height * self.width {
            return Err(TensorIoError::DimensionMismatch {
                what: "scalar map values".into(),
                expected: self.height * self.width,
                found: self.values.len(),
            });
        }
        if let Some(index) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(TensorIoError::NonFiniteData {
                field: "values",
                index,
                offset: None,
            });
        }
        Ok(())
    }

    pub fn min_max(&self) -> Option<(f32, f32)> {
        let mut it = self.values.iter().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }
}
