//! Segmentation over the extended vocabulary and its known/unknown
//! post-processing.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simcore::{self, ClassSubset, SimError, SimilarityVolume};
use crate::tensor_io::{self, BinaryMask, DenseEmbeddingMap, GrayImage, ScalarMap, TensorIoError, Vocabulary};

/// Label value excluded from multi-class evaluation.
pub const IGNORE_LABEL: u16 = 255;

#[derive(Debug, Error)]
pub enum OpenWorldError {
    #[error("unknown vocabulary is empty")]
    EmptyUnknownVocabulary,
    #[error("label index {index} at pixel {pixel} is outside the {count}-entry label list")]
    UnknownLabelIndex { index: usize, pixel: usize, count: usize },
    #[error("label {0:?} is not in the vocabulary")]
    UnknownLabel(String),
    #[error("{0} labels do not fit an 8-bit label map (max 255)")]
    TooManyClasses(usize),
    #[error("label map is {found_h}x{found_w}, expected {expected_h}x{expected_w}")]
    ShapeMismatch {
        expected_h: usize,
        expected_w: usize,
        found_h: usize,
        found_w: usize,
    },
    #[error("sidecar parse error: {0}")]
    Sidecar(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] TensorIoError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    /// Index into the extended vocabulary, row-major.
    pub labels: Vec<u16>,
    pub confidence: Vec<f32>,
}

/// Label order stored next to a label-map PGM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSidecar {
    pub labels: Vec<String>,
    pub known_count: usize,
}

fn extended_volume(map: &DenseEmbeddingMap, vocab: &Vocabulary) -> Result<SimilarityVolume, OpenWorldError> {
    if vocab.len() > usize::from(u16::MAX) {
        return Err(OpenWorldError::TooManyClasses(vocab.len()));
    }
    Ok(simcore::cosine_similarity_volume(map, vocab, ClassSubset::All)?)
}

fn label_map_from(volume: &SimilarityVolume, temperature: f32) -> LabelMap {
    let (labels, confidence): (Vec<u16>, Vec<f32>) = volume
        .scores
        .par_chunks(volume.class_count())
        .map(|p| {
            let (arg, _) = simcore::argmax_lowest(p);
            let probs = simcore::softmax(p, temperature);
            (arg as u16, probs[arg] as f32)
        })
        .unzip();
    LabelMap {
        height: volume.height,
        width: volume.width,
        labels,
        confidence,
    }
}

fn unknown_mass(volume: &SimilarityVolume, known_count: usize, temperature: f32) -> ScalarMap {
    let values = volume
        .scores
        .par_chunks(volume.class_count())
        .map(|p| {
            let probs = simcore::softmax(p, temperature);
            probs[known_count..].iter().sum::<f64>().clamp(0.0, 1.0) as f32
        })
        .collect();
    ScalarMap {
        height: volume.height,
        width: volume.width,
        values,
    }
}

fn check_temperature(temperature: f32) -> Result<(), OpenWorldError> {
    if temperature > 0.0 && temperature.is_finite() {
        Ok(())
    } else {
        Err(SimError::InvalidTemperature(temperature).into())
    }
}

/// Per-pixel argmax over all vocabulary entries (lowest index wins ties) with
/// the softmax probability of the winner as confidence.
pub fn segment_extended(
    map: &DenseEmbeddingMap,
    vocab: &Vocabulary,
    temperature: f32,
) -> Result<LabelMap, OpenWorldError> {
    check_temperature(temperature)?;
    let volume = extended_volume(map, vocab)?;
    Ok(label_map_from(&volume, temperature))
}

/// `true` where the label belongs to the unknown suffix of `vocab`.
pub fn binarize_known_unknown(lm: &LabelMap, vocab: &Vocabulary) -> BinaryMask {
    let known = vocab.known_count();
    BinaryMask {
        height: lm.height,
        width: lm.width,
        bits: lm.labels.iter().map(|&l| usize::from(l) >= known).collect(),
    }
}

/// Softmax probability mass on the unknown classes at every pixel.
pub fn anomaly_score(
    map: &DenseEmbeddingMap,
    vocab: &Vocabulary,
    temperature: f32,
) -> Result<ScalarMap, OpenWorldError> {
    if vocab.unknown().is_empty() {
        return Err(OpenWorldError::EmptyUnknownVocabulary);
    }
    check_temperature(temperature)?;
    let volume = extended_volume(map, vocab)?;
    Ok(unknown_mass(&volume, vocab.known_count(), temperature))
}

/// Label map plus anomaly score from a single similarity pass. The score is
/// all zeros when the unknown vocabulary is empty.
pub fn segment_and_score(
    map: &DenseEmbeddingMap,
    vocab: &Vocabulary,
    temperature: f32,
) -> Result<(LabelMap, ScalarMap), OpenWorldError> {
    check_temperature(temperature)?;
    let volume = extended_volume(map, vocab)?;
    let lm = label_map_from(&volume, temperature);
    let score = if vocab.unknown().is_empty() {
        ScalarMap {
            height: map.height,
            width: map.width,
            values: vec![0.0; map.pixel_count()],
        }
    } else {
        unknown_mass(&volume, vocab.known_count(), temperature)
    };
    Ok((lm, score))
}

pub fn encode_labelmap(lm: &LabelMap, vocab: &Vocabulary) -> Result<(Vec<u8>, Vec<u8>), OpenWorldError> {
    if vocab.len() >= 255 {
        return Err(OpenWorldError::TooManyClasses(vocab.len()));
    }
    if let Some((pixel, &index)) = lm
        .labels
        .iter()
        .enumerate()
        .find(|(_, &l)| usize::from(l) >= vocab.len())
    {
        return Err(OpenWorldError::UnknownLabelIndex {
            index: usize::from(index),
            pixel,
            count: vocab.len(),
        });
    }
    let pgm = tensor_io::encode_pgm(&GrayImage {
        width: lm.width,
        height: lm.height,
        maxval: 255,
        pixels: lm.labels.iter().map(|&l| l as u8).collect(),
    });
    let sidecar = LabelSidecar {
        labels: vocab.labels().map(str::to_string).collect(),
        known_count: vocab.known_count(),
    };
    let json = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
    Ok((pgm, json))
}

/// Validates an external label map against `vocab`. Sidecar labels are mapped
/// to vocabulary indices by name, so the sidecar order may differ from the
/// vocabulary order.
pub fn decode_labelmap(pgm: &[u8], sidecar: &[u8], vocab: &Vocabulary) -> Result<LabelMap, OpenWorldError> {
    let sidecar: LabelSidecar = serde_json::from_slice(sidecar).map_err(|e| OpenWorldError::Sidecar(e.to_string()))?;
    let remap = sidecar
        .labels
        .iter()
        .map(|l| {
            vocab
                .position(l)
                .map(|i| i as u16)
                .ok_or_else(|| OpenWorldError::UnknownLabel(l.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let img = tensor_io::decode_pgm(pgm)?;
    let labels = img
        .pixels
        .iter()
        .enumerate()
        .map(|(pixel, &v)| {
            remap
                .get(usize::from(v))
                .copied()
                .ok_or(OpenWorldError::UnknownLabelIndex {
                    index: usize::from(v),
                    pixel,
                    count: remap.len(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LabelMap {
        height: img.height,
        width: img.width,
        confidence: vec![1.0; labels.len()],
        labels,
    })
}

pub fn ingest_external_labelmap(
    pgm_path: impl AsRef<Path>,
    sidecar_path: impl AsRef<Path>,
    vocab: &Vocabulary,
) -> Result<LabelMap, OpenWorldError> {
    let pgm = fs::read(pgm_path).map_err(TensorIoError::from)?;
    let sidecar = fs::read(sidecar_path).map_err(TensorIoError::from)?;
    decode_labelmap(&pgm, &sidecar, vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::TextEmbedding;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vocab(known: &[(&str, [f32; 3])], unknown: &[(&str, [f32; 3])]) -> Vocabulary {
        let entries: Vec<_> = known
            .iter()
            .chain(unknown)
            .map(|(l, v)| TextEmbedding::new(*l, v.to_vec()))
            .collect();
        Vocabulary::new(entries, known.len()).unwrap()
    }

    fn strip(pixels: &[[f32; 3]]) -> DenseEmbeddingMap {
        DenseEmbeddingMap::new(1, pixels.len(), 3, pixels.concat(), None).unwrap()
    }

    #[test]
    fn empty_unknown_reduces_to_closed_vocabulary() {
        let v = vocab(&[("road", [1.0, 0.0, 0.0]), ("sky", [0.0, 1.0, 0.0])], &[]);
        let map = strip(&[[0.9, 0.1, 0.0], [0.1, 0.9, 0.0], [0.0, 0.0, 1.0]]);
        let lm = segment_extended(&map, &v, 1.0).unwrap();
        assert_eq!(lm.labels, vec![0, 1, 0]);
        assert!(binarize_known_unknown(&lm, &v).bits.iter().all(|b| !b));
        assert!(matches!(
            anomaly_score(&map, &v, 1.0),
            Err(OpenWorldError::EmptyUnknownVocabulary)
        ));
    }

    #[test]
    fn unknown_class_wins_where_it_matches() {
        let v = vocab(&[("road", [1.0, 0.0, 0.0])], &[("cow", [0.0, 0.0, 1.0])]);
        let map = strip(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        let lm = segment_extended(&map, &v, 1.0).unwrap();
        assert_eq!(lm.labels, vec![0, 1]);
        assert_eq!(binarize_known_unknown(&lm, &v).bits, vec![false, true]);
        // confidence is softmax(1, 0) of the winner
        let expected = 1f64.exp() / (1f64.exp() + 1.0);
        assert!((lm.confidence[0] as f64 - expected).abs() < 1e-6);
    }

    #[test]
    fn anomaly_score_three_class_toy() {
        let v = vocab(
            &[("a", [1.0, 0.0, 0.0]), ("b", [0.0, 1.0, 0.0])],
            &[("x", [0.0, 0.0, 1.0])],
        );
        let map = strip(&[[0.0, 0.0, 1.0]]);
        let score = anomaly_score(&map, &v, 0.05).unwrap();
        // softmax over (0, 0, 1) / 0.05
        let e = (1.0f64 / 0.05).exp();
        let expected = e / (e + 2.0);
        assert!((score.values[0] as f64 - expected).abs() < 1e-6);
        assert!(score.values[0] > 0.99);
    }

    #[test]
    fn score_plus_known_mass_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f32> = (0..30 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let map = DenseEmbeddingMap::new(5, 6, 3, data, None).unwrap();
        let v = vocab(
            &[("a", [1.0, 0.2, 0.0]), ("b", [0.0, 1.0, 0.3])],
            &[("x", [0.1, 0.0, 1.0])],
        );
        let score = anomaly_score(&map, &v, 1.0).unwrap();
        let volume = simcore::cosine_similarity_volume(&map, &v, ClassSubset::All).unwrap();
        for (p, s) in volume.pixels().zip(&score.values) {
            let probs = simcore::softmax(p, 1.0);
            let known: f64 = probs[..2].iter().sum();
            assert!((known + f64::from(*s) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn random_volume_matches_scalar_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data: Vec<f32> = (0..64 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let map = DenseEmbeddingMap::new(8, 8, 3, data.clone(), None).unwrap();
        let v = vocab(
            &[("a", [1.0, 0.0, 0.0]), ("b", [0.0, 1.0, 0.0])],
            &[("x", [0.0, 0.0, 1.0]), ("y", [1.0, 1.0, 1.0])],
        );
        let lm = segment_extended(&map, &v, 1.0).unwrap();
        for p in 0..64 {
            let e = &data[p * 3..p * 3 + 3];
            let ne = e.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            let mut best = (0, f64::NEG_INFINITY);
            for (c, t) in v.entries().iter().enumerate() {
                let nt = t.vector.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
                let s = e.iter().zip(&t.vector).map(|(a, b)| *a as f64 * *b as f64).sum::<f64>() / (ne * nt);
                if s > best.1 {
                    best = (c, s);
                }
            }
            assert_eq!(usize::from(lm.labels[p]), best.0);
        }
        let bin = binarize_known_unknown(&lm, &v);
        for (b, &l) in bin.bits.iter().zip(&lm.labels) {
            assert_eq!(*b, l >= 2);
        }
    }

    #[test]
    fn binarize_all_unknown() {
        let v = vocab(&[("a", [1.0, 0.0, 0.0])], &[("x", [0.0, 1.0, 0.0])]);
        let lm = LabelMap {
            height: 1,
            width: 3,
            labels: vec![1, 1, 1],
            confidence: vec![1.0; 3],
        };
        assert!(binarize_known_unknown(&lm, &v).bits.iter().all(|&b| b));
    }

    #[test]
    fn labelmap_round_trip_and_errors() {
        let v = vocab(
            &[("a", [1.0, 0.0, 0.0]), ("b", [0.0, 1.0, 0.0])],
            &[("x", [0.0, 0.0, 1.0])],
        );
        let lm = LabelMap {
            height: 2,
            width: 2,
            labels: vec![0, 2, 1, 0],
            confidence: vec![1.0; 4],
        };
        let (pgm, side) = encode_labelmap(&lm, &v).unwrap();
        assert_eq!(decode_labelmap(&pgm, &side, &v).unwrap(), lm);

        // sidecar in a different order is remapped by name
        let reordered = br#"{"labels":["x","a","b"],"known_count":2}"#;
        let mut pgm2 = b"P5\n2 1\n255\n".to_vec();
        pgm2.extend_from_slice(&[0, 2]);
        assert_eq!(decode_labelmap(&pgm2, reordered, &v).unwrap().labels, vec![2, 1]);

        let mut bad = b"P5\n1 1\n255\n".to_vec();
        bad.push(3);
        assert!(matches!(
            decode_labelmap(&bad, &side, &v),
            Err(OpenWorldError::UnknownLabelIndex { index: 3, .. })
        ));
        assert!(matches!(
            decode_labelmap(&pgm, br#"{"labels":["zebra"],"known_count":0}"#, &v),
            Err(OpenWorldError::UnknownLabel(_))
        ));
        assert!(matches!(
            decode_labelmap(&pgm, b"not json", &v),
            Err(OpenWorldError::Sidecar(_))
        ));
    }

    #[test]
    fn ingest_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let v = vocab(&[("a", [1.0, 0.0, 0.0])], &[("x", [0.0, 0.0, 1.0])]);
        let lm = LabelMap {
            height: 1,
            width: 2,
            labels: vec![1, 0],
            confidence: vec![1.0; 2],
        };
        let (pgm, side) = encode_labelmap(&lm, &v).unwrap();
        fs::write(dir.path().join("labels.pgm"), pgm).unwrap();
        fs::write(dir.path().join("labels.json"), side).unwrap();
        let back = ingest_external_labelmap(dir.path().join("labels.pgm"), dir.path().join("labels.json"), &v).unwrap();
        assert_eq!(back, lm);
    }
}
