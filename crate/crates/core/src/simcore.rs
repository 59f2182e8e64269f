//! Dense cosine-similarity volumes, per-pixel softmax entropy and min-max
//! normalization of uncertainty maps.

use rayon::prelude::*;
use thiserror::Error;

use crate::tensor_io::{DenseEmbeddingMap, ScalarMap, TextEmbedding, Vocabulary};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("embedding dimension mismatch: map has {map}, text embeddings have {text}")]
    DimensionMismatch { map: usize, text: usize },
    #[error("no classes selected")]
    EmptyVocabulary,
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f32),
    #[error("mean pixel embedding has zero norm")]
    ZeroMeanEmbedding,
    #[error("stored global embedding has zero norm")]
    ZeroGlobalEmbedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassSubset {
    #[default]
    Known,
    All,
}

/// `H x W x C'` cosine similarities, row-major with the class axis innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityVolume {
    pub height: usize,
    pub width: usize,
    pub class_labels: Vec<String>,
    pub scores: Vec<f32>,
}

impl SimilarityVolume {
    pub fn class_count(&self) -> usize {
        self.class_labels.len()
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel_scores(&self, index: usize) -> &[f32] {
        let c = self.class_count();
        &self.scores[index * c..(index + 1) * c]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f32> {
        self.scores.chunks_exact(self.class_count().max(1))
    }

    pub fn channel(&self, class: usize) -> Vec<f32> {
        self.pixels().map(|p| p[class]).collect()
    }

    /// Per-pixel `(argmax, max)` with ties resolved to the lowest class index.
    pub fn argmax(&self) -> Vec<(usize, f32)> {
        self.pixels().map(argmax_lowest).collect()
    }
}

pub(crate) fn argmax_lowest(scores: &[f32]) -> (usize, f32) {
    let mut best = (0, scores[0]);
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > best.1 {
            best = (i, s);
        }
    }
    best
}

fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

fn cosine(a: &[f32], a_norm: f64, b: &[f32], b_norm: f64) -> f32 {
    if a_norm == 0.0 || b_norm == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    (dot / (a_norm * b_norm)).clamp(-1.0, 1.0) as f32
}

/// Cosine similarity of every pixel against the selected vocabulary entries.
pub fn cosine_similarity_volume(
    map: &DenseEmbeddingMap,
    vocab: &Vocabulary,
    subset: ClassSubset,
) -> Result<SimilarityVolume, SimError> {
    let entries = match subset {
        ClassSubset::Known => vocab.known(),
        ClassSubset::All => vocab.entries(),
    };
    similarity_volume(map, entries)
}

pub fn similarity_volume(map: &DenseEmbeddingMap, entries: &[TextEmbedding]) -> Result<SimilarityVolume, SimError> {
    if entries.is_empty() {
        return Err(SimError::EmptyVocabulary);
    }
    for e in entries {
        if e.vector.len() != map.dim {
            return Err(SimError::DimensionMismatch {
                map: map.dim,
                text: e.vector.len(),
            });
        }
    }
    let text_norms: Vec<f64> = entries.iter().map(|e| l2_norm(&e.vector)).collect();
    let c = entries.len();
    let mut scores = vec![0.0f32; map.pixel_count() * c];
    scores
        .par_chunks_mut(c)
        .zip(map.data.par_chunks(map.dim))
        .for_each(|(out, pixel)| {
            let pn = l2_norm(pixel);
            for ((o, e), &tn) in out.iter_mut().zip(entries).zip(&text_norms) {
                *o = cosine(pixel, pn, &e.vector, tn);
            }
        });
    Ok(SimilarityVolume {
        height: map.height,
        width: map.width,
        class_labels: entries.iter().map(|e| e.label.clone()).collect(),
        scores,
    })
}

/// Similarity of every pixel to a single text vector.
pub fn similarity_channel(map: &DenseEmbeddingMap, vector: &[f32]) -> Result<Vec<f32>, SimError> {
    if vector.len() != map.dim {
        return Err(SimError::DimensionMismatch {
            map: map.dim,
            text: vector.len(),
        });
    }
    let vn = l2_norm(vector);
    Ok(map
        .data
        .par_chunks(map.dim)
        .map(|pixel| cosine(pixel, l2_norm(pixel), vector, vn))
        .collect())
}

/// Cosine similarity between two vectors; 0 if either has zero norm.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f32 {
    cosine(a, l2_norm(a), b, l2_norm(b))
}

fn check_temperature(temperature: f32) -> Result<(), SimError> {
    if temperature > 0.0 && temperature.is_finite() {
        Ok(())
    } else {
        Err(SimError::InvalidTemperature(temperature))
    }
}

/// Numerically stable `softmax(scores / temperature)` in double precision.
pub fn softmax(scores: &[f32], temperature: f32) -> Vec<f64> {
    let t = f64::from(temperature);
    let max = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(f64::from(s)));
    let exps: Vec<f64> = scores.iter().map(|&s| ((f64::from(s) - max) / t).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Entropy in nats of `softmax(scores / temperature)`.
///
/// Scores are sorted first so the result does not depend on class order.
pub fn softmax_entropy(scores: &[f32], temperature: f32) -> f64 {
    let t = f64::from(temperature);
    let mut logits: Vec<f64> = scores.iter().map(|&s| f64::from(s)).collect();
    logits.sort_by(f64::total_cmp);
    let max = *logits.last().expect("at least one class");
    // H = ln Z - sum(e_c * z_c) / Z with z_c = (s_c - max) / t
    let mut z = 0.0;
    let mut weighted = 0.0;
    for s in &logits {
        let zc = (s - max) / t;
        let e = zc.exp();
        z += e;
        weighted += e * zc;
    }
    (z.ln() - weighted / z).clamp(0.0, (logits.len() as f64).ln())
}

pub fn pixelwise_entropy(volume: &SimilarityVolume, temperature: f32) -> Result<ScalarMap, SimError> {
    check_temperature(temperature)?;
    if volume.class_count() == 0 {
        return Err(SimError::EmptyVocabulary);
    }
    let values = volume
        .scores
        .par_chunks(volume.class_count())
        .map(|p| softmax_entropy(p, temperature) as f32)
        .collect();
    Ok(ScalarMap {
        height: volume.height,
        width: volume.width,
        values,
    })
}

/// Affine rescale to `[0, 1]`; a constant map becomes all zeros.
pub fn minmax_normalize(map: &ScalarMap) -> ScalarMap {
    let values = match map.min_max() {
        Some((lo, hi)) if hi > lo => {
            let (lo, range) = (f64::from(lo), f64::from(hi) - f64::from(lo));
            map.values
                .iter()
                .map(|&v| ((f64::from(v) - lo) / range).clamp(0.0, 1.0) as f32)
                .collect()
        }
        _ => vec![0.0; map.values.len()],
    };
    ScalarMap {
        height: map.height,
        width: map.width,
        values,
    }
}

/// Stored image-level embedding, or the L2-normalized mean pixel embedding
/// when the map carries none.
pub fn global_embedding_of(map: &DenseEmbeddingMap) -> Result<Vec<f32>, SimError> {
    if let Some(g) = &map.global_embedding {
        if g.iter().all(|&v| v == 0.0) {
            return Err(SimError::ZeroGlobalEmbedding);
        }
        return Ok(g.clone());
    }
    let mut mean = vec![0.0f64; map.dim];
    for pixel in map.pixels() {
        for (m, &v) in mean.iter_mut().zip(pixel) {
            *m += f64::from(v);
        }
    }
    let n = map.pixel_count() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let norm = mean.iter().map(|m| m * m).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(SimError::ZeroMeanEmbedding);
    }
    Ok(mean.into_iter().map(|m| (m / norm) as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vocab(vectors: &[Vec<f32>]) -> Vocabulary {
        let entries = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| TextEmbedding::new(format!("c{i}"), v.clone()))
            .collect::<Vec<_>>();
        let n = entries.len();
        Vocabulary::new(entries, n).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
        (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect()
    }

    #[test]
    fn identical_and_orthogonal() {
        let map = DenseEmbeddingMap::new(1, 2, 2, vec![3.0, 4.0, 0.0, 2.0], None).unwrap();
        let v = vocab(&[vec![3.0, 4.0], vec![1.0, 0.0]]);
        let s = cosine_similarity_volume(&map, &v, ClassSubset::Known).unwrap();
        assert!((s.pixel_scores(0)[0] - 1.0).abs() < 1e-7);
        assert_eq!(s.pixel_scores(1)[1], 0.0);
    }

    #[test]
    fn zero_norm_pixel_scores_zero() {
        let map = DenseEmbeddingMap::new(1, 1, 2, vec![0.0, 0.0], None).unwrap();
        let s = cosine_similarity_volume(&map, &vocab(&[vec![1.0, 0.0], vec![0.0, 1.0]]), ClassSubset::All).unwrap();
        assert_eq!(s.pixel_scores(0), &[0.0, 0.0]);
    }

    #[test]
    fn dimension_and_empty_errors() {
        let map = DenseEmbeddingMap::new(1, 1, 2, vec![1.0, 0.0], None).unwrap();
        assert_eq!(
            cosine_similarity_volume(&map, &vocab(&[vec![1.0, 0.0, 0.0]]), ClassSubset::Known),
            Err(SimError::DimensionMismatch { map: 2, text: 3 })
        );
        let none = Vocabulary::new(vec![TextEmbedding::new("a", vec![1.0, 0.0])], 0).unwrap();
        assert_eq!(
            cosine_similarity_volume(&map, &none, ClassSubset::Known),
            Err(SimError::EmptyVocabulary)
        );
    }

    #[test]
    fn matches_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (h, w, d) = (4, 4, 8);
        let data: Vec<f32> = (0..h * w * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let texts: Vec<Vec<f32>> = (0..3).map(|_| random_vec(&mut rng, d)).collect();
        let map = DenseEmbeddingMap::new(h, w, d, data.clone(), None).unwrap();
        let s = cosine_similarity_volume(&map, &vocab(&texts), ClassSubset::Known).unwrap();
        for p in 0..h * w {
            for (c, t) in texts.iter().enumerate() {
                let e = &data[p * d..(p + 1) * d];
                let (mut dot, mut ne, mut nt) = (0.0f64, 0.0f64, 0.0f64);
                for k in 0..d {
                    dot += e[k] as f64 * t[k] as f64;
                    ne += (e[k] as f64).powi(2);
                    nt += (t[k] as f64).powi(2);
                }
                let expected = dot / (ne.sqrt() * nt.sqrt());
                assert!((s.pixel_scores(p)[c] as f64 - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn uniform_scores_give_ln_c() {
        let s = SimilarityVolume {
            height: 1,
            width: 1,
            class_labels: (0..19).map(|i| i.to_string()).collect(),
            scores: vec![0.3; 19],
        };
        let e = pixelwise_entropy(&s, 1.0).unwrap();
        assert!((e.values[0] as f64 - 19f64.ln()).abs() < 1e-6);
        assert!((e.values[0] - 2.944439).abs() < 1e-6);
    }

    #[test]
    fn single_class_entropy_is_zero() {
        let s = SimilarityVolume {
            height: 2,
            width: 1,
            class_labels: vec!["a".into()],
            scores: vec![0.9, -0.4],
        };
        assert_eq!(pixelwise_entropy(&s, 1.0).unwrap().values, vec![0.0, 0.0]);
    }

    #[test]
    fn entropy_of_two_zero_zero() {
        // direct double-precision evaluation of -sum p ln p
        let z = 2f64.exp() + 2.0;
        let p = [2f64.exp() / z, 1.0 / z, 1.0 / z];
        let oracle: f64 = -p.iter().map(|q| q * q.ln()).sum::<f64>();
        assert!((softmax_entropy(&[2.0, 0.0, 0.0], 1.0) - oracle).abs() < 1e-12);
        assert!((oracle - 0.665_572_681_9).abs() < 1e-9);
    }

    #[test]
    fn temperature_must_be_positive() {
        let s = SimilarityVolume {
            height: 1,
            width: 1,
            class_labels: vec!["a".into()],
            scores: vec![0.0],
        };
        assert!(pixelwise_entropy(&s, 0.0).is_err());
        assert!(pixelwise_entropy(&s, f32::NAN).is_err());
    }

    #[test]
    fn minmax_examples() {
        let m = ScalarMap::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(minmax_normalize(&m).values, vec![0.0, 0.5, 1.0]);
        let c = ScalarMap::new(2, 2, vec![4.2; 4]).unwrap();
        assert_eq!(minmax_normalize(&c).values, vec![0.0; 4]);
    }

    #[test]
    fn global_embedding_paths() {
        let stored = DenseEmbeddingMap::new(1, 1, 2, vec![1.0, 0.0], Some(vec![0.2, 0.7])).unwrap();
        assert_eq!(global_embedding_of(&stored).unwrap(), vec![0.2, 0.7]);

        let same = DenseEmbeddingMap::new(2, 2, 2, vec![0.6, 0.8, 0.6, 0.8, 0.6, 0.8, 0.6, 0.8], None).unwrap();
        let g = global_embedding_of(&same).unwrap();
        assert!((g[0] - 0.6).abs() < 1e-7 && (g[1] - 0.8).abs() < 1e-7);

        let two = DenseEmbeddingMap::new(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0], None).unwrap();
        let g = global_embedding_of(&two).unwrap();
        let r = std::f32::consts::FRAC_1_SQRT_2;
        assert!((g[0] - r).abs() < 1e-7 && (g[1] - r).abs() < 1e-7);

        let cancel = DenseEmbeddingMap::new(1, 2, 2, vec![1.0, 0.0, -1.0, 0.0], None).unwrap();
        assert_eq!(global_embedding_of(&cancel), Err(SimError::ZeroMeanEmbedding));

        let zero = DenseEmbeddingMap::new(1, 1, 2, vec![1.0, 0.0], Some(vec![0.0, 0.0])).unwrap();
        assert_eq!(global_embedding_of(&zero), Err(SimError::ZeroGlobalEmbedding));
    }

    proptest! {
        #[test]
        fn scale_invariance(scale in 1e-3f32..1e3, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..3 * 3 * 5).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let texts: Vec<Vec<f32>> = (0..4).map(|_| random_vec(&mut rng, 5)).collect();
            let v = vocab(&texts);
            let a = DenseEmbeddingMap::new(3, 3, 5, data.clone(), None).unwrap();
            let b = DenseEmbeddingMap::new(3, 3, 5, data.iter().map(|x| x * scale).collect(), None).unwrap();
            let sa = cosine_similarity_volume(&a, &v, ClassSubset::Known).unwrap();
            let sb = cosine_similarity_volume(&b, &v, ClassSubset::Known).unwrap();
            for (x, y) in sa.scores.iter().zip(&sb.scores) {
                prop_assert!((x - y).abs() < 1e-5);
            }
        }

        #[test]
        fn entropy_bounds(scores in proptest::collection::vec(-1.0f32..1.0, 1..40), t in 0.01f32..10.0) {
            let h = softmax_entropy(&scores, t);
            let max = (scores.len() as f64).ln();
            prop_assert!(h >= 0.0 && h <= max + 1e-12);
        }

        #[test]
        fn entropy_is_permutation_invariant(mut scores in proptest::collection::vec(-1.0f32..1.0, 2..30), rot in 0usize..30) {
            let a = softmax_entropy(&scores, 1.0);
            let k = rot % scores.len();
            scores.rotate_left(k);
            scores.reverse();
            prop_assert_eq!(a.to_bits(), softmax_entropy(&scores, 1.0).to_bits());
        }

        #[test]
        fn minmax_range_and_idempotence(values in proptest::collection::vec(-5.0f32..5.0, 2..50)) {
            let n = values.len();
            let m = ScalarMap::new(1, n, values).unwrap();
            let out = minmax_normalize(&m);
            let (lo, hi) = out.min_max().unwrap();
            if m.min_max().map(|(a, b)| b > a).unwrap() {
                prop_assert_eq!((lo, hi), (0.0, 1.0));
                prop_assert_eq!(minmax_normalize(&out).values, out.values);
            }
        }
    }
}
