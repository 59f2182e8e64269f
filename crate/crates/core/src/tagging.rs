//! Naming the unknown region.
//!
//! Candidates come either from a dictionary, preselected by similarity to the
//! global image embedding, or from an external tagger's label list. Each
//! candidate gets a soft mask: the winning similarity at pixels where the
//! candidate beats every known class, zero elsewhere. Candidates are then
//! ranked against the binary unknown mask.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simcore::{self, SimError, SimilarityVolume};
use crate::tensor_io::{BinaryMask, DenseEmbeddingMap, TextEmbedding, Vocabulary};

/// Minimum strict gain in combined soft IoU for CLIP-All to accept another label.
pub const IMPROVEMENT_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum TaggingError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dictionary is empty")]
    EmptyDictionary,
    #[error("top-K must be at least 1")]
    InvalidK,
    #[error("no candidates to select from")]
    NoCandidates,
    #[error("tag {0:?} has no embedding in the tag vocabulary")]
    MissingTagEmbedding(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    Dictionary,
    ExternalTags,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub embedding: TextEmbedding,
    /// Cosine similarity to the global image embedding; `None` for external tags.
    pub preselect_score: Option<f32>,
}

impl Candidate {
    pub fn label(&self) -> &str {
        &self.embedding.label
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub source: CandidateSource,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Drops candidates whose label already appears in `vocab`.
    pub fn excluding(mut self, vocab: &Vocabulary) -> Self {
        self.candidates.retain(|c| !vocab.contains_label(c.label()));
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Best,
    All,
    MeanSimilarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenLabel {
    pub label: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagSelection {
    pub chosen: Vec<ChosenLabel>,
    pub strategy: Strategy,
}

impl TagSelection {
    pub fn labels(&self) -> Vec<String> {
        self.chosen.iter().map(|c| c.label.clone()).collect()
    }
}

/// Top-`k` dictionary entries by cosine similarity to `image_embedding`,
/// descending, ties kept in dictionary order.
pub fn preselect_candidates(
    image_embedding: &[f32],
    dictionary: &[TextEmbedding],
    k: usize,
) -> Result<CandidateSet, TaggingError> {
    if k == 0 {
        return Err(TaggingError::InvalidK);
    }
    if dictionary.is_empty() {
        return Err(TaggingError::EmptyDictionary);
    }
    if let Some(bad) = dictionary.iter().find(|e| e.vector.len() != image_embedding.len()) {
        return Err(TaggingError::DimensionMismatch {
            expected: image_embedding.len(),
            found: bad.vector.len(),
        });
    }
    let mut scored: Vec<(usize, f32)> = dictionary
        .iter()
        .enumerate()
        .map(|(i, e)| (i, simcore::cosine_similarity(image_embedding, &e.vector)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(CandidateSet {
        candidates: scored
            .into_iter()
            .map(|(i, s)| Candidate {
                embedding: dictionary[i].clone(),
                preselect_score: Some(s),
            })
            .collect(),
        source: CandidateSource::Dictionary,
    })
}

/// One label per line; blank lines skipped, surrounding whitespace trimmed,
/// repeated labels kept once at their first position.
pub fn parse_tag_list(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .filter(|l| seen.insert(l.to_string()))
        .map(str::to_string)
        .collect()
}

pub fn candidates_from_tags(tags: &[String], tag_embeddings: &Vocabulary) -> Result<CandidateSet, TaggingError> {
    let candidates = tags
        .iter()
        .map(|tag| {
            tag_embeddings
                .position(tag)
                .map(|i| Candidate {
                    embedding: tag_embeddings.entries()[i].clone(),
                    preselect_score: None,
                })
                .ok_or_else(|| TaggingError::MissingTagEmbedding(tag.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CandidateSet {
        candidates,
        source: CandidateSource::ExternalTags,
    })
}

/// Per-image scoring context: the known-class maximum at every pixel plus each
/// candidate's similarity channel.
struct RegionScorer<'a> {
    known_max: Vec<f32>,
    channels: Vec<Vec<f32>>,
    unknown: &'a BinaryMask,
}

impl<'a> RegionScorer<'a> {
    fn new(
        cands: &CandidateSet,
        s_known: &SimilarityVolume,
        map: &DenseEmbeddingMap,
        unknown: &'a BinaryMask,
    ) -> Result<Self, TaggingError> {
        if cands.is_empty() {
            return Err(TaggingError::NoCandidates);
        }
        check_shapes(s_known, map, unknown)?;
        let channels = cands
            .candidates
            .par_iter()
            .map(|c| simcore::similarity_channel(map, &c.embedding.vector))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            known_max: known_max(s_known),
            channels,
            unknown,
        })
    }

    /// Combined soft mask of a label set whose pixelwise channel maximum is
    /// `unknown_max`. Known classes win ties.
    fn mask_values(&self, unknown_max: impl Iterator<Item = f32>) -> Vec<f32> {
        self.known_max
            .iter()
            .zip(unknown_max)
            .map(|(&k, u)| if u > k { u.max(0.0) } else { 0.0 })
            .collect()
    }

    fn single(&self, i: usize) -> Vec<f32> {
        self.mask_values(self.channels[i].iter().copied())
    }

    fn iou(&self, values: &[f32]) -> f64 {
        soft_iou_values(values, &self.unknown.bits)
    }
}

fn check_shapes(s_known: &SimilarityVolume, map: &DenseEmbeddingMap, unknown: &BinaryMask) -> Result<(), TaggingError> {
    if s_known.height != map.height || s_known.width != map.width {
        return Err(TaggingError::ShapeMismatch(format!(
            "similarity volume {}x{} vs embedding map {}x{}",
            s_known.height, s_known.width, map.height, map.width
        )));
    }
    if !unknown.same_shape(map.height, map.width) {
        return Err(TaggingError::ShapeMismatch(format!(
            "unknown mask {}x{} vs embedding map {}x{}",
            unknown.height, unknown.width, map.height, map.width
        )));
    }
    if s_known.class_count() == 0 {
        return Err(TaggingError::Sim(SimError::EmptyVocabulary));
    }
    Ok(())
}

fn known_max(s_known: &SimilarityVolume) -> Vec<f32> {
    s_known.pixels().map(|p| simcore::argmax_lowest(p).1).collect()
}

/// Soft mask of `candidate` against the known classes of `s_known`. Negative
/// winning similarities are clamped to zero.
pub fn candidate_soft_mask(
    s_known: &SimilarityVolume,
    map: &DenseEmbeddingMap,
    candidate: &TextEmbedding,
) -> Result<SoftMask, TaggingError> {
    if s_known.height != map.height || s_known.width != map.width {
        return Err(TaggingError::ShapeMismatch("similarity volume vs embedding map".into()));
    }
    if s_known.class_count() == 0 {
        return Err(TaggingError::Sim(SimError::EmptyVocabulary));
    }
    let channel = simcore::similarity_channel(map, &candidate.vector).map_err(|_| TaggingError::DimensionMismatch {
        expected: map.dim,
        found: candidate.vector.len(),
    })?;
    let values = known_max(s_known)
        .into_iter()
        .zip(channel)
        .map(|(k, c)| if c > k { c.max(0.0) } else { 0.0 })
        .collect();
    Ok(SoftMask {
        height: map.height,
        width: map.width,
        values,
    })
}

fn soft_iou_values(values: &[f32], unknown: &[bool]) -> f64 {
    let (mut inter, mut union) = (0.0f64, 0.0f64);
    for (&m, &u) in values.iter().zip(unknown) {
        let m = f64::from(m);
        let u = if u { 1.0 } else { 0.0 };
        inter += m * u;
        union += m + u - m * u;
    }
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// `sum(m * u) / sum(m + u - m * u)`, 0 when the denominator vanishes.
pub fn soft_iou(m: &SoftMask, unknown: &BinaryMask) -> Result<f64, TaggingError> {
    if !unknown.same_shape(m.height, m.width) || m.values.len() != unknown.bits.len() {
        return Err(TaggingError::ShapeMismatch(format!(
            "soft mask {}x{} vs binary mask {}x{}",
            m.height, m.width, unknown.height, unknown.width
        )));
    }
    Ok(soft_iou_values(&m.values, &unknown.bits))
}

fn first_max(scores: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    scores.into_iter().enumerate().fold(None, |best, (i, s)| match best {
        Some((_, b)) if s <= b => best,
        _ => Some((i, s)),
    })
}

/// CLIP-Best: the single candidate with the highest soft IoU.
pub fn select_clip_best(
    cands: &CandidateSet,
    s_known: &SimilarityVolume,
    map: &DenseEmbeddingMap,
    unknown: &BinaryMask,
) -> Result<TagSelection, TaggingError> {
    let scorer = RegionScorer::new(cands, s_known, map, unknown)?;
    let ious: Vec<f64> = (0..cands.len())
        .into_par_iter()
        .map(|i| scorer.iou(&scorer.single(i)))
        .collect();
    let (best, iou) = first_max(ious).expect("non-empty");
    Ok(TagSelection {
        chosen: vec![ChosenLabel {
            label: cands.candidates[best].label().to_string(),
            score: iou,
        }],
        strategy: Strategy::Best,
    })
}

/// CLIP-All: greedy accumulation. Each step adds the remaining candidate that
/// maximizes the combined soft IoU of all chosen labels, evaluated with the
/// already chosen labels competing in the argmax; stops when no candidate
/// improves it by more than [`IMPROVEMENT_EPS`]. Scores are the combined IoU
/// after each acceptance.
pub fn select_clip_all(
    cands: &CandidateSet,
    s_known: &SimilarityVolume,
    map: &DenseEmbeddingMap,
    unknown: &BinaryMask,
) -> Result<TagSelection, TaggingError> {
    let scorer = RegionScorer::new(cands, s_known, map, unknown)?;
    let n = cands.len();
    let mut chosen_max = vec![f32::NEG_INFINITY; map.pixel_count()];
    let mut taken = vec![false; n];
    let mut chosen: Vec<ChosenLabel> = Vec::new();
    let mut current = f64::NEG_INFINITY;

    loop {
        let remaining: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
        if remaining.is_empty() {
            break;
        }
        let ious: Vec<f64> = remaining
            .par_iter()
            .map(|&i| {
                let union = chosen_max.iter().zip(&scorer.channels[i]).map(|(&a, &b)| a.max(b));
                scorer.iou(&scorer.mask_values(union))
            })
            .collect();
        let (pos, iou) = first_max(ious).expect("non-empty");
        // the first label is always accepted
        if !chosen.is_empty() && iou <= current + IMPROVEMENT_EPS {
            break;
        }
        let i = remaining[pos];
        taken[i] = true;
        for (a, &b) in chosen_max.iter_mut().zip(&scorer.channels[i]) {
            *a = a.max(b);
        }
        chosen.push(ChosenLabel {
            label: cands.candidates[i].label().to_string(),
            score: iou,
        });
        current = iou;
    }
    Ok(TagSelection {
        chosen,
        strategy: Strategy::All,
    })
}

/// Ranks candidates by their mean similarity over the pixels their soft mask
/// covers, ignoring the unknown mask.
pub fn select_mean_similarity(
    cands: &CandidateSet,
    s_known: &SimilarityVolume,
    map: &DenseEmbeddingMap,
    unknown: &BinaryMask,
) -> Result<TagSelection, TaggingError> {
    let scorer = RegionScorer::new(cands, s_known, map, unknown)?;
    let scores: Vec<f64> = (0..cands.len())
        .into_par_iter()
        .map(|i| {
            let mask = scorer.single(i);
            let (sum, count) = mask
                .iter()
                .zip(&scorer.channels[i])
                .filter(|(&m, _)| m > 0.0)
                .fold((0.0f64, 0usize), |(s, n), (_, &c)| (s + f64::from(c), n + 1));
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        })
        .collect();
    let (best, score) = first_max(scores).expect("non-empty");
    Ok(TagSelection {
        chosen: vec![ChosenLabel {
            label: cands.candidates[best].label().to_string(),
            score,
        }],
        strategy: Strategy::MeanSimilarity,
    })
}

pub fn select(
    strategy: Strategy,
    cands: &CandidateSet,
    s_known: &SimilarityVolume,
    map: &DenseEmbeddingMap,
    unknown: &BinaryMask,
) -> Result<TagSelection, TaggingError> {
    match strategy {
        Strategy::Best => select_clip_best(cands, s_known, map, unknown),
        Strategy::All => select_clip_all(cands, s_known, map, unknown),
        Strategy::MeanSimilarity => select_mean_similarity(cands, s_known, map, unknown),
    }
}

/// Combined soft mask of several labels against the known classes, as used by
/// CLIP-All.
pub fn combined_soft_mask(
    s_known: &SimilarityVolume,
    map: &DenseEmbeddingMap,
    labels: &[TextEmbedding],
) -> Result<SoftMask, TaggingError> {
    let known = known_max(s_known);
    let mut unknown_max = vec![f32::NEG_INFINITY; map.pixel_count()];
    for l in labels {
        let ch = simcore::similarity_channel(map, &l.vector)?;
        for (a, b) in unknown_max.iter_mut().zip(ch) {
            *a = a.max(b);
        }
    }
    let values = known
        .iter()
        .zip(&unknown_max)
        .map(|(&k, &u)| if u > k { u.max(0.0) } else { 0.0 })
        .collect();
    Ok(SoftMask {
        height: map.height,
        width: map.width,
        values,
    })
}
