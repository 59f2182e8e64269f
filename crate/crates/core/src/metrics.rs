//! Pixel-level anomaly metrics (AUPR, AUROC, FPR at a TPR), hard and soft
//! IoU, and a similarity-weighted Jaccard score for generated names.
//!
//! Curve metrics sweep every distinct score as a threshold (`score >= t` is
//! predicted anomalous). Pixels sharing a score flip together.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::openworld::{LabelMap, IGNORE_LABEL};
use crate::tensor_io::{BinaryMask, ScalarMap};

/// Slack when comparing a reached TPR with its target.
const TPR_SLACK: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("ground truth needs at least one positive and one negative pixel")]
    DegenerateLabels,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("value {value} at index {index} outside [0, 1]")]
    RangeError { index: usize, value: f64 },
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredPixels {
    pub scores: Vec<f32>,
    pub gt: Vec<bool>,
}

impl ScoredPixels {
    pub fn new(scores: Vec<f32>, gt: Vec<bool>) -> Result<Self, MetricsError> {
        if scores.len() != gt.len() {
            return Err(MetricsError::ShapeMismatch(format!(
                "{} scores vs {} labels",
                scores.len(),
                gt.len()
            )));
        }
        Ok(Self { scores, gt })
    }

    pub fn extend(&mut self, scores: &[f32], gt: &[bool]) -> Result<(), MetricsError> {
        if scores.len() != gt.len() {
            return Err(MetricsError::ShapeMismatch(format!(
                "{} scores vs {} labels",
                scores.len(),
                gt.len()
            )));
        }
        self.scores.extend_from_slice(scores);
        self.gt.extend_from_slice(gt);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Cumulative `(tp, fp)` after each group of equal scores, highest first,
/// together with the positive and negative totals.
struct Sweep {
    points: Vec<(u64, u64)>,
    positives: u64,
    negatives: u64,
}

fn sweep(sp: &ScoredPixels) -> Result<Sweep, MetricsError> {
    if sp.scores.len() != sp.gt.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} scores vs {} labels",
            sp.scores.len(),
            sp.gt.len()
        )));
    }
    if let Some(i) = sp.scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore(i));
    }
    let positives = sp.gt.iter().filter(|&&g| g).count() as u64;
    let negatives = sp.gt.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..sp.scores.len()).collect();
    order.sort_unstable_by(|&a, &b| sp.scores[b].total_cmp(&sp.scores[a]));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    for (k, &i) in order.iter().enumerate() {
        if sp.gt[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let group_ends = order.get(k + 1).is_none_or(|&j| sp.scores[j] != sp.scores[i]);
        if group_ends {
            points.push((tp, fp));
        }
    }
    Ok(Sweep {
        points,
        positives,
        negatives,
    })
}

/// Trapezoidal area under the precision-recall curve. The curve is extended
/// flat to recall 0 at the precision of the highest threshold.
pub fn aupr(sp: &ScoredPixels) -> Result<f64, MetricsError> {
    let s = sweep(sp)?;
    let pr: Vec<(f64, f64)> = s
        .points
        .iter()
        .map(|&(tp, fp)| (tp as f64 / s.positives as f64, tp as f64 / (tp + fp) as f64))
        .collect();
    let mut area = 0.0;
    let (mut r0, mut p0) = (0.0, pr[0].1);
    for &(r, p) in &pr {
        area += (r - r0) * (p + p0) / 2.0;
        (r0, p0) = (r, p);
    }
    Ok(area)
}

/// Trapezoidal ROC area; equals the Mann-Whitney statistic with ties counted
/// one half.
pub fn auroc(sp: &ScoredPixels) -> Result<f64, MetricsError> {
    let s = sweep(sp)?;
    let (mut area, mut x0, mut y0) = (0.0, 0.0, 0.0);
    for &(tp, fp) in &s.points {
        let (x, y) = (fp as f64 / s.negatives as f64, tp as f64 / s.positives as f64);
        area += (x - x0) * (y + y0) / 2.0;
        (x0, y0) = (x, y);
    }
    Ok(area)
}

/// Smallest false-positive rate over thresholds whose TPR reaches `target_tpr`.
pub fn fpr_at_tpr(sp: &ScoredPixels, target_tpr: f64) -> Result<f64, MetricsError> {
    let s = sweep(sp)?;
    let (_, fp) = s
        .points
        .iter()
        .find(|&&(tp, _)| tp as f64 / s.positives as f64 >= target_tpr - TPR_SLACK)
        .expect("last threshold has TPR 1");
    Ok(*fp as f64 / s.negatives as f64)
}

fn shape_check(h1: usize, w1: usize, h2: usize, w2: usize) -> Result<(), MetricsError> {
    if h1 == h2 && w1 == w2 {
        Ok(())
    } else {
        Err(MetricsError::ShapeMismatch(format!("{h1}x{w1} vs {h2}x{w2}")))
    }
}

/// `(intersection, union)` pixel counts of the anomaly class.
pub fn intersection_union(pred: &BinaryMask, gt: &BinaryMask) -> Result<(u64, u64), MetricsError> {
    shape_check(pred.height, pred.width, gt.height, gt.width)?;
    Ok(pred.bits.iter().zip(&gt.bits).fold((0, 0), |(i, u), (&p, &g)| {
        (i + u64::from(p && g), u + u64::from(p || g))
    }))
}

/// IoU of the anomaly class; 1 when both masks are empty.
pub fn binary_miou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64, MetricsError> {
    let (i, u) = intersection_union(pred, gt)?;
    Ok(if u == 0 { 1.0 } else { i as f64 / u as f64 })
}

/// Mean per-class IoU over the classes present in `gt`. Pixels labeled
/// [`IGNORE_LABEL`] in `gt` are skipped.
pub fn multiclass_miou(pred: &LabelMap, gt: &LabelMap, class_count: usize) -> Result<f64, MetricsError> {
    shape_check(pred.height, pred.width, gt.height, gt.width)?;
    let mut inter = vec![0u64; class_count];
    let mut union = vec![0u64; class_count];
    let mut present = vec![false; class_count];
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        if g == IGNORE_LABEL {
            continue;
        }
        let (p, g) = (usize::from(p), usize::from(g));
        if g >= class_count {
            return Err(MetricsError::ShapeMismatch(format!(
                "gt label {g} >= class count {class_count}"
            )));
        }
        present[g] = true;
        union[g] += 1;
        if p == g {
            inter[g] += 1;
        } else if p < class_count {
            union[p] += 1;
        }
    }
    let ious: Vec<f64> = (0..class_count)
        .filter(|&c| present[c])
        .map(|c| inter[c] as f64 / union[c] as f64)
        .collect();
    Ok(if ious.is_empty() {
        1.0
    } else {
        ious.iter().sum::<f64>() / ious.len() as f64
    })
}

/// Soft IoU of a `[0, 1]` heat map against the ground truth; 1 when both are
/// empty so that binary heat maps agree with [`binary_miou`].
pub fn soft_miou(heat: &ScalarMap, gt: &BinaryMask) -> Result<f64, MetricsError> {
    shape_check(heat.height, heat.width, gt.height, gt.width)?;
    if heat.values.len() != gt.bits.len() {
        return Err(MetricsError::ShapeMismatch("heat map length".into()));
    }
    let (mut inter, mut union) = (0.0f64, 0.0f64);
    for (index, (&h, &g)) in heat.values.iter().zip(&gt.bits).enumerate() {
        let h = f64::from(h);
        if !(0.0..=1.0).contains(&h) {
            return Err(MetricsError::RangeError { index, value: h });
        }
        let g = if g { 1.0 } else { 0.0 };
        inter += h * g;
        union += h + g - h * g;
    }
    Ok(if union == 0.0 { 1.0 } else { inter / union })
}

/// Similarity-weighted Jaccard between generated and ground-truth names.
///
/// Greedy matching takes the largest remaining positive similarity (ties to
/// the lowest row, then column) until one side runs out; the score is the
/// matched similarity sum over `|gen| + |gt| - matched`. Zero-similarity
/// pairs are never matched, so 0/1 matrices give the hard Jaccard index. Two
/// empty lists score 1.
pub fn name_quality(generated: &[String], ground_truth: &[String], sim: &[Vec<f64>]) -> Result<f64, MetricsError> {
    if sim.len() != generated.len() || sim.iter().any(|row| row.len() != ground_truth.len()) {
        return Err(MetricsError::ShapeMismatch(format!(
            "similarity matrix must be {}x{}",
            generated.len(),
            ground_truth.len()
        )));
    }
    for (r, row) in sim.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(MetricsError::RangeError {
                    index: r * ground_truth.len() + c,
                    value: v,
                });
            }
        }
    }
    if generated.is_empty() && ground_truth.is_empty() {
        return Ok(1.0);
    }
    let mut entries: Vec<(f64, usize, usize)> = sim
        .iter()
        .enumerate()
        .flat_map(|(r, row)| row.iter().enumerate().map(move |(c, &v)| (v, r, c)))
        .collect();
    entries.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut row_used = vec![false; generated.len()];
    let mut col_used = vec![false; ground_truth.len()];
    let (mut total, mut matched) = (0.0, 0usize);
    for (v, r, c) in entries {
        if matched == generated.len().min(ground_truth.len()) {
            break;
        }
        if v <= 0.0 {
            break;
        }
        if !row_used[r] && !col_used[c] {
            row_used[r] = true;
            col_used[c] = true;
            total += v;
            matched += 1;
        }
    }
    Ok(total / (generated.len() + ground_truth.len() - matched) as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub aupr: Option<f64>,
    pub auroc: Option<f64>,
    pub fpr95: Option<f64>,
    pub fpr90: Option<f64>,
    /// Anomaly IoU pooled over all pixels of all images.
    pub miou: Option<f64>,
    /// Mean of per-image anomaly IoU.
    pub miou_per_image: Option<f64>,
    pub smiou: Option<f64>,
    pub name_quality: Option<f64>,
    pub pixels: u64,
    pub images: u64,
}

/// Dataset-level fold over per-image results.
#[derive(Debug, Default)]
pub struct MetricsAccumulator {
    pixels: ScoredPixels,
    intersection: u64,
    union: u64,
    per_image_iou: Vec<f64>,
    per_image_smiou: Vec<f64>,
    per_image_names: Vec<f64>,
    images: u64,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_image(&mut self) {
        self.images += 1;
    }

    pub fn add_masks(&mut self, pred: &BinaryMask, gt: &BinaryMask) -> Result<f64, MetricsError> {
        let (i, u) = intersection_union(pred, gt)?;
        self.intersection += i;
        self.union += u;
        let iou = if u == 0 { 1.0 } else { i as f64 / u as f64 };
        self.per_image_iou.push(iou);
        Ok(iou)
    }

    pub fn add_heatmap(&mut self, heat: &ScalarMap, gt: &BinaryMask) -> Result<f64, MetricsError> {
        let s = soft_miou(heat, gt)?;
        self.pixels.extend(&heat.values, &gt.bits)?;
        self.per_image_smiou.push(s);
        Ok(s)
    }

    pub fn add_name_quality(&mut self, q: f64) {
        self.per_image_names.push(q);
    }

    pub fn finish(&self) -> MetricsReport {
        let curve = |f: &dyn Fn(&ScoredPixels) -> Result<f64, MetricsError>| f(&self.pixels).ok();
        MetricsReport {
            aupr: curve(&aupr),
            auroc: curve(&auroc),
            fpr95: curve(&|s| fpr_at_tpr(s, 0.95)),
            fpr90: curve(&|s| fpr_at_tpr(s, 0.90)),
            miou: (!self.per_image_iou.is_empty()).then(|| {
                if self.union == 0 {
                    1.0
                } else {
                    self.intersection as f64 / self.union as f64
                }
            }),
            miou_per_image: mean(&self.per_image_iou),
            smiou: mean(&self.per_image_smiou),
            name_quality: mean(&self.per_image_names),
            pixels: self.pixels.len() as u64,
            images: self.images,
        }
    }
}
