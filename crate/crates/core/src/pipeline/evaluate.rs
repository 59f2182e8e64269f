use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::duplicate_ids;
use super::run::{image_name_quality, load_gt, load_records, ImageFailure, NamesFile};
use super::{PipelineError, ANOMALY_FILE, NAMES_FILE, UNKNOWN_FILE};
use crate::metrics::{MetricsAccumulator, MetricsReport};
use crate::tensor_io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub image_id: String,
    pub miou: Option<f64>,
    pub smiou: Option<f64>,
    pub name_quality: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(flatten)]
    pub metrics: MetricsReport,
    pub failed: usize,
    pub per_image: Vec<ImageScores>,
    pub errors: Vec<ImageFailure>,
}

struct Loaded {
    unknown: tensor_io::BinaryMask,
    heat: tensor_io::ScalarMap,
    gt: Option<tensor_io::BinaryMask>,
    name_quality: Option<f64>,
}

fn load_prediction(rec: &super::ManifestRecord, predictions: &Path) -> Result<Loaded, PipelineError> {
    let dir = predictions.join(&rec.image_id);
    let unknown_path = dir.join(UNKNOWN_FILE);
    let unknown = tensor_io::load_mask(&unknown_path).map_err(PipelineError::input(&unknown_path))?;
    let heat_path = dir.join(ANOMALY_FILE);
    let heat = tensor_io::load_scalar_map(&heat_path).map_err(PipelineError::input(&heat_path))?;
    if heat.height != unknown.height || heat.width != unknown.width {
        return Err(PipelineError::Input {
            path: heat_path,
            error: tensor_io::TensorIoError::DimensionMismatch {
                what: "anomaly map vs unknown mask".into(),
                expected: unknown.height * unknown.width,
                found: heat.height * heat.width,
            },
        });
    }
    let names_path = dir.join(NAMES_FILE);
    let name_quality = if rec.gt_names.is_some() {
        let bytes = fs::read(&names_path).map_err(PipelineError::io(&names_path))?;
        let names: NamesFile = serde_json::from_slice(&bytes)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", names_path.display())))?;
        let generated: Vec<String> = names.chosen.into_iter().map(|c| c.label).collect();
        image_name_quality(rec, &generated)?
    } else {
        None
    };
    let gt = load_gt(rec, unknown.height, unknown.width)?;
    Ok(Loaded {
        unknown,
        heat,
        gt,
        name_quality,
    })
}

/// Scores a directory of previous run outputs against the manifest's ground
/// truth. Images whose predictions are missing or malformed are listed in
/// `errors`.
pub fn evaluate_predictions(manifest: &Path, predictions: &Path) -> Result<EvaluationReport, PipelineError> {
    let records = load_records(manifest)?;
    if let Some(id) = duplicate_ids(&records).into_iter().next() {
        return Err(PipelineError::DuplicateImageId(id));
    }
    let mut acc = MetricsAccumulator::new();
    let mut per_image = Vec::new();
    let mut errors = Vec::new();
    for rec in &records {
        match load_prediction(rec, predictions) {
            Ok(l) => {
                acc.add_image();
                let mut scores = ImageScores {
                    image_id: rec.image_id.clone(),
                    miou: None,
                    smiou: None,
                    name_quality: l.name_quality,
                };
                if let Some(gt) = &l.gt {
                    scores.miou = Some(acc.add_masks(&l.unknown, gt)?);
                    scores.smiou = Some(acc.add_heatmap(&l.heat, gt)?);
                }
                if let Some(q) = l.name_quality {
                    acc.add_name_quality(q);
                }
                per_image.push(scores);
            }
            Err(e) => errors.push(ImageFailure {
                image_id: rec.image_id.clone(),
                error: e.to_string(),
            }),
        }
    }
    Ok(EvaluationReport {
        metrics: acc.finish(),
        failed: errors.len(),
        per_image,
        errors,
    })
}
