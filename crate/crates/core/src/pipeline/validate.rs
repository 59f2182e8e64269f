use std::fs;

use serde::{Deserialize, Serialize};

use super::manifest::duplicate_ids;
use super::run::{check_map_dim, load_gt, load_records, prepare_shared, Candidates, Prepared};
use super::{parse_name_similarity, ManifestRecord, PipelineError, RunConfig};
use crate::tagging;
use crate::tensor_io::{self, TensorIoError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    /// `None` for problems not tied to one image.
    pub image_id: Option<String>,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub images: usize,
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

fn kind_of(e: &PipelineError) -> &'static str {
    match e {
        PipelineError::Config(_) => "config",
        PipelineError::Manifest { .. } => "manifest",
        PipelineError::DuplicateImageId(_) => "duplicate_id",
        PipelineError::NameSimilarity(_) => "name_similarity",
        PipelineError::MissingTags(_) => "missing_file",
        PipelineError::Tagging(tagging::TaggingError::MissingTagEmbedding(_)) => "missing_tag_embedding",
        PipelineError::Input { error, .. } | PipelineError::TensorIo(error) => match error {
            TensorIoError::Io(e) if e.kind() == std::io::ErrorKind::NotFound => "missing_file",
            TensorIoError::Io(_) => "io",
            TensorIoError::DimensionMismatch { .. } => "dimension_mismatch",
            _ => "format",
        },
        PipelineError::Io { error, .. } if error.kind() == std::io::ErrorKind::NotFound => "missing_file",
        _ => "other",
    }
}

fn issue(image_id: Option<&str>, e: &PipelineError) -> ValidationIssue {
    ValidationIssue {
        image_id: image_id.map(str::to_string),
        kind: kind_of(e).to_string(),
        message: e.to_string(),
    }
}

fn check_record(prep: &Prepared, rec: &ManifestRecord) -> Vec<PipelineError> {
    let mut errs = Vec::new();
    let shape = match tensor_io::load_embedding_map(&rec.embedding_path) {
        Ok(map) => {
            if let Err(e) = check_map_dim(&map, &prep.vocabulary) {
                errs.push(PipelineError::Input {
                    path: rec.embedding_path.clone(),
                    error: e,
                });
            }
            Some((map.height, map.width))
        }
        Err(e) => {
            errs.push(PipelineError::Input {
                path: rec.embedding_path.clone(),
                error: e,
            });
            None
        }
    };
    match (shape, &rec.gt_mask_path) {
        (Some((h, w)), Some(_)) => {
            if let Err(e) = load_gt(rec, h, w) {
                errs.push(e);
            }
        }
        (None, Some(p)) => {
            if let Err(e) = tensor_io::load_mask(p) {
                errs.push(PipelineError::input(p)(e));
            }
        }
        _ => {}
    }
    if let Candidates::Tags { embeddings, dir } = &prep.candidates {
        let path = rec
            .external_tags_path
            .clone()
            .or_else(|| dir.as_ref().map(|d| d.join(format!("{}.txt", rec.image_id))));
        match path {
            Some(p) => match fs::read_to_string(&p) {
                Ok(text) => {
                    if let Err(e) = tagging::candidates_from_tags(&tagging::parse_tag_list(&text), embeddings) {
                        errs.push(e.into());
                    }
                }
                Err(_) => errs.push(PipelineError::MissingTags(p)),
            },
            None => errs.push(PipelineError::MissingTags(format!("{}.txt", rec.image_id).into())),
        }
    }
    if let Some(p) = &rec.name_sim_path {
        match fs::read(p) {
            Ok(bytes) => match parse_name_similarity(&bytes) {
                Ok(ns) => {
                    if let Some(gt) = &rec.gt_names {
                        if let Err(e) = ns.matrix(&[], gt) {
                            errs.push(e);
                        }
                    }
                }
                Err(e) => errs.push(e),
            },
            Err(e) => errs.push(PipelineError::io(p)(e)),
        }
    }
    errs
}

/// Dry run: loads and cross-checks every input without segmenting anything.
/// Stops early only when shared inputs (config, vocabulary, candidate source,
/// manifest) are unusable.
pub fn validate_inputs(cfg: &RunConfig) -> ValidationReport {
    let mut report = ValidationReport::default();
    let shared = prepare_shared(cfg).and_then(|mut prep| {
        prep.records = load_records(cfg.manifest.as_ref().expect("checked by prepare_shared"))?;
        Ok(prep)
    });
    let prep = match shared {
        Ok(p) => p,
        Err(e) => {
            report.issues.push(issue(None, &e));
            return report;
        }
    };
    report.images = prep.records.len();
    for id in duplicate_ids(&prep.records) {
        report
            .issues
            .push(issue(Some(&id), &PipelineError::DuplicateImageId(id.clone())));
    }
    for rec in &prep.records {
        for e in check_record(&prep, rec) {
            report.issues.push(issue(Some(&rec.image_id), &e));
        }
    }
    report
}
