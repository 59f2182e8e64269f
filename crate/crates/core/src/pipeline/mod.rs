//! Batch driver behind the command-line tool: configuration, manifest
//! handling, per-image processing, output writing and reporting.

mod config;
mod evaluate;
mod manifest;
mod run;
mod validate;

use std::path::PathBuf;

use thiserror::Error;

use crate::graphcut::GraphCutError;
use crate::metrics::MetricsError;
use crate::openworld::OpenWorldError;
use crate::simcore::SimError;
use crate::tagging::TaggingError;
use crate::tensor_io::TensorIoError;

pub use config::{load_config, parse_config, RunConfig};
pub use evaluate::{evaluate_predictions, EvaluationReport};
pub use manifest::{check_image_id, parse_manifest, parse_name_similarity, ManifestRecord, NameSimilarity};
pub use run::{
    run_pipeline, ImageFailure, ImageReport, NamesFile, RunReport, ANOMALY_FILE, LABELS_FILE, LABELS_SIDECAR,
    NAMES_FILE, REPORT_FILE, UNKNOWN_FILE,
};
pub use validate::{validate_inputs, ValidationIssue, ValidationReport};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("duplicate image_id {0:?} in manifest")]
    DuplicateImageId(String),
    #[error("name similarity sidecar: {0}")]
    NameSimilarity(String),
    #[error("{}: {error}", path.display())]
    Input { path: PathBuf, error: TensorIoError },
    #[error("{}: {error}", path.display())]
    Io { path: PathBuf, error: std::io::Error },
    #[error("no tag list for image (looked for {})", .0.display())]
    MissingTags(PathBuf),
    #[error("image {image_id}: {error}")]
    Image {
        image_id: String,
        error: Box<PipelineError>,
    },
    #[error(transparent)]
    TensorIo(#[from] TensorIoError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    GraphCut(#[from] GraphCutError),
    #[error(transparent)]
    Tagging(#[from] TaggingError),
    #[error(transparent)]
    OpenWorld(#[from] OpenWorldError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl PipelineError {
    /// Process exit code: 2 for rejected inputs found before processing, 3 for
    /// failures while processing images.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Manifest { .. } | Self::DuplicateImageId(_) | Self::Input { .. } => 2,
            _ => 3,
        }
    }

    pub(crate) fn input(path: impl Into<PathBuf>) -> impl FnOnce(TensorIoError) -> Self {
        let path = path.into();
        move |error| Self::Input { path, error }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |error| Self::Io { path, error }
    }
}
