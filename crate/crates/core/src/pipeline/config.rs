use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::graphcut::{Connectivity, CutParams, UnknownMaskConfig};
use crate::tagging::Strategy;

/// Everything a batch run needs. Missing JSON fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    /// Known-class text embeddings.
    pub vocabulary: Option<PathBuf>,
    /// Open tag dictionary for global preselection. Mutually exclusive with
    /// `tag_vocabulary`.
    pub dictionary: Option<PathBuf>,
    /// Embeddings for labels named in external tag lists.
    pub tag_vocabulary: Option<PathBuf>,
    /// Fallback location of `<image_id>.txt` tag lists.
    pub tags_dir: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub strategy: Strategy,
    pub temperature: f32,
    pub sigma: f64,
    pub lambda: f64,
    pub low_frac: f64,
    pub high_frac: f64,
    pub connectivity: Connectivity,
    pub top_k: usize,
    pub min_entropy_range: f32,
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
    /// Abort on the first failing image instead of recording it.
    pub strict: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mask = UnknownMaskConfig::default();
        Self {
            manifest: None,
            vocabulary: None,
            dictionary: None,
            tag_vocabulary: None,
            tags_dir: None,
            output: None,
            strategy: Strategy::Best,
            temperature: mask.temperature,
            sigma: mask.cut.sigma,
            lambda: mask.cut.lambda,
            low_frac: mask.low_frac,
            high_frac: mask.high_frac,
            connectivity: mask.cut.connectivity,
            top_k: 50,
            min_entropy_range: mask.min_entropy_range,
            workers: 0,
            strict: false,
        }
    }
}

pub fn parse_config(bytes: &[u8]) -> Result<RunConfig, PipelineError> {
    serde_json::from_slice(bytes).map_err(|e| PipelineError::Config(e.to_string()))
}

/// Reads a JSON config; relative paths inside it are taken relative to the
/// config file's directory.
pub fn load_config(path: &Path) -> Result<RunConfig, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = parse_config(&bytes)?;
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [
        &mut cfg.manifest,
        &mut cfg.vocabulary,
        &mut cfg.dictionary,
        &mut cfg.tag_vocabulary,
        &mut cfg.tags_dir,
        &mut cfg.output,
    ]
    .into_iter()
    .flatten()
    {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

impl RunConfig {
    pub fn unknown_mask_config(&self) -> UnknownMaskConfig {
        UnknownMaskConfig {
            temperature: self.temperature,
            low_frac: self.low_frac,
            high_frac: self.high_frac,
            cut: CutParams {
                sigma: self.sigma,
                lambda: self.lambda,
                connectivity: self.connectivity,
            },
            min_entropy_range: self.min_entropy_range,
        }
    }

    /// Problems with parameter values and required fields, empty when usable.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.manifest.is_none() {
            out.push("manifest is required".to_string());
        }
        if self.vocabulary.is_none() {
            out.push("vocabulary is required".to_string());
        }
        match (&self.dictionary, &self.tag_vocabulary) {
            (Some(_), Some(_)) => out.push("dictionary and tag_vocabulary are mutually exclusive".into()),
            (None, None) => out.push("one of dictionary or tag_vocabulary is required".into()),
            _ => {}
        }
        if self.tags_dir.is_some() && self.tag_vocabulary.is_none() {
            out.push("tags_dir requires tag_vocabulary".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            out.push(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            out.push(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            out.push(format!("lambda must be non-negative, got {}", self.lambda));
        }
        let fracs_ok = self.low_frac > 0.0
            && self.high_frac > 0.0
            && self.low_frac + self.high_frac <= 1.0
            && self.low_frac.is_finite()
            && self.high_frac.is_finite();
        if !fracs_ok {
            out.push(format!(
                "seed fractions must satisfy 0 < low, 0 < high, low + high <= 1 (got {}, {})",
                self.low_frac, self.high_frac
            ));
        }
        if self.top_k == 0 {
            out.push("top_k must be at least 1".into());
        }
        if !(self.min_entropy_range >= 0.0 && self.min_entropy_range.is_finite()) {
            out.push(format!(
                "min_entropy_range must be non-negative, got {}",
                self.min_entropy_range
            ));
        }
        out
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Config(p.join("; ")))
        }
    }
}
