use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{duplicate_ids, exact_match_matrix};
use super::{parse_manifest, parse_name_similarity, ManifestRecord, PipelineError, RunConfig};
use crate::graphcut;
use crate::metrics::{self, MetricsAccumulator, MetricsReport};
use crate::openworld;
use crate::simcore::{self, ClassSubset};
use crate::tagging::{self, CandidateSet, ChosenLabel, Strategy};
use crate::tensor_io::{self, BinaryMask, DenseEmbeddingMap, ScalarMap, TensorIoError, TextEmbedding, Vocabulary};

pub const UNKNOWN_FILE: &str = "unknown.pgm";
pub const LABELS_FILE: &str = "labels.pgm";
pub const LABELS_SIDECAR: &str = "labels.json";
pub const NAMES_FILE: &str = "names.json";
pub const ANOMALY_FILE: &str = "anomaly.clpe";
pub const REPORT_FILE: &str = "report.json";

/// Per-image `names.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamesFile {
    pub image_id: String,
    pub strategy: Strategy,
    /// `None` when tagging was skipped.
    pub candidate_source: Option<tagging::CandidateSource>,
    pub candidate_count: usize,
    pub chosen: Vec<ChosenLabel>,
    /// Pixels in the graph-cut unknown region.
    pub cut_pixels: usize,
    /// The uncertainty map was flat, so no unknown region was cut.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub image_id: String,
    pub chosen: Vec<String>,
    /// Pixels labeled with an unknown class in the final segmentation.
    pub unknown_pixels: usize,
    pub cut_pixels: usize,
    pub degenerate: bool,
    pub miou: Option<f64>,
    /// IoU of the graph-cut region alone.
    pub cut_miou: Option<f64>,
    pub smiou: Option<f64>,
    pub name_quality: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageFailure {
    pub image_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(flatten)]
    pub metrics: MetricsReport,
    pub failed: usize,
    /// Sorted by image id.
    pub per_image: Vec<ImageReport>,
    pub errors: Vec<ImageFailure>,
}

pub(crate) enum Candidates {
    Dictionary(Vocabulary),
    Tags {
        embeddings: Vocabulary,
        dir: Option<PathBuf>,
    },
}

/// Inputs shared by every image, loaded and checked once.
pub(crate) struct Prepared {
    pub vocabulary: Vocabulary,
    pub candidates: Candidates,
    /// Paths resolved, sorted by image id.
    pub records: Vec<ManifestRecord>,
}

fn load_vocab(path: &Path) -> Result<Vocabulary, PipelineError> {
    tensor_io::load_vocabulary(path).map_err(PipelineError::input(path))
}

pub(crate) fn load_records(manifest: &Path) -> Result<Vec<ManifestRecord>, PipelineError> {
    let bytes = fs::read(manifest).map_err(|e| PipelineError::Input {
        path: manifest.to_path_buf(),
        error: e.into(),
    })?;
    let base = manifest.parent().unwrap_or(Path::new(""));
    let mut records: Vec<ManifestRecord> = parse_manifest(&bytes)?.iter().map(|r| r.resolved(base)).collect();
    records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok(records)
}

/// Loads the vocabulary and candidate source; `records` is left empty.
pub(crate) fn prepare_shared(cfg: &RunConfig) -> Result<Prepared, PipelineError> {
    cfg.check()?;
    let vocab_path = cfg.vocabulary.as_ref().expect("checked above");
    let full = load_vocab(vocab_path)?;
    if full.known_count() == 0 {
        return Err(PipelineError::Config("vocabulary has no known classes".into()));
    }
    if full.known_count() < full.len() {
        warn!(
            "vocabulary lists {} entries past known_count; only the first {} are used",
            full.len() - full.known_count(),
            full.known_count()
        );
    }
    let vocabulary = full.known_only();
    let dim = vocabulary.dim().unwrap_or(0);
    let candidates = match (&cfg.dictionary, &cfg.tag_vocabulary) {
        (Some(d), None) => Candidates::Dictionary(load_vocab(d)?),
        (None, Some(t)) => Candidates::Tags {
            embeddings: load_vocab(t)?,
            dir: cfg.tags_dir.clone(),
        },
        _ => unreachable!("checked above"),
    };
    let cand_vocab = match &candidates {
        Candidates::Dictionary(v) | Candidates::Tags { embeddings: v, .. } => v,
    };
    if let Some(d) = cand_vocab.dim() {
        if d != dim {
            return Err(PipelineError::Config(format!(
                "candidate embeddings have dimension {d}, vocabulary has {dim}"
            )));
        }
    }
    Ok(Prepared {
        vocabulary,
        candidates,
        records: Vec::new(),
    })
}

pub(crate) fn prepare(cfg: &RunConfig) -> Result<Prepared, PipelineError> {
    let mut prep = prepare_shared(cfg)?;
    prep.records = load_records(cfg.manifest.as_ref().expect("checked by prepare_shared"))?;
    if let Some(id) = duplicate_ids(&prep.records).into_iter().next() {
        return Err(PipelineError::DuplicateImageId(id));
    }
    Ok(prep)
}

pub(crate) fn check_map_dim(map: &DenseEmbeddingMap, vocab: &Vocabulary) -> Result<(), TensorIoError> {
    let expected = vocab.dim().unwrap_or(0);
    if map.dim != expected {
        return Err(TensorIoError::DimensionMismatch {
            what: "embedding map vs vocabulary".into(),
            expected,
            found: map.dim,
        });
    }
    Ok(())
}

pub(crate) fn load_gt(rec: &ManifestRecord, height: usize, width: usize) -> Result<Option<BinaryMask>, PipelineError> {
    let Some(path) = &rec.gt_mask_path else {
        return Ok(None);
    };
    let gt = tensor_io::load_mask(path).map_err(PipelineError::input(path))?;
    if !gt.same_shape(height, width) {
        return Err(PipelineError::Input {
            path: path.clone(),
            error: TensorIoError::DimensionMismatch {
                what: format!(
                    "ground-truth mask {}x{} vs embedding map {height}x{width}",
                    gt.height, gt.width
                ),
                expected: height * width,
                found: gt.height * gt.width,
            },
        });
    }
    Ok(Some(gt))
}

/// Name quality of `generated` against the record's ground-truth names, if
/// any. Without a similarity sidecar names match only when identical.
pub(crate) fn image_name_quality(rec: &ManifestRecord, generated: &[String]) -> Result<Option<f64>, PipelineError> {
    let Some(gt) = &rec.gt_names else {
        return Ok(None);
    };
    let sim = match &rec.name_sim_path {
        Some(p) => {
            let bytes = fs::read(p).map_err(PipelineError::io(p))?;
            parse_name_similarity(&bytes)?.matrix(generated, gt)?
        }
        None => exact_match_matrix(generated, gt),
    };
    Ok(Some(metrics::name_quality(generated, gt, &sim)?))
}

fn candidate_set(
    prep: &Prepared,
    cfg: &RunConfig,
    rec: &ManifestRecord,
    map: &DenseEmbeddingMap,
) -> Result<CandidateSet, PipelineError> {
    let set = match &prep.candidates {
        Candidates::Dictionary(dict) => {
            let global = simcore::global_embedding_of(map)?;
            tagging::preselect_candidates(&global, dict.entries(), cfg.top_k)?
        }
        Candidates::Tags { embeddings, dir } => {
            let path = match (&rec.external_tags_path, dir) {
                (Some(p), _) => p.clone(),
                (None, Some(d)) => d.join(format!("{}.txt", rec.image_id)),
                (None, None) => {
                    return Err(PipelineError::MissingTags(PathBuf::from(format!(
                        "{}.txt",
                        rec.image_id
                    ))))
                }
            };
            if !path.exists() {
                return Err(PipelineError::MissingTags(path));
            }
            let text = fs::read_to_string(&path).map_err(PipelineError::io(&path))?;
            tagging::candidates_from_tags(&tagging::parse_tag_list(&text), embeddings)?
        }
    };
    Ok(set.excluding(&prep.vocabulary))
}

struct Processed {
    report: ImageReport,
    unknown: BinaryMask,
    heat: ScalarMap,
    gt: Option<BinaryMask>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(PipelineError::io(path))
}

fn process_image(
    prep: &Prepared,
    cfg: &RunConfig,
    rec: &ManifestRecord,
    out: &Path,
) -> Result<Processed, PipelineError> {
    let map = tensor_io::load_embedding_map(&rec.embedding_path).map_err(PipelineError::input(&rec.embedding_path))?;
    check_map_dim(&map, &prep.vocabulary)?;
    let volume = simcore::cosine_similarity_volume(&map, &prep.vocabulary, ClassSubset::Known)?;
    let outcome = graphcut::unknown_mask_from_volume(&volume, &cfg.unknown_mask_config())?;
    let cut_pixels = outcome.mask.count();

    let mut source = None;
    let mut candidate_count = 0;
    let mut chosen: Vec<ChosenLabel> = Vec::new();
    let mut extra: Vec<TextEmbedding> = Vec::new();
    if cut_pixels > 0 {
        let cands = candidate_set(prep, cfg, rec, &map)?;
        source = Some(cands.source);
        candidate_count = cands.len();
        if cands.is_empty() {
            warn!("{}: no candidate labels outside the vocabulary", rec.image_id);
        } else {
            let sel = tagging::select(cfg.strategy, &cands, &volume, &map, &outcome.mask)?;
            for c in &sel.chosen {
                let emb = cands
                    .candidates
                    .iter()
                    .find(|k| k.label() == c.label)
                    .expect("selected label comes from the candidate set");
                extra.push(emb.embedding.clone());
            }
            chosen = sel.chosen;
        }
    }

    let extended = prep.vocabulary.extended_with(&extra)?;
    let (labels, heat) = openworld::segment_and_score(&map, &extended, cfg.temperature)?;
    let unknown = openworld::binarize_known_unknown(&labels, &extended);

    let dir = out.join(&rec.image_id);
    fs::create_dir_all(&dir).map_err(PipelineError::io(&dir))?;
    write_file(&dir.join(super::UNKNOWN_FILE), &tensor_io::encode_mask(&unknown)?)?;
    let (pgm, sidecar) = openworld::encode_labelmap(&labels, &extended)?;
    write_file(&dir.join(super::LABELS_FILE), &pgm)?;
    write_file(&dir.join(super::LABELS_SIDECAR), &sidecar)?;
    write_file(&dir.join(super::ANOMALY_FILE), &tensor_io::encode_scalar_map(&heat)?)?;
    let names = NamesFile {
        image_id: rec.image_id.clone(),
        strategy: cfg.strategy,
        candidate_source: source,
        candidate_count,
        chosen: chosen.clone(),
        cut_pixels,
        degenerate: outcome.cut.is_none(),
    };
    write_file(&dir.join(super::NAMES_FILE), &to_json(&names))?;

    let gt = load_gt(rec, map.height, map.width)?;
    let generated: Vec<String> = chosen.iter().map(|c| c.label.clone()).collect();
    let name_quality = image_name_quality(rec, &generated)?;
    let cut_miou = gt
        .as_ref()
        .map(|g| metrics::binary_miou(&outcome.mask, g))
        .transpose()?;
    Ok(Processed {
        report: ImageReport {
            image_id: rec.image_id.clone(),
            chosen: generated,
            unknown_pixels: unknown.count(),
            cut_pixels,
            degenerate: outcome.cut.is_none(),
            miou: None,
            cut_miou,
            smiou: None,
            name_quality,
        },
        unknown,
        heat,
        gt,
    })
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report types serialize");
    bytes.push(b'\n');
    bytes
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::Config(format!("cannot start worker pool: {e}")))
}

/// Processes every manifest record and writes per-image outputs plus
/// `report.json` under `cfg.output`. Failing images are listed in the report
/// unless `cfg.strict` is set, in which case the first failure (by image id)
/// is returned and no report is written.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunReport, PipelineError> {
    let prep = prepare(cfg)?;
    let out = cfg
        .output
        .clone()
        .ok_or_else(|| PipelineError::Config("output directory is required".into()))?;
    fs::create_dir_all(&out).map_err(PipelineError::io(&out))?;
    if prep.records.is_empty() {
        warn!("manifest has no records");
    }
    info!("processing {} images", prep.records.len());

    let pool = worker_pool(cfg.workers)?;
    let results: Vec<Result<Processed, PipelineError>> = pool.install(|| {
        prep.records
            .par_iter()
            .map(|rec| {
                process_image(&prep, cfg, rec, &out).map_err(|e| PipelineError::Image {
                    image_id: rec.image_id.clone(),
                    error: Box::new(e),
                })
            })
            .collect()
    });

    let mut acc = MetricsAccumulator::new();
    let mut per_image = Vec::new();
    let mut errors = Vec::new();
    for (rec, result) in prep.records.iter().zip(results) {
        match result {
            Ok(mut p) => {
                acc.add_image();
                if let Some(gt) = &p.gt {
                    p.report.miou = Some(acc.add_masks(&p.unknown, gt)?);
                    p.report.smiou = Some(acc.add_heatmap(&p.heat, gt)?);
                }
                if let Some(q) = p.report.name_quality {
                    acc.add_name_quality(q);
                }
                per_image.push(p.report);
            }
            Err(e) if cfg.strict => return Err(e),
            Err(e) => {
                warn!("{e}");
                let PipelineError::Image { error, .. } = e else {
                    unreachable!("wrapped above");
                };
                errors.push(ImageFailure {
                    image_id: rec.image_id.clone(),
                    error: error.to_string(),
                });
            }
        }
    }
    let report = RunReport {
        metrics: acc.finish(),
        failed: errors.len(),
        per_image,
        errors,
    };
    let path = out.join(super::REPORT_FILE);
    write_file(&path, &to_json(&report))?;
    Ok(report)
}
