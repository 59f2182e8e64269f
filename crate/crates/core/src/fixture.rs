//! Seeded synthetic inputs: embedding maps with planted out-of-vocabulary
//! rectangles, a matching vocabulary and tag dictionary, ground-truth masks
//! and a manifest.
//!
//! Every class and dictionary word gets a random unit direction. Background
//! pixels are horizontal bands of known-class directions; pixels inside a
//! planted rectangle take the direction of a dictionary word instead. All
//! pixels then receive isotropic Gaussian noise.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Serialize;

use crate::pipeline::{ManifestRecord, NameSimilarity};
use crate::tensor_io::{self, BinaryMask, DenseEmbeddingMap, TensorIoError, TextEmbedding, Vocabulary};

const KNOWN_NAMES: [&str; 19] = [
    "road",
    "sidewalk",
    "building",
    "wall",
    "fence",
    "pole",
    "traffic light",
    "traffic sign",
    "vegetation",
    "terrain",
    "sky",
    "person",
    "rider",
    "car",
    "truck",
    "bus",
    "train",
    "motorcycle",
    "bicycle",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorldSpec {
    pub dim: usize,
    /// At most 19.
    pub known_classes: usize,
    pub dictionary_size: usize,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            dim: 64,
            known_classes: 19,
            dictionary_size: 50,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    /// Known classes only.
    pub vocabulary: Vocabulary,
    /// Open tag dictionary, disjoint from the vocabulary labels.
    pub dictionary: Vocabulary,
}

impl World {
    pub fn dictionary_label(&self, i: usize) -> &str {
        &self.dictionary.entries()[i].label
    }

    fn direction(&self, label: &str) -> Option<&[f32]> {
        self.vocabulary
            .position(label)
            .map(|i| self.vocabulary.entries()[i].vector.as_slice())
            .or_else(|| {
                self.dictionary
                    .position(label)
                    .map(|i| self.dictionary.entries()[i].vector.as_slice())
            })
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 1e-3 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn make_world(spec: &WorldSpec) -> Result<World, TensorIoError> {
    if spec.known_classes == 0 || spec.known_classes > KNOWN_NAMES.len() {
        return Err(TensorIoError::InvalidHeader {
            field: "known_classes",
            reason: format!("must be in 1..={}", KNOWN_NAMES.len()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let known = KNOWN_NAMES[..spec.known_classes]
        .iter()
        .map(|&name| TextEmbedding::new(name, unit_vector(&mut rng, spec.dim)))
        .collect();
    let dictionary = (0..spec.dictionary_size)
        .map(|i| TextEmbedding::new(format!("tag{i:02}"), unit_vector(&mut rng, spec.dim)))
        .collect();
    Ok(World {
        vocabulary: Vocabulary::new(known, spec.known_classes)?,
        dictionary: Vocabulary::new(dictionary, 0)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.top && r < self.top + self.height && c >= self.left && c < self.left + self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSpec {
    pub height: usize,
    pub width: usize,
    /// Each rectangle is filled with the direction of the named dictionary
    /// word. Later rectangles overwrite earlier ones.
    pub planted: Vec<(Rect, String)>,
    /// Standard deviation of the per-component Gaussian noise.
    pub noise: f32,
    /// Number of horizontal background bands.
    pub bands: usize,
    pub with_global: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureImage {
    pub map: DenseEmbeddingMap,
    pub gt_mask: BinaryMask,
    pub gt_names: Vec<String>,
}

/// Planted label `tag{index}` in a rectangle covering one eighth of the
/// image, centered.
pub fn single_anomaly_spec(world: &World, index: usize, seed: u64) -> ImageSpec {
    let (h, w) = (48, 64);
    ImageSpec {
        height: h,
        width: w,
        planted: vec![(
            Rect {
                top: 16,
                left: 24,
                height: 16,
                width: 24,
            },
            world.dictionary_label(index).to_string(),
        )],
        noise: 0.05,
        bands: 4,
        with_global: false,
        seed,
    }
}

/// Two separate rectangles with different planted labels.
pub fn two_blob_spec(world: &World, first: usize, second: usize, seed: u64) -> ImageSpec {
    ImageSpec {
        height: 48,
        width: 64,
        planted: vec![
            (
                Rect {
                    top: 8,
                    left: 6,
                    height: 14,
                    width: 18,
                },
                world.dictionary_label(first).to_string(),
            ),
            (
                Rect {
                    top: 26,
                    left: 38,
                    height: 14,
                    width: 18,
                },
                world.dictionary_label(second).to_string(),
            ),
        ],
        noise: 0.05,
        bands: 4,
        with_global: false,
        seed,
    }
}

pub fn make_image(world: &World, spec: &ImageSpec) -> Result<FixtureImage, TensorIoError> {
    let (h, w) = (spec.height, spec.width);
    let dim = world.vocabulary.dim().unwrap_or(0);
    let known = world.vocabulary.known();
    let bands = spec.bands.max(1);
    let noise = Normal::new(0.0f32, spec.noise.max(0.0)).map_err(|e| TensorIoError::InvalidHeader {
        field: "noise",
        reason: e.to_string(),
    })?;
    let planted: Vec<(Rect, &[f32])> = spec
        .planted
        .iter()
        .map(|(rect, label)| {
            world
                .direction(label)
                .map(|d| (*rect, d))
                .ok_or_else(|| TensorIoError::Parse {
                    location: "planted label".into(),
                    reason: format!("{label:?} is not in the world"),
                })
        })
        .collect::<Result<_, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // band -> known class, drawn without replacement while classes last
    let mut order: Vec<usize> = (0..known.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut data = Vec::with_capacity(h * w * dim);
    let mut bits = vec![false; h * w];
    for r in 0..h {
        let band = (r * bands / h.max(1)).min(bands - 1);
        let class = order[band % order.len()];
        for c in 0..w {
            let hit = planted.iter().rev().find(|(rect, _)| rect.contains(r, c));
            let base: &[f32] = match hit {
                Some((_, d)) => {
                    bits[r * w + c] = true;
                    d
                }
                None => &known[class].vector,
            };
            data.extend(base.iter().map(|&x| x + noise.sample(&mut rng)));
        }
    }
    let global = spec.with_global.then(|| {
        let mut g = vec![0.0f32; dim];
        for px in data.chunks_exact(dim.max(1)) {
            for (acc, &x) in g.iter_mut().zip(px) {
                *acc += x;
            }
        }
        g.iter().map(|x| x / (h * w) as f32).collect()
    });
    let mut gt_names: Vec<String> = Vec::new();
    for (_, label) in &spec.planted {
        if !gt_names.contains(label) {
            gt_names.push(label.clone());
        }
    }
    Ok(FixtureImage {
        map: DenseEmbeddingMap::new(h, w, dim, data, global)?,
        gt_mask: BinaryMask::new(h, w, bits)?,
        gt_names,
    })
}

/// Exact-name similarity over the dictionary: 1 for identical labels, else 0.
pub fn name_similarity_for(world: &World, gt_names: &[String]) -> NameSimilarity {
    let rows: Vec<String> = world.dictionary.labels().map(str::to_string).collect();
    let similarity = rows
        .iter()
        .map(|r| gt_names.iter().map(|g| if r == g { 1.0 } else { 0.0 }).collect())
        .collect();
    NameSimilarity {
        rows,
        cols: gt_names.to_vec(),
        similarity,
        mapping: Some("exact match".into()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixturePaths {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub vocabulary: PathBuf,
    pub dictionary: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(io::Error::other)?;
    bytes.push(b'\n');
    fs::write(path, bytes)
}

/// Writes `vocabulary.json`, `dictionary.json`, `manifest.jsonl` and per image
/// `<id>.clpe`, `<id>_gt.pgm`, `<id>_names.json` into `dir`. Manifest paths
/// are relative to `dir`.
pub fn write_fixture_set(
    dir: &Path,
    world: &World,
    images: &[(String, FixtureImage)],
) -> Result<FixturePaths, TensorIoError> {
    fs::create_dir_all(dir)?;
    let paths = FixturePaths {
        dir: dir.to_path_buf(),
        manifest: dir.join("manifest.jsonl"),
        vocabulary: dir.join("vocabulary.json"),
        dictionary: dir.join("dictionary.json"),
    };
    tensor_io::save_vocabulary(&world.vocabulary, &paths.vocabulary)?;
    tensor_io::save_vocabulary(&world.dictionary, &paths.dictionary)?;
    let mut manifest = String::new();
    for (id, img) in images {
        let emb = format!("{id}.clpe");
        let gt = format!("{id}_gt.pgm");
        let names = format!("{id}_names.json");
        tensor_io::save_embedding_map(&img.map, dir.join(&emb))?;
        tensor_io::save_mask(&img.gt_mask, dir.join(&gt))?;
        write_json(&dir.join(&names), &name_similarity_for(world, &img.gt_names))?;
        let record = ManifestRecord {
            image_id: id.clone(),
            embedding_path: emb.into(),
            gt_mask_path: Some(gt.into()),
            gt_names: Some(img.gt_names.clone()),
            external_tags_path: None,
            name_sim_path: Some(names.into()),
        };
        manifest.push_str(&serde_json::to_string(&record).map_err(io::Error::other)?);
        manifest.push('\n');
    }
    fs::write(&paths.manifest, manifest)?;
    Ok(paths)
}

/// Three-image demo set: two single-anomaly images and one two-blob image.
pub fn write_demo_set(dir: &Path, seed: u64) -> Result<FixturePaths, TensorIoError> {
    let world = make_world(&WorldSpec {
        seed,
        ..WorldSpec::default()
    })?;
    let images = vec![
        (
            "img_a".to_string(),
            make_image(&world, &single_anomaly_spec(&world, 7, seed + 1))?,
        ),
        (
            "img_b".to_string(),
            make_image(&world, &single_anomaly_spec(&world, 23, seed + 2))?,
        ),
        (
            "img_c".to_string(),
            make_image(&world, &two_blob_spec(&world, 11, 41, seed + 3))?,
        ),
    ];
    write_fixture_set(dir, &world, &images)
}
