//! Binary unknown-region segmentation by s-t minimum cut over the normalized
//! uncertainty map.
//!
//! The source terminal is the "known" side and the sink terminal the
//! "unknown" side. Percentile seeds are hard-wired to their terminal with
//! [`SEED_CAPACITY`]; other pixels get a linear data term `lambda * u` toward
//! the sink and `lambda * (1 - u)` toward the source. Neighboring pixels are
//! joined by a Gaussian boundary term `exp(-(u_p - u_q)^2 / (2 sigma^2))`.

mod maxflow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simcore::{self, ClassSubset, SimError, SimilarityVolume};
use crate::tensor_io::{BinaryMask, DenseEmbeddingMap, ScalarMap, Vocabulary};

pub use maxflow::{FlowGraph, EPS as RESIDUAL_EPS};

/// t-link capacity tying a seed pixel to its terminal.
pub const SEED_CAPACITY: f64 = 1e9;

#[derive(Debug, Error, PartialEq)]
pub enum GraphCutError {
    #[error("seed fractions must satisfy 0 < low, 0 < high, low + high <= 1 (got {low}, {high})")]
    InvalidFractions { low: f64, high: f64 },
    #[error("uncertainty map is degenerate: no sink seeds remain")]
    DegenerateMap,
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SeedSet {
    /// Confident pixels, tied to the known terminal. Sorted ascending.
    pub source: Vec<usize>,
    /// Uncertain pixels, tied to the unknown terminal. Sorted ascending.
    pub sink: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborEdge {
    pub a: usize,
    pub b: usize,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCutProblem {
    pub height: usize,
    pub width: usize,
    pub to_source: Vec<f64>,
    pub to_sink: Vec<f64>,
    pub edges: Vec<NeighborEdge>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutResult {
    /// Sink-side pixels.
    pub mask: BinaryMask,
    pub flow: f64,
    pub cut_cost: f64,
}

fn check_fractions(low: f64, high: f64) -> Result<(), GraphCutError> {
    if low > 0.0 && high > 0.0 && low + high <= 1.0 && low.is_finite() && high.is_finite() {
        Ok(())
    } else {
        Err(GraphCutError::InvalidFractions { low, high })
    }
}

fn seed_count(frac: f64, n: usize) -> usize {
    // guard against 0.1 * 10 = 1.0000000000000002 rounding up
    let k = frac * n as f64;
    let rounded = k.round();
    let k = if (k - rounded).abs() < 1e-9 { rounded } else { k.ceil() };
    (k as usize).clamp(1, n)
}

/// Lowest `ceil(low_frac * N)` pixels become source seeds, highest
/// `ceil(high_frac * N)` sink seeds. Ties go to the smaller row-major index;
/// pixels in both sets stay source seeds only.
pub fn extract_seeds(u: &ScalarMap, low_frac: f64, high_frac: f64) -> Result<SeedSet, GraphCutError> {
    check_fractions(low_frac, high_frac)?;
    let n = u.values.len();
    match u.min_max() {
        Some((lo, hi)) if hi > lo => {}
        _ => return Err(GraphCutError::DegenerateMap),
    }
    let mut ascending: Vec<usize> = (0..n).collect();
    ascending.sort_by(|&a, &b| u.values[a].total_cmp(&u.values[b]).then(a.cmp(&b)));
    let mut descending: Vec<usize> = (0..n).collect();
    descending.sort_by(|&a, &b| u.values[b].total_cmp(&u.values[a]).then(a.cmp(&b)));

    let mut is_source = vec![false; n];
    let mut source: Vec<usize> = ascending[..seed_count(low_frac, n)].to_vec();
    for &p in &source {
        is_source[p] = true;
    }
    let mut sink: Vec<usize> = descending[..seed_count(high_frac, n)]
        .iter()
        .copied()
        .filter(|&p| !is_source[p])
        .collect();
    if sink.is_empty() {
        return Err(GraphCutError::DegenerateMap);
    }
    source.sort_unstable();
    sink.sort_unstable();
    Ok(SeedSet { source, sink })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutParams {
    pub sigma: f64,
    pub lambda: f64,
    pub connectivity: Connectivity,
}

impl Default for CutParams {
    fn default() -> Self {
        Self {
            sigma: 0.1,
            lambda: 2.0,
            connectivity: Connectivity::Four,
        }
    }
}

pub fn boundary_capacity(up: f32, uq: f32, sigma: f64) -> f64 {
    let d = f64::from(up) - f64::from(uq);
    (-(d * d) / (2.0 * sigma * sigma)).exp()
}

pub fn build_problem(u: &ScalarMap, seeds: &SeedSet, params: &CutParams) -> Result<GridCutProblem, GraphCutError> {
    if !(params.sigma > 0.0 && params.sigma.is_finite()) {
        return Err(GraphCutError::InvalidParameter {
            name: "sigma",
            value: params.sigma,
        });
    }
    if !(params.lambda >= 0.0 && params.lambda.is_finite()) {
        return Err(GraphCutError::InvalidParameter {
            name: "lambda",
            value: params.lambda,
        });
    }
    let (h, w) = (u.height, u.width);
    let n = h * w;
    let mut to_source: Vec<f64> = u.values.iter().map(|&v| params.lambda * (1.0 - f64::from(v))).collect();
    let mut to_sink: Vec<f64> = u.values.iter().map(|&v| params.lambda * f64::from(v)).collect();
    for &p in &seeds.source {
        if p < n {
            to_source[p] = SEED_CAPACITY;
            to_sink[p] = 0.0;
        }
    }
    for &p in &seeds.sink {
        if p < n {
            to_source[p] = 0.0;
            to_sink[p] = SEED_CAPACITY;
        }
    }

    let mut edges = Vec::with_capacity(2 * n);
    let mut link = |a: usize, b: usize, scale: f64| {
        edges.push(NeighborEdge {
            a,
            b,
            capacity: scale * boundary_capacity(u.values[a], u.values[b], params.sigma),
        });
    };
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            if c + 1 < w {
                link(p, p + 1, 1.0);
            }
            if r + 1 < h {
                link(p, p + w, 1.0);
            }
            if params.connectivity == Connectivity::Eight && r + 1 < h {
                let diag = std::f64::consts::FRAC_1_SQRT_2;
                if c + 1 < w {
                    link(p, p + w + 1, diag);
                }
                if c > 0 {
                    link(p, p + w - 1, diag);
                }
            }
        }
    }
    Ok(GridCutProblem {
        height: h,
        width: w,
        to_source,
        to_sink,
        edges,
    })
}

/// Cost of a labeling (`true` = sink/unknown side).
pub fn labeling_cost(problem: &GridCutProblem, sink_side: &[bool]) -> f64 {
    let terminal: f64 = sink_side
        .iter()
        .enumerate()
        .map(|(p, &t)| if t { problem.to_source[p] } else { problem.to_sink[p] })
        .sum();
    let boundary: f64 = problem
        .edges
        .iter()
        .filter(|e| sink_side[e.a] != sink_side[e.b])
        .map(|e| e.capacity)
        .sum();
    terminal + boundary
}

/// Exact minimum s-t cut. The known side is the set of pixels reachable from
/// the source in the final residual graph.
pub fn min_cut(problem: &GridCutProblem) -> CutResult {
    let n = problem.height * problem.width;
    let (s, t) = (n, n + 1);
    let mut g = FlowGraph::new(n + 2);
    let mut flow = 0.0;
    for p in 0..n {
        // route the shared part of both t-links directly: s -> p -> t
        let direct = problem.to_source[p].min(problem.to_sink[p]);
        flow += direct;
        let (cs, ct) = (problem.to_source[p] - direct, problem.to_sink[p] - direct);
        if cs > 0.0 {
            g.add_edge(s, p, cs, 0.0);
        }
        if ct > 0.0 {
            g.add_edge(p, t, ct, 0.0);
        }
    }
    for e in &problem.edges {
        if e.capacity > 0.0 {
            g.add_edge(e.a, e.b, e.capacity, e.capacity);
        }
    }
    flow += g.max_flow(s, t);
    let reach = g.source_side(s);
    let bits: Vec<bool> = reach[..n].iter().map(|&r| !r).collect();
    let cut_cost = labeling_cost(problem, &bits);
    CutResult {
        mask: BinaryMask {
            height: problem.height,
            width: problem.width,
            bits,
        },
        flow,
        cut_cost,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnknownMaskConfig {
    pub temperature: f32,
    pub low_frac: f64,
    pub high_frac: f64,
    pub cut: CutParams,
    /// Raw entropy maps whose range is at or below this are treated as
    /// constant (no unknown region).
    pub min_entropy_range: f32,
}

impl Default for UnknownMaskConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            low_frac: 0.1,
            high_frac: 0.1,
            cut: CutParams::default(),
            min_entropy_range: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnknownMaskOutcome {
    pub mask: BinaryMask,
    pub uncertainty: ScalarMap,
    /// `None` when the degenerate path was taken.
    pub cut: Option<CutResult>,
}

pub fn unknown_mask(
    map: &DenseEmbeddingMap,
    vocab: &Vocabulary,
    cfg: &UnknownMaskConfig,
) -> Result<BinaryMask, GraphCutError> {
    unknown_mask_detailed(map, vocab, cfg).map(|o| o.mask)
}

/// Similarity -> entropy -> normalization -> seeds -> min cut.
pub fn unknown_mask_detailed(
    map: &DenseEmbeddingMap,
    vocab: &Vocabulary,
    cfg: &UnknownMaskConfig,
) -> Result<UnknownMaskOutcome, GraphCutError> {
    check_fractions(cfg.low_frac, cfg.high_frac)?;
    let volume = simcore::cosine_similarity_volume(map, vocab, ClassSubset::Known)?;
    unknown_mask_from_volume(&volume, cfg)
}

/// Same as [`unknown_mask_detailed`] starting from a known-class volume.
pub fn unknown_mask_from_volume(
    volume: &SimilarityVolume,
    cfg: &UnknownMaskConfig,
) -> Result<UnknownMaskOutcome, GraphCutError> {
    check_fractions(cfg.low_frac, cfg.high_frac)?;
    let entropy = simcore::pixelwise_entropy(volume, cfg.temperature)?;
    let uncertainty = simcore::minmax_normalize(&entropy);
    let degenerate = || UnknownMaskOutcome {
        mask: BinaryMask::empty(volume.height, volume.width),
        uncertainty: uncertainty.clone(),
        cut: None,
    };
    let (lo, hi) = entropy.min_max().expect("non-empty map");
    if hi - lo <= cfg.min_entropy_range {
        return Ok(degenerate());
    }
    let seeds = match extract_seeds(&uncertainty, cfg.low_frac, cfg.high_frac) {
        Ok(s) => s,
        Err(GraphCutError::DegenerateMap) => return Ok(degenerate()),
        Err(e) => return Err(e),
    };
    let problem = build_problem(&uncertainty, &seeds, &cfg.cut)?;
    let cut = min_cut(&problem);
    Ok(UnknownMaskOutcome {
        mask: cut.mask.clone(),
        uncertainty,
        cut: Some(cut),
    })
}
