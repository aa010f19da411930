//! Budget-constrained configuration search: a GP-surrogate Bayesian loop
//! and an exhaustive reference.

pub mod gp;

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::architecture::{ModelConfig, CLASSIFIER_DEPTHS, CLASSIFIER_KERNELS, WIDTH_MULTIPLIERS};
use crate::error::{Error, Result};

pub use gp::{gp_fit, gp_predict, GpState};

pub const UCB_BETA: f64 = 2.0;
pub const DEFAULT_SEED: u64 = 42;

/// `images_per_second * megaops / 1000`.
pub fn gigaops_per_second(megaops: f64, n_cameras: usize, fps: usize) -> f64 {
    (n_cameras * fps) as f64 * megaops / 1000.0
}

/// Surrogate target: achieved GOPS below the budget, reflected about the
/// budget line above it.
pub fn penalized_objective(gigaops: f64, budget: f64) -> f64 {
    if gigaops <= budget {
        gigaops
    } else {
        budget - (gigaops - budget)
    }
}

/// The discrete search space, enumerated in lexicographic
/// (multiplier, depth, kernel, block index) order.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchGrid {
    pub width_multipliers: Vec<f64>,
    pub classifier_depths: Vec<usize>,
    pub classifier_kernels: Vec<usize>,
    pub block_specs_ids: Vec<String>,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchPoint {
    pub index: usize,
    pub encoded: Vec<f64>,
    pub raw: ModelConfig,
}

fn normalize(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.0
    }
}

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

impl SearchGrid {
    /// The standard 5 x 4 x 5 grid over the given backbones.
    pub fn standard(block_specs_ids: Vec<String>, num_classes: usize) -> Self {
        Self {
            width_multipliers: WIDTH_MULTIPLIERS.to_vec(),
            classifier_depths: CLASSIFIER_DEPTHS.to_vec(),
            classifier_kernels: CLASSIFIER_KERNELS.to_vec(),
            block_specs_ids,
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.width_multipliers.len()
            * self.classifier_depths.len()
            * self.classifier_kernels.len()
            * self.block_specs_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn config(&self, index: usize) -> ModelConfig {
        let nb = self.block_specs_ids.len();
        let nk = self.classifier_kernels.len();
        let nd = self.classifier_depths.len();
        let b = index % nb;
        let k = (index / nb) % nk;
        let d = (index / (nb * nk)) % nd;
        let m = index / (nb * nk * nd);
        ModelConfig {
            width_multiplier: self.width_multipliers[m],
            classifier_depth: self.classifier_depths[d],
            classifier_kernel: self.classifier_kernels[k],
            num_classes: self.num_classes,
            block_specs_id: self.block_specs_ids[b].clone(),
        }
    }

    /// Position of `cfg` in enumeration order, if it lies on the grid.
    pub fn index_of(&self, cfg: &ModelConfig) -> Option<usize> {
        if cfg.num_classes != self.num_classes {
            return None;
        }
        let m = self.width_multipliers.iter().position(|&x| x == cfg.width_multiplier)?;
        let d = self.classifier_depths.iter().position(|&x| x == cfg.classifier_depth)?;
        let k = self.classifier_kernels.iter().position(|&x| x == cfg.classifier_kernel)?;
        let b = self.block_specs_ids.iter().position(|x| *x == cfg.block_specs_id)?;
        let (nd, nk, nb) = (
            self.classifier_depths.len(),
            self.classifier_kernels.len(),
            self.block_specs_ids.len(),
        );
        Some(((m * nd + d) * nk + k) * nb + b)
    }

    /// Min-max normalized (m, d, k) followed by a one-hot block index.
    pub fn encode(&self, cfg: &ModelConfig) -> Option<Vec<f64>> {
        let b = self.block_specs_ids.iter().position(|x| *x == cfg.block_specs_id)?;
        let (mlo, mhi) = bounds(self.width_multipliers.iter().copied());
        let (dlo, dhi) = bounds(self.classifier_depths.iter().map(|&d| d as f64));
        let (klo, khi) = bounds(self.classifier_kernels.iter().map(|&k| k as f64));
        let mut v = vec![
            normalize(cfg.width_multiplier, mlo, mhi),
            normalize(cfg.classifier_depth as f64, dlo, dhi),
            normalize(cfg.classifier_kernel as f64, klo, khi),
        ];
        v.extend((0..self.block_specs_ids.len()).map(|i| if i == b { 1.0 } else { 0.0 }));
        Some(v)
    }

    /// Inverse of [`SearchGrid::encode`] for encodings of grid points.
    pub fn decode(&self, encoded: &[f64]) -> Option<ModelConfig> {
        (0..self.len())
            .map(|i| self.config(i))
            .find(|c| self.encode(c).as_deref() == Some(encoded))
    }

    pub fn point(&self, index: usize) -> SearchPoint {
        let raw = self.config(index);
        let encoded = self.encode(&raw).expect("grid config encodes");
        SearchPoint {
            index,
            encoded,
            raw,
        }
    }

    pub fn points(&self) -> Vec<SearchPoint> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }
}

/// Upper confidence bound `mean + beta * sqrt(variance)`.
pub fn ucb(state: &GpState, point: &[f64], beta: f64) -> f64 {
    let (mean, var) = gp_predict(state, point);
    mean + beta * var.sqrt()
}

/// Picks the next candidate: a seeded uniform draw when nothing has been
/// observed yet, otherwise the unvisited UCB maximizer (earliest in grid
/// order on ties).
pub fn acquire(
    state: Option<&GpState>,
    candidates: &[SearchPoint],
    visited: &HashSet<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    let open: Vec<&SearchPoint> = candidates.iter().filter(|p| !visited.contains(&p.index)).collect();
    if open.is_empty() {
        return Err(Error::Exhausted);
    }
    let Some(state) = state else {
        return Ok(open[rng.gen_range(0..open.len())].index);
    };
    let mut best = open[0].index;
    let mut best_score = f64::NEG_INFINITY;
    for p in open {
        let score = ucb(state, &p.encoded, UCB_BETA);
        if score > best_score {
            best_score = score;
            best = p.index;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub iteration: usize,
    pub config: ModelConfig,
    pub gigaops: f64,
    pub feasible: bool,
    /// Jitter used by the surrogate fit after this observation (absent for
    /// exhaustive search).
    pub gp_jitter: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchResult {
    pub best: Option<ModelConfig>,
    /// GOPS of `best`; null when nothing was feasible.
    pub gigaops: Option<f64>,
    pub budget: f64,
    /// `budget - gigaops`; null when nothing was feasible.
    pub min_difference: Option<f64>,
    pub trace: Vec<TraceRecord>,
}

impl SearchResult {
    pub fn utilization(&self) -> Option<f64> {
        self.gigaops.map(|g| g / self.budget)
    }
}

/// What the search needs from a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Workload {
    pub n_cameras: usize,
    pub fps_per_camera: usize,
    pub budget_gops: f64,
    pub max_iterations: usize,
}

struct Incumbent {
    index: usize,
    gigaops: f64,
    difference: f64,
}

impl Incumbent {
    /// Feasible and strictly closer to the budget, or equally close and
    /// earlier in grid order. Closeness is compared on achieved GOPS, which
    /// orders identically for a fixed budget and stays exact when the budget
    /// is infinite.
    fn offer(slot: &mut Option<Incumbent>, index: usize, gigaops: f64, budget: f64) {
        if gigaops > budget {
            return;
        }
        let difference = budget - gigaops;
        let better = match slot {
            None => true,
            Some(cur) => gigaops > cur.gigaops || (gigaops == cur.gigaops && index < cur.index),
        };
        if better {
            *slot = Some(Incumbent {
                index,
                gigaops,
                difference,
            });
        }
    }
}

fn finish(grid: &SearchGrid, budget: f64, incumbent: Option<Incumbent>, trace: Vec<TraceRecord>) -> SearchResult {
    match incumbent {
        Some(inc) => SearchResult {
            best: Some(grid.config(inc.index)),
            gigaops: Some(inc.gigaops),
            budget,
            min_difference: Some(inc.difference),
            trace,
        },
        None => SearchResult {
            best: None,
            gigaops: None,
            budget,
            min_difference: None,
            trace,
        },
    }
}

/// GP-surrogate Bayesian search. `cost_fn` returns per-image megaops of a
/// configuration. Each grid point is evaluated at most once.
pub fn bayesian_search<F>(workload: &Workload, grid: &SearchGrid, mut cost_fn: F, seed: u64) -> Result<SearchResult>
where
    F: FnMut(&ModelConfig) -> Result<f64>,
{
    if workload.max_iterations == 0 {
        return Err(Error::field("max_iterations", "must be >= 1"));
    }
    if grid.is_empty() {
        return Err(Error::field("grid", "search grid is empty"));
    }
    let budget = workload.budget_gops;
    let candidates = grid.points();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut visited = HashSet::new();
    let mut observations: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut state: Option<GpState> = None;
    let mut incumbent = None;
    let mut trace = Vec::new();

    for iteration in 1..=workload.max_iterations {
        let index = match acquire(state.as_ref(), &candidates, &visited, &mut rng) {
            Ok(i) => i,
            Err(Error::Exhausted) => break,
            Err(e) => return Err(e),
        };
        visited.insert(index);
        let point = &candidates[index];
        let megaops = cost_fn(&point.raw)?;
        let gigaops = gigaops_per_second(megaops, workload.n_cameras, workload.fps_per_camera);

        observations.push((point.encoded.clone(), penalized_objective(gigaops, budget)));
        let fitted = gp::gp_fit(&observations, gp::DEFAULT_LENGTH_SCALE)?;
        let jitter = fitted.noise_jitter;
        state = Some(fitted);

        Incumbent::offer(&mut incumbent, index, gigaops, budget);
        trace.push(TraceRecord {
            iteration,
            config: point.raw.clone(),
            gigaops,
            feasible: gigaops <= budget,
            gp_jitter: Some(jitter),
        });
    }
    Ok(finish(grid, budget, incumbent, trace))
}

/// Evaluates every grid point; the best is the feasible maximum, earliest in
/// grid order on ties.
pub fn exhaustive_search<F>(workload: &Workload, grid: &SearchGrid, mut cost_fn: F) -> Result<SearchResult>
where
    F: FnMut(&ModelConfig) -> Result<f64>,
{
    let budget = workload.budget_gops;
    let mut incumbent = None;
    let mut trace = Vec::with_capacity(grid.len());
    for index in 0..grid.len() {
        let config = grid.config(index);
        let gigaops = gigaops_per_second(cost_fn(&config)?, workload.n_cameras, workload.fps_per_camera);
        Incumbent::offer(&mut incumbent, index, gigaops, budget);
        trace.push(TraceRecord {
            iteration: index + 1,
            config,
            gigaops,
            feasible: gigaops <= budget,
            gp_jitter: None,
        });
    }
    Ok(finish(grid, budget, incumbent, trace))
}
