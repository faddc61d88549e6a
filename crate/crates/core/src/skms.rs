//! Spatially regularized K-means with per-cluster kinetic fits.
//!
//! The objective is `Σ_i ||y_i − C(k_{z_i})||² − β U(z)` where `U` counts
//! agreeing neighbor pairs. Refits are warm-started LM solves on cluster-mean
//! TACs and reassignment is a sequential ICM raster sweep, so the objective
//! never increases except when an empty cluster has to be reseeded.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{MapEntry, ParametricMap};
use crate::kinetics::{FrameScheme, InputFunction, KineticParams, SpilloverFractions, TacModel};
use crate::phantom::DynamicImage;
use crate::potts::{energy_unchecked, NeighborGraph};
use crate::scf::{lm_fit_voxel_from, start_point, FitConfig, VoxelFit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkmsConfig {
    #[serde(rename = "G")]
    pub g: usize,
    pub beta: f64,
    pub max_iter: usize,
    pub conv_tol: f64,
    pub seed: u64,
    pub fit: FitConfig,
}

impl Default for SkmsConfig {
    fn default() -> Self {
        Self {
            g: 17,
            beta: 0.2,
            max_iter: 100,
            conv_tol: 1e-6,
            seed: 0,
            fit: FitConfig::default(),
        }
    }
}

impl SkmsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.g < 2 {
            return Err(Error::invalid(format!("G must be at least 2, got {}", self.g)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        if !(self.conv_tol > 0.0) {
            return Err(Error::invalid("conv_tol must be > 0"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be >= 1"));
        }
        if !self.fit.weights.is_empty() {
            return Err(Error::invalid("cluster fits use unit weights; leave fit.weights empty"));
        }
        self.fit.validate()
    }
}

/// An empty cluster that was refilled from the worst-fit voxel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reseed {
    pub iteration: usize,
    /// Length of the objective trace when the reseed happened.
    pub trace_len: usize,
    pub cluster: usize,
    pub voxel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkmsResult {
    /// 0-based cluster index per voxel.
    pub labels: Vec<usize>,
    pub cluster_params: Vec<KineticParams>,
    pub cluster_fractions: Vec<Option<SpilloverFractions>>,
    /// Objective after every refit and every reassignment.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub reseeds: Vec<Reseed>,
    #[serde(skip)]
    cluster_fits: Vec<VoxelFit>,
    #[serde(skip)]
    voxel_sse: Vec<f64>,
}

impl SkmsResult {
    /// Each voxel carries its cluster's parameters; `wrss` is the voxel's own residual.
    pub fn to_map(&self, img: &DynamicImage) -> ParametricMap {
        ParametricMap {
            dims: img.dims(),
            entries: self
                .labels
                .iter()
                .zip(&self.voxel_sse)
                .map(|(&l, &sse)| MapEntry {
                    params: self.cluster_params[l],
                    wrss: sse,
                    status: self.cluster_fits[l].status,
                })
                .collect(),
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(y: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (g, c) in centers.iter().enumerate() {
        let d = sq_dist(y, c);
        if d < best_d {
            best_d = d;
            best = g;
        }
    }
    best
}

/// k-means++ seeding on TAC vectors.
pub fn kmeans_pp_centers(img: &DynamicImage, g: usize, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
    let n = img.voxel_count();
    if g == 0 || g > n {
        return Err(Error::invalid(format!("cannot seed {g} clusters from {n} voxels")));
    }
    let mut centers = vec![img.tac(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(img.tac(i), &centers[0])).collect();
    while centers.len() < g {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut k = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    k = i;
                    break;
                }
                u -= d;
            }
            k
        } else {
            rng.random_range(0..n)
        };
        let c = img.tac(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(img.tac(i), &c));
        }
        centers.push(c);
    }
    Ok(centers)
}

fn cluster_means(img: &DynamicImage, labels: &[usize], g: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let t = img.frame_count();
    let mut sums = vec![vec![0.0; t]; g];
    let mut counts = vec![0usize; g];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(img.tac(i)) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    (sums, counts)
}

/// Plain Lloyd k-means from k-means++ seeds. Returns 0-based labels and centers.
pub fn kmeans(img: &DynamicImage, g: usize, seed: u64, max_iter: usize) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_pp_centers(img, g, &mut rng)?;
    let n = img.voxel_count();
    let mut labels: Vec<usize> = (0..n).map(|i| nearest(img.tac(i), &centers)).collect();
    for _ in 0..max_iter {
        let (means, counts) = cluster_means(img, &labels, g);
        for (k, m) in means.into_iter().enumerate() {
            if counts[k] > 0 {
                centers[k] = m;
            }
        }
        let next: Vec<usize> = (0..n).map(|i| nearest(img.tac(i), &centers)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok((labels, centers))
}

/// Best of `restarts` k-means runs by within-cluster sum of squares.
/// Restart `r` seeds k-means++ from stream `r` of `seed`.
pub fn kmeans_restarts(
    img: &DynamicImage,
    g: usize,
    seed: u64,
    max_iter: usize,
    restarts: usize,
) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let mut best: Option<(f64, Vec<usize>, Vec<Vec<f64>>)> = None;
    for r in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let (labels, centers) = kmeans(img, g, rng.next_u64(), max_iter)?;
        let inertia: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| sq_dist(img.tac(i), &centers[l]))
            .sum();
        if best.as_ref().is_none_or(|(b, _, _)| inertia < *b) {
            best = Some((inertia, labels, centers));
        }
    }
    let (_, labels, centers) = best.expect("at least one restart");
    Ok((labels, centers))
}

/// ICM reassignment: each voxel, in raster order, takes
/// `argmin_g ||y_i − C_g||² − β·#{neighbors labeled g}`, keeping its label on ties.
pub fn reassign(
    img: &DynamicImage,
    curves: &[Vec<f64>],
    beta: f64,
    graph: &NeighborGraph,
    labels: &mut [usize],
) {
    let g = curves.len();
    let mut agree = vec![0.0; g];
    for i in 0..labels.len() {
        agree.iter_mut().for_each(|v| *v = 0.0);
        for &j in graph.neighbors(i) {
            agree[labels[j]] += 1.0;
        }
        let y = img.tac(i);
        let cost = |k: usize| sq_dist(y, &curves[k]) - beta * agree[k];
        let mut best = labels[i];
        let mut best_c = cost(best);
        for k in 0..g {
            let c = cost(k);
            if c < best_c {
                best_c = c;
                best = k;
            }
        }
        labels[i] = best;
    }
}

/// `Σ ||y_i − C_{z_i}||² − β U(z)`.
pub fn skms_objective(
    img: &DynamicImage,
    curves: &[Vec<f64>],
    beta: f64,
    graph: &NeighborGraph,
    labels: &[usize],
) -> f64 {
    let data: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(img.tac(i), &curves[l]))
        .sum();
    data - beta * energy_unchecked(labels, graph) as f64
}

pub fn skms_fit(
    img: &DynamicImage,
    input: &InputFunction,
    frames: &FrameScheme,
    cfg: &SkmsConfig,
) -> Result<SkmsResult> {
    let model = TacModel::plain(input, frames)?;
    skms_fit_model(img, &model, cfg)
}

/// Run with k-means++ seeds drawn from `cfg.seed`.
pub fn skms_fit_model(img: &DynamicImage, model: &TacModel, cfg: &SkmsConfig) -> Result<SkmsResult> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers = kmeans_pp_centers(img, cfg.g, &mut rng)?;
    skms_fit_from_centers(img, model, &centers, cfg)
}

/// Run from explicit initial cluster centers (`cfg.g` is taken from `centers`).
pub fn skms_fit_from_centers(
    img: &DynamicImage,
    model: &TacModel,
    centers: &[Vec<f64>],
    cfg: &SkmsConfig,
) -> Result<SkmsResult> {
    cfg.validate()?;
    let g = centers.len();
    let n = img.voxel_count();
    let t = img.frame_count();
    if g < 2 || g > n {
        return Err(Error::invalid(format!("G = {g} must lie in [2, {n}]")));
    }
    if model.frame_count() != t || centers.iter().any(|c| c.len() != t) {
        return Err(Error::invalid("centers, model and image disagree on frame count"));
    }
    let graph = NeighborGraph::new(img.dims());
    let mut labels: Vec<usize> = (0..n).map(|i| nearest(img.tac(i), centers)).collect();
    let mut reseeds = Vec::new();
    fill_empty(img, &mut labels, centers, g, (0, 0), &mut reseeds);

    let start = start_point(model, &cfg.fit);
    let mut fits: Vec<Option<VoxelFit>> = vec![None; g];
    let mut curves: Vec<Vec<f64>> = vec![vec![f64::NAN; t]; g];
    let mut objective = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let (means, _) = cluster_means(img, &labels, g);
        let new_fits: Vec<VoxelFit> = means
            .par_iter()
            .zip(fits.par_iter())
            .map(|(m, prev)| {
                let from = prev.map(|f| f.param_vec()).unwrap_or_else(|| start.clone());
                lm_fit_voxel_from(m, model, &cfg.fit, &from)
            })
            .collect::<Result<_>>()?;
        let new_curves: Vec<Vec<f64>> = new_fits
            .iter()
            .map(|f| model.eval(f.params, f.fractions))
            .collect();
        let change = curves
            .iter()
            .zip(&new_curves)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, |m: f64, d| if d.is_nan() { f64::INFINITY } else { m.max(d) });
        fits = new_fits.into_iter().map(Some).collect();
        curves = new_curves;
        objective.push(skms_objective(img, &curves, cfg.beta, &graph, &labels));
        if change < cfg.conv_tol {
            converged = true;
            break;
        }
        reassign(img, &curves, cfg.beta, &graph, &mut labels);
        objective.push(skms_objective(img, &curves, cfg.beta, &graph, &labels));
        fill_empty(img, &mut labels, &curves, g, (iterations, objective.len()), &mut reseeds);
    }

    let cluster_fits: Vec<VoxelFit> = fits.into_iter().map(|f| f.unwrap_or_else(VoxelFit::failed)).collect();
    let voxel_sse = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(img.tac(i), &curves[l]))
        .collect();
    Ok(SkmsResult {
        cluster_params: cluster_fits.iter().map(|f| f.params).collect(),
        cluster_fractions: cluster_fits.iter().map(|f| f.fractions).collect(),
        labels,
        objective,
        iterations,
        converged,
        reseeds,
        cluster_fits,
        voxel_sse,
    })
}

fn fill_empty(
    img: &DynamicImage,
    labels: &mut [usize],
    curves: &[Vec<f64>],
    g: usize,
    (iteration, trace_len): (usize, usize),
    reseeds: &mut Vec<Reseed>,
) {
    loop {
        let mut counts = vec![0usize; g];
        labels.iter().for_each(|&l| counts[l] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let worst = (0..labels.len())
            .filter(|&i| counts[labels[i]] > 1)
            .map(|i| (i, sq_dist(img.tac(i), &curves[labels[i]])))
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc });
        if worst.0 == usize::MAX {
            return;
        }
        labels[worst.0] = empty;
        reseeds.push(Reseed {
            iteration,
            trace_len,
            cluster: empty,
            voxel: worst.0,
        });
    }
}
