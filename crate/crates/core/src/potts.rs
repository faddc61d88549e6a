//! Potts random field on a 2D lattice with 8-neighborhood.
//!
//! Labels are 0-based in memory. The prior density is
//! `f(z | β) = exp(β U(z)) / C(β)` with `U` the number of agreeing edges;
//! `log C` is tabulated by thermodynamic integration.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::Dims;

/// 8-neighborhood adjacency of a `nx × ny` lattice in compressed form.
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    dims: Dims,
    offsets: Vec<usize>,
    adj: Vec<usize>,
    edges: Vec<(usize, usize)>,
}

impl NeighborGraph {
    pub fn new(dims: Dims) -> Self {
        let n = dims.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut adj = Vec::with_capacity(8 * n);
        let mut edges = Vec::with_capacity(4 * n);
        offsets.push(0);
        for i in 0..n {
            let (x, y) = dims.coords(i);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                    if xx < 0 || yy < 0 || xx >= dims.nx as i64 || yy >= dims.ny as i64 {
                        continue;
                    }
                    let j = dims.index(xx as usize, yy as usize);
                    adj.push(j);
                    if i < j {
                        edges.push((i, j));
                    }
                }
            }
            offsets.push(adj.len());
        }
        Self {
            dims,
            offsets,
            adj,
            edges,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
}

fn check_labels(z: &[usize], g: usize, graph: &NeighborGraph) -> Result<()> {
    if z.len() != graph.len() {
        return Err(Error::invalid(format!(
            "label map has {} entries, lattice has {}",
            z.len(),
            graph.len()
        )));
    }
    if let Some(bad) = z.iter().find(|&&l| l >= g) {
        return Err(Error::invalid(format!("label {} out of range for G = {g}", bad + 1)));
    }
    Ok(())
}

/// Number of edges whose endpoints share a label.
pub fn potts_energy(z: &[usize], g: usize, graph: &NeighborGraph) -> Result<usize> {
    check_labels(z, g, graph)?;
    Ok(energy_unchecked(z, graph))
}

pub(crate) fn energy_unchecked(z: &[usize], graph: &NeighborGraph) -> usize {
    graph.edges.iter().filter(|&&(i, j)| z[i] == z[j]).count()
}

/// Largest state space the exhaustive routines will enumerate.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

/// Count of configurations at each energy `0..=|edges|`, by enumeration.
pub fn energy_histogram(g: usize, graph: &NeighborGraph) -> Result<Vec<u64>> {
    let n = graph.len();
    if g < 1 || (g as f64).powi(n as i32) > BRUTE_FORCE_LIMIT {
        return Err(Error::invalid(format!(
            "state space {g}^{n} too large for enumeration"
        )));
    }
    let mut hist = vec![0u64; graph.edges.len() + 1];
    let mut z = vec![0usize; n];
    loop {
        hist[energy_unchecked(&z, graph)] += 1;
        let mut pos = 0;
        loop {
            if pos == n {
                return Ok(hist);
            }
            z[pos] += 1;
            if z[pos] < g {
                break;
            }
            z[pos] = 0;
            pos += 1;
        }
    }
}

fn log_sum_exp_hist(hist: &[u64], beta: f64) -> f64 {
    let terms: Vec<f64> = hist
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(u, &c)| (c as f64).ln() + beta * u as f64)
        .collect();
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// `log Σ_z exp(β U(z))` by exhaustive enumeration.
pub fn brute_force_log_partition(g: usize, graph: &NeighborGraph, beta: f64) -> Result<f64> {
    Ok(log_sum_exp_hist(&energy_histogram(g, graph)?, beta))
}

/// Exact `E[U]` under the prior, by enumeration.
pub fn brute_force_mean_energy(g: usize, graph: &NeighborGraph, beta: f64) -> Result<f64> {
    let hist = energy_histogram(g, graph)?;
    let lz = log_sum_exp_hist(&hist, beta);
    Ok(hist
        .iter()
        .enumerate()
        .map(|(u, &c)| c as f64 * (beta * u as f64 - lz).exp() * u as f64)
        .sum())
}

/// One raster sweep of single-site Gibbs updates from the Potts prior.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    z: &mut [usize],
    g: usize,
    beta: f64,
    graph: &NeighborGraph,
    rng: &mut R,
) {
    let max_deg = (0..z.len()).map(|i| graph.neighbors(i).len()).max().unwrap_or(0);
    let boltz: Vec<f64> = (0..=max_deg).map(|c| (beta * c as f64).exp()).collect();
    let mut counts = vec![0usize; g];
    let mut w = vec![0.0; g];
    for i in 0..z.len() {
        counts.iter_mut().for_each(|c| *c = 0);
        for &j in graph.neighbors(i) {
            counts[z[j]] += 1;
        }
        let mut total = 0.0;
        for (v, &c) in w.iter_mut().zip(&counts) {
            *v = boltz[c];
            total += *v;
        }
        z[i] = sample_index(&w, total, rng);
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(w: &[f64], total: f64, rng: &mut R) -> usize {
    let mut u = rng.random::<f64>() * total;
    for (k, &v) in w.iter().enumerate() {
        if u < v {
            return k;
        }
        u -= v;
    }
    w.iter().rposition(|&v| v > 0.0).unwrap_or(0)
}

/// Monte Carlo settings for the per-grid-point energy estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub burn_in: usize,
    pub sweeps: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            burn_in: 500,
            sweeps: 2000,
            seed: 0,
        }
    }
}

/// Default β grid: step 0.01 on `[0, 1]`.
pub const DEFAULT_BETA_MAX: f64 = 1.0;
pub const DEFAULT_GRID_STEP: f64 = 0.01;

/// Tabulated `log C(β)` for one lattice and label count.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionTable {
    pub nx: usize,
    pub ny: usize,
    pub g: usize,
    pub beta_grid: Vec<f64>,
    pub log_c: Vec<f64>,
    /// Estimated `E[U]` at each grid point.
    pub mean_energy: Vec<f64>,
    pub mc: McConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct TableHeader {
    nx: usize,
    ny: usize,
    g: usize,
    beta_max: f64,
    points: usize,
    mc: McConfig,
    mean_energy: Vec<f64>,
}

fn beta_grid(beta_max: f64, step: f64) -> Vec<f64> {
    let n = (beta_max / step - 1e-9).ceil() as usize;
    let mut grid: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();
    grid.push(beta_max);
    grid
}

/// Estimate `E[U]` under the prior at a single β by Gibbs sampling from an
/// all-equal start.
pub fn mc_mean_energy(g: usize, graph: &NeighborGraph, beta: f64, mc: McConfig, stream: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
    rng.set_stream(stream);
    let mut z = vec![0usize; graph.len()];
    for _ in 0..mc.burn_in {
        gibbs_sweep(&mut z, g, beta, graph, &mut rng);
    }
    let mut acc = 0.0;
    for _ in 0..mc.sweeps {
        gibbs_sweep(&mut z, g, beta, graph, &mut rng);
        acc += energy_unchecked(&z, graph) as f64;
    }
    acc / mc.sweeps as f64
}

/// Thermodynamic integration of `log C(β) = n ln G + ∫ E[U] dβ'`.
pub fn estimate_partition(
    g: usize,
    graph: &NeighborGraph,
    beta_max: f64,
    grid_step: f64,
    mc: McConfig,
) -> Result<PartitionTable> {
    if g < 2 {
        return Err(Error::invalid(format!("G must be at least 2, got {g}")));
    }
    if !(beta_max > 0.0 && beta_max.is_finite()) {
        return Err(Error::invalid(format!("beta_max must be positive, got {beta_max}")));
    }
    if !(grid_step > 0.0 && grid_step <= beta_max) {
        return Err(Error::invalid(format!("grid step must lie in (0, beta_max], got {grid_step}")));
    }
    if mc.sweeps == 0 {
        return Err(Error::invalid("at least one retained sweep is required"));
    }
    let grid = beta_grid(beta_max, grid_step);
    let mean_energy: Vec<f64> = grid
        .par_iter()
        .enumerate()
        .map(|(k, &b)| mc_mean_energy(g, graph, b, mc, k as u64))
        .collect();
    let mut log_c = Vec::with_capacity(grid.len());
    log_c.push(graph.len() as f64 * (g as f64).ln());
    for k in 1..grid.len() {
        let h = grid[k] - grid[k - 1];
        log_c.push(log_c[k - 1] + 0.5 * h * (mean_energy[k - 1] + mean_energy[k]));
    }
    let dims = graph.dims();
    Ok(PartitionTable {
        nx: dims.nx,
        ny: dims.ny,
        g,
        beta_grid: grid,
        log_c,
        mean_energy,
        mc,
    })
}

/// Table filled by exhaustive enumeration; only for lattices within
/// [`BRUTE_FORCE_LIMIT`]. `mc` is all zeros to mark the table as exact.
pub fn exact_partition(g: usize, graph: &NeighborGraph, beta_max: f64, grid_step: f64) -> Result<PartitionTable> {
    if g < 2 {
        return Err(Error::invalid(format!("G must be at least 2, got {g}")));
    }
    if !(beta_max > 0.0 && beta_max.is_finite() && grid_step > 0.0 && grid_step <= beta_max) {
        return Err(Error::invalid("beta grid must satisfy 0 < step <= beta_max < inf"));
    }
    let hist = energy_histogram(g, graph)?;
    let grid = beta_grid(beta_max, grid_step);
    let log_c = grid.iter().map(|&b| log_sum_exp_hist(&hist, b)).collect();
    let mean_energy = grid
        .iter()
        .map(|&b| brute_force_mean_energy(g, graph, b))
        .collect::<Result<_>>()?;
    let dims = graph.dims();
    Ok(PartitionTable {
        nx: dims.nx,
        ny: dims.ny,
        g,
        beta_grid: grid,
        log_c,
        mean_energy,
        mc: McConfig { burn_in: 0, sweeps: 0, seed: 0 },
    })
}

impl PartitionTable {
    pub fn beta_max(&self) -> f64 {
        *self.beta_grid.last().unwrap()
    }

    /// Linearly interpolated `log C(β)`.
    pub fn log_c_at(&self, beta: f64) -> Result<f64> {
        let bmax = self.beta_max();
        if !(0.0..=bmax).contains(&beta) {
            return Err(Error::invalid(format!(
                "beta {beta} outside partition table range [0, {bmax}]"
            )));
        }
        let k = self.beta_grid.partition_point(|&b| b <= beta);
        if k >= self.beta_grid.len() {
            return Ok(*self.log_c.last().unwrap());
        }
        let (b0, b1) = (self.beta_grid[k - 1], self.beta_grid[k]);
        let w = (beta - b0) / (b1 - b0);
        Ok(self.log_c[k - 1] + w * (self.log_c[k] - self.log_c[k - 1]))
    }

    pub fn matches(&self, graph: &NeighborGraph, g: usize) -> bool {
        let d = graph.dims();
        self.nx == d.nx && self.ny == d.ny && self.g == g
    }

    pub fn check(&self, graph: &NeighborGraph, g: usize) -> Result<()> {
        if self.matches(graph, g) {
            Ok(())
        } else {
            let d = graph.dims();
            Err(Error::invalid(format!(
                "partition table is for {}x{} G={}, needed {}x{} G={g}",
                self.nx, self.ny, self.g, d.nx, d.ny
            )))
        }
    }

    /// Writes `beta,log_c` to `path` and the header to `path` with a `.json` extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        w.write_record(["beta", "log_c"])?;
        for (b, c) in self.beta_grid.iter().zip(&self.log_c) {
            w.write_record([format!("{b:?}"), format!("{c:?}")])?;
        }
        w.flush()?;
        let header = TableHeader {
            nx: self.nx,
            ny: self.ny,
            g: self.g,
            beta_max: self.beta_max(),
            points: self.beta_grid.len(),
            mc: self.mc,
            mean_energy: self.mean_energy.clone(),
        };
        fs::write(header_path(path), serde_json::to_string_pretty(&header)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let header: TableHeader = serde_json::from_str(&fs::read_to_string(header_path(path))?)?;
        let mut r = csv::Reader::from_path(path)?;
        if r.headers()?.iter().collect::<Vec<_>>() != ["beta", "log_c"] {
            return Err(Error::parse(path.display().to_string(), "expected header beta,log_c"));
        }
        let mut beta_grid = Vec::new();
        let mut log_c = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::parse(path.display().to_string(), format!("{s:?}: {e}")))
            };
            beta_grid.push(parse(&rec[0])?);
            log_c.push(parse(&rec[1])?);
        }
        if beta_grid.len() != header.points || beta_grid.len() < 2 || beta_grid[0] != 0.0 {
            return Err(Error::parse(
                path.display().to_string(),
                "grid must start at 0 and match the header point count",
            ));
        }
        if beta_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::parse(path.display().to_string(), "beta grid not ascending"));
        }
        Ok(Self {
            nx: header.nx,
            ny: header.ny,
            g: header.g,
            beta_grid,
            log_c,
            mean_energy: header.mean_energy,
            mc: header.mc,
        })
    }
}

fn header_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// File name under which a table with these settings is cached.
pub fn cache_file_name(dims: Dims, g: usize, beta_max: f64, step: f64, mc: McConfig) -> String {
    format!(
        "potts_{}x{}_g{g}_b{beta_max}_s{step}_mc{}-{}-{}.csv",
        dims.nx, dims.ny, mc.burn_in, mc.sweeps, mc.seed
    )
}

/// Loads the table from `cache_dir` if present, otherwise estimates and stores it.
pub fn cached_partition(
    cache_dir: &Path,
    g: usize,
    graph: &NeighborGraph,
    beta_max: f64,
    step: f64,
    mc: McConfig,
) -> Result<PartitionTable> {
    let path = cache_dir.join(cache_file_name(graph.dims(), g, beta_max, step, mc));
    if path.exists() {
        if let Ok(t) = PartitionTable::load(&path) {
            if t.matches(graph, g) && t.mc == mc && t.beta_max() == beta_max {
                return Ok(t);
            }
        }
    }
    let table = estimate_partition(g, graph, beta_max, step, mc)?;
    fs::create_dir_all(cache_dir)?;
    table.save(&path)?;
    Ok(table)
}

/// `β U(z) − log C(β)`.
pub fn log_potts_prior(z: &[usize], beta: f64, table: &PartitionTable, graph: &NeighborGraph) -> Result<f64> {
    table.check(graph, table.g)?;
    let u = potts_energy(z, table.g, graph)?;
    Ok(beta * u as f64 - table.log_c_at(beta)?)
}
