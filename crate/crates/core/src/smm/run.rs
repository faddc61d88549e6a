use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Chain, ChainState, McmcConfig, McmcMode, Priors, ProposalScales, SmmModel};
use crate::error::{Error, Result};
use crate::io::{FitStatus, MapEntry, ParametricMap};
use crate::kinetics::{KineticParams, SpilloverFractions, TacModel};
use crate::phantom::DynamicImage;
use crate::potts::{NeighborGraph, PartitionTable};
use crate::scf::{lm_fit_voxel_from, Bounds, FitConfig};
use crate::skms::kmeans_restarts;

const KMEANS_ITER: usize = 100;
const KMEANS_RESTARTS: usize = 10;

/// Starting state: best-of-restarts K-means labels, the lowest-mean cluster as the noise
/// component, per-cluster LM fits clamped to the prior support, pooled
/// within-cluster variances and `β = init_beta`.
pub fn initialize(img: &DynamicImage, tac: &TacModel, priors: &Priors, cfg: &McmcConfig) -> Result<ChainState> {
    let g = cfg.g;
    let t = img.frame_count();
    let (labels, centers) = kmeans_restarts(img, g, cfg.seed, KMEANS_ITER, KMEANS_RESTARTS)?;
    let level = |c: &Vec<f64>| c.iter().sum::<f64>();
    let noise = (0..g)
        .min_by(|&a, &b| level(&centers[a]).total_cmp(&level(&centers[b])))
        .unwrap();
    let order: Vec<usize> = (0..g).filter(|&c| c != noise).chain([noise]).collect();
    let mut remap = vec![0; g];
    for (new, &old) in order.iter().enumerate() {
        remap[old] = new;
    }
    let z: Vec<usize> = labels.iter().map(|&l| remap[l]).collect();

    let fit_cfg = FitConfig {
        bounds: Bounds {
            k1: priors.k1_bounds,
            k2: priors.k2_bounds,
            f_lv: priors.f_lv_bounds,
            f_rv: priors.f_rv_bounds,
        },
        ..FitConfig::default()
    };
    let mut start = vec![
        fit_cfg.init.k1.clamp(priors.k1_bounds.0, priors.k1_bounds.1),
        fit_cfg.init.k2.clamp(priors.k2_bounds.0, priors.k2_bounds.1),
    ];
    if tac.has_spillover() {
        start.extend([fit_cfg.init_fractions.f_lv, fit_cfg.init_fractions.f_rv]);
    }
    let mut kin = Vec::with_capacity(g - 1);
    let mut fractions = Vec::with_capacity(g - 1);
    for &old in &order[..g - 1] {
        let fit = lm_fit_voxel_from(&centers[old], tac, &fit_cfg, &start)?;
        kin.push(fit.params);
        if let Some(f) = fit.fractions {
            let f_rv = f.f_rv.min(1.0 - f.f_lv);
            fractions.push(SpilloverFractions { f_lv: f.f_lv, f_rv });
        }
    }
    let noise_mean: Vec<f64> = centers[noise]
        .iter()
        .map(|v| v.clamp(priors.noise_mean_bounds.0, priors.noise_mean_bounds.1))
        .collect();
    let mut state = ChainState {
        z,
        kin,
        fractions: tac.has_spillover().then_some(fractions),
        noise_mean,
        sigma2: vec![1.0; t],
        beta: cfg.fixed_beta.unwrap_or(cfg.init_beta),
    };
    let mut means: Vec<Vec<f64>> = state
        .kin
        .iter()
        .enumerate()
        .map(|(c, &p)| tac.eval(p, state.fraction(c)))
        .collect();
    means.push(state.noise_mean.clone());
    let n = img.voxel_count() as f64;
    let mut ss = vec![0.0; t];
    for (i, y) in img.tacs().enumerate() {
        for k in 0..t {
            let r = y[k] - means[state.z[i]][k];
            ss[k] += r * r;
        }
    }
    let floor = img.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0) * 1e-12;
    state.sigma2 = ss.iter().map(|s| (s / n).max(floor)).collect();
    Ok(state)
}

/// A retained draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub iteration: usize,
    pub kin: Vec<KineticParams>,
    pub fractions: Option<Vec<SpilloverFractions>>,
    pub noise_mean: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub beta: f64,
    pub z: Vec<usize>,
}

impl Sample {
    fn of(iteration: usize, s: &ChainState) -> Self {
        Self {
            iteration,
            kin: s.kin.clone(),
            fractions: s.fractions.clone(),
            noise_mean: s.noise_mean.clone(),
            sigma2: s.sigma2.clone(),
            beta: s.beta,
            z: s.z.clone(),
        }
    }
}

/// Permutation sorting kinetic components by ascending `K1`; `perm[new] = old`.
fn k1_order(kin: &[KineticParams]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..kin.len()).collect();
    idx.sort_by(|&a, &b| kin[a].k1.total_cmp(&kin[b].k1).then(a.cmp(&b)));
    idx
}

fn permute_labels(z: &mut [usize], perm: &[usize]) {
    let mut inverse: Vec<usize> = (0..=perm.len()).collect();
    for (new, &old) in perm.iter().enumerate() {
        inverse[old] = new;
    }
    z.iter_mut().for_each(|l| *l = inverse[*l]);
}

fn reorder(
    kin: &mut Vec<KineticParams>,
    fractions: &mut Option<Vec<SpilloverFractions>>,
    z: &mut [usize],
) {
    let perm = k1_order(kin);
    *kin = perm.iter().map(|&o| kin[o]).collect();
    if let Some(f) = fractions.as_mut() {
        *f = perm.iter().map(|&o| f[o]).collect();
    }
    permute_labels(z, &perm);
}

/// Canonical labeling of one state: kinetic components ascending in `K1`,
/// noise component kept last.
pub fn relabel_state(s: &ChainState) -> ChainState {
    let mut out = s.clone();
    reorder(&mut out.kin, &mut out.fractions, &mut out.z);
    out
}

/// Applies [`relabel_state`]'s ordering to every sample.
pub fn relabel(samples: &[Sample]) -> Vec<Sample> {
    samples
        .iter()
        .map(|s| {
            let mut out = s.clone();
            reorder(&mut out.kin, &mut out.fractions, &mut out.z);
            out
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub k1_mean: f64,
    pub k1_interval: (f64, f64),
    pub k2_mean: f64,
    pub k2_interval: (f64, f64),
    pub f_lv: Option<(f64, (f64, f64))>,
    pub f_rv: Option<(f64, (f64, f64))>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub g: usize,
    pub mode: McmcMode,
    /// Kinetic components after relabeling (noise excluded).
    pub components: Vec<ComponentSummary>,
    pub noise_mean: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub beta_mean: f64,
    pub beta_interval: (f64, f64),
    /// Per voxel, the fraction of retained samples in each component.
    pub membership: Vec<Vec<f64>>,
    pub map_state: ChainState,
    pub map_log_posterior: f64,
    pub map_iteration: usize,
    pub acceptance: Vec<(String, f64)>,
    pub samples: Vec<Sample>,
    /// β after every iteration.
    pub beta_trace: Vec<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean_interval(values: impl Iterator<Item = f64>) -> (f64, (f64, f64)) {
    let mut v: Vec<f64> = values.collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.sort_by(f64::total_cmp);
    (mean, (quantile(&v, 0.025), quantile(&v, 0.975)))
}

fn mean_vec(rows: impl Iterator<Item = Vec<f64>>) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    let mut n = 0.0;
    for r in rows {
        if acc.is_empty() {
            acc = vec![0.0; r.len()];
        }
        acc.iter_mut().zip(&r).for_each(|(a, v)| *a += v);
        n += 1.0;
    }
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

impl PosteriorSummary {
    fn build(
        cfg: &McmcConfig,
        n_voxels: usize,
        raw: &[Sample],
        map_state: ChainState,
        map_log_posterior: f64,
        map_iteration: usize,
        acceptance: Vec<(String, f64)>,
        beta_trace: Vec<f64>,
    ) -> Self {
        let g = cfg.g;
        let map_state = relabel_state(&map_state);
        let samples = match cfg.mode {
            McmcMode::FullPosterior => relabel(raw),
            McmcMode::MapOnly => vec![Sample::of(map_iteration, &map_state)],
        };
        let components = (0..g - 1)
            .map(|c| {
                let (k1_mean, k1_interval) = mean_interval(samples.iter().map(|s| s.kin[c].k1));
                let (k2_mean, k2_interval) = mean_interval(samples.iter().map(|s| s.kin[c].k2));
                let frac = |pick: fn(&SpilloverFractions) -> f64| {
                    samples[0]
                        .fractions
                        .is_some()
                        .then(|| mean_interval(samples.iter().map(|s| pick(&s.fractions.as_ref().unwrap()[c]))))
                };
                ComponentSummary {
                    k1_mean,
                    k1_interval,
                    k2_mean,
                    k2_interval,
                    f_lv: frac(|f| f.f_lv),
                    f_rv: frac(|f| f.f_rv),
                }
            })
            .collect();
        let mut membership = vec![vec![0.0; g]; n_voxels];
        for s in &samples {
            for (i, &l) in s.z.iter().enumerate() {
                membership[i][l] += 1.0;
            }
        }
        let m = samples.len() as f64;
        membership.iter_mut().flatten().for_each(|v| *v /= m);
        let (beta_mean, beta_interval) = mean_interval(samples.iter().map(|s| s.beta));
        Self {
            g,
            mode: cfg.mode,
            components,
            noise_mean: mean_vec(samples.iter().map(|s| s.noise_mean.clone())),
            sigma2: mean_vec(samples.iter().map(|s| s.sigma2.clone())),
            beta_mean,
            beta_interval,
            membership,
            map_state,
            map_log_posterior,
            map_iteration,
            acceptance,
            samples,
            beta_trace,
        }
    }

    /// Per-voxel parameters from the MAP state; noise voxels get `K1 = k2 = 0`.
    pub fn map_parametric(&self, img: &DynamicImage, tac: &TacModel) -> ParametricMap {
        let s = &self.map_state;
        let mut means: Vec<Vec<f64>> = s
            .kin
            .iter()
            .enumerate()
            .map(|(c, &p)| tac.eval(p, s.fraction(c)))
            .collect();
        means.push(s.noise_mean.clone());
        let entries = s
            .z
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let wrss = img
                    .tac(i)
                    .iter()
                    .zip(&means[l])
                    .zip(&s.sigma2)
                    .map(|((y, m), v)| (y - m) * (y - m) / v)
                    .sum();
                MapEntry {
                    params: s.kin.get(l).copied().unwrap_or(KineticParams { k1: 0.0, k2: 0.0 }),
                    wrss,
                    status: FitStatus::Converged,
                }
            })
            .collect();
        ParametricMap {
            dims: img.dims(),
            entries,
        }
    }

    /// Per-voxel membership probabilities as a `G`-frame image.
    pub fn membership_image(&self, img: &DynamicImage) -> Result<DynamicImage> {
        DynamicImage::new(img.dims(), self.g, self.membership.iter().flatten().copied().collect())
    }
}

/// Metropolis-within-Gibbs run from [`initialize`].
pub fn run_mcmc(
    img: &DynamicImage,
    tac: &TacModel,
    priors: &Priors,
    scales: &ProposalScales,
    cfg: &McmcConfig,
    table: &PartitionTable,
) -> Result<PosteriorSummary> {
    cfg.validate()?;
    scales.validate(tac.has_spillover())?;
    let graph = NeighborGraph::new(img.dims());
    table.check(&graph, cfg.g)?;
    let model = SmmModel::new(img, tac, &graph, table, priors)?;
    if let Some(b) = cfg.fixed_beta {
        if !priors.beta_in_support(b) {
            return Err(Error::invalid(format!("fixed beta {b} outside the prior support")));
        }
    }
    let init = initialize(img, tac, priors, cfg)?;
    run_chain(model, init, scales, cfg)
}

/// Runs the sampler from an explicit starting state.
pub fn run_chain(
    model: SmmModel<'_>,
    init: ChainState,
    scales: &ProposalScales,
    cfg: &McmcConfig,
) -> Result<PosteriorSummary> {
    cfg.validate()?;
    let mut chain = Chain::new(model, init)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best = chain.state.clone();
    let mut best_lp = chain.log_posterior();
    let mut best_iter = 0;
    let mut samples = Vec::new();
    let mut beta_trace = Vec::with_capacity(cfg.iterations);
    for it in 1..=cfg.iterations {
        chain.sweep(scales, cfg.fixed_beta.is_none(), &mut rng);
        let lp = chain.log_posterior();
        if lp > best_lp {
            best_lp = lp;
            best = chain.state.clone();
            best_iter = it;
        }
        beta_trace.push(chain.state.beta);
        if cfg.mode == McmcMode::FullPosterior && it > cfg.burn_in && (it - cfg.burn_in).is_multiple_of(cfg.thin) {
            samples.push(Sample::of(it, &chain.state));
        }
    }
    if !best_lp.is_finite() {
        return Err(Error::Numerical("log posterior never became finite".into()));
    }
    let acceptance = chain
        .counts
        .rates()
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    Ok(PosteriorSummary::build(
        cfg,
        model.img.voxel_count(),
        &samples,
        best,
        best_lp,
        best_iter,
        acceptance,
        beta_trace,
    ))
}

/// Free parameters counted in the BIC penalty: kinetic parameters, noise
/// means, variances and β.
pub fn degrees_of_freedom(g: usize, frames: usize, spillover: bool) -> usize {
    let per = if spillover { 4 } else { 2 };
    per * (g - 1) + 2 * frames + 1
}

/// `−2 log f + DF (ln n − ln 2π)`.
pub fn bic_value(loglik: f64, df: usize, n: usize) -> f64 {
    -2.0 * loglik + df as f64 * ((n as f64).ln() - (2.0 * std::f64::consts::PI).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BicRow {
    #[serde(rename = "G")]
    pub g: usize,
    pub loglik: f64,
    #[serde(rename = "DF")]
    pub df: usize,
    #[serde(rename = "BIC")]
    pub bic: f64,
}

/// BIC of a MAP state; the likelihood includes the Potts term.
pub fn bic(model: &SmmModel<'_>, map: &ChainState) -> Result<BicRow> {
    let loglik = model.log_likelihood(map)?;
    let df = degrees_of_freedom(model.g(), model.frames(), model.tac.has_spillover());
    Ok(BicRow {
        g: model.g(),
        loglik,
        df,
        bic: bic_value(loglik, df, model.img.voxel_count()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best_g: usize,
    pub rows: Vec<BicRow>,
    /// MAP-only summaries in the same order as `rows`.
    #[serde(skip)]
    pub summaries: Vec<PosteriorSummary>,
}

/// Seed of the chain for component count `g` within a sweep seeded by `seed`.
pub fn sweep_seed(seed: u64, g: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(g as u64);
    rng.next_u64()
}

/// One MAP-only chain per `G`, run in parallel; smallest BIC wins.
pub fn select_components<F>(
    img: &DynamicImage,
    tac: &TacModel,
    priors: &Priors,
    scales: &ProposalScales,
    base: &McmcConfig,
    g_range: std::ops::RangeInclusive<usize>,
    table_for: F,
) -> Result<Selection>
where
    F: Fn(usize) -> Result<PartitionTable> + Sync,
{
    if g_range.is_empty() || *g_range.start() < 2 {
        return Err(Error::invalid("G range must be non-empty and start at 2 or more"));
    }
    let graph = NeighborGraph::new(img.dims());
    let results: Vec<(BicRow, PosteriorSummary)> = g_range
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|g| {
            let table = table_for(g)?;
            let cfg = McmcConfig {
                g,
                mode: McmcMode::MapOnly,
                seed: sweep_seed(base.seed, g),
                ..base.clone()
            };
            let summary = run_mcmc(img, tac, priors, scales, &cfg, &table)?;
            let model = SmmModel::new(img, tac, &graph, &table, priors)?;
            Ok((bic(&model, &summary.map_state)?, summary))
        })
        .collect::<Result<_>>()?;
    let best_g = results
        .iter()
        .min_by(|a, b| a.0.bic.total_cmp(&b.0.bic))
        .map(|r| r.0.g)
        .unwrap();
    let (rows, summaries) = results.into_iter().unzip();
    Ok(Selection {
        best_g,
        rows,
        summaries,
    })
}

/// `iter,component,K1,k2[,f_lv,f_rv]`, components numbered from 1.
pub fn write_samples_csv<W: std::io::Write>(w: W, samples: &[Sample]) -> Result<()> {
    let mut wtr = crate::io::csv_writer(w);
    let spill = samples.first().is_some_and(|s| s.fractions.is_some());
    let mut header = vec!["iter", "component", "K1", "k2"];
    if spill {
        header.extend(["f_lv", "f_rv"]);
    }
    wtr.write_record(&header)?;
    for s in samples {
        for (c, p) in s.kin.iter().enumerate() {
            let mut row = vec![s.iteration.to_string(), (c + 1).to_string(), p.k1.to_string(), p.k2.to_string()];
            if let Some(f) = s.fractions.as_ref().map(|f| f[c]) {
                row.extend([f.f_lv.to_string(), f.f_rv.to_string()]);
            }
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_beta_trace_csv<W: std::io::Write>(w: W, trace: &[f64]) -> Result<()> {
    let mut wtr = crate::io::csv_writer(w);
    wtr.write_record(["iter", "beta"])?;
    for (i, b) in trace.iter().enumerate() {
        wtr.write_record([(i + 1).to_string(), b.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_bic_csv<W: std::io::Write>(w: W, rows: &[BicRow]) -> Result<()> {
    let mut wtr = crate::io::csv_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}
