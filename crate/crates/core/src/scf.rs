//! Voxelwise weighted nonlinear least squares.
//!
//! Each voxel TAC is fitted independently by a projected Levenberg-Marquardt
//! iteration: forward-difference Jacobian, Marquardt diagonal scaling, and box
//! constraints enforced by projecting every trial point. Parameters pinned at
//! a bound with the gradient pointing outward are frozen for the step.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{FitStatus, MapEntry, ParametricMap};
use crate::kinetics::{FrameScheme, KineticParams, SpilloverFractions, TacModel};
use crate::phantom::DynamicImage;

/// Relative step of the forward-difference Jacobian.
pub const FD_REL_STEP: f64 = 1e-6;
const FD_MIN_SCALE: f64 = 1e-3;
const MAX_DAMPING: f64 = 1e20;

/// Box constraints; an unbounded end is written as `null` in JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    #[serde(with = "open_interval")]
    pub k1: (f64, f64),
    #[serde(with = "open_interval")]
    pub k2: (f64, f64),
    #[serde(default = "unit_interval", with = "open_interval")]
    pub f_lv: (f64, f64),
    #[serde(default = "unit_interval", with = "open_interval")]
    pub f_rv: (f64, f64),
}

mod open_interval {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(b: &(f64, f64), s: S) -> Result<S::Ok, S::Error> {
        let end = |v: f64| v.is_finite().then_some(v);
        (end(b.0), end(b.1)).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(f64, f64), D::Error> {
        let (lo, hi) = <(Option<f64>, Option<f64>)>::deserialize(d)?;
        Ok((lo.unwrap_or(f64::NEG_INFINITY), hi.unwrap_or(f64::INFINITY)))
    }
}

fn unit_interval() -> (f64, f64) {
    (0.0, 1.0)
}

impl Bounds {
    /// `K1 >= 0`, `k2 in [0, 5]`.
    pub fn simulation() -> Self {
        Self {
            k1: (0.0, f64::INFINITY),
            k2: (0.0, 5.0),
            f_lv: unit_interval(),
            f_rv: unit_interval(),
        }
    }

    /// `K1 in [0, 1]`, `k2 in [0, 5]`, fractions in `[0, 1]`.
    pub fn spillover() -> Self {
        Self {
            k1: (0.0, 1.0),
            ..Self::simulation()
        }
    }

    fn lower_upper(&self, m: usize) -> (Vec<f64>, Vec<f64>) {
        let all = [self.k1, self.k2, self.f_lv, self.f_rv];
        (all[..m].iter().map(|b| b.0).collect(), all[..m].iter().map(|b| b.1).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Per-frame weights; empty means unit weights.
    pub weights: Vec<f64>,
    pub bounds: Bounds,
    pub init: KineticParams,
    pub init_fractions: SpilloverFractions,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub damping_init: f64,
    pub damping_up: f64,
    pub damping_down: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            weights: Vec::new(),
            bounds: Bounds::simulation(),
            init: KineticParams { k1: 0.5, k2: 0.1 },
            init_fractions: SpilloverFractions { f_lv: 0.1, f_rv: 0.05 },
            max_iter: 200,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            damping_init: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
        }
    }
}

impl FitConfig {
    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = weights;
        self
    }

    /// Weights resolved against `t` frames.
    pub fn resolved_weights(&self, t: usize) -> Result<Vec<f64>> {
        if self.weights.is_empty() {
            return Ok(vec![1.0; t]);
        }
        if self.weights.len() != t {
            return Err(Error::invalid(format!(
                "{} weights for {t} frames",
                self.weights.len()
            )));
        }
        Ok(self.weights.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        let b = &self.bounds;
        for (name, (lo, hi)) in [("K1", b.k1), ("k2", b.k2), ("f_lv", b.f_lv), ("f_rv", b.f_rv)] {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(Error::invalid(format!("bounds for {name}: lower {lo} > upper {hi}")));
            }
        }
        for (name, v) in [("grad_tol", self.grad_tol), ("step_tol", self.step_tol)] {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("{name} must be > 0")));
            }
        }
        if !(self.damping_init > 0.0 && self.damping_up > 1.0 && self.damping_down > 0.0 && self.damping_down < 1.0)
        {
            return Err(Error::invalid(
                "damping must satisfy init > 0, up > 1, 0 < down < 1",
            ));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelFit {
    pub params: KineticParams,
    pub fractions: Option<SpilloverFractions>,
    pub wrss: f64,
    pub iterations: usize,
    pub status: FitStatus,
}

impl VoxelFit {
    pub(crate) fn failed() -> Self {
        Self {
            params: KineticParams { k1: f64::NAN, k2: f64::NAN },
            fractions: None,
            wrss: f64::NAN,
            iterations: 0,
            status: FitStatus::Failed,
        }
    }

    /// Parameters as `[K1, k2]` or `[K1, k2, f_lv, f_rv]`.
    pub fn param_vec(&self) -> Vec<f64> {
        let mut p = vec![self.params.k1, self.params.k2];
        if let Some(f) = self.fractions {
            p.push(f.f_lv);
            p.push(f.f_rv);
        }
        p
    }

    pub fn map_entry(&self) -> MapEntry {
        MapEntry {
            params: self.params,
            wrss: self.wrss,
            status: self.status,
        }
    }
}

/// `w_t = (Δτ_t)^2 / counts_t` with durations in seconds; zero-count frames get zero weight.
pub fn weights_from_counts(frames: &FrameScheme, counts: &[f64]) -> Result<Vec<f64>> {
    if counts.len() != frames.len() {
        return Err(Error::invalid(format!(
            "{} frame counts for {} frames",
            counts.len(),
            frames.len()
        )));
    }
    frames
        .durations()
        .iter()
        .zip(counts)
        .map(|(d, &c)| {
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::invalid(format!("frame count {c} must be finite and >= 0")));
            }
            let secs = d * 60.0;
            Ok(if c == 0.0 { 0.0 } else { secs * secs / c })
        })
        .collect()
}

/// Counts proxy for an image: total activity times duration in each frame.
pub fn image_frame_counts(img: &DynamicImage, frames: &FrameScheme) -> Vec<f64> {
    let mut totals = vec![0.0; img.frame_count()];
    for tac in img.tacs() {
        for (s, v) in totals.iter_mut().zip(tac) {
            *s += v;
        }
    }
    totals.iter().zip(frames.durations()).map(|(s, d)| s * d * 60.0).collect()
}

/// A single weighted least-squares problem.
pub struct LmProblem<'a> {
    model: &'a TacModel,
    y: &'a [f64],
    sqrt_w: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl<'a> LmProblem<'a> {
    pub fn new(model: &'a TacModel, y: &'a [f64], cfg: &FitConfig) -> Result<Self> {
        cfg.validate()?;
        let t = model.frame_count();
        if y.len() != t {
            return Err(Error::invalid(format!("TAC has {} frames, model has {t}", y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("TAC contains non-finite values"));
        }
        let w = cfg.resolved_weights(t)?;
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::invalid("all weights are zero"));
        }
        let (lower, upper) = cfg.bounds.lower_upper(model.param_count());
        Ok(Self {
            model,
            y,
            sqrt_w: w.iter().map(|v| v.sqrt()).collect(),
            lower,
            upper,
        })
    }

    pub fn dim(&self) -> usize {
        self.model.param_count()
    }

    fn unpack(&self, p: &[f64]) -> (KineticParams, Option<SpilloverFractions>) {
        let k = KineticParams { k1: p[0], k2: p[1] };
        let f = (p.len() == 4).then(|| SpilloverFractions { f_lv: p[2], f_rv: p[3] });
        (k, f)
    }

    /// Weighted residuals `sqrt(w) * (model - y)`.
    pub fn residuals_into(&self, p: &[f64], out: &mut [f64]) {
        let (k, f) = self.unpack(p);
        self.model.eval_into(k, f, out);
        for ((o, y), sw) in out.iter_mut().zip(self.y).zip(&self.sqrt_w) {
            *o = sw * (*o - y);
        }
    }

    pub fn objective(&self, p: &[f64]) -> f64 {
        let mut r = vec![0.0; self.y.len()];
        self.residuals_into(p, &mut r);
        r.iter().map(|v| v * v).sum()
    }

    /// Project onto the box, then onto `f_lv + f_rv <= 1` when fractions are free.
    pub fn project(&self, p: &mut [f64]) {
        for ((v, lo), hi) in p.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
        if p.len() == 4 && p[2] + p[3] > 1.0 {
            let excess = 0.5 * (p[2] + p[3] - 1.0);
            p[2] = (p[2] - excess).max(0.0);
            p[3] = (1.0 - p[2]).min(p[3] - excess).max(0.0);
        }
    }

    /// Forward-difference Jacobian of the weighted residuals (`T x m`, column-major).
    /// Steps go backward where a forward step would leave the box.
    pub fn jacobian(&self, p: &[f64], base: &[f64]) -> DMatrix<f64> {
        let t = self.y.len();
        let m = p.len();
        let mut jac = DMatrix::zeros(t, m);
        let mut shifted = vec![0.0; t];
        let mut q = p.to_vec();
        for j in 0..m {
            let mut h = FD_REL_STEP * p[j].abs().max(FD_MIN_SCALE);
            if p[j] + h > self.upper[j] {
                h = -h;
            }
            q[j] = p[j] + h;
            self.residuals_into(&q, &mut shifted);
            for r in 0..t {
                jac[(r, j)] = (shifted[r] - base[r]) / h;
            }
            q[j] = p[j];
        }
        jac
    }

    fn at_bound(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .any(|((v, lo), hi)| v <= lo || v >= hi)
    }

    /// Run the iteration from `start`; `trace` receives the objective after
    /// the initial evaluation and after every accepted step.
    pub fn solve(&self, start: &[f64], cfg: &FitConfig, trace: Option<&mut Vec<f64>>) -> Result<(Vec<f64>, f64, usize, FitStatus)> {
        let m = self.dim();
        let t = self.y.len();
        let mut p = start.to_vec();
        self.project(&mut p);
        let mut resid = vec![0.0; t];
        self.residuals_into(&p, &mut resid);
        let mut f = resid.iter().map(|v| v * v).sum::<f64>();
        if !f.is_finite() {
            return Err(Error::invalid("objective is not finite at the initial point"));
        }
        let mut local_trace = Vec::new();
        let trace = trace.unwrap_or(&mut local_trace);
        trace.push(f);

        let mut lambda = cfg.damping_init;
        let mut trial = vec![0.0; m];
        let mut trial_resid = vec![0.0; t];
        let mut status = FitStatus::MaxIter;
        let mut iterations = 0;

        while iterations < cfg.max_iter {
            if f == 0.0 {
                status = FitStatus::Converged;
                break;
            }
            let jac = self.jacobian(&p, &resid);
            let r = DVector::from_column_slice(&resid);
            let grad = jac.tr_mul(&r);
            let normal = jac.tr_mul(&jac);

            let free: Vec<usize> = (0..m)
                .filter(|&j| {
                    let pinned_low = p[j] <= self.lower[j] && grad[j] > 0.0;
                    let pinned_high = p[j] >= self.upper[j] && grad[j] < 0.0;
                    !(pinned_low || pinned_high)
                })
                .collect();
            let scaled_grad = free
                .iter()
                .map(|&j| (grad[j] * p[j].abs().max(FD_MIN_SCALE)).abs())
                .fold(0.0, f64::max)
                / f.max(f64::MIN_POSITIVE);
            if free.is_empty() || scaled_grad <= cfg.grad_tol {
                status = FitStatus::Converged;
                break;
            }

            let k = free.len();
            let diag_floor = free
                .iter()
                .map(|&j| normal[(j, j)])
                .fold(0.0, f64::max)
                * 1e-12;
            let mut accepted = false;
            while lambda <= MAX_DAMPING {
                let mut a = DMatrix::zeros(k, k);
                let mut b = DVector::zeros(k);
                for (ri, &jr) in free.iter().enumerate() {
                    b[ri] = -grad[jr];
                    for (ci, &jc) in free.iter().enumerate() {
                        a[(ri, ci)] = normal[(jr, jc)];
                    }
                    a[(ri, ri)] += lambda * normal[(jr, jr)].max(diag_floor).max(f64::MIN_POSITIVE);
                }
                let step = match a.cholesky() {
                    Some(ch) => ch.solve(&b),
                    None => {
                        lambda *= cfg.damping_up;
                        continue;
                    }
                };
                trial.copy_from_slice(&p);
                for (ri, &j) in free.iter().enumerate() {
                    trial[j] += step[ri];
                }
                self.project(&mut trial);
                self.residuals_into(&trial, &mut trial_resid);
                let f_new = trial_resid.iter().map(|v| v * v).sum::<f64>();
                if f_new.is_finite() && f_new < f {
                    let step_norm = trial.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                    p.copy_from_slice(&trial);
                    resid.copy_from_slice(&trial_resid);
                    f = f_new;
                    trace.push(f);
                    lambda = (lambda * cfg.damping_down).max(1e-15);
                    accepted = true;
                    iterations += 1;
                    if step_norm <= cfg.step_tol * (p_norm + cfg.step_tol) {
                        status = FitStatus::Converged;
                    }
                    break;
                }
                lambda *= cfg.damping_up;
            }
            if !accepted {
                // No descent direction left at working precision.
                status = FitStatus::Converged;
                break;
            }
            if status == FitStatus::Converged {
                break;
            }
        }
        if status == FitStatus::Converged && self.at_bound(&p) {
            status = FitStatus::AtBound;
        }
        Ok((p, f, iterations, status))
    }
}

pub(crate) fn start_point(model: &TacModel, cfg: &FitConfig) -> Vec<f64> {
    let mut p = vec![cfg.init.k1, cfg.init.k2];
    if model.has_spillover() {
        p.push(cfg.init_fractions.f_lv);
        p.push(cfg.init_fractions.f_rv);
    }
    p
}

fn to_fit(p: &[f64], wrss: f64, iterations: usize, status: FitStatus) -> VoxelFit {
    VoxelFit {
        params: KineticParams { k1: p[0], k2: p[1] },
        fractions: (p.len() == 4).then(|| SpilloverFractions { f_lv: p[2], f_rv: p[3] }),
        wrss,
        iterations,
        status,
    }
}

/// Fit one TAC.
pub fn lm_fit_voxel(y: &[f64], model: &TacModel, cfg: &FitConfig) -> Result<VoxelFit> {
    let problem = LmProblem::new(model, y, cfg)?;
    let (p, f, it, status) = problem.solve(&start_point(model, cfg), cfg, None)?;
    Ok(to_fit(&p, f, it, status))
}

/// Fit one TAC starting from `start` (`[K1, k2]` or `[K1, k2, f_lv, f_rv]`).
pub fn lm_fit_voxel_from(y: &[f64], model: &TacModel, cfg: &FitConfig, start: &[f64]) -> Result<VoxelFit> {
    if start.len() != model.param_count() {
        return Err(Error::invalid(format!(
            "start has {} parameters, model needs {}",
            start.len(),
            model.param_count()
        )));
    }
    let problem = LmProblem::new(model, y, cfg)?;
    let (p, f, it, status) = problem.solve(start, cfg, None)?;
    Ok(to_fit(&p, f, it, status))
}

/// Fit one TAC, also returning the objective after every accepted step.
pub fn lm_fit_voxel_traced(y: &[f64], model: &TacModel, cfg: &FitConfig) -> Result<(VoxelFit, Vec<f64>)> {
    let problem = LmProblem::new(model, y, cfg)?;
    let mut trace = Vec::new();
    let (p, f, it, status) = problem.solve(&start_point(model, cfg), cfg, Some(&mut trace))?;
    Ok((to_fit(&p, f, it, status), trace))
}

/// Fit every voxel independently. Failures are reported per voxel.
pub fn fit_image(img: &DynamicImage, model: &TacModel, cfg: &FitConfig) -> Vec<VoxelFit> {
    (0..img.voxel_count())
        .into_par_iter()
        .map(|i| lm_fit_voxel(img.tac(i), model, cfg).unwrap_or_else(|_| VoxelFit::failed()))
        .collect()
}

pub fn fits_to_map(img: &DynamicImage, fits: &[VoxelFit]) -> ParametricMap {
    ParametricMap {
        dims: img.dims(),
        entries: fits.iter().map(VoxelFit::map_entry).collect(),
    }
}
