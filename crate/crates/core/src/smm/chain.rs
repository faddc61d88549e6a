use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ChainState, ProposalScales, SmmModel};
use crate::error::{Error, Result};
use crate::kinetics::{KineticParams, SpilloverFractions};
use crate::potts::{energy_unchecked, sample_index};

/// Accepted and proposed move counts per update type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceCounts {
    pub k1: (u64, u64),
    pub k2: (u64, u64),
    pub f_lv: (u64, u64),
    pub f_rv: (u64, u64),
    pub noise_mean: (u64, u64),
    pub beta: (u64, u64),
}

fn rate((a, n): (u64, u64)) -> Option<f64> {
    (n > 0).then(|| a as f64 / n as f64)
}

impl AcceptanceCounts {
    /// `(name, rate)` for every update type that proposed at least once.
    pub fn rates(&self) -> Vec<(&'static str, f64)> {
        [
            ("K1", self.k1),
            ("k2", self.k2),
            ("f_lv", self.f_lv),
            ("f_rv", self.f_rv),
            ("noise_mean", self.noise_mean),
            ("beta", self.beta),
        ]
        .into_iter()
        .filter_map(|(name, c)| rate(c).map(|r| (name, r)))
        .collect()
    }
}

fn tally(c: &mut (u64, u64), accepted: bool) {
    c.1 += 1;
    if accepted {
        c.0 += 1;
    }
}

#[derive(Debug, Clone, Copy)]
enum Fraction {
    Lv,
    Rv,
}

/// MCMC state plus the per-component sufficient statistics that make each
/// Metropolis ratio cost `O(T)`.
#[derive(Debug, Clone)]
pub struct Chain<'a> {
    pub model: SmmModel<'a>,
    pub state: ChainState,
    pub counts: AcceptanceCounts,
    means: Vec<Vec<f64>>,
    n: Vec<usize>,
    s1: Vec<Vec<f64>>,
    s2: Vec<Vec<f64>>,
}

impl<'a> Chain<'a> {
    pub fn new(model: SmmModel<'a>, state: ChainState) -> Result<Self> {
        let lp = model.log_posterior(&state)?;
        if !lp.is_finite() {
            return Err(Error::Numerical(format!(
                "log posterior at the starting state is {lp}; check prior bounds and variances"
            )));
        }
        let g = model.g();
        let t = model.frames();
        let mut chain = Self {
            means: model.component_means(&state),
            model,
            state,
            counts: AcceptanceCounts::default(),
            n: vec![0; g],
            s1: vec![vec![0.0; t]; g],
            s2: vec![vec![0.0; t]; g],
        };
        chain.rebuild_stats();
        Ok(chain)
    }

    fn rebuild_stats(&mut self) {
        let t = self.model.frames();
        let g = self.model.g();
        self.n = vec![0; g];
        self.s1 = vec![vec![0.0; t]; g];
        self.s2 = vec![vec![0.0; t]; g];
        for (i, y) in self.model.img.tacs().enumerate() {
            let l = self.state.z[i];
            self.n[l] += 1;
            for k in 0..t {
                self.s1[l][k] += y[k];
                self.s2[l][k] += y[k] * y[k];
            }
        }
    }

    pub fn component_sizes(&self) -> &[usize] {
        &self.n
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn log_posterior(&self) -> f64 {
        self.model
            .log_posterior(&self.state)
            .unwrap_or(f64::NEG_INFINITY)
    }

    /// Change in the Gaussian log-likelihood when component `g`'s mean moves
    /// from its current value to `new`.
    fn delta_loglik(&self, g: usize, new: &[f64]) -> f64 {
        let n = self.n[g] as f64;
        if n == 0.0 {
            return 0.0;
        }
        let old = &self.means[g];
        (0..new.len())
            .map(|t| {
                let d = new[t] - old[t];
                d * (2.0 * self.s1[g][t] - n * (old[t] + new[t])) / (2.0 * self.state.sigma2[t])
            })
            .sum()
    }

    fn kinetic_log_alpha(&self, g: usize, p: KineticParams, f: Option<SpilloverFractions>) -> (f64, Vec<f64>) {
        let pri = self.model.priors;
        if !pri.kinetic_in_support(p) || f.is_some_and(|f| !pri.fractions_in_support(f)) {
            return (f64::NEG_INFINITY, Vec::new());
        }
        let mu = self.model.tac.eval(p, f);
        (self.delta_loglik(g, &mu), mu)
    }

    /// Log acceptance ratio for moving component `g`'s `K1` to `k1`.
    pub fn log_alpha_k1(&self, g: usize, k1: f64) -> f64 {
        let p = KineticParams { k1, ..self.state.kin[g] };
        self.kinetic_log_alpha(g, p, self.state.fraction(g)).0
    }

    pub fn log_alpha_k2(&self, g: usize, k2: f64) -> f64 {
        let p = KineticParams { k2, ..self.state.kin[g] };
        self.kinetic_log_alpha(g, p, self.state.fraction(g)).0
    }

    pub fn log_alpha_noise_mean(&self, t: usize, v: f64) -> f64 {
        if !self.model.priors.noise_mean_in_support(v) {
            return f64::NEG_INFINITY;
        }
        let g = self.state.noise_component();
        let n = self.n[g] as f64;
        let old = self.state.noise_mean[t];
        (v - old) * (2.0 * self.s1[g][t] - n * (old + v)) / (2.0 * self.state.sigma2[t])
    }

    pub fn log_alpha_beta(&self, beta: f64) -> f64 {
        let table = self.model.table;
        if !self.model.priors.beta_in_support(beta) || beta > table.beta_max() {
            return f64::NEG_INFINITY;
        }
        let u = energy_unchecked(&self.state.z, self.model.graph) as f64;
        let (Ok(new), Ok(old)) = (table.log_c_at(beta), table.log_c_at(self.state.beta)) else {
            return f64::NEG_INFINITY;
        };
        (beta - self.state.beta) * u - (new - old)
    }

    fn accept<R: Rng + ?Sized>(log_alpha: f64, rng: &mut R) -> bool {
        if log_alpha >= 0.0 {
            return true;
        }
        log_alpha > f64::NEG_INFINITY && rng.random::<f64>().ln() < log_alpha
    }

    fn step<R: Rng + ?Sized>(sd: f64, rng: &mut R) -> f64 {
        let e: f64 = StandardNormal.sample(rng);
        sd * e
    }

    fn try_kinetic<R: Rng + ?Sized>(
        &mut self,
        g: usize,
        p: KineticParams,
        f: Option<SpilloverFractions>,
        rng: &mut R,
    ) -> bool {
        let (la, mu) = self.kinetic_log_alpha(g, p, f);
        let ok = Self::accept(la, rng);
        if ok {
            self.state.kin[g] = p;
            if let (Some(fr), Some(f)) = (self.state.fractions.as_mut(), f) {
                fr[g] = f;
            }
            self.means[g] = mu;
        }
        ok
    }

    /// Random-walk update of every kinetic component's `K1`.
    pub fn update_k1<R: Rng + ?Sized>(&mut self, scales: &ProposalScales, rng: &mut R) {
        for g in 0..self.state.kin.len() {
            let cur = self.state.kin[g];
            let p = KineticParams { k1: cur.k1 + Self::step(scales.sd_k1, rng), ..cur };
            let ok = self.try_kinetic(g, p, self.state.fraction(g), rng);
            tally(&mut self.counts.k1, ok);
        }
    }

    pub fn update_k2<R: Rng + ?Sized>(&mut self, scales: &ProposalScales, rng: &mut R) {
        for g in 0..self.state.kin.len() {
            let cur = self.state.kin[g];
            let p = KineticParams { k2: cur.k2 + Self::step(scales.sd_k2, rng), ..cur };
            let ok = self.try_kinetic(g, p, self.state.fraction(g), rng);
            tally(&mut self.counts.k2, ok);
        }
    }

    /// Random-walk updates of `f_lv` then `f_rv`; no-op without spill-over.
    pub fn update_fractions<R: Rng + ?Sized>(&mut self, scales: &ProposalScales, rng: &mut R) {
        if self.state.fractions.is_none() {
            return;
        }
        for which in [Fraction::Lv, Fraction::Rv] {
            for g in 0..self.state.kin.len() {
                let cur = self.state.fraction(g).unwrap();
                let mut f = cur;
                match which {
                    Fraction::Lv => f.f_lv += Self::step(scales.sd_flv.unwrap_or(0.01), rng),
                    Fraction::Rv => f.f_rv += Self::step(scales.sd_frv.unwrap_or(0.01), rng),
                }
                let ok = self.try_kinetic(g, self.state.kin[g], Some(f), rng);
                match which {
                    Fraction::Lv => tally(&mut self.counts.f_lv, ok),
                    Fraction::Rv => tally(&mut self.counts.f_rv, ok),
                }
            }
        }
    }

    pub fn log_alpha_fractions(&self, g: usize, f: SpilloverFractions) -> f64 {
        self.kinetic_log_alpha(g, self.state.kin[g], Some(f)).0
    }

    /// Per-frame random-walk update of the noise component's mean.
    pub fn update_noise_mean<R: Rng + ?Sized>(&mut self, scales: &ProposalScales, rng: &mut R) {
        let g = self.state.noise_component();
        for t in 0..self.state.noise_mean.len() {
            let v = self.state.noise_mean[t] + Self::step(scales.sd_noise_mean, rng);
            let ok = Self::accept(self.log_alpha_noise_mean(t, v), rng);
            if ok {
                self.state.noise_mean[t] = v;
                self.means[g][t] = v;
            }
            tally(&mut self.counts.noise_mean, ok);
        }
    }

    /// Shape and rate of the inverse-gamma full conditional of each frame variance.
    pub fn sigma_conditional(&self) -> Vec<(f64, f64)> {
        let (a, b) = self.model.priors.sigma_ig;
        let t = self.model.frames();
        let mut ss = vec![0.0; t];
        for (i, y) in self.model.img.tacs().enumerate() {
            let mu = &self.means[self.state.z[i]];
            for k in 0..t {
                let r = y[k] - mu[k];
                ss[k] += r * r;
            }
        }
        let n = self.model.img.voxel_count() as f64;
        ss.into_iter().map(|s| (a + 0.5 * n, b + 0.5 * s)).collect()
    }

    /// Exact Gibbs draw of every frame variance.
    pub fn update_sigma<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for (t, (shape, rate)) in self.sigma_conditional().into_iter().enumerate() {
            let gamma = Gamma::new(shape, 1.0 / rate).expect("inverse-gamma parameters are positive");
            let draw: f64 = gamma.sample(rng);
            self.state.sigma2[t] = (1.0 / draw).max(f64::MIN_POSITIVE);
        }
    }

    /// Normalized full conditional of voxel `i`'s label given current neighbors.
    pub fn z_conditional(&self, i: usize) -> Vec<f64> {
        let mut w = self.z_log_weights(i);
        let m = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in w.iter_mut() {
            *v = (*v - m).exp();
            total += *v;
        }
        w.iter_mut().for_each(|v| *v /= total);
        w
    }

    fn z_log_weights(&self, i: usize) -> Vec<f64> {
        let g = self.model.g();
        let y = self.model.img.tac(i);
        let mut agree = vec![0.0; g];
        for &j in self.model.graph.neighbors(i) {
            agree[self.state.z[j]] += 1.0;
        }
        (0..g)
            .map(|c| {
                let mu = &self.means[c];
                let ll: f64 = (0..y.len())
                    .map(|t| {
                        let r = y[t] - mu[t];
                        -0.5 * r * r / self.state.sigma2[t]
                    })
                    .sum();
                ll + self.state.beta * agree[c]
            })
            .collect()
    }

    fn move_voxel(&mut self, i: usize, to: usize) {
        let from = self.state.z[i];
        if from == to {
            return;
        }
        let y = self.model.img.tac(i);
        self.n[from] -= 1;
        self.n[to] += 1;
        for (t, &v) in y.iter().enumerate() {
            self.s1[from][t] -= v;
            self.s2[from][t] -= v * v;
            self.s1[to][t] += v;
            self.s2[to][t] += v * v;
        }
        self.state.z[i] = to;
    }

    /// Raster sweep of single-site Gibbs label draws.
    pub fn update_z<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for i in 0..self.state.z.len() {
            let w = self.z_conditional(i);
            let to = sample_index(&w, 1.0, rng);
            self.move_voxel(i, to);
        }
        // keep the running sums from drifting
        self.rebuild_stats();
    }

    pub fn update_beta<R: Rng + ?Sized>(&mut self, scales: &ProposalScales, rng: &mut R) {
        let b = self.state.beta + Self::step(scales.sd_beta, rng);
        let ok = Self::accept(self.log_alpha_beta(b), rng);
        if ok {
            self.state.beta = b;
        }
        tally(&mut self.counts.beta, ok);
    }

    /// One full iteration in the order K1, k2, fractions, noise mean, σ², z, β.
    pub fn sweep<R: Rng + ?Sized>(&mut self, scales: &ProposalScales, sample_beta: bool, rng: &mut R) {
        self.update_k1(scales, rng);
        self.update_k2(scales, rng);
        self.update_fractions(scales, rng);
        self.update_noise_mean(scales, rng);
        self.update_sigma(rng);
        self.update_z(rng);
        if sample_beta {
            self.update_beta(scales, rng);
        }
    }
}
