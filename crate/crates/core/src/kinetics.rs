//! One-tissue compartment model.
//!
//! The tissue curve is `C_t(t) = K1 * [C_p ⊗ exp(-k2 t)](t)` with a sampled,
//! piecewise-linear input `C_p`. Because the input is linear between samples,
//! both the convolution and its integral over an acquisition frame have closed
//! forms; everything here is evaluated analytically, with no step-size
//! parameter anywhere in the production path.
//!
//! The core identity: on a sub-interval of length `u` where the input is
//! `c + d*s`, the running convolution `I` advances as
//!
//! ```text
//! I(u)      = I(0) P0(u) + c P1(u) + d P2(u)
//! ∫_0^u I   = I(0) P1(u) + c P2(u) + d P3(u)
//! ```
//!
//! where `P0 = exp(-k u)` and `Pn(u) = ∫_0^u (u-x)^(n-1)/(n-1)! exp(-k x) dx`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One acquisition frame, times in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub start: f64,
    pub end: f64,
}

impl Frame {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.start + self.end)
    }
}

/// Ordered, non-overlapping acquisition frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Frame>", into = "Vec<Frame>")]
pub struct FrameScheme {
    frames: Vec<Frame>,
}

impl FrameScheme {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::invalid("frame scheme must contain at least one frame"));
        }
        for (i, f) in frames.iter().enumerate() {
            if !(f.start.is_finite() && f.end.is_finite()) {
                return Err(Error::invalid(format!("frame {i}: non-finite bounds")));
            }
            if f.start >= f.end {
                return Err(Error::invalid(format!(
                    "frame {i}: start {} must be before end {}",
                    f.start, f.end
                )));
            }
            if i > 0 && f.start < frames[i - 1].end {
                return Err(Error::invalid(format!(
                    "frame {i} overlaps or precedes frame {}",
                    i - 1
                )));
            }
        }
        Ok(Self { frames })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(start, end)| Frame { start, end })
                .collect(),
        )
    }

    /// Contiguous frames built from `(count, duration_seconds)` blocks starting at 0.
    pub fn from_blocks(blocks: &[(usize, f64)]) -> Result<Self> {
        let mut frames = Vec::new();
        let mut t = 0.0;
        for &(count, secs) in blocks {
            for _ in 0..count {
                let end = t + secs / 60.0;
                frames.push(Frame { start: t, end });
                t = end;
            }
        }
        Self::new(frames)
    }

    /// 6 x 5 s, 3 x 30 s, 5 x 60 s, 3 x 120 s: a 13 minute acquisition.
    pub fn cardiac_default() -> Self {
        Self::from_blocks(&[(6, 5.0), (3, 30.0), (5, 60.0), (3, 120.0)])
            .expect("built-in frame scheme is valid")
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn durations(&self) -> Vec<f64> {
        self.frames.iter().map(Frame::duration).collect()
    }

    pub fn end(&self) -> f64 {
        self.frames.last().map_or(0.0, |f| f.end)
    }
}

impl TryFrom<Vec<Frame>> for FrameScheme {
    type Error = Error;

    fn try_from(frames: Vec<Frame>) -> Result<Self> {
        Self::new(frames)
    }
}

impl From<FrameScheme> for Vec<Frame> {
    fn from(s: FrameScheme) -> Self {
        s.frames
    }
}

/// A sampled curve evaluated by linear interpolation.
///
/// Zero before the first sample, held at the last value after the final one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InputSamples", into = "InputSamples")]
pub struct InputFunction {
    times: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct InputSamples {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<InputSamples> for InputFunction {
    type Error = Error;

    fn try_from(s: InputSamples) -> Result<Self> {
        Self::new(s.times, s.values)
    }
}

impl From<InputFunction> for InputSamples {
    fn from(f: InputFunction) -> Self {
        InputSamples {
            times: f.times,
            values: f.values,
        }
    }
}

impl InputFunction {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::invalid(format!(
                "input function has {} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.len() < 2 {
            return Err(Error::invalid("input function needs at least 2 samples"));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("input function times must be finite"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "input function times must be strictly increasing",
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(
                "input function values must be finite and non-negative",
            ));
        }
        Ok(Self { times, values })
    }

    /// Constant curve `value` from `t = 0` up to `until`, held afterwards.
    pub fn constant(value: f64, until: f64) -> Result<Self> {
        Self::new(vec![0.0, until], vec![value, value])
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("at least two samples")
    }

    /// Value at `t`; right-continuous at the first sample.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t < self.times[0] {
            return 0.0;
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        // first index with times[j] > t
        let j = self.times.partition_point(|&s| s <= t);
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        let (v0, v1) = (self.values[j - 1], self.values[j]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// Value at `t` and slope on the interval immediately to the right of `t`.
    fn right_piece(&self, t: f64) -> (f64, f64) {
        let n = self.times.len();
        if t < self.times[0] || t >= self.times[n - 1] {
            return (self.eval(t), 0.0);
        }
        let j = self.times.partition_point(|&s| s <= t);
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        let (v0, v1) = (self.values[j - 1], self.values[j]);
        let slope = (v1 - v0) / (t1 - t0);
        (v0 + slope * (t - t0), slope)
    }

    /// The same curve multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.times.clone(),
            self.values.iter().map(|v| v * factor).collect(),
        )
    }

    /// Mean of the curve over each frame (exact for piecewise-linear input).
    pub fn frame_average(&self, frames: &FrameScheme) -> Vec<f64> {
        frames
            .frames()
            .iter()
            .map(|f| self.integral(f.start, f.end) / f.duration())
            .collect()
    }

    /// Exact integral of the interpolant over `[a, b]`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let mut knots: Vec<f64> = vec![a];
        knots.extend(self.times.iter().copied().filter(|&t| t > a && t < b));
        knots.push(b);
        knots
            .windows(2)
            .map(|w| {
                let (value, slope) = self.right_piece(w[0]);
                let h = w[1] - w[0];
                h * (value + 0.5 * slope * h)
            })
            .sum()
    }
}

/// One-tissue rate constants: `K1` in mL/min/cc, `k2` in 1/min.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KineticParams {
    #[serde(rename = "K1")]
    pub k1: f64,
    pub k2: f64,
}

impl KineticParams {
    pub fn new(k1: f64, k2: f64) -> Result<Self> {
        let p = Self { k1, k2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k1.is_finite() && self.k2.is_finite()) {
            return Err(Error::invalid(format!(
                "kinetic parameters must be finite (K1={}, k2={})",
                self.k1, self.k2
            )));
        }
        if self.k1 < 0.0 || self.k2 < 0.0 {
            return Err(Error::invalid(format!(
                "kinetic parameters must be non-negative (K1={}, k2={})",
                self.k1, self.k2
            )));
        }
        Ok(())
    }
}

/// Blood-pool curves driving the spill-over model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpilloverInputs {
    pub c_lv: InputFunction,
    pub c_rv: InputFunction,
    pub plasma_fraction: f64,
}

impl SpilloverInputs {
    pub fn new(c_lv: InputFunction, c_rv: InputFunction, plasma_fraction: f64) -> Result<Self> {
        if !(plasma_fraction > 0.0 && plasma_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "plasma fraction must lie in (0, 1], got {plasma_fraction}"
            )));
        }
        Ok(Self {
            c_lv,
            c_rv,
            plasma_fraction,
        })
    }

    /// Plasma input: the LV curve scaled by the plasma fraction.
    pub fn plasma_input(&self) -> InputFunction {
        self.c_lv
            .scaled(self.plasma_fraction)
            .expect("scaling a valid curve by a positive factor stays valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpilloverFractions {
    pub f_lv: f64,
    pub f_rv: f64,
}

impl SpilloverFractions {
    pub fn new(f_lv: f64, f_rv: f64) -> Result<Self> {
        let f = Self { f_lv, f_rv };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.f_lv) || !in_unit(self.f_rv) {
            return Err(Error::invalid(format!(
                "spill-over fractions must lie in [0, 1] (f_lv={}, f_rv={})",
                self.f_lv, self.f_rv
            )));
        }
        if self.f_lv + self.f_rv > 1.0 {
            return Err(Error::invalid(format!(
                "spill-over fractions sum to {} > 1",
                self.f_lv + self.f_rv
            )));
        }
        Ok(())
    }

    pub fn tissue_fraction(&self) -> f64 {
        1.0 - self.f_lv - self.f_rv
    }
}

/// Below this value of `k2 * u` the kernels are summed as a series.
const SERIES_THRESHOLD: f64 = 0.5;

/// `[P0, P1, P2, P3]` for decay rate `k` over a sub-interval of length `u`.
#[inline]
pub(crate) fn exp_kernels(k: f64, u: f64) -> [f64; 4] {
    let x = k * u;
    let em = (-x).exp();
    if x < SERIES_THRESHOLD {
        // Pn(u) = u^n Σ_j (-x)^j / (j+n)!
        let (mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0);
        let mut t1: f64 = 1.0;
        let mut t2 = 0.5;
        let mut t3 = 1.0 / 6.0;
        for j in 0..40 {
            s1 += t1;
            s2 += t2;
            s3 += t3;
            if t1.abs() < 1e-18 * s1 {
                break;
            }
            let jf = j as f64;
            t1 *= -x / (jf + 2.0);
            t2 *= -x / (jf + 3.0);
            t3 *= -x / (jf + 4.0);
        }
        let u2 = u * u;
        [em, u * s1, u2 * s2, u2 * u * s3]
    } else {
        let e1 = (-x).exp_m1();
        let p1 = -e1 / k;
        let p2 = (x + e1) / (k * k);
        let p3 = (0.5 * x * x - x - e1) / (k * k * k);
        [em, p1, p2, p3]
    }
}

#[derive(Debug, Clone, Copy)]
struct Piece {
    len: f64,
    value: f64,
    slope: f64,
    frame: Option<usize>,
}

/// Precomputed breakdown of `[0, last frame end]` into linear input pieces,
/// each tagged with the frame (if any) it falls in. Evaluating the model for
/// new rate constants is then a single pass over the pieces.
#[derive(Debug, Clone)]
pub struct FrameModel {
    pieces: Vec<Piece>,
    durations: Vec<f64>,
    extrapolated: bool,
}

impl FrameModel {
    pub fn new(input: &InputFunction, frames: &FrameScheme) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::invalid("empty frame scheme"));
        }
        if frames.frames()[0].start < 0.0 {
            return Err(Error::invalid("frames must start at or after t = 0"));
        }
        let end = frames.end();
        let mut knots: Vec<f64> = vec![0.0];
        knots.extend(input.times().iter().copied().filter(|&t| t > 0.0 && t < end));
        for f in frames.frames() {
            knots.push(f.start);
            knots.push(f.end);
        }
        knots.sort_by(f64::total_cmp);
        knots.dedup();

        let fr = frames.frames();
        let mut pieces = Vec::with_capacity(knots.len());
        let mut fi = 0;
        for w in knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            while fi < fr.len() && fr[fi].end <= a {
                fi += 1;
            }
            let frame = (fi < fr.len() && fr[fi].start <= a && b <= fr[fi].end).then_some(fi);
            let (value, slope) = input.right_piece(a);
            pieces.push(Piece {
                len: b - a,
                value,
                slope,
                frame,
            });
        }
        Ok(Self {
            pieces,
            durations: frames.durations(),
            extrapolated: end > input.last_time(),
        })
    }

    /// True when frames extend past the last input sample (held constant there).
    pub fn extrapolated(&self) -> bool {
        self.extrapolated
    }

    pub fn frame_count(&self) -> usize {
        self.durations.len()
    }

    /// Frame-averaged tissue concentration written into `out`.
    pub fn eval_into(&self, params: KineticParams, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.durations.len());
        out.iter_mut().for_each(|v| *v = 0.0);
        let k = params.k2;
        let mut conv = 0.0;
        for p in &self.pieces {
            let [p0, p1, p2, p3] = exp_kernels(k, p.len);
            if let Some(f) = p.frame {
                out[f] += conv * p1 + p.value * p2 + p.slope * p3;
            }
            conv = conv * p0 + p.value * p1 + p.slope * p2;
        }
        for (v, d) in out.iter_mut().zip(&self.durations) {
            *v = (params.k1 * *v / d).max(0.0);
        }
    }

    pub fn eval(&self, params: KineticParams) -> Vec<f64> {
        let mut out = vec![0.0; self.durations.len()];
        self.eval_into(params, &mut out);
        out
    }
}

/// Tissue concentration `C_t(t)` at a single time.
pub fn tissue_tac(params: KineticParams, input: &InputFunction, t: f64) -> Result<f64> {
    params.validate()?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::invalid(format!("time must be finite and >= 0, got {t}")));
    }
    let mut knots: Vec<f64> = vec![0.0];
    knots.extend(input.times().iter().copied().filter(|&s| s > 0.0 && s < t));
    knots.push(t);
    let mut conv: f64 = 0.0;
    for w in knots.windows(2) {
        let (value, slope) = input.right_piece(w[0]);
        let [p0, p1, p2, _] = exp_kernels(params.k2, w[1] - w[0]);
        conv = conv * p0 + value * p1 + slope * p2;
    }
    Ok((params.k1 * conv).max(0.0))
}

/// Tissue concentration averaged over each frame.
pub fn frame_averaged_tac(
    params: KineticParams,
    input: &InputFunction,
    frames: &FrameScheme,
) -> Result<Vec<f64>> {
    params.validate()?;
    Ok(FrameModel::new(input, frames)?.eval(params))
}

/// Frame-averaged TAC with blood-pool spill-over. The blood terms are
/// frame-averaged the same way as the tissue term.
pub fn spillover_frame_tac(
    params: KineticParams,
    fracs: SpilloverFractions,
    sp: &SpilloverInputs,
    frames: &FrameScheme,
) -> Result<Vec<f64>> {
    params.validate()?;
    fracs.validate()?;
    let model = SpilloverModel::new(sp, frames)?;
    Ok(model.eval(params, fracs))
}

/// Spill-over model with the parameter-free blood terms precomputed.
#[derive(Debug, Clone)]
pub struct SpilloverModel {
    tissue: FrameModel,
    lv: Vec<f64>,
    rv: Vec<f64>,
}

impl SpilloverModel {
    pub fn new(sp: &SpilloverInputs, frames: &FrameScheme) -> Result<Self> {
        Ok(Self {
            tissue: FrameModel::new(&sp.plasma_input(), frames)?,
            lv: sp.c_lv.frame_average(frames),
            rv: sp.c_rv.frame_average(frames),
        })
    }

    pub fn tissue(&self) -> &FrameModel {
        &self.tissue
    }

    pub fn eval_into(&self, params: KineticParams, fracs: SpilloverFractions, out: &mut [f64]) {
        self.tissue.eval_into(params, out);
        let tf = fracs.tissue_fraction();
        for ((o, lv), rv) in out.iter_mut().zip(&self.lv).zip(&self.rv) {
            *o = fracs.f_lv * lv + fracs.f_rv * rv + tf * *o;
        }
    }

    pub fn eval(&self, params: KineticParams, fracs: SpilloverFractions) -> Vec<f64> {
        let mut out = vec![0.0; self.lv.len()];
        self.eval_into(params, fracs, &mut out);
        out
    }
}

/// Either the plain one-tissue model or its spill-over extension.
#[derive(Debug, Clone)]
pub enum TacModel {
    Plain(FrameModel),
    Spillover(SpilloverModel),
}

impl TacModel {
    pub fn plain(input: &InputFunction, frames: &FrameScheme) -> Result<Self> {
        Ok(TacModel::Plain(FrameModel::new(input, frames)?))
    }

    pub fn spillover(sp: &SpilloverInputs, frames: &FrameScheme) -> Result<Self> {
        Ok(TacModel::Spillover(SpilloverModel::new(sp, frames)?))
    }

    pub fn has_spillover(&self) -> bool {
        matches!(self, TacModel::Spillover(_))
    }

    pub fn frame_count(&self) -> usize {
        match self {
            TacModel::Plain(m) => m.frame_count(),
            TacModel::Spillover(m) => m.tissue.frame_count(),
        }
    }

    /// Number of free parameters per component: 2, or 4 with spill-over.
    pub fn param_count(&self) -> usize {
        if self.has_spillover() {
            4
        } else {
            2
        }
    }

    /// Evaluate with fractions ignored by the plain model.
    pub fn eval_into(
        &self,
        params: KineticParams,
        fracs: Option<SpilloverFractions>,
        out: &mut [f64],
    ) {
        match self {
            TacModel::Plain(m) => m.eval_into(params, out),
            TacModel::Spillover(m) => {
                m.eval_into(params, fracs.unwrap_or(SpilloverFractions { f_lv: 0.0, f_rv: 0.0 }), out)
            }
        }
    }

    pub fn eval(&self, params: KineticParams, fracs: Option<SpilloverFractions>) -> Vec<f64> {
        let mut out = vec![0.0; self.frame_count()];
        self.eval_into(params, fracs, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_input() -> InputFunction {
        InputFunction::constant(1.0, 20.0).unwrap()
    }

    #[test]
    fn zero_gain_gives_zero() {
        let p = KineticParams::new(0.0, 0.3).unwrap();
        assert_eq!(tissue_tac(p, &unit_input(), 7.0).unwrap(), 0.0);
        let frames = FrameScheme::cardiac_default();
        let v = frame_averaged_tac(p, &unit_input(), &frames).unwrap();
        assert_eq!(v, vec![0.0; frames.len()]);
    }

    #[test]
    fn constant_input_closed_form() {
        let p = KineticParams::new(0.5, 0.1).unwrap();
        let got = tissue_tac(p, &unit_input(), 10.0).unwrap();
        let want = 5.0 * (1.0 - (-1.0f64).exp());
        assert!((got - want).abs() < 1e-13, "{got} vs {want}");
        assert!((got - 3.16060).abs() < 1e-5);
    }

    #[test]
    fn zero_washout_is_linear_ramp() {
        let p = KineticParams::new(0.5, 0.0).unwrap();
        let got = tissue_tac(p, &unit_input(), 4.0).unwrap();
        assert!((got - 2.0).abs() < 1e-14);
        let frames = FrameScheme::from_pairs(&[(0.0, 1.0)]).unwrap();
        let avg = frame_averaged_tac(p, &unit_input(), &frames).unwrap();
        assert!((avg[0] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn series_and_closed_form_branches_agree_at_threshold() {
        let u = 2.0;
        let below = exp_kernels(SERIES_THRESHOLD / u * (1.0 - 1e-12), u);
        let above = exp_kernels(SERIES_THRESHOLD / u * (1.0 + 1e-12), u);
        for n in 0..4 {
            assert!(((below[n] - above[n]) / above[n]).abs() < 1e-10, "P{n}");
        }
    }

    #[test]
    fn kernels_match_defining_integrals() {
        // Simpson on ∫0^u (u-s)^{n-1}/(n-1)! e^{-ks} ds
        let simpson = |f: &dyn Fn(f64) -> f64, u: f64| {
            let m = 2000;
            let h = u / m as f64;
            let mut acc = f(0.0) + f(u);
            for i in 1..m {
                acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
            }
            acc * h / 3.0
        };
        for (k, u) in [(0.05, 0.1), (0.3, 1.0), (2.0, 1.5), (7.0, 0.4)] {
            let p = exp_kernels(k, u);
            let want = [
                (-k * u).exp(),
                simpson(&|s| (-k * s).exp(), u),
                simpson(&|s| (u - s) * (-k * s).exp(), u),
                simpson(&|s| 0.5 * (u - s).powi(2) * (-k * s).exp(), u),
            ];
            for n in 0..4 {
                assert!(((p[n] - want[n]) / want[n]).abs() < 1e-10, "k={k} u={u} P{n}");
            }
        }
    }

    #[test]
    fn tiny_washout_matches_zero_branch() {
        let input = InputFunction::new(vec![0.0, 0.5, 3.0], vec![0.0, 4.0, 1.0]).unwrap();
        let frames = FrameScheme::cardiac_default();
        let a = frame_averaged_tac(KineticParams::new(0.4, 1e-12).unwrap(), &input, &frames).unwrap();
        let b = frame_averaged_tac(KineticParams::new(0.4, 0.0).unwrap(), &input, &frames).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(((x - y) / y).abs() < 1e-6);
        }
    }

    #[test]
    fn spillover_pure_blood_and_pure_tissue() {
        let lv = InputFunction::new(vec![0.0, 1.0, 5.0], vec![0.0, 3.0, 1.0]).unwrap();
        let rv = InputFunction::new(vec![0.0, 2.0, 5.0], vec![0.5, 2.0, 0.2]).unwrap();
        let sp = SpilloverInputs::new(lv.clone(), rv, 0.8).unwrap();
        let frames = FrameScheme::from_blocks(&[(4, 30.0), (2, 60.0)]).unwrap();
        let p = KineticParams::new(0.7, 0.08).unwrap();

        let pure = spillover_frame_tac(p, SpilloverFractions::new(1.0, 0.0).unwrap(), &sp, &frames)
            .unwrap();
        assert_eq!(pure, lv.frame_average(&frames));

        let none = spillover_frame_tac(p, SpilloverFractions::new(0.0, 0.0).unwrap(), &sp, &frames)
            .unwrap();
        let tissue = frame_averaged_tac(p, &sp.plasma_input(), &frames).unwrap();
        assert_eq!(none, tissue);
    }

    #[test]
    fn spillover_affine_combination() {
        let lv = InputFunction::constant(2.0, 10.0).unwrap();
        let rv = InputFunction::constant(1.0, 10.0).unwrap();
        let sp = SpilloverInputs::new(lv, rv, 1.0).unwrap();
        let frames = FrameScheme::from_blocks(&[(3, 60.0)]).unwrap();
        let model = SpilloverModel::new(&sp, &frames).unwrap();
        let fr = SpilloverFractions::new(0.3, 0.2).unwrap();
        assert_eq!(model.lv, vec![2.0; 3]);
        assert_eq!(model.rv, vec![1.0; 3]);

        // Unit tissue term: 0.6 + 0.2 + 0.5 = 1.3.
        let p = KineticParams::new(0.4, 0.2).unwrap();
        let tissue = model.tissue().eval(p);
        let out = model.eval(p, fr);
        for (o, c) in out.iter().zip(&tissue) {
            assert!((o - (0.6 + 0.2 + 0.5 * c)).abs() < 1e-14);
        }
        let unit: Vec<f64> = tissue.iter().map(|_| 0.6 + 0.2 + 0.5 * 1.0).collect();
        assert!(unit.iter().all(|v| (v - 1.3).abs() < 1e-14));
    }

    #[test]
    fn spillover_rejects_excess_fractions() {
        assert!(SpilloverFractions::new(0.7, 0.4).is_err());
        assert!(SpilloverFractions::new(-0.1, 0.4).is_err());
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(KineticParams::new(f64::NAN, 0.1).is_err());
        assert!(KineticParams::new(0.1, f64::INFINITY).is_err());
        assert!(FrameScheme::new(vec![]).is_err());
        assert!(FrameScheme::from_pairs(&[(1.0, 1.0)]).is_err());
        assert!(FrameScheme::from_pairs(&[(0.0, 2.0), (1.0, 3.0)]).is_err());
        assert!(InputFunction::new(vec![0.0], vec![1.0]).is_err());
        assert!(InputFunction::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(InputFunction::new(vec![0.0, 1.0], vec![1.0, -1.0]).is_err());
        let bad = KineticParams { k1: f64::NAN, k2: 0.1 };
        assert!(tissue_tac(bad, &unit_input(), 1.0).is_err());
    }

    #[test]
    fn input_evaluation_rules() {
        let f = InputFunction::new(vec![1.0, 2.0, 4.0], vec![2.0, 4.0, 0.0]).unwrap();
        assert_eq!(f.eval(0.5), 0.0);
        assert_eq!(f.eval(1.0), 2.0);
        assert_eq!(f.eval(1.5), 3.0);
        assert_eq!(f.eval(3.0), 2.0);
        assert_eq!(f.eval(10.0), 0.0);
        assert!((f.integral(0.0, 4.0) - (3.0 + 4.0)).abs() < 1e-14);
    }

    #[test]
    fn extrapolation_flag() {
        let input = InputFunction::constant(1.0, 5.0).unwrap();
        let frames = FrameScheme::cardiac_default();
        assert!(FrameModel::new(&input, &frames).unwrap().extrapolated());
        let long = InputFunction::constant(1.0, 20.0).unwrap();
        assert!(!FrameModel::new(&long, &frames).unwrap().extrapolated());
    }
}
