//! Independent reference computations shared by the integration and
//! acceptance suites. Nothing here calls into the library's numerical paths.

#![allow(dead_code)]

/// Linear interpolation of `(times, values)`: zero before the first sample,
/// held after the last.
pub fn interp(times: &[f64], values: &[f64], t: f64) -> f64 {
    if t < times[0] {
        return 0.0;
    }
    let n = times.len();
    if t >= times[n - 1] {
        return values[n - 1];
    }
    let mut j = 1;
    while times[j] <= t {
        j += 1;
    }
    let w = (t - times[j - 1]) / (times[j] - times[j - 1]);
    values[j - 1] + w * (values[j] - values[j - 1])
}

/// Trapezoid-rule frame averages of `K1 * (Cp ⊗ e^{-k2 t})` on a uniform grid
/// of step `h` (minutes). Frame boundaries must be multiples of `h`.
pub fn trapezoid_frame_tac(
    k1: f64,
    k2: f64,
    times: &[f64],
    values: &[f64],
    frames: &[(f64, f64)],
    h: f64,
) -> Vec<f64> {
    let end = frames.last().unwrap().1;
    let steps = (end / h).round() as usize;
    let decay = (-k2 * h).exp();
    let mut conv = vec![0.0; steps + 1];
    let mut prev = interp(times, values, 0.0);
    let mut from = 0;
    for m in 0..steps {
        let t = (m + 1) as f64 * h;
        while from + 2 < times.len() && times[from + 1] <= t {
            from += 1;
        }
        let next = interp(&times[from..], &values[from..], t);
        conv[m + 1] = conv[m] * decay + 0.5 * h * (prev * decay + next);
        prev = next;
    }
    frames
        .iter()
        .map(|&(s, e)| {
            let a = (s / h).round() as usize;
            let b = (e / h).round() as usize;
            let mut acc = 0.5 * (conv[a] + conv[b]);
            for c in &conv[a + 1..b] {
                acc += c;
            }
            k1 * acc * h / (e - s)
        })
        .collect()
}

/// Trapezoid at `h` and `h/2` combined by Richardson extrapolation.
pub fn quadrature_frame_tac(
    k1: f64,
    k2: f64,
    times: &[f64],
    values: &[f64],
    frames: &[(f64, f64)],
    h: f64,
) -> Vec<f64> {
    let coarse = trapezoid_frame_tac(k1, k2, times, values, frames, h);
    let fine = trapezoid_frame_tac(k1, k2, times, values, frames, h / 2.0);
    coarse
        .iter()
        .zip(&fine)
        .map(|(c, f)| (4.0 * f - c) / 3.0)
        .collect()
}

/// Quadrature grid step: 5 s / 1000, so 5-second frame edges fall on grid points.
pub const QUAD_STEP: f64 = 1.0 / 12000.0;

/// Deterministic xorshift generator for building randomized cases.
pub struct CaseRng(u64);

impl CaseRng {
    pub fn new(seed: u64) -> Self {
        Self(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1)
    }

    pub fn next_f64(&mut self) -> f64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        (x >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

/// Random bolus-shaped input with knots on a 0.05 min lattice starting at 0.
pub fn random_input(rng: &mut CaseRng) -> (Vec<f64>, Vec<f64>) {
    let peak_t = rng.uniform(0.15, 0.6);
    let peak = rng.uniform(0.5, 5.0);
    let tail = rng.uniform(0.02, 0.3) * peak;
    let clear = rng.uniform(0.02, 0.2);
    let mut times = vec![0.0];
    let mut t_idx = 0usize;
    while times.last().unwrap() < &14.0 {
        t_idx += 1 + (rng.next_f64() * 10.0) as usize;
        times.push(t_idx as f64 * 0.05);
    }
    let values = times
        .iter()
        .map(|&t| {
            let rise = (t / peak_t) * (1.0 - t / peak_t).exp();
            let v = peak * rise + tail * (1.0 - (-t / peak_t).exp()) * (-clear * t).exp();
            v * rng.uniform(0.9, 1.1)
        })
        .collect();
    (times, values)
}

/// Cardiac frame scheme as `(start, end)` pairs in minutes.
pub fn cardiac_frames() -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut t = 0.0;
    for (count, secs) in [(6, 5.0), (3, 30.0), (5, 60.0), (3, 120.0)] {
        for _ in 0..count {
            let e = t + secs / 60.0;
            out.push((t, e));
            t = e;
        }
    }
    out
}

/// Sample mean and its standard error estimated by non-overlapping batch means.
pub fn batch_mean_se(xs: &[f64], batches: usize) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let size = n / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}
