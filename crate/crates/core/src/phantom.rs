//! Ground-truth dynamic images.
//!
//! A phantom is a 2D lattice split into rectangular or listed regions, each
//! with its own rate constants (or a zero-activity background). Rendering
//! applies the frame-averaged kinetic model per region; noise is then added
//! in the image domain with a per-frame spread that scales like count
//! statistics (variance proportional to `1 / frame duration`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::{FrameModel, FrameScheme, InputFunction, KineticParams};

/// Lattice dimensions. Voxel `(x, y)` has raster index `y * nx + x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize) -> Self {
        Self { nx, ny }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.nx + x
    }

    pub fn coords(&self, i: usize) -> (usize, usize) {
        (i % self.nx, i / self.nx)
    }
}

/// Half-open rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoxelSet {
    Rects(Vec<Rect>),
    Voxels(Vec<[usize; 2]>),
    /// Every voxel not claimed by another region.
    Remainder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Kinetic(KineticParams),
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: u32,
    #[serde(default)]
    pub name: String,
    pub voxels: VoxelSet,
    pub kind: RegionKind,
}

/// Phantom description. `frames` and `input` may be omitted in JSON and
/// supplied separately (e.g. from CSV files).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub regions: Vec<Region>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<FrameScheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<InputFunction>,
}

/// Per-voxel ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub region_id: Vec<u32>,
    pub params: Vec<KineticParams>,
    pub noise: Vec<bool>,
}

/// Dynamic image stored voxel-major: `data[i * T + t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicImage {
    dims: Dims,
    frames: usize,
    data: Vec<f64>,
    pub truth: Option<Truth>,
}

impl DynamicImage {
    pub fn new(dims: Dims, frames: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || dims.is_empty() {
            return Err(Error::invalid("image needs at least one voxel and one frame"));
        }
        if data.len() != dims.len() * frames {
            return Err(Error::invalid(format!(
                "image data has {} values, expected {} x {} x {}",
                data.len(),
                dims.nx,
                dims.ny,
                frames
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("image value {i} is not finite")));
        }
        Ok(Self {
            dims,
            frames,
            data,
            truth: None,
        })
    }

    pub fn with_truth(mut self, truth: Truth) -> Result<Self> {
        let n = self.dims.len();
        if truth.region_id.len() != n || truth.params.len() != n || truth.noise.len() != n {
            return Err(Error::invalid("truth dimensions do not match image"));
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.len()
    }

    pub fn frame_count(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn tac(&self, i: usize) -> &[f64] {
        &self.data[i * self.frames..(i + 1) * self.frames]
    }

    pub fn tacs(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.frames)
    }

    /// Values reordered frame-major (all voxels of frame 0, then frame 1, ...).
    pub fn frame_major(&self) -> Vec<f64> {
        let n = self.voxel_count();
        let mut out = vec![0.0; self.data.len()];
        for (i, tac) in self.tacs().enumerate() {
            for (t, v) in tac.iter().enumerate() {
                out[t * n + i] = *v;
            }
        }
        out
    }

    pub fn from_frame_major(dims: Dims, frames: usize, values: &[f64]) -> Result<Self> {
        let n = dims.len();
        if values.len() != n * frames {
            return Err(Error::invalid("frame-major buffer has wrong length"));
        }
        let mut data = vec![0.0; values.len()];
        for t in 0..frames {
            for i in 0..n {
                data[i * frames + t] = values[t * n + i];
            }
        }
        Self::new(dims, frames, data)
    }

    /// A single-voxel image.
    pub fn single(tac: Vec<f64>) -> Result<Self> {
        let t = tac.len();
        Self::new(Dims::new(1, 1), t, tac)
    }
}

impl PhantomSpec {
    /// Region index for every voxel; checks that regions partition the lattice.
    pub fn assignment(&self) -> Result<Vec<usize>> {
        let dims = self.dims;
        if dims.is_empty() {
            return Err(Error::invalid("phantom has no voxels"));
        }
        let noise_regions = self
            .regions
            .iter()
            .filter(|r| matches!(r.kind, RegionKind::Noise))
            .count();
        if noise_regions > 1 {
            return Err(Error::invalid("at most one region may be the noise background"));
        }
        let remainders: Vec<usize> = self
            .regions
            .iter()
            .enumerate()
            .filter(|(_, r)| matches!(r.voxels, VoxelSet::Remainder))
            .map(|(k, _)| k)
            .collect();
        if remainders.len() > 1 {
            return Err(Error::invalid("at most one region may claim the remainder"));
        }
        let mut owner: Vec<Option<usize>> = vec![None; dims.len()];
        let mut claim = |k: usize, x: usize, y: usize| -> Result<()> {
            if x >= dims.nx || y >= dims.ny {
                return Err(Error::invalid(format!(
                    "region {} voxel ({x}, {y}) outside {}x{} lattice",
                    self.regions[k].id, dims.nx, dims.ny
                )));
            }
            let i = dims.index(x, y);
            if let Some(prev) = owner[i] {
                return Err(Error::invalid(format!(
                    "voxel ({x}, {y}) claimed by regions {} and {}",
                    self.regions[prev].id, self.regions[k].id
                )));
            }
            owner[i] = Some(k);
            Ok(())
        };
        for (k, region) in self.regions.iter().enumerate() {
            match &region.voxels {
                VoxelSet::Rects(rects) => {
                    for r in rects {
                        for y in r.y0..r.y1 {
                            for x in r.x0..r.x1 {
                                claim(k, x, y)?;
                            }
                        }
                    }
                }
                VoxelSet::Voxels(list) => {
                    for &[x, y] in list {
                        claim(k, x, y)?;
                    }
                }
                VoxelSet::Remainder => {}
            }
        }
        owner
            .into_iter()
            .enumerate()
            .map(|(i, o)| match (o, remainders.first()) {
                (Some(k), _) => Ok(k),
                (None, Some(&k)) => Ok(k),
                (None, None) => {
                    let (x, y) = dims.coords(i);
                    Err(Error::invalid(format!("voxel ({x}, {y}) belongs to no region")))
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.regions {
            if let RegionKind::Kinetic(p) = r.kind {
                p.validate()
                    .map_err(|e| Error::invalid(format!("region {}: {e}", r.id)))?;
            }
        }
        self.assignment().map(|_| ())
    }

    fn frames_and_input<'a>(
        &'a self,
        frames: Option<&'a FrameScheme>,
        input: Option<&'a InputFunction>,
    ) -> Result<(&'a FrameScheme, &'a InputFunction)> {
        let frames = frames
            .or(self.frames.as_ref())
            .ok_or_else(|| Error::invalid("phantom has no frame scheme"))?;
        let input = input
            .or(self.input.as_ref())
            .ok_or_else(|| Error::invalid("phantom has no input function"))?;
        Ok((frames, input))
    }
}

/// Noise-free rendering of a phantom using its embedded frames and input.
pub fn render_noise_free(spec: &PhantomSpec) -> Result<DynamicImage> {
    render_with(spec, None, None)
}

/// Rendering with frames and/or input overriding the phantom's own.
pub fn render_with(
    spec: &PhantomSpec,
    frames: Option<&FrameScheme>,
    input: Option<&InputFunction>,
) -> Result<DynamicImage> {
    spec.validate()?;
    let (frames, input) = spec.frames_and_input(frames, input)?;
    let owner = spec.assignment()?;
    let model = FrameModel::new(input, frames)?;
    let t = frames.len();
    let region_tacs: Vec<Vec<f64>> = spec
        .regions
        .iter()
        .map(|r| match r.kind {
            RegionKind::Kinetic(p) => model.eval(p),
            RegionKind::Noise => vec![0.0; t],
        })
        .collect();
    let mut data = Vec::with_capacity(owner.len() * t);
    for &k in &owner {
        data.extend_from_slice(&region_tacs[k]);
    }
    let zero = KineticParams { k1: 0.0, k2: 0.0 };
    let truth = Truth {
        region_id: owner.iter().map(|&k| spec.regions[k].id).collect(),
        params: owner
            .iter()
            .map(|&k| match spec.regions[k].kind {
                RegionKind::Kinetic(p) => p,
                RegionKind::Noise => zero,
            })
            .collect(),
        noise: owner
            .iter()
            .map(|&k| matches!(spec.regions[k].kind, RegionKind::Noise))
            .collect(),
    };
    DynamicImage::new(spec.dims, t, data)?.with_truth(truth)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Additive Gaussian with sd `level * frame_mean / sqrt(frame duration)`,
    /// clipped at zero.
    GaussianHetero,
    /// Poisson counts with `level` activity units per count.
    ScaledPoisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub level: f64,
    pub seed: u64,
}

/// Independent, reproducible generator for one voxel.
pub(crate) fn voxel_rng(seed: u64, voxel: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(voxel as u64);
    rng
}

/// Add image-domain noise. Each voxel draws from its own counter-based
/// stream, so the result does not depend on how voxels are scheduled.
pub fn add_noise(img: &DynamicImage, frames: &FrameScheme, noise: &NoiseModel) -> Result<DynamicImage> {
    let t_count = img.frame_count();
    if frames.len() != t_count {
        return Err(Error::invalid(format!(
            "image has {t_count} frames but frame scheme has {}",
            frames.len()
        )));
    }
    if !(noise.level.is_finite() && noise.level >= 0.0) {
        return Err(Error::invalid(format!("noise level must be >= 0, got {}", noise.level)));
    }
    let durations = frames.durations();
    let mut data = img.data().to_vec();
    match noise.kind {
        NoiseKind::GaussianHetero => {
            if noise.level == 0.0 {
                return Ok(img.clone());
            }
            let active: Vec<bool> = match &img.truth {
                Some(truth) => truth.noise.iter().map(|n| !n).collect(),
                None => img.tacs().map(|tac| tac.iter().any(|v| *v != 0.0)).collect(),
            };
            let n_active = active.iter().filter(|a| **a).count().max(1) as f64;
            let mut sd = vec![0.0; t_count];
            for (tac, _) in img.tacs().zip(&active).filter(|(_, a)| **a) {
                for (s, v) in sd.iter_mut().zip(tac) {
                    *s += v;
                }
            }
            for (s, d) in sd.iter_mut().zip(&durations) {
                *s = noise.level * (*s / n_active) / d.sqrt();
            }
            data.par_chunks_mut(t_count).enumerate().for_each(|(i, tac)| {
                let mut rng = voxel_rng(noise.seed, i);
                for (v, s) in tac.iter_mut().zip(&sd) {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *v = (*v + s * e).max(0.0);
                }
            });
        }
        NoiseKind::ScaledPoisson => {
            if noise.level == 0.0 {
                return Err(Error::invalid("scaled Poisson noise needs level > 0"));
            }
            data.par_chunks_mut(t_count)
                .enumerate()
                .try_for_each(|(i, tac)| -> Result<()> {
                    let mut rng = voxel_rng(noise.seed, i);
                    for (v, d) in tac.iter_mut().zip(&durations) {
                        let mean = *v * d / noise.level;
                        let counts = if mean > 0.0 {
                            Poisson::new(mean)
                                .map_err(|e| Error::Numerical(format!("poisson mean {mean}: {e}")))?
                                .sample(&mut rng)
                        } else {
                            0.0
                        };
                        *v = counts * noise.level / d;
                    }
                    Ok(())
                })?;
        }
    }
    let mut out = DynamicImage::new(img.dims(), t_count, data)?;
    out.truth = img.truth.clone();
    Ok(out)
}

/// Sampled plasma input used by the built-in phantom, in MBq/mL.
///
/// Bolus-plus-clearance shape `(a1 t - a2 - a3) e^{-l1 t} + a2 e^{-l2 t} + a3 e^{-l3 t}`
/// sampled every 5 s for the first two minutes and every 30 s up to 13 min.
pub fn default_input() -> InputFunction {
    let (a1, a2, a3) = (0.6, 0.009, 0.0036);
    let (l1, l2, l3) = (4.0, 0.6, 0.03);
    let curve = |t: f64| {
        ((a1 * t - a2 - a3) * (-l1 * t).exp() + a2 * (-l2 * t).exp() + a3 * (-l3 * t).exp())
            .max(0.0)
    };
    let mut times: Vec<f64> = (0..24).map(|k| k as f64 * 5.0 / 60.0).collect();
    times.extend((4..=26).map(|k| k as f64 * 0.5));
    let values = times.iter().map(|&t| curve(t)).collect();
    InputFunction::new(times, values).expect("built-in input is valid")
}

/// Gaussian noise level used by the built-in studies.
pub const DEFAULT_NOISE_LEVEL: f64 = 0.2;

pub fn default_noise(seed: u64) -> NoiseModel {
    NoiseModel {
        kind: NoiseKind::GaussianHetero,
        level: DEFAULT_NOISE_LEVEL,
        seed,
    }
}

/// Normal tissue rate constants (mid inferoseptal segment).
pub const NORMAL_PARAMS: KineticParams = KineticParams { k1: 0.9016, k2: 0.0730 };
/// Perfusion defect rate constants (apex segment).
pub const ABNORMAL_PARAMS: KineticParams = KineticParams { k1: 0.3290, k2: 0.0554 };

pub const NOISE_REGION: u32 = 0;
pub const NORMAL_REGION: u32 = 1;
pub const ABNORMAL_REGION: u32 = 2;

/// 32 x 32 three-region phantom: a normal block and an adjacent defect block
/// inside a zero-activity background.
pub fn default_phantom() -> PhantomSpec {
    PhantomSpec {
        dims: Dims::new(32, 32),
        regions: vec![
            Region {
                id: NORMAL_REGION,
                name: "normal".into(),
                voxels: VoxelSet::Rects(vec![Rect { x0: 4, y0: 4, x1: 16, y1: 28 }]),
                kind: RegionKind::Kinetic(NORMAL_PARAMS),
            },
            Region {
                id: ABNORMAL_REGION,
                name: "abnormal".into(),
                voxels: VoxelSet::Rects(vec![Rect { x0: 16, y0: 4, x1: 28, y1: 28 }]),
                kind: RegionKind::Kinetic(ABNORMAL_PARAMS),
            },
            Region {
                id: NOISE_REGION,
                name: "background".into(),
                voxels: VoxelSet::Remainder,
                kind: RegionKind::Noise,
            },
        ],
        frames: Some(FrameScheme::cardiac_default()),
        input: Some(default_input()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::frame_averaged_tac;

    fn homogeneous(dims: Dims, kind: RegionKind) -> PhantomSpec {
        PhantomSpec {
            dims,
            regions: vec![Region {
                id: 7,
                name: String::new(),
                voxels: VoxelSet::Remainder,
                kind,
            }],
            frames: Some(FrameScheme::cardiac_default()),
            input: Some(InputFunction::constant(1.0, 20.0).unwrap()),
        }
    }

    #[test]
    fn homogeneous_region_shares_one_tac() {
        let p = KineticParams::new(0.5, 0.1).unwrap();
        let img = render_noise_free(&homogeneous(Dims::new(2, 2), RegionKind::Kinetic(p))).unwrap();
        let first = img.tac(0).to_vec();
        assert!(img.tacs().all(|t| t == first.as_slice()));
        assert!(first.iter().any(|v| *v > 0.0));
    }

    #[test]
    fn noise_region_is_zero() {
        let img = render_noise_free(&homogeneous(Dims::new(3, 2), RegionKind::Noise)).unwrap();
        assert!(img.data().iter().all(|v| *v == 0.0));
        assert!(img.truth.unwrap().noise.iter().all(|n| *n));
    }

    #[test]
    fn two_region_tacs_match_kinetics() {
        let septal = KineticParams::new(0.7656, 0.0983).unwrap();
        let apex = KineticParams::new(0.3290, 0.0554).unwrap();
        let spec = PhantomSpec {
            dims: Dims::new(4, 2),
            regions: vec![
                Region {
                    id: 1,
                    name: "septal".into(),
                    voxels: VoxelSet::Rects(vec![Rect { x0: 0, y0: 0, x1: 2, y1: 2 }]),
                    kind: RegionKind::Kinetic(septal),
                },
                Region {
                    id: 2,
                    name: "apex".into(),
                    voxels: VoxelSet::Rects(vec![Rect { x0: 2, y0: 0, x1: 4, y1: 2 }]),
                    kind: RegionKind::Kinetic(apex),
                },
            ],
            frames: Some(FrameScheme::cardiac_default()),
            input: Some(default_input()),
        };
        let img = render_noise_free(&spec).unwrap();
        let frames = FrameScheme::cardiac_default();
        let want_s = frame_averaged_tac(septal, &default_input(), &frames).unwrap();
        let want_a = frame_averaged_tac(apex, &default_input(), &frames).unwrap();
        assert_eq!(img.tac(0), want_s.as_slice());
        assert_eq!(img.tac(5), want_s.as_slice());
        assert_eq!(img.tac(2), want_a.as_slice());
        assert_eq!(img.tac(7), want_a.as_slice());
    }

    #[test]
    fn partition_violations_rejected() {
        let p = RegionKind::Kinetic(KineticParams::new(0.5, 0.1).unwrap());
        let mut spec = homogeneous(Dims::new(4, 4), p);
        spec.regions[0].voxels = VoxelSet::Rects(vec![Rect { x0: 0, y0: 0, x1: 4, y1: 3 }]);
        assert!(spec.assignment().is_err(), "uncovered row");

        spec.regions.push(Region {
            id: 8,
            name: String::new(),
            voxels: VoxelSet::Voxels(vec![[0, 3], [1, 3], [2, 3], [3, 3], [0, 0]]),
            kind: RegionKind::Noise,
        });
        assert!(spec.assignment().is_err(), "double claim");

        spec.regions[1].voxels = VoxelSet::Voxels(vec![[0, 3], [1, 3], [2, 3], [3, 3]]);
        assert!(spec.assignment().is_ok());

        spec.regions.push(Region {
            id: 9,
            name: String::new(),
            voxels: VoxelSet::Voxels(vec![]),
            kind: RegionKind::Noise,
        });
        assert!(spec.assignment().is_err(), "two noise regions");
    }

    #[test]
    fn non_finite_region_parameters_rejected() {
        let spec = homogeneous(
            Dims::new(2, 2),
            RegionKind::Kinetic(KineticParams { k1: f64::NAN, k2: 0.1 }),
        );
        assert!(matches!(render_noise_free(&spec), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_gaussian_level_is_identity() {
        let spec = default_phantom();
        let img = render_noise_free(&spec).unwrap();
        let noise = NoiseModel { kind: NoiseKind::GaussianHetero, level: 0.0, seed: 3 };
        let out = add_noise(&img, spec.frames.as_ref().unwrap(), &noise).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn fixed_seed_is_bitwise_reproducible() {
        let spec = default_phantom();
        let frames = spec.frames.clone().unwrap();
        let img = render_noise_free(&spec).unwrap();
        for kind in [NoiseKind::GaussianHetero, NoiseKind::ScaledPoisson] {
            let noise = NoiseModel { kind, level: 0.1, seed: 42 };
            let a = add_noise(&img, &frames, &noise).unwrap();
            let b = add_noise(&img, &frames, &noise).unwrap();
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
            let other = add_noise(&img, &frames, &NoiseModel { seed: 43, ..noise }).unwrap();
            assert_ne!(a.data(), other.data());
        }
    }

    #[test]
    fn poisson_zero_level_rejected() {
        let spec = default_phantom();
        let img = render_noise_free(&spec).unwrap();
        let noise = NoiseModel { kind: NoiseKind::ScaledPoisson, level: 0.0, seed: 1 };
        assert!(add_noise(&img, spec.frames.as_ref().unwrap(), &noise).is_err());
    }

    #[test]
    fn scaled_poisson_is_unbiased_on_constant_image() {
        let dims = Dims::new(400, 250);
        let frames = FrameScheme::from_pairs(&[(0.0, 0.5)]).unwrap();
        let img = DynamicImage::new(dims, 1, vec![3.0; dims.len()]).unwrap();
        let level = 0.05;
        let noisy = add_noise(
            &img,
            &frames,
            &NoiseModel { kind: NoiseKind::ScaledPoisson, level, seed: 11 },
        )
        .unwrap();
        let n = dims.len() as f64;
        let mean = noisy.data().iter().sum::<f64>() / n;
        // Var = mean * level / duration
        let se = (3.0 * level / 0.5 / n).sqrt();
        assert!((mean - 3.0).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn gaussian_noise_is_unbiased_before_clipping() {
        // Values far above the noise floor never clip.
        let dims = Dims::new(200, 200);
        let frames = FrameScheme::from_pairs(&[(0.0, 1.0)]).unwrap();
        let img = DynamicImage::new(dims, 1, vec![10.0; dims.len()]).unwrap();
        let noisy = add_noise(
            &img,
            &frames,
            &NoiseModel { kind: NoiseKind::GaussianHetero, level: 0.05, seed: 5 },
        )
        .unwrap();
        let n = dims.len() as f64;
        let mean = noisy.data().iter().sum::<f64>() / n;
        let se = 0.5 / n.sqrt();
        assert!((mean - 10.0).abs() < 3.0 * se);
    }

    #[test]
    fn frame_major_round_trip() {
        let img = render_noise_free(&default_phantom()).unwrap();
        let fm = img.frame_major();
        let back = DynamicImage::from_frame_major(img.dims(), img.frame_count(), &fm).unwrap();
        assert_eq!(back.data(), img.data());
    }
}
