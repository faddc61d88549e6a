#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kinmix_core::phantom::{Rect, Region, RegionKind, VoxelSet, ABNORMAL_PARAMS, NORMAL_PARAMS};
use kinmix_core::{default_phantom, Dims, PhantomSpec};

pub fn kinmix<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_kinmix")).args(args).output().expect("binary runs")
}

/// Runs and panics with stderr on a non-zero exit.
pub fn ok<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let out = kinmix(args);
    assert!(out.status.success(), "kinmix failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

pub fn p(path: &Path) -> String {
    path.display().to_string()
}

/// 10 x 10 version of the built-in phantom.
pub fn small_spec() -> PhantomSpec {
    let base = default_phantom();
    PhantomSpec {
        dims: Dims::new(10, 10),
        regions: vec![
            Region {
                id: 1,
                name: "normal".into(),
                voxels: VoxelSet::Rects(vec![Rect { x0: 1, y0: 2, x1: 5, y1: 8 }]),
                kind: RegionKind::Kinetic(NORMAL_PARAMS),
            },
            Region {
                id: 2,
                name: "abnormal".into(),
                voxels: VoxelSet::Rects(vec![Rect { x0: 5, y0: 2, x1: 9, y1: 8 }]),
                kind: RegionKind::Kinetic(ABNORMAL_PARAMS),
            },
            Region {
                id: 0,
                name: "background".into(),
                voxels: VoxelSet::Remainder,
                kind: RegionKind::Noise,
            },
        ],
        ..base
    }
}

/// Config with a cheap Monte Carlo partition table and short chains.
pub const FAST_CONFIG: &str = r#"{
  "partition": {"beta_max": 1.0, "step": 0.05, "mc": {"burn_in": 20, "sweeps": 100, "seed": 0}},
  "smm": {"mcmc": {"iterations": 600, "burn_in": 200, "thin": 10, "seed": 0, "mode": "FULL_POSTERIOR", "G": 3}, "map_iterations": 400},
  "skms": {"G": 4}
}"#;

pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    /// Simulated small phantom with two replicates and a fast config.
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let spec = dir.path().join("spec.json");
        std::fs::write(&spec, serde_json::to_string(&small_spec()).unwrap()).unwrap();
        std::fs::write(dir.path().join("fast.json"), FAST_CONFIG).unwrap();
        ok(["simulate", "--spec", &p(&spec), "--replicates", "2", "--seed", "3", "--out", &p(&dir.path().join("sim"))]);
        Self { dir }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn s(&self, rel: &str) -> String {
        p(&self.path(rel))
    }
}

pub fn same_bytes(a: &Path, b: &Path) -> bool {
    std::fs::read(a).unwrap() == std::fs::read(b).unwrap()
}
