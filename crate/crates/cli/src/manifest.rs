use std::path::{Path, PathBuf};

use kinmix_core::{io, Result};
use serde::{Deserialize, Serialize};

/// Provenance record written once per run, next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name; `kinmix replay` re-parses them.
    pub args: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub threads: usize,
    /// Effective settings, defaults included.
    pub settings: serde_json::Value,
    pub warnings: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, threads: usize) -> Self {
        Self {
            command: command.into(),
            args,
            config_path: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            threads,
            settings: serde_json::Value::Null,
            warnings: Vec::new(),
            wall_clock_seconds: 0.0,
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: PathBuf) -> PathBuf {
        self.outputs.push(p.clone());
        p
    }

    pub fn warn(&mut self, msg: String) {
        eprintln!("warning: {msg}");
        self.warnings.push(msg);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::save_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        io::load_json(path)
    }
}

/// Manifest location for a run writing into directory `dir`.
pub fn for_dir(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

/// Manifest location for a run producing the single file `file`.
pub fn for_file(file: &Path) -> PathBuf {
    let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    file.with_file_name(format!("{stem}.manifest.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_manifest_sits_beside_the_output() {
        assert_eq!(for_file(Path::new("out/k1.pgm")), PathBuf::from("out/k1.manifest.json"));
        assert_eq!(for_dir(Path::new("fit")), PathBuf::from("fit/manifest.json"));
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("partition", vec!["partition".into(), "--g".into(), "2".into()], 1);
        m.seed = Some(4);
        m.settings = serde_json::json!({"step": 0.01});
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        assert_eq!(RunManifest::load(&p).unwrap(), m);
    }
}
