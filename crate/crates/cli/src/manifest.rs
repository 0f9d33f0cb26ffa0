//! One JSON manifest per run: inputs with digests, resolved settings, timings, outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use sphereg::Result;

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Convergence {
    pub iterations: usize,
    pub converged: bool,
    pub final_energy: Option<f64>,
    pub final_gradient_norms: Option<[f64; 2]>,
    pub halvings: usize,
    pub mean_displacement_rad: f64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub subcommand: String,
    pub version: String,
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputFile>,
    /// (phase, percent, seconds per iteration).
    pub timings: Vec<(String, f64, f64)>,
    pub wall_seconds: Option<f64>,
    pub outputs: Vec<PathBuf>,
    pub convergence: Option<Convergence>,
}

impl RunManifest {
    pub fn new(command_line: Vec<String>, subcommand: &str) -> Self {
        RunManifest {
            command_line,
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: BTreeMap::new(),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            timings: Vec::new(),
            wall_seconds: None,
            outputs: Vec::new(),
            convergence: None,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        let sha256 = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.push(InputFile { path: path.to_path_buf(), sha256 });
        Ok(())
    }

    /// Writes `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifests serialize");
        Ok(std::fs::write(dir.join("manifest.json"), text + "\n")?)
    }
}
