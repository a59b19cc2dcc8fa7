//! Experiment configuration: a single JSON file plus flag overrides
//! (flags win). The effective config is hashed into every output file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dipole identifier: "poly:[c0,c1,...]" or "builtin:xsq".
    pub mu_id: String,
    pub n_modes: usize,
    pub lambda: f64,
    pub lambda_hat: f64,
    pub horizon: f64,
    pub dt: f64,
    pub epsilon: f64,
    /// "rk4" or "expm" for the linear simulate mode.
    pub integrator: String,
    pub n_stages: usize,
    pub lambda_cap: f64,
    pub gamma: f64,
    /// mu-check passes when min_{k>=2} k^3 |b_k| exceeds this.
    pub mu_threshold: f64,
    pub scan_lambdas: Vec<f64>,
    pub cost_n_modes: Vec<usize>,
    pub cost_horizons: Vec<f64>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// "csv" or "json" for report tables.
    pub format: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mu_id: "builtin:xsq".into(),
            n_modes: 16,
            lambda: 2.0,
            lambda_hat: 1.0,
            horizon: 2.0,
            dt: 1e-3,
            epsilon: 1e-3,
            integrator: "rk4".into(),
            n_stages: 5,
            lambda_cap: 1e4,
            gamma: 1.0,
            mu_threshold: 1e-6,
            scan_lambdas: vec![1.0, 4.0, 16.0, 64.0],
            cost_n_modes: vec![2, 4, 8],
            cost_horizons: vec![0.5, 0.2, 0.1, 0.05],
            seed: 0,
            output_dir: PathBuf::from("out"),
            format: "csv".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("malformed config: {e}"))
    }

    /// SHA-256 of the canonical JSON of the effective config. The output
    /// directory is normalized out: where results land is not part of the
    /// experiment's identity, and fixed-seed runs into different directories
    /// must stay byte-identical.
    pub fn sha256(&self) -> String {
        let mut canonical_cfg = self.clone();
        canonical_cfg.output_dir = PathBuf::new();
        let canonical = serde_json::to_string(&canonical_cfg).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Shared numeric sanity applied before any computation.
    pub fn validate_common(&self) -> Result<(), String> {
        if self.n_modes < 2 {
            return Err("n_modes must be >= 2".into());
        }
        if !(self.lambda > 0.0) {
            return Err("lambda must be positive".into());
        }
        if !(self.horizon > 0.0) {
            return Err("horizon must be positive".into());
        }
        if !(self.dt > 0.0) {
            return Err("dt must be positive".into());
        }
        if self.dt > self.horizon {
            return Err(format!(
                "dt = {} exceeds horizon = {}",
                self.dt, self.horizon
            ));
        }
        match self.format.as_str() {
            "csv" | "json" => {}
            other => return Err(format!("unknown format {other:?} (csv|json)")),
        }
        match self.integrator.as_str() {
            "rk4" | "expm" => {}
            other => return Err(format!("unknown integrator {other:?} (rk4|expm)")),
        }
        Ok(())
    }
}
