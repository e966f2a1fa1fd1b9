//! Run manifests: what ran, with which config, and checksums of every file
//! it wrote.

use std::{
    collections::BTreeMap,
    path::{Path, PathBuf},
    time::{SystemTime, UNIX_EPOCH},
};

use dropflat_core::hessian::HessianMethod;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::{
    config::ExperimentConfig,
    error::{CliError, CliResult},
};

pub const TOOL: &str = "dropflat";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Distinguishes runs of one command that coexist in a directory, such as
    /// the trajectory and gradient variants of `pca-flatness`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub config_hash: String,
    pub config: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Choices the source material leaves open, as applied in this run.
    pub decisions: BTreeMap<String, String>,
    pub artifacts: Vec<Artifact>,
    pub results: Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn manifest_name(command: &str) -> String {
    format!("manifest-{command}.json")
}

/// Every interpretive choice that affects numbers, spelled out.
pub fn decisions(cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    let f = &cfg.analysis.flatness;
    let d = &cfg.sampling.detector;
    let h = &cfg.analysis.hessian;
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    put("activation", cfg.model.activation.name().into());
    put("init", cfg.model.init.name().into());
    put("pixel_scaling", "x / 255".into());
    put("data_order", "first K examples, no shuffling".into());
    put(
        "dropout_semantics",
        "rate is the keep probability; training masks multiply hidden outputs without rescaling".into(),
    );
    put("mask_scope", cfg.train.mask_scope.name().into());
    put("landscape_loss", "deterministic network: no mask, no rescaling".into());
    put(
        "inference_modes",
        "plain (no mask) and rate-scaled (dropout outputs times rate)".into(),
    );
    put("slice", cfg.analysis.slice.to_string());
    put(
        "flatness",
        format!(
            "threshold 2 L0; loss_floor {:e} ({:?}); expansion x{} from {:e} to radius {:e}; tol_x {:e}; tol_f {:e}; unit-norm directions",
            f.loss_floor, f.floor_policy, f.growth, f.initial_step, f.search_radius, f.tol_x, f.tol_f
        ),
    );
    put(
        "filter_normalization",
        "one filter per layer; weights and biases normalized together".into(),
    );
    put(
        "phase_detector",
        if d.window == 0 {
            "disabled".into()
        } else {
            format!(
                "window {}; window-mean masked loss decrease < {}; deterministic train accuracy >= {}; max {} steps",
                d.window, d.max_rel_decrease, d.min_accuracy, d.max_steps
            )
        },
    );
    put("covariance", "mean-centered, 1/(N-1)".into());
    put("pca_floor", format!("lambda > {:e} lambda_1", dropflat_core::noise::LAMBDA_FLOOR_REL));
    put(
        "eigenvector_sign",
        "largest-magnitude entry positive (first on ties)".into(),
    );
    let hessian = match h.method {
        HessianMethod::Exact => format!(
            "exact Hessian-vector products (forward-over-reverse), one column per basis vector; asymmetry tolerance {:e}",
            h.asymmetry_tol
        ),
        HessianMethod::FdOfGradient => format!(
            "central FD of analytic gradient; h = {}; symmetrized; asymmetry tolerance {:e}",
            h.step.map_or("1e-4 (1 + |theta|_inf)".to_string(), |s| format!("{s:e}")),
            h.asymmetry_tol
        ),
    };
    put("hessian", hessian);
    put("isotropic_baseline", "Tr(H Sigma_bar) = Tr(H) Tr(Sigma) / D".into());
    m
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, started_unix: u64) -> Self {
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            variant: None,
            config_hash: cfg.hash(),
            config: cfg.to_toml_string(),
            started_unix,
            finished_unix: started_unix,
            decisions: decisions(cfg),
            artifacts: Vec::new(),
            results: Value::Null,
        }
    }

    /// Command name plus variant; the manifest file is named after it.
    pub fn label(&self) -> String {
        match &self.variant {
            Some(v) => format!("{}-{v}", self.command),
            None => self.command.clone(),
        }
    }

    /// Records a file already written under `out`.
    pub fn add_artifact(&mut self, out: &Path, rel: &str) -> CliResult<()> {
        let path = out.join(rel);
        let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        self.artifacts.retain(|a| a.path != rel);
        self.artifacts.push(Artifact {
            path: rel.to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn write(&mut self, out: &Path) -> CliResult<PathBuf> {
        self.finished_unix = unix_now();
        let path = out.join(manifest_name(&self.label()));
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::integrity(format!("{}: {e}", path.display())))
    }

    /// Checks every listed artifact against its checksum; `dir` is the
    /// directory holding the manifest.
    pub fn verify(&self, dir: &Path) -> CliResult<()> {
        for a in &self.artifacts {
            let path = dir.join(&a.path);
            let bytes = std::fs::read(&path).map_err(|e| {
                CliError::integrity(format!("{} listed by the {} manifest: {e}", path.display(), self.command))
            })?;
            let sum = sha256_hex(&bytes);
            if sum != a.sha256 {
                return Err(CliError::integrity(format!(
                    "{} checksum mismatch: manifest {} vs file {sum}",
                    path.display(),
                    a.sha256
                )));
            }
        }
        Ok(())
    }
}
