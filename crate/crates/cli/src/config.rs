//! Experiment configuration: a TOML file whose defaults reproduce the
//! 784-50-50-10 full-batch GD setup on the first 10000 MNIST images.

use std::path::{Path, PathBuf};

use dropflat_core::{
    hessian::HessianOptions,
    landscape::FlatnessOptions,
    nn::{Activation, Architecture, DropoutLayer, Init, MaskPolicy, MaskScope, OptimizerKind, SliceSelector},
    noise::{PhaseDetector, SampleKind},
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every stochastic stage derives its own seed from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            sampling: SamplingConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub init: Init,
    pub dropout: Vec<DropoutLayer>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            widths: vec![784, 50, 50, 10],
            activation: Activation::Relu,
            init: Init::Xavier,
            dropout: vec![DropoutLayer { layer: 2, rate: 0.8 }],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Mnist,
    SyntheticBlobs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Number of leading training examples used (MNIST only).
    pub prefix: usize,
    /// Directory with the IDX files; overridden by `--data-dir` or the
    /// environment variable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Also report accuracy on the MNIST test split.
    pub evaluate_test: bool,
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Mnist,
            prefix: 10_000,
            dir: None,
            evaluate_test: true,
            synthetic: SyntheticConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n: usize,
    pub classes: usize,
    pub spread: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 200,
            classes: 3,
            spread: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub steps: usize,
    pub mask_policy: MaskPolicy,
    pub mask_scope: MaskScope,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Gd,
            lr: 0.5,
            steps: 2000,
            mask_policy: MaskPolicy::FreshPerStep,
            mask_scope: MaskScope::Shared,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Sample kind analysed by `pca-flatness` and `hessian-projection`.
    pub kind: SampleKind,
    pub n: usize,
    pub detector: PhaseDetector,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            kind: SampleKind::Trajectory,
            n: 3000,
            detector: PhaseDetector::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub slice: SliceSelector,
    pub k_top: usize,
    /// Random unit directions probed by `flatness`.
    pub random_directions: usize,
    /// Leading samples used by `hessian-projection`.
    pub projection_samples: usize,
    pub flatness: FlatnessOptions,
    pub hessian: HessianOptions,
    pub alignment: AlignmentConfig,
    pub slice1d: Slice1dConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            slice: SliceSelector::Weight(1),
            k_top: 50,
            random_directions: 20,
            projection_samples: 1000,
            flatness: FlatnessOptions::default(),
            hessian: HessianOptions::default(),
            alignment: AlignmentConfig::default(),
            slice1d: Slice1dConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentConfig {
    /// Dropout inserted only when sampling gradient noise.
    pub probe: Vec<DropoutLayer>,
    pub samples: usize,
    pub stride: usize,
    pub steps: usize,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            probe: vec![DropoutLayer { layer: 2, rate: 0.8 }],
            samples: 1000,
            stride: 10,
            steps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Slice1dConfig {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub points: usize,
    pub directions: usize,
    /// Offset at which the rise `f(alpha) - f(0)` is reported.
    pub probe_alpha: f64,
    /// Second checkpoint evaluated along the same seeded directions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare: Option<PathBuf>,
}

impl Default for Slice1dConfig {
    fn default() -> Self {
        Self {
            alpha_min: -1.0,
            alpha_max: 1.0,
            points: 41,
            directions: 10,
            probe_alpha: 0.5,
            compare: None,
        }
    }
}

impl Slice1dConfig {
    pub fn alphas(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.alpha_min];
        }
        let step = (self.alpha_max - self.alpha_min) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.alpha_min + step * i as f64).collect()
    }
}

/// Stage-specific seeds derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Seeds {
    pub init: u64,
    pub train: u64,
    pub trajectory: u64,
    pub gradients: u64,
    pub directions: u64,
    pub alignment: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Seeds {
    pub fn from_master(master: u64) -> Self {
        let d = |k: u64| splitmix64(master ^ splitmix64(k));
        Self {
            init: d(1),
            train: d(2),
            trajectory: d(3),
            gradients: d(4),
            directions: d(5),
            alignment: d(6),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| e.context(path.display()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical text form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::from_master(self.seed)
    }

    pub fn architecture(&self) -> CliResult<Architecture> {
        Architecture::new(self.model.widths.clone(), self.model.activation, self.model.dropout.clone())
            .map_err(|e| CliError::config(format!("model: {e}")))
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |field: &str, why: String| Err(CliError::config(format!("{field}: {why}")));
        let arch = self.architecture()?;
        if !(self.train.lr >= 0.0 && self.train.lr.is_finite()) {
            return bad("train.lr", format!("must be finite and >= 0, got {}", self.train.lr));
        }
        if self.train.steps == 0 {
            return bad("train.steps", "must be at least 1".into());
        }
        if self.data.source == DataSource::Mnist && self.data.prefix == 0 {
            return bad("data.prefix", "must be at least 1".into());
        }
        if self.data.source == DataSource::SyntheticBlobs {
            let s = &self.data.synthetic;
            if s.n == 0 || s.classes == 0 || s.classes > arch.output_dim() {
                return bad(
                    "data.synthetic",
                    format!("need n >= 1 and 1 <= classes <= {}", arch.output_dim()),
                );
            }
        }
        if self.sampling.n < 2 {
            return bad("sampling.n", format!("must be at least 2, got {}", self.sampling.n));
        }
        if let Err(e) = dropflat_core::nn::ParamSlice::new(&arch, self.analysis.slice) {
            return bad("analysis.slice", e.to_string());
        }
        if self.analysis.projection_samples < 2 {
            return bad("analysis.projection_samples", "must be at least 2".into());
        }
        if self.analysis.k_top == 0 {
            return bad("analysis.k_top", "must be at least 1".into());
        }
        if let Err(e) = self.analysis.flatness.validate() {
            return bad("analysis.flatness", e.to_string());
        }
        let al = &self.analysis.alignment;
        if al.stride == 0 || al.samples < 2 || al.probe.is_empty() {
            return bad(
                "analysis.alignment",
                "needs stride >= 1, samples >= 2 and a probe layer".into(),
            );
        }
        if let Err(e) = arch.without_dropout().with_dropout(al.probe.clone()) {
            return bad("analysis.alignment.probe", e.to_string());
        }
        let s1 = &self.analysis.slice1d;
        if s1.points == 0 || s1.directions == 0 || !(s1.alpha_min <= s1.alpha_max) {
            return bad(
                "analysis.slice1d",
                "needs points >= 1, directions >= 1 and alpha_min <= alpha_max".into(),
            );
        }
        Ok(())
    }
}
