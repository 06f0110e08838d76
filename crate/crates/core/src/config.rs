//! JSON experiment and sweep configuration.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::distributions::{AmbiguityBall, GaussianMixture};
use crate::dynamics::{BetaRule, Model, ModelSpec};
use crate::linalg::matrix_from_rows;
use crate::propagation::{CompressionAccounting, PropagationConfig};
use crate::quantization::DEFAULT_MASS_FLOOR;
use crate::validation::{DEFAULT_DISTANCE_SAMPLES, DEFAULT_MEAN_SAMPLES};
use crate::{Error, Result};

/// Gaussian mixture with shared covariance, or a single Gaussian with
/// diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum MixtureSpec {
    Diagonal {
        mean: Vec<f64>,
        variances: Vec<f64>,
    },
    Full {
        #[serde(default)]
        weights: Option<Vec<f64>>,
        means: Vec<Vec<f64>>,
        covariance: Vec<Vec<f64>>,
    },
}

impl MixtureSpec {
    pub fn build(&self) -> Result<GaussianMixture> {
        match self {
            MixtureSpec::Diagonal { mean, variances } => GaussianMixture::diagonal(mean, variances),
            MixtureSpec::Full { weights, means, covariance } => {
                let weights = weights.clone().unwrap_or_else(|| vec![1.0 / means.len().max(1) as f64; means.len()]);
                let means = means.iter().map(|m| DVector::from_vec(m.clone())).collect();
                GaussianMixture::new(weights, means, matrix_from_rows(covariance)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallSpec {
    pub center: MixtureSpec,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSpec {
    pub distance_samples: usize,
    pub mean_samples: usize,
}

impl Default for ValidationSpec {
    fn default() -> Self {
        Self { distance_samples: DEFAULT_DISTANCE_SAMPLES, mean_samples: DEFAULT_MEAN_SAMPLES }
    }
}

fn default_name() -> String {
    "experiment".into()
}
fn default_rho() -> u32 {
    2
}
fn default_coverage() -> f64 {
    4.0
}
fn default_budget() -> usize {
    100
}
fn default_compression() -> usize {
    10
}
fn default_mass_floor() -> f64 {
    DEFAULT_MASS_FLOOR
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub dynamics: ModelSpec,
    pub initial: BallSpec,
    pub noise: BallSpec,
    #[serde(default = "default_rho")]
    pub rho: u32,
    pub horizon: usize,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_coverage")]
    pub coverage: f64,
    #[serde(default = "default_compression")]
    pub compression: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub compression_accounting: CompressionAccounting,
    #[serde(default = "default_mass_floor")]
    pub mass_floor: f64,
    #[serde(default)]
    pub beta_rule: BetaRule,
    #[serde(default = "default_true")]
    pub tune_split: bool,
    #[serde(default)]
    pub validation: ValidationSpec,
    /// Quantization ceiling ε for the fixed-point query.
    #[serde(default)]
    pub fixed_point_epsilon: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and validates a config; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::from_json(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        if !(self.noise.radius.is_finite() && self.noise.radius >= 0.0) {
            return fail("noise ball radius must be nonnegative");
        }
        if !(self.initial.radius.is_finite() && self.initial.radius >= 0.0) {
            return fail("initial ball radius must be nonnegative");
        }
        if self.horizon < 1 {
            return fail("horizon must be at least 1");
        }
        if self.budget < 1 {
            return fail("budget must be at least 1");
        }
        if self.compression < 1 {
            return fail("compression must be at least 1");
        }
        if !(self.rho == 1 || self.rho == 2) {
            return fail("rho must be 1 or 2");
        }
        if !(self.coverage.is_finite() && self.coverage > 0.0) {
            return fail("coverage must be positive");
        }
        if !(self.mass_floor.is_finite() && self.mass_floor >= 0.0) {
            return fail("mass_floor must be nonnegative");
        }
        if let Some(eps) = self.fixed_point_epsilon {
            if !(eps.is_finite() && eps >= 0.0) {
                return fail("fixed_point_epsilon must be nonnegative");
            }
        }
        if self.validation.distance_samples < 1 || self.validation.mean_samples < 1 {
            return fail("validation sample counts must be at least 1");
        }
        Ok(())
    }

    pub fn propagation_config(&self) -> PropagationConfig {
        PropagationConfig {
            rho: self.rho,
            coverage: self.coverage,
            budget: self.budget,
            compression: self.compression,
            accounting: self.compression_accounting,
            seed: self.seed,
            mass_floor: self.mass_floor,
            beta_rule: self.beta_rule,
            tune_split: self.tune_split,
        }
    }

    pub fn build_model(&self, base_dir: &Path) -> Result<Model> {
        self.dynamics.build(base_dir).map_err(|e| Error::Config(format!("dynamics: {e}")))
    }

    pub fn initial_ball(&self) -> Result<AmbiguityBall> {
        let center = self.initial.center.build().map_err(|e| Error::Config(format!("initial center: {e}")))?;
        AmbiguityBall::new(center, self.initial.radius, self.rho)
    }

    pub fn noise_ball(&self) -> Result<AmbiguityBall> {
        let center = self.noise.center.build().map_err(|e| Error::Config(format!("noise center: {e}")))?;
        AmbiguityBall::new(center, self.noise.radius, self.rho)
    }
}

/// Parameter grid; combinations are ordered lexicographically with `budget`
/// outermost and `noise_radius` innermost.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub budget: Vec<usize>,
    pub compression: Vec<usize>,
    pub initial_radius: Vec<f64>,
    pub noise_radius: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub budget: usize,
    pub compression: usize,
    pub initial_radius: f64,
    pub noise_radius: f64,
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("sweep: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn is_empty(&self) -> bool {
        self.budget.is_empty() && self.compression.is_empty() && self.initial_radius.is_empty() && self.noise_radius.is_empty()
    }

    /// All combinations; axes left empty take the base config value.
    pub fn points(&self, base: &ExperimentConfig) -> Result<Vec<SweepPoint>> {
        if self.is_empty() {
            return Err(Error::Config("sweep spec lists no axes".into()));
        }
        let or = |v: &Vec<usize>, d: usize| if v.is_empty() { vec![d] } else { v.clone() };
        let orf = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let mut out = Vec::new();
        for &budget in &or(&self.budget, base.budget) {
            for &compression in &or(&self.compression, base.compression) {
                for &initial_radius in &orf(&self.initial_radius, base.initial.radius) {
                    for &noise_radius in &orf(&self.noise_radius, base.noise.radius) {
                        out.push(SweepPoint { budget, compression, initial_radius, noise_radius });
                    }
                }
            }
        }
        Ok(out)
    }
}

impl SweepPoint {
    /// Copy of `base` with this point's parameters and a derived seed.
    pub fn apply(&self, base: &ExperimentConfig) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        cfg.budget = self.budget;
        cfg.compression = self.compression;
        cfg.initial.radius = self.initial_radius;
        cfg.noise.radius = self.noise_radius;
        cfg.seed = self.seed(base.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    /// FNV-1a hash of the base seed and the parameter tuple.
    pub fn seed(&self, base: u64) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        feed(&base.to_le_bytes());
        feed(&(self.budget as u64).to_le_bytes());
        feed(&(self.compression as u64).to_le_bytes());
        feed(&self.initial_radius.to_bits().to_le_bytes());
        feed(&self.noise_radius.to_bits().to_le_bytes());
        h
    }
}
