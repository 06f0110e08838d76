//! Dynamics models f in x⁺ = f(x) + ω and their norm linearizations
//! ‖f(x) − f(c)‖^ρ ≤ α‖x − c‖^ρ + β.

mod interval;
mod linear;
mod neural;
mod piecewise;
mod tank;

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::distributions::DiscreteDistribution;
use crate::linalg::matrix_from_rows;
use crate::{Error, Result};

pub use linear::LinearModel;
pub use neural::{Layer, NetFile, NeuralNetModel, DEFAULT_SUBDIVISIONS};
pub use piecewise::{BetaRule, Halfspace, ModeSpec, PiecewiseLinearModel};
pub use tank::{QuadrupleTankModel, QuadrupleTankParams};

/// Per-location norm linearization pairs (α_ℓ, β_ℓ) and a Lipschitz bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormLinearization {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// Upper bound on the global Lipschitz constant.
    pub lipschitz: f64,
    /// Split parameter t used by the piecewise-linear rule, if any.
    pub split: Option<f64>,
}

impl NormLinearization {
    pub(crate) fn uniform(len: usize, alpha: f64, lipschitz: f64) -> Self {
        Self { alphas: vec![alpha; len], betas: vec![0.0; len], lipschitz, split: None }
    }

    /// α̂ = max_ℓ α_ℓ.
    pub fn alpha_hat(&self) -> f64 {
        self.alphas.iter().copied().fold(0.0, f64::max)
    }

    /// Σ_ℓ w_ℓ β_ℓ.
    pub fn weighted_beta(&self, masses: &[f64]) -> f64 {
        self.betas.iter().zip(masses).map(|(b, w)| b * w).sum()
    }

    pub fn beta_max(&self) -> f64 {
        self.betas.iter().copied().fold(0.0, f64::max)
    }
}

/// Optional information used to tighten a norm linearization.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearizationHint<'a> {
    /// Probability mass attached to each location.
    pub masses: Option<&'a [f64]>,
    /// Expected value of ‖x − c_ℓ‖^ρ that α multiplies in the radius update.
    pub ebar: Option<f64>,
    pub beta_rule: BetaRule,
}

pub trait Dynamics: Send + Sync {
    fn dim(&self) -> usize;

    fn family(&self) -> &'static str;

    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// f#d: locations mapped by `eval`, weights unchanged.
    fn pushforward(&self, d: &DiscreteDistribution) -> Result<DiscreteDistribution> {
        d.map_locations(|x| self.eval(x))
    }

    fn norm_linearization(&self, locations: &[DVector<f64>], rho: u32) -> Result<NormLinearization> {
        self.norm_linearization_with(locations, rho, &LinearizationHint::default())
    }

    fn norm_linearization_with(
        &self,
        locations: &[DVector<f64>],
        rho: u32,
        hint: &LinearizationHint<'_>,
    ) -> Result<NormLinearization>;

    /// Upper bound on the Lipschitz constant. For piecewise-linear maps this
    /// holds within each mode only.
    fn lipschitz_bound(&self) -> Result<f64>;

    /// Whether `lipschitz_bound` holds across the whole domain.
    fn is_continuous(&self) -> bool;
}

pub(crate) fn check_rho(rho: u32) -> Result<()> {
    if rho == 1 || rho == 2 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("norm linearization supports rho in {{1, 2}}, got {rho}")))
    }
}

pub(crate) fn check_point(x: &DVector<f64>, dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite state".into()));
    }
    Ok(())
}

/// JSON description of a model, tagged by `family`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Linear {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
    },
    PiecewiseLinear {
        modes: Vec<ModeSpec>,
    },
    /// Built-in two-mode rotation benchmark.
    DoubleSpiral,
    NeuralNet {
        #[serde(default)]
        layers: Option<Vec<Layer>>,
        /// Path to a weights file, relative to the config file.
        #[serde(default)]
        weights_file: Option<String>,
        #[serde(default)]
        input_box: Option<Vec<[f64; 2]>>,
        #[serde(default)]
        subdivisions: Option<usize>,
    },
    QuadrupleTank(#[serde(default)] QuadrupleTankParams),
}

impl ModelSpec {
    /// Builds the model, resolving relative file paths against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<Model> {
        Ok(match self {
            ModelSpec::Linear { a } => Model::Linear(LinearModel::new(matrix_from_rows(a)?)?),
            ModelSpec::PiecewiseLinear { modes } => Model::PiecewiseLinear(PiecewiseLinearModel::from_specs(modes)?),
            ModelSpec::DoubleSpiral => Model::PiecewiseLinear(PiecewiseLinearModel::double_spiral()),
            ModelSpec::NeuralNet { layers, weights_file, input_box, subdivisions } => {
                let file = match (layers, weights_file) {
                    (Some(l), None) => NetFile { layers: l.clone(), input_box: None },
                    (None, Some(path)) => NetFile::load(&base_dir.join(path))?,
                    _ => {
                        return Err(Error::Config("neural_net needs exactly one of layers or weights_file".into()))
                    }
                };
                let input_box = input_box.clone().or(file.input_box);
                Model::NeuralNet(NeuralNetModel::new(
                    &file.layers,
                    input_box.as_deref(),
                    subdivisions.unwrap_or(DEFAULT_SUBDIVISIONS),
                )?)
            }
            ModelSpec::QuadrupleTank(p) => Model::QuadrupleTank(QuadrupleTankModel::new(p.clone())?),
        })
    }
}

/// Any supported dynamics model.
#[derive(Debug, Clone)]
pub enum Model {
    Linear(LinearModel),
    PiecewiseLinear(PiecewiseLinearModel),
    NeuralNet(NeuralNetModel),
    QuadrupleTank(QuadrupleTankModel),
}

impl Model {
    fn inner(&self) -> &dyn Dynamics {
        match self {
            Model::Linear(m) => m,
            Model::PiecewiseLinear(m) => m,
            Model::NeuralNet(m) => m,
            Model::QuadrupleTank(m) => m,
        }
    }
}

impl Dynamics for Model {
    fn dim(&self) -> usize {
        self.inner().dim()
    }

    fn family(&self) -> &'static str {
        self.inner().family()
    }

    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner().eval(x)
    }

    fn norm_linearization_with(
        &self,
        locations: &[DVector<f64>],
        rho: u32,
        hint: &LinearizationHint<'_>,
    ) -> Result<NormLinearization> {
        self.inner().norm_linearization_with(locations, rho, hint)
    }

    fn lipschitz_bound(&self) -> Result<f64> {
        self.inner().lipschitz_bound()
    }

    fn is_continuous(&self) -> bool {
        self.inner().is_continuous()
    }
}
