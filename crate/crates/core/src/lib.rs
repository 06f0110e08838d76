//! Propagation of ρ-Wasserstein ambiguity sets through discrete-time
//! nonlinear systems with additive noise.
//!
//! Each step quantizes the current Gaussian-mixture center on an
//! eigenbasis-aligned grid, pushes the quantized support through the
//! dynamics, compresses it with weighted k-means and convolves with the noise
//! center. The radius is updated from the quantization penalty, a norm
//! linearization of the dynamics and the LP-certified compression error.

pub mod compression;
pub mod config;
pub mod distributions;
pub mod dynamics;
mod error;
mod normal;
pub mod linalg;
pub mod propagation;
pub mod quantization;
pub mod transport;
pub mod validation;

pub use error::{Error, Result};

pub use compression::{compress, CompressionResult};
pub use distributions::{
    convolve, mixture_moments, AmbiguityBall, DiscreteDistribution, GaussianMixture, Sample,
};
pub use dynamics::{Dynamics, Model, ModelSpec, NormLinearization};
pub use propagation::{
    fixed_point_bound, propagate, propagate_step, radius_update, CompressionAccounting,
    PropagationConfig, StepReport, Trace,
};
pub use quantization::{build_grid, quantize, truncated_second_moment, QuantizationResult, Quantizer};
pub use transport::{wasserstein_bruteforce, wasserstein_discrete, TransportPlan};
