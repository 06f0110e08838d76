//! Iterated propagation of ambiguity balls: quantize, push forward,
//! compress, convolve with the noise center and update the radius.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::compression::compress;
use crate::distributions::{convolve, AmbiguityBall};
use crate::dynamics::{BetaRule, Dynamics, LinearizationHint};
use crate::quantization::{build_grid, quantize_with, QuantizeOptions, DEFAULT_MASS_FLOOR};
use crate::{Error, Result};

/// Where the compression error enters the radius update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressionAccounting {
    /// Added after the dynamics bound: θ⁺ = θ_ω + (α̂(θ + θ_Δ)^ρ + β)^{1/ρ} + θ_compr.
    #[default]
    Post,
    /// Added to the previous radius before the dynamics bound:
    /// θ⁺ = θ_ω + (α̂(θ + θ_compr + θ_Δ)^ρ + β)^{1/ρ}.
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationConfig {
    pub rho: u32,
    /// Grid coverage γ in standard deviations.
    pub coverage: f64,
    /// Maximum number of quantization cells.
    pub budget: usize,
    /// Support size after compression.
    pub compression: usize,
    pub accounting: CompressionAccounting,
    pub seed: u64,
    pub mass_floor: f64,
    pub beta_rule: BetaRule,
    /// Choose the piecewise-linear split parameter per step instead of t = 1.
    pub tune_split: bool,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            rho: 2,
            coverage: 4.0,
            budget: 100,
            compression: 10,
            accounting: CompressionAccounting::Post,
            seed: 0,
            mass_floor: DEFAULT_MASS_FLOOR,
            beta_rule: BetaRule::Guarded,
            tune_split: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Index of the ball this step produced.
    pub k: usize,
    pub theta_x: f64,
    pub theta_delta: f64,
    pub theta_compr: f64,
    pub alpha_hat: f64,
    pub beta_term: f64,
    /// Components of the new center.
    pub support_size: usize,
    pub cells: usize,
    pub dropped_mass: f64,
    pub split: Option<f64>,
    pub wall_time: f64,
    pub center_mean: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trace {
    pub noise: AmbiguityBall,
    /// Balls 0..=K, starting with the initial ball.
    pub balls: Vec<AmbiguityBall>,
    pub reports: Vec<StepReport>,
    pub config: PropagationConfig,
}

impl Trace {
    pub fn radii(&self) -> Vec<f64> {
        self.balls.iter().map(AmbiguityBall::radius).collect()
    }

    pub fn final_radius(&self) -> f64 {
        self.balls.last().map_or(0.0, AmbiguityBall::radius)
    }

    /// One row per ball; the initial row has zero step diagnostics.
    pub fn write_steps_csv<W: Write>(&self, out: W) -> Result<()> {
        let dim = self.noise.center.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = [
            "k", "theta_x", "theta_delta", "theta_compr", "alpha_hat", "beta_term", "support_size", "wall_time",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((0..dim).map(|a| format!("center_mean_{a}")));
        w.write_record(&header)?;
        let f = |v: f64| format!("{v:.16e}");
        let initial = &self.balls[0];
        let mut row = vec!["0".to_string(), f(initial.radius()), f(0.0), f(0.0), f(0.0), f(0.0)];
        row.push(initial.center.len().to_string());
        row.push(f(0.0));
        row.extend(initial.center.mean().iter().map(|v| f(*v)));
        w.write_record(&row)?;
        for r in &self.reports {
            let mut row = vec![
                r.k.to_string(),
                f(r.theta_x),
                f(r.theta_delta),
                f(r.theta_compr),
                f(r.alpha_hat),
                f(r.beta_term),
                r.support_size.to_string(),
                f(r.wall_time),
            ];
            row.extend(r.center_mean.iter().map(|v| f(*v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_nonnegative(values: &[(&str, f64)]) -> Result<()> {
    for (name, v) in values {
        if !(v.is_finite() && *v >= 0.0) {
            return Err(Error::InvalidArgument(format!("{name} must be finite and nonnegative, got {v}")));
        }
    }
    Ok(())
}

/// θ_ω + (α̂(θ_k + θ_Δ)^ρ + β)^{1/ρ} + θ_compr.
pub fn radius_update(
    theta_k: f64,
    theta_delta: f64,
    theta_compr: f64,
    theta_omega: f64,
    alpha_hat: f64,
    beta_term: f64,
    rho: u32,
) -> Result<f64> {
    radius_update_with(
        CompressionAccounting::Post,
        theta_k,
        theta_delta,
        theta_compr,
        theta_omega,
        alpha_hat,
        beta_term,
        rho,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn radius_update_with(
    accounting: CompressionAccounting,
    theta_k: f64,
    theta_delta: f64,
    theta_compr: f64,
    theta_omega: f64,
    alpha_hat: f64,
    beta_term: f64,
    rho: u32,
) -> Result<f64> {
    check_nonnegative(&[
        ("theta_k", theta_k),
        ("theta_delta", theta_delta),
        ("theta_compr", theta_compr),
        ("theta_omega", theta_omega),
        ("alpha_hat", alpha_hat),
        ("beta_term", beta_term),
    ])?;
    if rho < 1 {
        return Err(Error::InvalidArgument("Wasserstein order must be at least 1".into()));
    }
    let r = f64::from(rho);
    let dyn_bound = |theta: f64| (alpha_hat * theta.powf(r) + beta_term).powf(1.0 / r);
    Ok(match accounting {
        CompressionAccounting::Post => theta_omega + dyn_bound(theta_k + theta_delta) + theta_compr,
        CompressionAccounting::Paper => theta_omega + dyn_bound(theta_k + theta_compr + theta_delta),
    })
}

/// θ* = θ_ω/(1 − L) + L·ε/(1 − L), the limit of θ ↦ θ_ω + L(θ + ε).
pub fn fixed_point_bound(theta_omega: f64, lipschitz: f64, epsilon: f64, rho: u32) -> Result<f64> {
    check_nonnegative(&[("theta_omega", theta_omega), ("lipschitz", lipschitz), ("epsilon", epsilon)])?;
    if rho < 1 {
        return Err(Error::InvalidArgument("Wasserstein order must be at least 1".into()));
    }
    if lipschitz >= 1.0 {
        return Err(Error::NotContractive(lipschitz));
    }
    Ok((theta_omega + lipschitz * epsilon) / (1.0 - lipschitz))
}

/// One propagation step from `ball` (index `k`) to index `k + 1`.
pub fn propagate_step<M: Dynamics + ?Sized>(
    ball: &AmbiguityBall,
    noise: &AmbiguityBall,
    model: &M,
    cfg: &PropagationConfig,
    k: usize,
) -> Result<(AmbiguityBall, StepReport)> {
    let start = Instant::now();
    if ball.order() != cfg.rho || noise.order() != cfg.rho {
        return Err(Error::InvalidArgument(format!(
            "ball orders ({}, {}) differ from configured rho {}",
            ball.order(),
            noise.order(),
            cfg.rho
        )));
    }
    let dim = model.dim();
    for d in [ball.center.dim(), noise.center.dim()] {
        if d != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: d });
        }
    }
    let grid = build_grid(&ball.center, cfg.budget, cfg.coverage)?;
    let quantized = quantize_with(&ball.center, &grid, &QuantizeOptions { rho: cfg.rho, mass_floor: cfg.mass_floor })?;
    let pushed = model.pushforward(&quantized.discrete)?;
    let step_seed = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64);
    let compressed = compress(&pushed, cfg.compression, cfg.rho, step_seed)?;

    let rho = f64::from(cfg.rho);
    let inner = match cfg.accounting {
        CompressionAccounting::Post => ball.radius() + quantized.theta_delta,
        CompressionAccounting::Paper => ball.radius() + compressed.theta_compr + quantized.theta_delta,
    };
    let masses = quantized.discrete.weights();
    let hint = LinearizationHint {
        masses: Some(masses),
        ebar: cfg.tune_split.then(|| inner.powf(rho)),
        beta_rule: cfg.beta_rule,
    };
    let lin = model.norm_linearization_with(quantized.discrete.locations(), cfg.rho, &hint)?;
    let alpha_hat = lin.alpha_hat();
    let beta_term = lin.weighted_beta(masses);
    let theta = radius_update_with(
        cfg.accounting,
        ball.radius(),
        quantized.theta_delta,
        compressed.theta_compr,
        noise.radius(),
        alpha_hat,
        beta_term,
        cfg.rho,
    )?;
    if !theta.is_finite() {
        return Err(Error::Numerical(format!("radius diverged at step {}", k + 1)));
    }
    let center = convolve(&compressed.compressed, &noise.center)?;
    let report = StepReport {
        k: k + 1,
        theta_x: theta,
        theta_delta: quantized.theta_delta,
        theta_compr: compressed.theta_compr,
        alpha_hat,
        beta_term,
        support_size: center.len(),
        cells: quantized.discrete.len(),
        dropped_mass: quantized.dropped_mass,
        split: lin.split,
        wall_time: start.elapsed().as_secs_f64(),
        center_mean: center.mean().iter().copied().collect(),
    };
    Ok((AmbiguityBall::new(center, theta, cfg.rho)?, report))
}

/// Runs `horizon` steps; the trace holds `horizon + 1` balls.
pub fn propagate<M: Dynamics + ?Sized>(
    initial: &AmbiguityBall,
    noise: &AmbiguityBall,
    model: &M,
    horizon: usize,
    cfg: &PropagationConfig,
) -> Result<Trace> {
    if horizon < 1 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let mut balls = vec![initial.clone()];
    let mut reports = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let (next, report) = propagate_step(&balls[k], noise, model, cfg, k)?;
        balls.push(next);
        reports.push(report);
    }
    Ok(Trace { noise: noise.clone(), balls, reports, config: cfg.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::GaussianMixture;
    use crate::dynamics::{LinearModel, PiecewiseLinearModel};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn ball(mean: &[f64], var: &[f64], radius: f64) -> AmbiguityBall {
        AmbiguityBall::new(GaussianMixture::diagonal(mean, var).unwrap(), radius, 2).unwrap()
    }

    #[test]
    fn radius_update_examples() {
        assert!((radius_update(0.1, 0.05, 0.0, 0.01, 0.64, 0.0, 2).unwrap() - 0.13).abs() < 1e-12);
        assert!((radius_update(0.0, 0.0, 0.0, 0.0, 1.0, 0.04, 2).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(radius_update(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2).unwrap(), 0.0);
        assert!(radius_update(-0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 2).is_err());
    }

    #[test]
    fn paper_accounting_scales_compression() {
        let post = radius_update_with(CompressionAccounting::Post, 0.1, 0.0, 0.1, 0.0, 0.25, 0.0, 2).unwrap();
        let paper = radius_update_with(CompressionAccounting::Paper, 0.1, 0.0, 0.1, 0.0, 0.25, 0.0, 2).unwrap();
        assert!((post - 0.15).abs() < 1e-12);
        assert!((paper - 0.1).abs() < 1e-12);
    }

    #[test]
    fn fixed_point_examples() {
        assert!((fixed_point_bound(0.01, 0.8, 0.0, 2).unwrap() - 0.05).abs() < 1e-12);
        assert!((fixed_point_bound(0.01, 0.8, 0.05, 2).unwrap() - 0.25).abs() < 1e-12);
        assert!(matches!(fixed_point_bound(0.01, 1.0, 0.0, 2), Err(Error::NotContractive(_))));
    }

    #[test]
    fn iteration_reaches_fixed_point() {
        let (omega, l, eps) = (0.01, 0.8, 0.05);
        let star = fixed_point_bound(omega, l, eps, 2).unwrap();
        let mut theta = 0.0;
        for _ in 0..2000 {
            theta = radius_update(theta, eps, 0.0, omega, l * l, 0.0, 2).unwrap();
        }
        assert!((theta - star).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn radius_update_is_monotone(
            v in prop::collection::vec(0.0f64..2.0, 6),
            idx in 0usize..6,
            bump in 0.0f64..1.0,
            rho in 1u32..=3,
        ) {
            let mut w = v.clone();
            w[idx] += bump;
            let a = radius_update(v[0], v[1], v[2], v[3], v[4], v[5], rho).unwrap();
            let b = radius_update(w[0], w[1], w[2], w[3], w[4], w[5], rho).unwrap();
            prop_assert!(b >= a - 1e-12);
        }
    }

    #[test]
    fn identity_grows_by_quantization_penalty() {
        let model = LinearModel::identity(2);
        let noise = AmbiguityBall::new(GaussianMixture::diagonal(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0, 2).unwrap();
        let cfg = PropagationConfig { budget: 1, ..Default::default() };
        let (next, rep) = propagate_step(&ball(&[0.0, 0.0], &[1.0, 1.0], 0.3), &noise, &model, &cfg, 0).unwrap();
        assert!((rep.theta_delta - 2f64.sqrt()).abs() < 1e-12);
        assert!((next.radius() - (0.3 + 2f64.sqrt())).abs() < 1e-12);
        assert!(next.center.mean().norm() < 1e-12);
    }

    #[test]
    fn half_identity_single_cell() {
        let model = LinearModel::new(DMatrix::identity(2, 2) * 0.5).unwrap();
        let noise = ball(&[0.0, 0.0], &[0.01, 0.01], 0.02);
        let cfg = PropagationConfig { budget: 1, ..Default::default() };
        let (next, _) = propagate_step(&ball(&[1.0, 0.0], &[1.0, 3.0], 0.2), &noise, &model, &cfg, 0).unwrap();
        assert!((next.radius() - (0.02 + 0.5 * (0.2 + 2.0))).abs() < 1e-12);
        assert_eq!(next.center.covariance(), noise.center.covariance());
    }

    #[test]
    fn double_spiral_smoke_and_soundness_chain() {
        let model = PiecewiseLinearModel::double_spiral();
        let initial = ball(&[0.1, -0.5], &[1e-3, 1e-3], 0.01);
        let noise = ball(&[0.0, 0.0], &[1e-4, 1e-4], 0.01);
        let cfg = PropagationConfig::default();
        let trace = propagate(&initial, &noise, &model, 5, &cfg).unwrap();
        assert_eq!(trace.balls.len(), 6);
        let mut prev = initial.radius();
        for r in &trace.reports {
            assert_eq!(r.support_size, cfg.compression);
            for v in [r.theta_x, r.theta_delta, r.theta_compr, r.alpha_hat, r.beta_term] {
                assert!(v.is_finite() && v >= 0.0);
            }
            let dyn_part = (r.alpha_hat * (prev + r.theta_delta).powi(2) + r.beta_term).sqrt();
            assert!((r.theta_x - (0.01 + dyn_part + r.theta_compr)).abs() < 1e-12);
            prev = r.theta_x;
        }
        let mut csv = Vec::new();
        trace.write_steps_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 7);
    }

    #[test]
    fn contractive_linear_stays_below_fixed_point() {
        let (s, c) = 0.4f64.sin_cos();
        let model = LinearModel::new(DMatrix::from_row_slice(2, 2, &[0.7 * c, -0.7 * s, 0.7 * s, 0.7 * c])).unwrap();
        let initial = ball(&[1.0, 1.0], &[0.01, 0.02], 0.05);
        let noise = ball(&[0.0, 0.0], &[0.001, 0.001], 0.01);
        let trace = propagate(&initial, &noise, &model, 15, &PropagationConfig::default()).unwrap();
        let eps = trace.reports.iter().map(|r| r.theta_delta).fold(0.0, f64::max);
        let compr = trace.reports.iter().map(|r| r.theta_compr).fold(0.0, f64::max);
        let star = fixed_point_bound(0.01 + compr, 0.7, eps, 2).unwrap();
        for r in trace.radii() {
            assert!(r <= 0.05f64.max(star) + 1e-9);
        }
        let center = &trace.balls.last().unwrap().center;
        assert!(center.mean().norm() < 0.1);
        assert_eq!(center.means().len(), center.len());
    }

    #[test]
    fn order_mismatch_is_rejected() {
        let model = LinearModel::identity(1);
        let b = ball(&[0.0], &[1.0], 0.0);
        let cfg = PropagationConfig { rho: 1, ..Default::default() };
        assert!(propagate_step(&b, &b, &model, &cfg, 0).is_err());
    }
}
