//! Monte Carlo ground truth: simulate the true system, estimate empirical
//! Wasserstein distances and check containment in propagated balls.

use std::io::Write;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{DiscreteDistribution, GaussianMixture, Sample};
use crate::dynamics::Dynamics;
use crate::propagation::Trace;
use crate::transport::wasserstein_discrete;
use crate::{Error, Result};

/// Largest |a|·|b| accepted by [`empirical_wasserstein`].
pub const EMPIRICAL_COST_CAP: usize = 4_000_000;
pub const DEFAULT_DISTANCE_SAMPLES: usize = 2000;
pub const DEFAULT_MEAN_SAMPLES: usize = 10_000;

/// Sample trajectories of the true system, one point set per step.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCloud {
    pub steps: Vec<Vec<DVector<f64>>>,
    pub n_samples: usize,
    pub seed: u64,
}

impl SampleCloud {
    pub fn mean(&self, k: usize) -> DVector<f64> {
        let pts = &self.steps[k];
        pts.iter().fold(DVector::zeros(pts[0].len()), |acc, p| acc + p) / pts.len() as f64
    }

    /// Rows: k, sample index, coordinates.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let dim = self.steps[0][0].len();
        let mut header = vec!["k".to_string(), "sample".to_string()];
        header.extend((0..dim).map(|a| format!("x{a}")));
        w.write_record(&header)?;
        for (k, pts) in self.steps.iter().enumerate() {
            for (i, p) in pts.iter().enumerate() {
                let mut row = vec![k.to_string(), i.to_string()];
                row.extend(p.iter().map(|v| format!("{v:.16e}")));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Draws x₀ ~ `init` and iterates x_{k+1} = f(x_k) + ω_k with ω_k ~ `noise`.
pub fn simulate_true<M: Dynamics + ?Sized>(
    model: &M,
    init: &GaussianMixture,
    noise: &GaussianMixture,
    horizon: usize,
    n_samples: usize,
    seed: u64,
) -> Result<SampleCloud> {
    if n_samples < 1 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    for d in [init.dim(), noise.dim()] {
        if d != model.dim() {
            return Err(Error::DimensionMismatch { expected: model.dim(), got: d });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = Vec::with_capacity(horizon + 1);
    steps.push(init.sample_with(&mut rng, n_samples));
    for k in 0..horizon {
        let omega = noise.sample_with(&mut rng, n_samples);
        let next = steps[k]
            .iter()
            .zip(omega)
            .map(|(x, w)| Ok(model.eval(x)? + w))
            .collect::<Result<Vec<_>>>()?;
        steps.push(next);
    }
    Ok(SampleCloud { steps, n_samples, seed })
}

/// W_ρ between the uniform empirical measures on `a` and `b`.
pub fn empirical_wasserstein(a: &[DVector<f64>], b: &[DVector<f64>], rho: u32) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidDistribution("empty sample set".into()));
    }
    if a.len() * b.len() > EMPIRICAL_COST_CAP {
        return Err(Error::TooLarge(format!(
            "{}x{} cost entries exceed {EMPIRICAL_COST_CAP}; subsample the clouds",
            a.len(),
            b.len()
        )));
    }
    let p = DiscreteDistribution::uniform(a.to_vec())?;
    let q = DiscreteDistribution::uniform(b.to_vec())?;
    Ok(wasserstein_discrete(&p, &q, rho)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainmentRow {
    pub k: usize,
    pub empirical_w: f64,
    pub theta: f64,
    /// Distance allowance for finite-sample bias.
    pub slack: f64,
    pub mean_gap: f64,
    /// Three standard errors of the empirical mean.
    pub mean_allowance: f64,
    pub mean_violation: bool,
    pub distance_violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainmentReport {
    pub rows: Vec<ContainmentRow>,
    pub distance_samples: usize,
    pub mean_samples: usize,
    pub seed: u64,
}

impl ContainmentReport {
    pub fn mean_violations(&self) -> usize {
        self.rows.iter().filter(|r| r.mean_violation).count()
    }

    pub fn distance_violations(&self) -> usize {
        self.rows.iter().filter(|r| r.distance_violation).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "k",
            "empirical_w",
            "theta_k",
            "slack",
            "mean_gap",
            "mean_allowance",
            "mean_violation",
            "distance_violation",
        ])?;
        let f = |v: f64| format!("{v:.16e}");
        for r in &self.rows {
            w.write_record([
                r.k.to_string(),
                f(r.empirical_w),
                f(r.theta),
                f(r.slack),
                f(r.mean_gap),
                f(r.mean_allowance),
                r.mean_violation.to_string(),
                r.distance_violation.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContainmentOptions {
    /// Samples per step for the empirical distance.
    pub distance_samples: usize,
    /// Samples per step for the mean check.
    pub mean_samples: usize,
    pub seed: u64,
}

impl Default for ContainmentOptions {
    fn default() -> Self {
        Self { distance_samples: DEFAULT_DISTANCE_SAMPLES, mean_samples: DEFAULT_MEAN_SAMPLES, seed: 0 }
    }
}

/// W₂ between single Gaussians with equal covariance, if applicable.
fn equal_covariance_gap(a: &GaussianMixture, b: &GaussianMixture) -> Option<f64> {
    (a.len() == 1 && b.len() == 1 && (a.covariance() - b.covariance()).amax() <= 1e-12)
        .then(|| (&a.means()[0] - &b.means()[0]).norm())
}

/// Compares true-system samples driven by member distributions against the
/// ball sequence in `trace`.
///
/// The mean check ‖E_true − E_center‖ ≤ θ_k + 3·stderr is the hard criterion;
/// the empirical distance is compared against θ_k plus a finite-sample slack
/// 2·n^{−1/max(d,2)}·diameter.
pub fn containment_report<M: Dynamics + ?Sized>(
    trace: &Trace,
    model: &M,
    member_init: &GaussianMixture,
    member_noise: &GaussianMixture,
    opts: &ContainmentOptions,
) -> Result<ContainmentReport> {
    let rho = trace.config.rho;
    let init = &trace.balls[0];
    for (member, ball, what) in [(member_init, init, "initial"), (member_noise, &trace.noise, "noise")] {
        if let Some(gap) = equal_covariance_gap(member, &ball.center) {
            if gap > ball.radius() + 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "{what} member is {gap} from the center, outside radius {}",
                    ball.radius()
                )));
            }
        }
    }
    let horizon = trace.balls.len() - 1;
    let n_mean = opts.mean_samples.max(opts.distance_samples);
    let cloud = simulate_true(model, member_init, member_noise, horizon, n_mean, opts.seed)?;
    let dim = model.dim();
    let mut rows = Vec::with_capacity(horizon + 1);
    for (k, ball) in trace.balls.iter().enumerate() {
        let pts = &cloud.steps[k];
        let mean = cloud.mean(k);
        let var: f64 = pts.iter().map(|p| (p - &mean).norm_squared()).sum::<f64>() / (pts.len() as f64 - 1.0).max(1.0);
        let stderr = (var / pts.len() as f64).sqrt();
        let mean_gap = (&mean - ball.center.mean()).norm();
        let mean_allowance = 3.0 * stderr;

        let true_pts = &pts[..opts.distance_samples.min(pts.len())];
        let center_pts = ball.center.sample(true_pts.len(), opts.seed.wrapping_add(1 + k as u64));
        let empirical_w = empirical_wasserstein(true_pts, &center_pts, rho)?;
        let centroid = true_pts.iter().chain(&center_pts).fold(DVector::zeros(dim), |acc, p| acc + p)
            / (2 * true_pts.len()) as f64;
        let diameter =
            2.0 * true_pts.iter().chain(&center_pts).map(|p| (p - &centroid).norm()).fold(0.0, f64::max);
        let slack = 2.0 * (true_pts.len() as f64).powf(-1.0 / dim.max(2) as f64) * diameter;
        rows.push(ContainmentRow {
            k,
            empirical_w,
            theta: ball.radius(),
            slack,
            mean_gap,
            mean_allowance,
            mean_violation: mean_gap > ball.radius() + mean_allowance,
            distance_violation: empirical_w > ball.radius() + slack,
        });
    }
    Ok(ContainmentReport { rows, distance_samples: opts.distance_samples, mean_samples: n_mean, seed: opts.seed })
}
