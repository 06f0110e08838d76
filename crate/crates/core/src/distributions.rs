//! Gaussian mixtures with a shared covariance, discrete distributions and
//! Wasserstein ambiguity balls.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{matrix_from_rows, matrix_to_rows, psd_eigen, vector_to_vec, Eigenbasis};
use crate::{Error, Result};

const WEIGHT_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidDistribution("empty support".into()));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::InvalidDistribution(format!("weight {w} is negative or non-finite")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::InvalidDistribution(format!("weights sum to {sum}, expected 1")));
    }
    Ok(())
}

fn check_points(points: &[DVector<f64>], dim: usize) -> Result<()> {
    for p in points {
        if p.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDistribution("non-finite coordinate".into()));
        }
    }
    Ok(())
}

fn normalized(mut weights: Vec<f64>) -> Vec<f64> {
    let sum: f64 = weights.iter().sum();
    if sum > 0.0 {
        weights.iter_mut().for_each(|w| *w /= sum);
    }
    weights
}

/// A Gaussian mixture whose components share one covariance matrix.
///
/// The eigendecomposition of the covariance is computed once on construction
/// and drives both sampling and quantization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixture", into = "RawMixture")]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariance: DMatrix<f64>,
    eigen: Eigenbasis,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<DVector<f64>>, covariance: DMatrix<f64>) -> Result<Self> {
        check_weights(&weights)?;
        if weights.len() != means.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} weights for {} means",
                weights.len(),
                means.len()
            )));
        }
        let dim = covariance.nrows();
        if covariance.ncols() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: covariance.ncols() });
        }
        if dim == 0 {
            return Err(Error::InvalidDistribution("zero-dimensional mixture".into()));
        }
        check_points(&means, dim)?;
        if covariance.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDistribution("non-finite covariance".into()));
        }
        let asym = (&covariance - covariance.transpose()).abs().max();
        if asym > SYMMETRY_TOL {
            return Err(Error::InvalidDistribution(format!("covariance not symmetric ({asym:e})")));
        }
        let eigen = psd_eigen(&covariance)?;
        let err = (eigen.reconstruct() - &covariance).abs().max();
        if err > 1e-9 {
            return Err(Error::Numerical(format!("eigendecomposition residual {err:e}")));
        }
        Ok(Self { weights, means, covariance, eigen })
    }

    /// Builds a mixture from weights that are renormalized before validation.
    pub(crate) fn from_unnormalized(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariance: DMatrix<f64>,
    ) -> Result<Self> {
        Self::new(normalized(weights), means, covariance)
    }

    /// Single Gaussian N(mean, covariance).
    pub fn gaussian(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], covariance)
    }

    /// N(mean, diag(variances)).
    pub fn diagonal(mean: &[f64], variances: &[f64]) -> Result<Self> {
        if mean.len() != variances.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), got: variances.len() });
        }
        Self::gaussian(
            DVector::from_column_slice(mean),
            DMatrix::from_diagonal(&DVector::from_column_slice(variances)),
        )
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn eigenbasis(&self) -> &Eigenbasis {
        &self.eigen
    }

    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        mixture_moments(self)
    }

    pub fn mean(&self) -> DVector<f64> {
        weighted_mean(&self.weights, &self.means, self.dim())
    }

    fn draw_component<R: Rng + ?Sized>(&self, component: usize, rng: &mut R) -> DVector<f64> {
        let dim = self.dim();
        let std = self.eigen.std_devs();
        let z = DVector::from_fn(dim, |i, _| {
            let g: f64 = rng.sample(StandardNormal);
            g * std[i]
        });
        &self.means[component] + &self.eigen.rotation * z
    }
}

#[derive(Serialize, Deserialize)]
struct RawMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariance: Vec<Vec<f64>>,
}

impl TryFrom<RawMixture> for GaussianMixture {
    type Error = Error;

    fn try_from(raw: RawMixture) -> Result<Self> {
        let means = raw.means.into_iter().map(DVector::from_vec).collect();
        GaussianMixture::new(raw.weights, means, matrix_from_rows(&raw.covariance)?)
    }
}

impl From<GaussianMixture> for RawMixture {
    fn from(g: GaussianMixture) -> Self {
        RawMixture {
            means: g.means.iter().map(vector_to_vec).collect(),
            covariance: matrix_to_rows(&g.covariance),
            weights: g.weights,
        }
    }
}

/// Finitely supported probability distribution Σ wᵢ δ_{cᵢ}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDiscrete", into = "RawDiscrete")]
pub struct DiscreteDistribution {
    weights: Vec<f64>,
    locations: Vec<DVector<f64>>,
}

impl DiscreteDistribution {
    pub fn new(weights: Vec<f64>, locations: Vec<DVector<f64>>) -> Result<Self> {
        check_weights(&weights)?;
        if weights.len() != locations.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} weights for {} locations",
                weights.len(),
                locations.len()
            )));
        }
        let dim = locations[0].len();
        if dim == 0 {
            return Err(Error::InvalidDistribution("zero-dimensional locations".into()));
        }
        check_points(&locations, dim)?;
        Ok(Self { weights, locations })
    }

    pub fn from_unnormalized(weights: Vec<f64>, locations: Vec<DVector<f64>>) -> Result<Self> {
        Self::new(normalized(weights), locations)
    }

    pub fn dirac(location: DVector<f64>) -> Result<Self> {
        Self::new(vec![1.0], vec![location])
    }

    /// Uniform empirical measure on the given points.
    pub fn uniform(points: Vec<DVector<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        let w = 1.0 / points.len() as f64;
        Self::from_unnormalized(vec![w; points.len()], points)
    }

    pub fn dim(&self) -> usize {
        self.locations[0].len()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn locations(&self) -> &[DVector<f64>] {
        &self.locations
    }

    pub fn mean(&self) -> DVector<f64> {
        weighted_mean(&self.weights, &self.locations, self.dim())
    }

    /// Applies `f` to every location, keeping the weights.
    pub fn map_locations<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    {
        let locations = self.locations.iter().map(&mut f).collect::<Result<Vec<_>>>()?;
        Self::new(self.weights.clone(), locations)
    }
}

#[derive(Serialize, Deserialize)]
struct RawDiscrete {
    weights: Vec<f64>,
    locations: Vec<Vec<f64>>,
}

impl TryFrom<RawDiscrete> for DiscreteDistribution {
    type Error = Error;

    fn try_from(raw: RawDiscrete) -> Result<Self> {
        DiscreteDistribution::new(raw.weights, raw.locations.into_iter().map(DVector::from_vec).collect())
    }
}

impl From<DiscreteDistribution> for RawDiscrete {
    fn from(d: DiscreteDistribution) -> Self {
        RawDiscrete {
            locations: d.locations.iter().map(vector_to_vec).collect(),
            weights: d.weights,
        }
    }
}

/// ρ-Wasserstein ball of radius `radius` around a Gaussian-mixture center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBall", into = "RawBall")]
pub struct AmbiguityBall {
    pub center: GaussianMixture,
    radius: f64,
    order: u32,
}

impl AmbiguityBall {
    pub fn new(center: GaussianMixture, radius: f64, order: u32) -> Result<Self> {
        if !radius.is_finite() || radius < 0.0 {
            return Err(Error::InvalidArgument(format!("radius must be finite and nonnegative, got {radius}")));
        }
        if order < 1 {
            return Err(Error::InvalidArgument("Wasserstein order must be at least 1".into()));
        }
        Ok(Self { center, radius, order })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn order(&self) -> u32 {
        self.order
    }
}

#[derive(Serialize, Deserialize)]
struct RawBall {
    center: GaussianMixture,
    radius: f64,
    order: u32,
}

impl TryFrom<RawBall> for AmbiguityBall {
    type Error = Error;

    fn try_from(raw: RawBall) -> Result<Self> {
        AmbiguityBall::new(raw.center, raw.radius, raw.order)
    }
}

impl From<AmbiguityBall> for RawBall {
    fn from(b: AmbiguityBall) -> Self {
        RawBall { center: b.center, radius: b.radius, order: b.order }
    }
}

fn weighted_mean(weights: &[f64], points: &[DVector<f64>], dim: usize) -> DVector<f64> {
    weights.iter().zip(points).fold(DVector::zeros(dim), |acc, (w, p)| acc + p * *w)
}

/// Mean and covariance of a shared-covariance Gaussian mixture.
pub fn mixture_moments(gmm: &GaussianMixture) -> (DVector<f64>, DMatrix<f64>) {
    let mean = gmm.mean();
    let mut cov = gmm.covariance.clone();
    for (w, m) in gmm.weights.iter().zip(&gmm.means) {
        let d = m - &mean;
        cov += (&d * d.transpose()) * *w;
    }
    // symmetrize rounding noise
    let cov = (&cov + cov.transpose()) * 0.5;
    (mean, cov)
}

/// Convolution of a discrete distribution with a Gaussian mixture.
///
/// Component (i, j) has mean cᵢ + mⱼ and weight wᵢ·vⱼ; components are ordered
/// with the discrete index outermost.
pub fn convolve(d: &DiscreteDistribution, noise: &GaussianMixture) -> Result<GaussianMixture> {
    if d.dim() != noise.dim() {
        return Err(Error::DimensionMismatch { expected: noise.dim(), got: d.dim() });
    }
    let count = d.len() * noise.len();
    let mut weights = Vec::with_capacity(count);
    let mut means = Vec::with_capacity(count);
    for (wi, ci) in d.weights.iter().zip(&d.locations) {
        for (vj, mj) in noise.weights.iter().zip(&noise.means) {
            weights.push(wi * vj);
            means.push(ci + mj);
        }
    }
    GaussianMixture::from_unnormalized(weights, means, noise.covariance.clone())
}

/// Seeded sampling. Identical seeds give bit-identical draws.
pub trait Sample {
    fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<DVector<f64>>;

    fn sample(&self, n: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng, n)
    }
}

impl Sample for GaussianMixture {
    fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<DVector<f64>> {
        if self.len() == 1 {
            return (0..n).map(|_| self.draw_component(0, rng)).collect();
        }
        let index = WeightedIndex::new(&self.weights).expect("validated weights");
        (0..n)
            .map(|_| {
                let c = index.sample(rng);
                self.draw_component(c, rng)
            })
            .collect()
    }
}

impl Sample for DiscreteDistribution {
    fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<DVector<f64>> {
        if self.len() == 1 {
            return vec![self.locations[0].clone(); n];
        }
        let index = WeightedIndex::new(&self.weights).expect("validated weights");
        (0..n).map(|_| self.locations[index.sample(rng)].clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn single_component_moments_are_identity() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let g = GaussianMixture::gaussian(v(&[1.0, -2.0]), cov.clone()).unwrap();
        let (m, c) = mixture_moments(&g);
        assert_eq!(m, v(&[1.0, -2.0]));
        assert!((c - cov).abs().max() < 1e-15);
    }

    #[test]
    fn symmetric_pair_moments() {
        let g = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![v(&[-1.0, 0.0]), v(&[1.0, 0.0])],
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let (m, c) = mixture_moments(&g);
        assert!(m.norm() < 1e-15);
        assert!((c - DMatrix::from_diagonal(&v(&[2.0, 1.0]))).abs().max() < 1e-15);
    }

    #[test]
    fn convolve_shifts_components() {
        let d = DiscreteDistribution::new(vec![0.3, 0.7], vec![v(&[0.0, 0.0]), v(&[1.0, 0.0])]).unwrap();
        let g = GaussianMixture::gaussian(v(&[0.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
        let out = convolve(&d, &g).unwrap();
        assert_eq!(out.weights(), &[0.3, 0.7]);
        assert_eq!(out.means(), &[v(&[0.0, 0.0]), v(&[1.0, 0.0])]);
        assert_eq!(out.covariance(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn convolve_with_origin_dirac_is_identity() {
        let g = GaussianMixture::new(
            vec![0.25, 0.75],
            vec![v(&[1.0, 2.0]), v(&[-1.0, 0.5])],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]),
        )
        .unwrap();
        let d = DiscreteDistribution::dirac(v(&[0.0, 0.0])).unwrap();
        assert_eq!(convolve(&d, &g).unwrap(), g);
    }

    #[test]
    fn convolve_with_bimodal_tank_noise() {
        let mu = v(&[0.01, 0.01, 0.01, 0.01]);
        let cov = DMatrix::from_diagonal(&v(&[0.01, 0.01, 0.0002, 0.001]));
        let noise = GaussianMixture::new(vec![0.5, 0.5], vec![mu.clone(), -mu], cov).unwrap();
        let d = DiscreteDistribution::new(vec![0.5, 0.5], vec![v(&[1.0; 4]), v(&[2.0; 4])]).unwrap();
        let out = convolve(&d, &noise).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.weights().iter().all(|w| (w - 0.25).abs() < 1e-15));
    }

    #[test]
    fn convolve_rejects_dimension_mismatch() {
        let d = DiscreteDistribution::dirac(v(&[0.0])).unwrap();
        let g = GaussianMixture::gaussian(v(&[0.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(convolve(&d, &g), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn dirac_samples_are_constant() {
        let c = v(&[0.5, -1.0]);
        let d = DiscreteDistribution::dirac(c.clone()).unwrap();
        assert_eq!(d.sample(5, 3), vec![c; 5]);
    }

    #[test]
    fn degenerate_gaussian_samples_its_mean() {
        let g = GaussianMixture::gaussian(v(&[0.0, 0.0]), DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(g.sample(3, 1), vec![v(&[0.0, 0.0]); 3]);
    }

    #[test]
    fn standard_normal_sample_mean_within_clt_bound() {
        let g = GaussianMixture::diagonal(&[0.0], &[1.0]).unwrap();
        let xs = g.sample(1_000_000, 42);
        let mean = xs.iter().map(|x| x[0]).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.004, "mean {mean}");
    }

    #[test]
    fn rejects_invalid_inputs() {
        assert!(GaussianMixture::new(vec![0.5, 0.6], vec![v(&[0.0]), v(&[1.0])], DMatrix::identity(1, 1)).is_err());
        assert!(GaussianMixture::new(
            vec![1.0],
            vec![v(&[0.0, 0.0])],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])
        )
        .is_err());
        assert!(DiscreteDistribution::new(vec![1.0], vec![v(&[f64::NAN])]).is_err());
        assert!(AmbiguityBall::new(GaussianMixture::diagonal(&[0.0], &[1.0]).unwrap(), -0.1, 2).is_err());
    }

    #[test]
    fn json_field_layout() {
        let g = GaussianMixture::diagonal(&[1.0, 2.0], &[0.5, 0.25]).unwrap();
        let ball = AmbiguityBall::new(g, 0.1, 2).unwrap();
        let s = serde_json::to_string(&ball).unwrap();
        assert_eq!(
            s,
            r#"{"center":{"weights":[1.0],"means":[[1.0,2.0]],"covariance":[[0.5,0.0],[0.0,0.25]]},"radius":0.1,"order":2}"#
        );
        let back: AmbiguityBall = serde_json::from_str(&s).unwrap();
        assert_eq!(back, ball);
        let d = DiscreteDistribution::new(vec![1.0], vec![v(&[3.0])]).unwrap();
        assert_eq!(serde_json::to_string(&d).unwrap(), r#"{"weights":[1.0],"locations":[[3.0]]}"#);
    }
}
