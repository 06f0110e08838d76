//! Support reduction by weighted k-means with an exact transport certificate.

use nalgebra::DVector;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distributions::DiscreteDistribution;
use crate::transport::wasserstein_discrete;
use crate::{Error, Result};

const MAX_ITER: usize = 200;
const REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct CompressionResult {
    pub compressed: DiscreteDistribution,
    /// Exact W_ρ(input, compressed).
    pub theta_compr: f64,
    pub iterations: usize,
}

/// Reduces `d` to at most `n_target` locations.
///
/// Centroids of a weighted k-means clustering (k-means++ seeding, Lloyd
/// iterations) become the new locations and cluster masses the new weights.
/// The returned error is the exact transport distance, not the clustering
/// objective.
pub fn compress(d: &DiscreteDistribution, n_target: usize, rho: u32, seed: u64) -> Result<CompressionResult> {
    if n_target < 1 {
        return Err(Error::InvalidArgument("compression target must be at least 1".into()));
    }
    if d.len() <= n_target {
        return Ok(CompressionResult { compressed: d.clone(), theta_compr: 0.0, iterations: 0 });
    }
    let (centroids, masses, iterations) = weighted_kmeans(d.weights(), d.locations(), n_target, seed)?;
    let (weights, locations): (Vec<f64>, Vec<DVector<f64>>) =
        masses.into_iter().zip(centroids).filter(|(m, _)| *m > 0.0).unzip();
    let compressed = DiscreteDistribution::from_unnormalized(weights, locations)?;
    let (theta_compr, _) = wasserstein_discrete(d, &compressed, rho)?;
    Ok(CompressionResult { compressed, theta_compr, iterations })
}

fn nearest(x: &DVector<f64>, centers: &[DVector<f64>]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(k, c)| (k, (x - c).norm_squared()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one center")
}

fn seed_centers(w: &[f64], x: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<DVector<f64>>> {
    let first = WeightedIndex::new(w).map_err(|e| Error::Numerical(e.to_string()))?;
    let mut centers = vec![x[first.sample(rng)].clone()];
    let mut dist: Vec<f64> = x.iter().map(|p| (p - &centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let scores: Vec<f64> = w.iter().zip(&dist).map(|(wi, di)| wi * di).collect();
        if scores.iter().all(|s| *s <= 0.0) {
            break;
        }
        let pick = WeightedIndex::new(&scores).map_err(|e| Error::Numerical(e.to_string()))?.sample(rng);
        let c = x[pick].clone();
        for (di, p) in dist.iter_mut().zip(x) {
            *di = di.min((p - &c).norm_squared());
        }
        centers.push(c);
    }
    Ok(centers)
}

fn weighted_kmeans(
    w: &[f64],
    x: &[DVector<f64>],
    k: usize,
    seed: u64,
) -> Result<(Vec<DVector<f64>>, Vec<f64>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = x[0].len();
    let mut centers = seed_centers(w, x, k, &mut rng)?;
    let mut assign = vec![0usize; x.len()];
    let mut previous = f64::INFINITY;
    let mut iterations = 0;
    let mut masses = vec![0.0; centers.len()];
    for it in 1..=MAX_ITER {
        iterations = it;
        let mut objective = 0.0;
        let mut far = (0usize, -1.0f64);
        for (i, p) in x.iter().enumerate() {
            let (c, d2) = nearest(p, &centers);
            assign[i] = c;
            objective += w[i] * d2;
            if d2 > far.1 {
                far = (i, d2);
            }
        }
        let mut sums = vec![DVector::zeros(dim); centers.len()];
        masses = vec![0.0; centers.len()];
        for (i, p) in x.iter().enumerate() {
            sums[assign[i]] += p * w[i];
            masses[assign[i]] += w[i];
        }
        let mut reseeded = false;
        for c in 0..centers.len() {
            if masses[c] > 0.0 {
                centers[c] = &sums[c] / masses[c];
            } else if far.1 > 0.0 {
                centers[c] = x[far.0].clone();
                far.1 = 0.0;
                reseeded = true;
            }
        }
        let converged = objective == 0.0 || (previous - objective).abs() <= REL_TOL * previous.abs();
        previous = objective;
        if converged && !reseeded {
            break;
        }
    }
    // Final assignment so that masses match the returned centroids.
    masses = vec![0.0; centers.len()];
    let mut sums = vec![DVector::zeros(dim); centers.len()];
    for (i, p) in x.iter().enumerate() {
        let (c, _) = nearest(p, &centers);
        sums[c] += p * w[i];
        masses[c] += w[i];
    }
    for c in 0..centers.len() {
        if masses[c] > 0.0 {
            centers[c] = &sums[c] / masses[c];
        }
    }
    Ok((centers, masses, iterations))
}
