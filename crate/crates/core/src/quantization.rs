//! Eigenbasis-aligned grid quantization of shared-covariance Gaussian
//! mixtures, with closed-form cell masses and quantization penalty.
//!
//! In the rotated frame y = Qᵀx every mixture component has independent
//! axes, so both the mass of a rectangular cell and the integral of
//! ‖x − c‖² over it factor into one-dimensional Gaussian integrals.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::distributions::{DiscreteDistribution, GaussianMixture};
use crate::linalg::{matrix_to_rows, vector_to_vec};
use crate::normal::{self, GL8_NODES, GL8_WEIGHTS};
use crate::{Error, Result};

pub const DEFAULT_MASS_FLOOR: f64 = 1e-12;
/// Extra standard deviations beyond the grid coverage used to clip unbounded
/// cells when bounding the transport cost of dropped mass.
const TAIL_EXTRA: f64 = 6.0;
const ROTATION_TOL: f64 = 1e-9;
/// Upper limit on tensor quadrature nodes per cell and component (ρ ≠ 2).
const MAX_QUAD_NODES: usize = 2_000_000;

/// Rectangular partition of ℝⁿ in the eigenbasis of a covariance matrix with
/// one location per cell.
///
/// Cells are half-open intervals `(b_{j-1}, b_j]` per axis; the outermost
/// cells extend to ±∞. Flat cell ids are row-major over the per-axis interval
/// indices (last axis fastest).
#[derive(Debug, Clone, Serialize)]
#[serde(into = "RawQuantizer")]
pub struct Quantizer {
    rotation: DMatrix<f64>,
    breakpoints: Vec<Vec<f64>>,
    axis_locations: Vec<Vec<f64>>,
    locations: Vec<DVector<f64>>,
    coverage: f64,
    strides: Vec<usize>,
}

#[derive(Serialize)]
struct RawQuantizer {
    rotation: Vec<Vec<f64>>,
    breakpoints: Vec<Vec<f64>>,
    locations: Vec<Vec<f64>>,
}

impl From<Quantizer> for RawQuantizer {
    fn from(q: Quantizer) -> Self {
        RawQuantizer {
            rotation: matrix_to_rows(&q.rotation),
            locations: q.locations.iter().map(vector_to_vec).collect(),
            breakpoints: q.breakpoints,
        }
    }
}

impl Quantizer {
    fn from_axes(rotation: DMatrix<f64>, breakpoints: Vec<Vec<f64>>, axis_locations: Vec<Vec<f64>>, coverage: f64) -> Self {
        let dim = breakpoints.len();
        let counts: Vec<usize> = axis_locations.iter().map(Vec::len).collect();
        let mut strides = vec![1; dim];
        for a in (0..dim.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * counts[a + 1];
        }
        let total: usize = counts.iter().product();
        let locations = (0..total)
            .map(|id| {
                let y = DVector::from_fn(dim, |a, _| axis_locations[a][(id / strides[a]) % counts[a]]);
                &rotation * y
            })
            .collect();
        Self { rotation, breakpoints, axis_locations, locations, coverage, strides }
    }

    pub fn dim(&self) -> usize {
        self.breakpoints.len()
    }

    /// Number of cells.
    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// Number of intervals along each eigen-axis.
    pub fn counts(&self) -> Vec<usize> {
        self.axis_locations.iter().map(Vec::len).collect()
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    pub fn breakpoints(&self) -> &[Vec<f64>] {
        &self.breakpoints
    }

    /// Cell locations in original coordinates, indexed by flat cell id.
    pub fn locations(&self) -> &[DVector<f64>] {
        &self.locations
    }

    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    pub fn multi_index(&self, id: usize) -> Vec<usize> {
        let counts = self.counts();
        (0..self.dim()).map(|a| (id / self.strides[a]) % counts[a]).collect()
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(j, s)| j * s).sum()
    }

    /// Rotated-coordinate bounds of a cell, ±∞ for outer cells.
    pub fn cell_bounds(&self, id: usize) -> Vec<(f64, f64)> {
        self.multi_index(id)
            .iter()
            .enumerate()
            .map(|(a, &j)| interval_bounds(&self.breakpoints[a], j))
            .collect()
    }

    /// Flat id of the cell containing `x`. Points on a breakpoint belong to the lower cell.
    pub fn locate(&self, x: &DVector<f64>) -> usize {
        let y = self.rotation.transpose() * x;
        let multi: Vec<usize> = self
            .breakpoints
            .iter()
            .enumerate()
            .map(|(a, bps)| bps.partition_point(|b| *b < y[a]))
            .collect();
        self.flat_index(&multi)
    }

    /// The quantization operator Δ(x): the location of the cell containing `x`.
    pub fn apply(&self, x: &DVector<f64>) -> &DVector<f64> {
        &self.locations[self.locate(x)]
    }
}

fn interval_bounds(bps: &[f64], j: usize) -> (f64, f64) {
    let lo = if j == 0 { f64::NEG_INFINITY } else { bps[j - 1] };
    let hi = if j == bps.len() { f64::INFINITY } else { bps[j] };
    (lo, hi)
}

/// Greedy spread-proportional allocation of per-axis cell counts.
///
/// Repeatedly refines the active axis with the widest current cell while the
/// product of counts stays within `budget`.
fn allocate_counts(spreads: &[f64], budget: usize) -> Vec<usize> {
    let mut counts = vec![1usize; spreads.len()];
    let mut product = 1usize;
    loop {
        let mut order: Vec<usize> = (0..spreads.len()).filter(|&a| spreads[a] > 0.0).collect();
        order.sort_by(|&a, &b| {
            let wa = spreads[a] / counts[a] as f64;
            let wb = spreads[b] / counts[b] as f64;
            wb.total_cmp(&wa).then(a.cmp(&b))
        });
        let next = order.into_iter().find(|&a| product / counts[a] * (counts[a] + 1) <= budget);
        match next {
            Some(a) => {
                product = product / counts[a] * (counts[a] + 1);
                counts[a] += 1;
            }
            None => return counts,
        }
    }
}

/// Builds a uniform grid over `[lo − γσ, hi + γσ]` on every eigen-axis of the
/// mixture covariance, where `lo`/`hi` bound the rotated component means.
///
/// Axis cell counts are proportional to the axis spread with product at most
/// `budget`; zero-variance axes get a single cell. Locations are the centers of
/// the uniform grid cells.
pub fn build_grid(gmm: &GaussianMixture, budget: usize, coverage: f64) -> Result<Quantizer> {
    if budget < 1 {
        return Err(Error::InvalidArgument("quantization budget must be at least 1".into()));
    }
    if !(coverage.is_finite() && coverage > 0.0) {
        return Err(Error::InvalidArgument(format!("coverage must be positive, got {coverage}")));
    }
    let eig = gmm.eigenbasis();
    let dim = gmm.dim();
    let sig = eig.std_devs();
    let rotated: Vec<DVector<f64>> = gmm.means().iter().map(|m| eig.rotation.transpose() * m).collect();

    let mut ranges = Vec::with_capacity(dim);
    let mut spreads = Vec::with_capacity(dim);
    for a in 0..dim {
        let lo = rotated.iter().map(|m| m[a]).fold(f64::INFINITY, f64::min);
        let hi = rotated.iter().map(|m| m[a]).fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = (lo - coverage * sig[a], hi + coverage * sig[a]);
        ranges.push((lo, hi));
        spreads.push(if sig[a] > 0.0 { hi - lo } else { 0.0 });
    }
    let counts = allocate_counts(&spreads, budget);

    let mut breakpoints = Vec::with_capacity(dim);
    let mut axis_locations = Vec::with_capacity(dim);
    for (a, &(lo, hi)) in ranges.iter().enumerate() {
        let n = counts[a];
        let width = (hi - lo) / n as f64;
        breakpoints.push((1..n).map(|j| lo + width * j as f64).collect::<Vec<_>>());
        let locs: Vec<f64> = if n == 1 {
            vec![0.5 * (lo + hi)]
        } else {
            (0..n).map(|j| lo + width * (j as f64 + 0.5)).collect()
        };
        axis_locations.push(locs);
    }
    Ok(Quantizer::from_axes(eig.rotation.clone(), breakpoints, axis_locations, coverage))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizeOptions {
    pub rho: u32,
    /// Cells lighter than this are dropped and the kept masses renormalized.
    pub mass_floor: f64,
}

impl Default for QuantizeOptions {
    fn default() -> Self {
        Self { rho: 2, mass_floor: DEFAULT_MASS_FLOOR }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellStat {
    pub id: usize,
    pub mass: f64,
    /// ∫_cell ‖x − c‖^ρ dP for this cell.
    pub penalty: f64,
    pub kept: bool,
}

/// Discrete quantization Δ#P together with the penalty θ_Δ.
#[derive(Debug, Clone)]
pub struct QuantizationResult {
    pub discrete: DiscreteDistribution,
    pub theta_delta: f64,
    /// Flat cell id of each location in `discrete`.
    pub cell_ids: Vec<usize>,
    pub dropped_mass: f64,
    pub cells: Vec<CellStat>,
}

impl QuantizationResult {
    /// Per-cell diagnostics: cell id, location coordinates, mass, penalty contribution.
    pub fn write_cells_csv<W: Write>(&self, q: &Quantizer, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["cell".to_string()];
        header.extend((0..q.dim()).map(|a| format!("x{a}")));
        header.extend(["mass".to_string(), "penalty".to_string(), "kept".to_string()]);
        w.write_record(&header)?;
        for c in &self.cells {
            let mut row = vec![c.id.to_string()];
            row.extend(q.locations()[c.id].iter().map(|v| format!("{v:.16e}")));
            row.extend([format!("{:.16e}", c.mass), format!("{:.16e}", c.penalty), c.kept.to_string()]);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// E[(x − center)² 1{a < x ≤ b}] for x ~ N(mean, variance).
pub fn truncated_second_moment(mean: f64, variance: f64, a: f64, b: f64, center: f64) -> Result<f64> {
    if a.is_nan() || b.is_nan() || a >= b {
        return Err(Error::InvalidArgument(format!("need a < b, got [{a}, {b}]")));
    }
    if variance.is_nan() || variance < 0.0 || !mean.is_finite() || !center.is_finite() {
        return Err(Error::InvalidArgument("variance must be nonnegative and moments finite".into()));
    }
    Ok(tsm(mean, variance.sqrt(), a, b, center))
}

fn tsm(mu: f64, sigma: f64, a: f64, b: f64, c: f64) -> f64 {
    let shift = mu - c;
    if sigma == 0.0 {
        return if a < mu && mu <= b { shift * shift } else { 0.0 };
    }
    let alpha = (a - mu) / sigma;
    let beta = (b - mu) / sigma;
    let z = normal::interval_prob(alpha, beta);
    let v = (sigma * sigma + shift * shift) * z - sigma * sigma * (normal::z_pdf(beta) - normal::z_pdf(alpha))
        - 2.0 * shift * sigma * (normal::pdf(beta) - normal::pdf(alpha));
    v.max(0.0)
}

fn axis_prob(mu: f64, sigma: f64, a: f64, b: f64) -> f64 {
    if sigma == 0.0 {
        return if a < mu && mu <= b { 1.0 } else { 0.0 };
    }
    normal::interval_prob((a - mu) / sigma, (b - mu) / sigma)
}

pub fn quantize(gmm: &GaussianMixture, q: &Quantizer) -> Result<QuantizationResult> {
    quantize_with(gmm, q, &QuantizeOptions::default())
}

/// Quantizes `gmm` on the cells of `q`.
///
/// Cell masses and, for ρ = 2, the penalty θ_Δ = (Σ_cells ∫ ‖x − c‖² dP)^{1/2}
/// are exact. Other orders use tensor Gauss–Legendre quadrature per cell.
/// Cells lighter than `mass_floor` are dropped; their mass is charged to θ_Δ
/// at the largest distance between a dropped cell (clipped at `γ + 6`
/// standard deviations) and the kept locations.
pub fn quantize_with(gmm: &GaussianMixture, q: &Quantizer, opts: &QuantizeOptions) -> Result<QuantizationResult> {
    if opts.rho < 1 {
        return Err(Error::InvalidArgument("Wasserstein order must be at least 1".into()));
    }
    if opts.mass_floor.is_nan() || opts.mass_floor < 0.0 {
        return Err(Error::InvalidArgument("mass floor must be nonnegative".into()));
    }
    let dim = q.dim();
    if gmm.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: gmm.dim() });
    }
    let eig = gmm.eigenbasis();
    let deviation = (&eig.rotation - &q.rotation).abs().max();
    if deviation > ROTATION_TOL {
        return Err(Error::EigenbasisMismatch(deviation));
    }
    let sig = eig.std_devs();
    let rot_t = q.rotation.transpose();
    let means: Vec<DVector<f64>> = gmm.means().iter().map(|m| &rot_t * m).collect();
    let weights = gmm.weights();
    let counts = q.counts();

    // probs[i][a][j], tsms[i][a][j]: per component, axis and interval.
    let mut probs = Vec::with_capacity(means.len());
    let mut tsms = Vec::with_capacity(means.len());
    for m in &means {
        let mut p_i = Vec::with_capacity(dim);
        let mut t_i = Vec::with_capacity(dim);
        for a in 0..dim {
            let (p, t): (Vec<f64>, Vec<f64>) = (0..counts[a])
                .map(|j| {
                    let (lo, hi) = interval_bounds(&q.breakpoints[a], j);
                    let loc = q.axis_locations[a][j];
                    (axis_prob(m[a], sig[a], lo, hi), tsm(m[a], sig[a], lo, hi, loc))
                })
                .unzip();
            p_i.push(p);
            t_i.push(t);
        }
        probs.push(p_i);
        tsms.push(t_i);
    }

    let mut cells = Vec::with_capacity(q.len());
    let mut multi = vec![0usize; dim];
    for id in 0..q.len() {
        let mut mass = 0.0;
        let mut penalty = 0.0;
        for (i, w) in weights.iter().enumerate() {
            let p: Vec<f64> = (0..dim).map(|a| probs[i][a][multi[a]]).collect();
            let comp_mass: f64 = p.iter().product();
            mass += w * comp_mass;
            if opts.rho == 2 {
                let mut second = 0.0;
                for a in 0..dim {
                    let others: f64 = (0..dim).filter(|&b| b != a).map(|b| p[b]).product();
                    second += tsms[i][a][multi[a]] * others;
                }
                penalty += w * second;
            } else if comp_mass > 0.0 {
                let bounds: Vec<(f64, f64)> =
                    (0..dim).map(|a| interval_bounds(&q.breakpoints[a], multi[a])).collect();
                let loc: Vec<f64> = (0..dim).map(|a| q.axis_locations[a][multi[a]]).collect();
                penalty += w * cell_power_moment(&means[i], &sig, &bounds, &loc, opts.rho, || {
                    (0..dim)
                        .map(|a| {
                            let others: f64 = (0..dim).filter(|&b| b != a).map(|b| p[b]).product();
                            tsms[i][a][multi[a]] * others
                        })
                        .sum::<f64>()
                        .max(0.0)
                        .sqrt()
                        * comp_mass.sqrt()
                });
            }
        }
        cells.push(CellStat { id, mass, penalty, kept: true });
        // odometer, last axis fastest
        for a in (0..dim).rev() {
            multi[a] += 1;
            if multi[a] < counts[a] {
                break;
            }
            multi[a] = 0;
        }
    }

    let heaviest = cells.iter().max_by(|a, b| a.mass.total_cmp(&b.mass)).map(|c| c.id).unwrap_or(0);
    for c in &mut cells {
        c.kept = c.mass >= opts.mass_floor && c.mass > 0.0 || c.id == heaviest;
    }
    let rho = f64::from(opts.rho);
    let kept_penalty: f64 = cells.iter().filter(|c| c.kept).map(|c| c.penalty).sum();
    let dropped_mass: f64 = cells.iter().filter(|c| !c.kept).map(|c| c.mass).sum();
    let mut theta_delta = kept_penalty.max(0.0).powf(1.0 / rho);
    if dropped_mass > 0.0 {
        let d_max = dropped_distance_bound(q, gmm, &means, &sig, &cells);
        theta_delta += dropped_mass.powf(1.0 / rho) * d_max;
    }

    let kept: Vec<&CellStat> = cells.iter().filter(|c| c.kept).collect();
    let cell_ids: Vec<usize> = kept.iter().map(|c| c.id).collect();
    let discrete = DiscreteDistribution::from_unnormalized(
        kept.iter().map(|c| c.mass).collect(),
        cell_ids.iter().map(|&id| q.locations[id].clone()).collect(),
    )?;
    Ok(QuantizationResult { discrete, theta_delta, cell_ids, dropped_mass, cells })
}

/// Largest distance between a point of a dropped cell (clipped to the tail box)
/// and any kept location, in rotated coordinates.
fn dropped_distance_bound(
    q: &Quantizer,
    gmm: &GaussianMixture,
    means: &[DVector<f64>],
    sig: &DVector<f64>,
    cells: &[CellStat],
) -> f64 {
    let dim = q.dim();
    let tail = q.coverage + TAIL_EXTRA;
    let tail_box: Vec<(f64, f64)> = (0..dim)
        .map(|a| {
            let lo = means.iter().map(|m| m[a]).fold(f64::INFINITY, f64::min);
            let hi = means.iter().map(|m| m[a]).fold(f64::NEG_INFINITY, f64::max);
            (lo - tail * sig[a], hi + tail * sig[a])
        })
        .collect();
    debug_assert_eq!(gmm.dim(), dim);
    let mut kept_box = vec![(f64::INFINITY, f64::NEG_INFINITY); dim];
    for c in cells.iter().filter(|c| c.kept) {
        for (a, j) in q.multi_index(c.id).into_iter().enumerate() {
            let y = q.axis_locations[a][j];
            kept_box[a].0 = kept_box[a].0.min(y);
            kept_box[a].1 = kept_box[a].1.max(y);
        }
    }
    cells
        .iter()
        .filter(|c| !c.kept)
        .map(|c| {
            q.cell_bounds(c.id)
                .iter()
                .enumerate()
                .map(|(a, &(lo, hi))| {
                    let (tlo, thi) = tail_box[a];
                    let lo = lo.clamp(tlo, thi);
                    let hi = hi.clamp(tlo, thi);
                    let far = (hi - kept_box[a].0).abs().max((kept_box[a].1 - lo).abs());
                    far * far
                })
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

/// E[‖y − loc‖^ρ 1{y ∈ cell}] for y ~ N(mean, diag(sig²)) by tensor
/// Gauss–Legendre quadrature. Falls back to `fallback` when the node count
/// would exceed [`MAX_QUAD_NODES`].
fn cell_power_moment<F: FnOnce() -> f64>(
    mean: &DVector<f64>,
    sig: &DVector<f64>,
    bounds: &[(f64, f64)],
    loc: &[f64],
    rho: u32,
    fallback: F,
) -> f64 {
    let dim = bounds.len();
    let mut axes: Vec<Vec<(f64, f64)>> = Vec::with_capacity(dim);
    for a in 0..dim {
        let (lo, hi) = bounds[a];
        let (mu, s) = (mean[a], sig[a]);
        if s == 0.0 {
            if lo < mu && mu <= hi {
                axes.push(vec![(mu, 1.0)]);
                continue;
            }
            return 0.0;
        }
        let a0 = lo.max(mu - 12.0 * s);
        let b0 = hi.min(mu + 12.0 * s);
        if a0 >= b0 {
            return 0.0;
        }
        let mut cuts = vec![a0];
        if loc[a] > a0 && loc[a] < b0 {
            cuts.push(loc[a]);
        }
        cuts.push(b0);
        let mut nodes = Vec::new();
        for piece in cuts.windows(2) {
            let (p0, p1) = (piece[0], piece[1]);
            let segments = ((p1 - p0) / s).ceil().max(1.0) as usize;
            let h = (p1 - p0) / segments as f64;
            for k in 0..segments {
                let mid = p0 + h * (k as f64 + 0.5);
                for (t, w) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()) {
                    let x = mid + 0.5 * h * t;
                    nodes.push((x, 0.5 * h * w * normal::pdf((x - mu) / s) / s));
                }
            }
        }
        axes.push(nodes);
    }
    let total: usize = axes.iter().map(Vec::len).product();
    if total > MAX_QUAD_NODES {
        return fallback();
    }
    let power = f64::from(rho) / 2.0;
    fn recurse(axes: &[Vec<(f64, f64)>], loc: &[f64], a: usize, sq: f64, weight: f64, power: f64) -> f64 {
        if a == axes.len() {
            return weight * sq.powf(power);
        }
        axes[a]
            .iter()
            .map(|&(x, w)| {
                let d = x - loc[a];
                recurse(axes, loc, a + 1, sq + d * d, weight * w, power)
            })
            .sum()
    }
    recurse(&axes, loc, 0, 0.0, 1.0, power)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_normal_1d() -> GaussianMixture {
        GaussianMixture::diagonal(&[0.0], &[1.0]).unwrap()
    }

    #[test]
    fn single_cell_grid() {
        let q = build_grid(&std_normal_1d(), 1, 4.0).unwrap();
        assert_eq!(q.len(), 1);
        assert!(q.breakpoints()[0].is_empty());
        assert_eq!(q.locations()[0][0], 0.0);
    }

    #[test]
    fn two_cell_grid_is_symmetric() {
        let q = build_grid(&std_normal_1d(), 2, 4.0).unwrap();
        assert_eq!(q.breakpoints()[0], vec![0.0]);
        assert_eq!(q.locations()[0][0], -2.0);
        assert_eq!(q.locations()[1][0], 2.0);
        let r = quantize(&std_normal_1d(), &q).unwrap();
        assert_eq!(r.discrete.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn zero_budget_is_rejected() {
        assert!(build_grid(&std_normal_1d(), 0, 4.0).is_err());
    }

    #[test]
    fn allocation_follows_spread() {
        let g = GaussianMixture::diagonal(&[0.0, 0.0], &[1.0, 4.0]).unwrap();
        let q = build_grid(&g, 100, 4.0).unwrap();
        let counts = q.counts();
        assert!(counts[0] * counts[1] <= 100);
        assert!(counts[1] > counts[0]);
        assert_eq!(counts, vec![7, 14]);
    }

    #[test]
    fn zero_variance_axis_gets_one_cell() {
        let g = GaussianMixture::diagonal(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        let q = build_grid(&g, 50, 4.0).unwrap();
        assert_eq!(q.counts(), vec![50, 1]);
        let r = quantize(&g, &q).unwrap();
        let total: f64 = r.cells.iter().map(|c| c.mass).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn single_cell_penalty_is_trace() {
        let r = quantize(&std_normal_1d(), &build_grid(&std_normal_1d(), 1, 4.0).unwrap()).unwrap();
        assert!((r.theta_delta - 1.0).abs() < 1e-12);
        let g = GaussianMixture::diagonal(&[0.0, 0.0], &[1.0, 4.0]).unwrap();
        let r = quantize(&g, &build_grid(&g, 1, 4.0).unwrap()).unwrap();
        assert!((r.theta_delta - 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn truncated_second_moment_cases() {
        let inf = f64::INFINITY;
        assert!((truncated_second_moment(0.0, 1.0, -inf, inf, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((truncated_second_moment(0.0, 1.0, 0.0, inf, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(truncated_second_moment(0.0, 1.0, 1.0, 1.0, 0.0).is_err());
        assert_eq!(truncated_second_moment(2.0, 0.0, 1.0, 3.0, 0.5).unwrap(), 2.25);
        assert_eq!(truncated_second_moment(2.0, 0.0, 2.0, 3.0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn eigenbasis_mismatch_is_rejected() {
        let a = GaussianMixture::gaussian(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        let b = GaussianMixture::diagonal(&[0.0, 0.0], &[1.0, 2.0]).unwrap();
        let q = build_grid(&a, 16, 4.0).unwrap();
        assert!(matches!(quantize(&b, &q), Err(Error::EigenbasisMismatch(_))));
    }

    #[test]
    fn locate_and_idempotence() {
        let g = GaussianMixture::gaussian(
            DVector::from_vec(vec![1.0, -1.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        let q = build_grid(&g, 30, 3.0).unwrap();
        for (id, c) in q.locations().iter().enumerate() {
            assert_eq!(q.locate(c), id);
            assert_eq!(q.apply(c), c);
        }
    }

    #[test]
    fn breakpoint_ties_go_to_lower_cell() {
        let q = build_grid(&std_normal_1d(), 2, 4.0).unwrap();
        assert_eq!(q.locate(&DVector::from_vec(vec![0.0])), 0);
    }

    #[test]
    fn rho_one_single_cell_matches_mean_abs() {
        // E|x| = sqrt(2/pi) for a standard normal.
        let g = std_normal_1d();
        let q = build_grid(&g, 1, 4.0).unwrap();
        let r = quantize_with(&g, &q, &QuantizeOptions { rho: 1, ..Default::default() }).unwrap();
        assert!((r.theta_delta - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn dropped_cells_charge_penalty() {
        let g = std_normal_1d();
        let q = build_grid(&g, 40, 8.0).unwrap();
        let exact = quantize_with(&g, &q, &QuantizeOptions { rho: 2, mass_floor: 0.0 }).unwrap();
        let floored = quantize_with(&g, &q, &QuantizeOptions { rho: 2, mass_floor: 1e-6 }).unwrap();
        assert!(floored.dropped_mass > 0.0);
        assert!(floored.discrete.len() < exact.discrete.len());
        assert!(floored.theta_delta >= exact.theta_delta - 1e-12);
        let total: f64 = floored.discrete.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cells_csv_has_one_row_per_cell() {
        let g = std_normal_1d();
        let q = build_grid(&g, 3, 4.0).unwrap();
        let r = quantize(&g, &q).unwrap();
        let mut buf = Vec::new();
        r.write_cells_csv(&q, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("cell,x0,mass,penalty,kept"));
    }
}
