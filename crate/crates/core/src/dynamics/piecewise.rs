use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_point, check_rho, Dynamics, LinearizationHint, NormLinearization};
use crate::linalg::{matrix_from_rows, spectral_norm};
use crate::{Error, Result};

/// Half-space g·x ≤ h.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Halfspace {
    pub g: Vec<f64>,
    pub h: f64,
}

/// JSON form of one mode: matrix and a conjunction of half-spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub guards: Vec<Halfspace>,
}

/// How β_ℓ bounds the jump between modes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaRule {
    /// Exact supremum of ‖A_j x − A_i c‖² − α‖x − c‖² over each other
    /// mode's guard region.
    #[default]
    Guarded,
    /// (1 + 1/t)·max_{j≠i} ‖(A_j − A_i)c‖², ignoring guards.
    Unconstrained,
}

#[derive(Debug, Clone)]
struct Mode {
    matrix: DMatrix<f64>,
    gram: DMatrix<f64>,
    guards: Vec<(DVector<f64>, f64)>,
}

impl Mode {
    fn contains(&self, x: &DVector<f64>) -> bool {
        self.guards.iter().all(|(g, h)| g.dot(x) <= *h)
    }
}

/// Switched linear map: the first mode whose guard holds at x applies A_j x.
#[derive(Debug, Clone)]
pub struct PiecewiseLinearModel {
    dim: usize,
    modes: Vec<Mode>,
    norms: Vec<f64>,
}

fn rotation(scale: f64, phi: f64) -> DMatrix<f64> {
    let (s, c) = phi.sin_cos();
    DMatrix::from_row_slice(2, 2, &[scale * c, -scale * s, scale * s, scale * c])
}

/// Matrix and guard half-spaces (g, h) of one mode.
pub type ModeDef = (DMatrix<f64>, Vec<(DVector<f64>, f64)>);

fn halfspace(g: &[f64], h: f64) -> (DVector<f64>, f64) {
    (DVector::from_row_slice(g), h)
}

impl PiecewiseLinearModel {
    pub fn new(modes: Vec<ModeDef>) -> Result<Self> {
        let dim = modes.first().map(|m| m.0.nrows()).ok_or_else(|| Error::InvalidModel("no modes".into()))?;
        if dim == 0 {
            return Err(Error::InvalidModel("zero-dimensional mode".into()));
        }
        let mut out = Vec::with_capacity(modes.len());
        for (matrix, guards) in modes {
            if matrix.nrows() != dim || matrix.ncols() != dim {
                return Err(Error::InvalidModel(format!("mode matrix must be {dim}x{dim}")));
            }
            if matrix.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel("non-finite matrix entry".into()));
            }
            for (g, h) in &guards {
                if g.len() != dim || !h.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidModel("malformed guard".into()));
                }
            }
            let gram = matrix.transpose() * &matrix;
            out.push(Mode { matrix, gram, guards });
        }
        let norms = out.iter().map(|m| spectral_norm(&m.matrix)).collect();
        let model = Self { dim, modes: out, norms };
        model.check_coverage()?;
        Ok(model)
    }

    pub fn from_specs(specs: &[ModeSpec]) -> Result<Self> {
        let modes = specs
            .iter()
            .map(|s| {
                let guards = s.guards.iter().map(|hs| (DVector::from_vec(hs.g.clone()), hs.h)).collect();
                Ok((matrix_from_rows(&s.a)?, guards))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(modes)
    }

    /// A₁ = 0.8·rot(π/8) for x₁ ≤ 0, A₂ = 0.8·rot(−π/8) otherwise.
    pub fn double_spiral() -> Self {
        let phi = std::f64::consts::PI / 8.0;
        Self::new(vec![
            (rotation(0.8, phi), vec![halfspace(&[1.0, 0.0], 0.0)]),
            (rotation(0.8, -phi), vec![halfspace(&[-1.0, 0.0], 0.0)]),
        ])
        .expect("double spiral is well formed")
    }

    /// Five-mode switched system: four outer regions with mildly expanding
    /// or shearing dynamics around a contracting unit box.
    pub fn switched_benchmark() -> Self {
        let m = |v: [f64; 4]| DMatrix::from_row_slice(2, 2, &v);
        Self::new(vec![
            (m([0.9, 0.05, -0.05, 0.95]), vec![halfspace(&[1.0, 0.0], -1.0)]),
            (m([0.9, -0.05, 0.05, 0.95]), vec![halfspace(&[-1.0, 0.0], -1.0)]),
            (m([1.05, 0.0, 0.0, 0.85]), vec![halfspace(&[0.0, -1.0], -1.0)]),
            (m([1.05, 0.0, 0.0, 0.85]), vec![halfspace(&[0.0, 1.0], -1.0)]),
            (
                m([0.8, 0.0, 0.0, 0.8]),
                vec![
                    halfspace(&[1.0, 0.0], 1.0),
                    halfspace(&[-1.0, 0.0], 1.0),
                    halfspace(&[0.0, 1.0], 1.0),
                    halfspace(&[0.0, -1.0], 1.0),
                ],
            ),
        ])
        .expect("switched benchmark is well formed")
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn matrix(&self, mode: usize) -> &DMatrix<f64> {
        &self.modes[mode].matrix
    }

    /// Index of the first mode whose guard holds at `x`.
    pub fn mode_of(&self, x: &DVector<f64>) -> Option<usize> {
        self.modes.iter().position(|m| m.contains(x))
    }

    fn check_coverage(&self) -> Result<()> {
        let radius = 10.0
            * (1.0 + self.modes.iter().flat_map(|m| m.guards.iter().map(|(_, h)| h.abs())).fold(0.0, f64::max));
        let uncovered = |x: &DVector<f64>| self.mode_of(x).is_none();
        if self.dim <= 3 {
            let per_axis = 41usize;
            let total = per_axis.pow(self.dim as u32);
            for k in 0..total {
                let x = DVector::from_fn(self.dim, |a, _| {
                    let j = (k / per_axis.pow(a as u32)) % per_axis;
                    -radius + 2.0 * radius * j as f64 / (per_axis - 1) as f64
                });
                if uncovered(&x) {
                    return Err(Error::InvalidModel(format!("no mode covers {:?}", x.as_slice())));
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            for _ in 0..20_000 {
                let x = DVector::from_fn(self.dim, |_, _| rng.random_range(-radius..radius));
                if uncovered(&x) {
                    return Err(Error::InvalidModel(format!("no mode covers {:?}", x.as_slice())));
                }
            }
        }
        Ok(())
    }

    /// Number of distinct mode matrices.
    pub fn distinct_matrices(&self) -> usize {
        let mut distinct: Vec<&DMatrix<f64>> = Vec::new();
        for m in &self.modes {
            if !distinct.contains(&&m.matrix) {
                distinct.push(&m.matrix);
            }
        }
        distinct.len()
    }

    fn squared_norm_max(&self) -> f64 {
        self.norms.iter().map(|n| n * n).fold(0.0, f64::max)
    }

    /// β for location `c` in mode `i`, ρ = 2, given α.
    fn beta_rho2(&self, c: &DVector<f64>, i: usize, alpha: f64, t: f64, rule: BetaRule) -> f64 {
        let ai_c = &self.modes[i].matrix * c;
        let mut worst = 0.0f64;
        for (j, mode) in self.modes.iter().enumerate() {
            if j == i {
                continue;
            }
            let v = &mode.matrix * c - &ai_c;
            let value = match rule {
                BetaRule::Unconstrained => (1.0 + 1.0 / t) * v.norm_squared(),
                BetaRule::Guarded => guarded_sup(mode, c, &v, alpha).unwrap_or((1.0 + 1.0 / t) * v.norm_squared()),
            };
            worst = worst.max(value);
        }
        worst
    }

    fn betas_rho2(&self, locations: &[DVector<f64>], modes: &[usize], t: f64, rule: BetaRule) -> (f64, Vec<f64>) {
        let alpha = (1.0 + t) * self.squared_norm_max();
        let betas = locations.iter().zip(modes).map(|(c, &i)| self.beta_rho2(c, i, alpha, t, rule)).collect();
        (alpha, betas)
    }
}

/// sup over the guard region of mode j of ‖A_j x − A_i c‖² − α‖x − c‖², with
/// d = x − c and v = (A_j − A_i)c. Each half-space of the guard gives an upper
/// bound; the smallest is returned. `None` if the quadratic is not strictly concave.
fn guarded_sup(mode: &Mode, c: &DVector<f64>, v: &DVector<f64>, alpha: f64) -> Option<f64> {
    let n = c.len();
    let h = DMatrix::identity(n, n) * alpha - &mode.gram;
    let chol = h.clone().cholesky()?;
    let u = mode.matrix.transpose() * v;
    let hu = chol.solve(&u);
    let vv = v.norm_squared();
    let unconstrained = vv + u.dot(&hu);
    let objective = |d: &DVector<f64>| -d.dot(&(&h * d)) + 2.0 * d.dot(&u) + vv;
    let mut best = unconstrained;
    for (g, bound) in &mode.guards {
        let r = bound - g.dot(c);
        if g.iter().all(|x| *x == 0.0) {
            if r < 0.0 {
                return Some(0.0);
            }
            continue;
        }
        if g.dot(&hu) <= r {
            continue;
        }
        let hg = chol.solve(g);
        let mu = (g.dot(&hu) - r) / g.dot(&hg);
        let d = &hu - hg * mu;
        best = best.min(objective(&d));
    }
    // Relative padding against rounding in the solves.
    Some(best.max(0.0) * (1.0 + 1e-10) + 1e-14 * (vv + 1.0))
}

/// Golden-section minimization of a unimodal function on [a, b].
pub(crate) fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 { x1 } else { x2 }
}

impl Dynamics for PiecewiseLinearModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn family(&self) -> &'static str {
        "piecewise_linear"
    }

    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_point(x, self.dim)?;
        let mode = self
            .mode_of(x)
            .ok_or_else(|| Error::InvalidModel(format!("no mode covers {:?}", x.as_slice())))?;
        Ok(&self.modes[mode].matrix * x)
    }

    /// ρ = 2: α = (1+t)·max_j ‖A_j‖², β_ℓ from the selected [`BetaRule`]. With
    /// an `ebar` hint a single t minimizing α·ē + Σ w_ℓ β_ℓ is found by
    /// golden-section search over log t; otherwise t = 1.
    /// ρ = 1: α = max_j ‖A_j‖, β_ℓ = max_{j≠i} ‖(A_j − A_i)c_ℓ‖.
    fn norm_linearization_with(
        &self,
        locations: &[DVector<f64>],
        rho: u32,
        hint: &LinearizationHint<'_>,
    ) -> Result<NormLinearization> {
        check_rho(rho)?;
        let modes = locations
            .iter()
            .map(|c| {
                check_point(c, self.dim)?;
                self.mode_of(c).ok_or_else(|| Error::InvalidModel("location outside every mode".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let lipschitz = self.norms.iter().copied().fold(0.0, f64::max);
        if rho == 1 {
            let betas = locations
                .iter()
                .zip(&modes)
                .map(|(c, &i)| {
                    let ai_c = &self.modes[i].matrix * c;
                    self.modes.iter().map(|m| (&m.matrix * c - &ai_c).norm()).fold(0.0, f64::max)
                })
                .collect();
            return Ok(NormLinearization { alphas: vec![lipschitz; locations.len()], betas, lipschitz, split: None });
        }
        let t = match hint.ebar {
            Some(ebar) if ebar.is_finite() && ebar >= 0.0 && !locations.is_empty() => {
                let uniform = vec![1.0 / locations.len() as f64; locations.len()];
                let masses = hint.masses.unwrap_or(&uniform);
                if masses.len() != locations.len() {
                    return Err(Error::DimensionMismatch { expected: locations.len(), got: masses.len() });
                }
                let objective = |s: f64| {
                    let (alpha, betas) = self.betas_rho2(locations, &modes, s.exp(), hint.beta_rule);
                    alpha * ebar + betas.iter().zip(masses).map(|(b, w)| b * w).sum::<f64>()
                };
                golden_section(objective, (1e-6f64).ln(), (1e6f64).ln(), 80).exp()
            }
            _ => 1.0,
        };
        let (alpha, betas) = self.betas_rho2(locations, &modes, t, hint.beta_rule);
        Ok(NormLinearization { alphas: vec![alpha; locations.len()], betas, lipschitz, split: Some(t) })
    }

    fn lipschitz_bound(&self) -> Result<f64> {
        Ok(self.norms.iter().copied().fold(0.0, f64::max))
    }

    fn is_continuous(&self) -> bool {
        self.distinct_matrices() <= 1
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::max_violation;
    use super::*;

    fn v(x: f64, y: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, y])
    }

    fn grid_locations(r: f64, n: usize) -> Vec<DVector<f64>> {
        let mut out = Vec::new();
        for a in 0..n {
            for b in 0..n {
                let s = |k: usize| -r + 2.0 * r * k as f64 / (n - 1) as f64;
                out.push(v(s(a), s(b)));
            }
        }
        out
    }

    #[test]
    fn double_spiral_eval() {
        let m = PiecewiseLinearModel::double_spiral();
        assert_eq!(m.eval(&v(0.0, 0.0)).unwrap(), v(0.0, 0.0));
        let y = m.eval(&v(1.0, 0.0)).unwrap();
        let expected = m.matrix(1) * v(1.0, 0.0);
        assert!((y - &expected).norm() < 1e-15);
        assert!((expected[0] - 0.739104).abs() < 1e-6 && (expected[1] + 0.306147).abs() < 1e-6);
        assert_eq!(m.mode_of(&v(0.0, 5.0)), Some(0));
    }

    #[test]
    fn double_spiral_lipschitz() {
        let m = PiecewiseLinearModel::double_spiral();
        assert!((m.lipschitz_bound().unwrap() - 0.8).abs() < 1e-12);
        assert!(!m.is_continuous());
    }

    #[test]
    fn unconstrained_rule_example() {
        let m = PiecewiseLinearModel::double_spiral();
        let hint = LinearizationHint { beta_rule: BetaRule::Unconstrained, ..Default::default() };
        let lin = m.norm_linearization_with(&[v(1.0, 0.0)], 2, &hint).unwrap();
        assert!((lin.alphas[0] - 1.28).abs() < 1e-12);
        let jump = 0.8 * 2.0 * (std::f64::consts::PI / 8.0).sin();
        assert!((lin.betas[0] - 2.0 * jump * jump).abs() < 1e-12);
        assert!((lin.betas[0] - 0.749807).abs() < 1e-6);
    }

    #[test]
    fn guarded_rule_is_tighter_and_sound() {
        let locs = grid_locations(3.0, 9);
        for m in [PiecewiseLinearModel::double_spiral(), PiecewiseLinearModel::switched_benchmark()] {
            let guarded = m.norm_linearization(&locs, 2).unwrap();
            let loose = m
                .norm_linearization_with(&locs, 2, &LinearizationHint { beta_rule: BetaRule::Unconstrained, ..Default::default() })
                .unwrap();
            for (g, l) in guarded.betas.iter().zip(&loose.betas) {
                assert!(*g <= l * (1.0 + 1e-9) + 1e-12);
            }
            for lin in [&guarded, &loose] {
                assert!(max_violation(&m, &locs, lin, 2, -6.0, 6.0, 100_000, 7) <= 1e-9);
            }
        }
    }

    #[test]
    fn optimized_split_is_sound_and_helps() {
        let m = PiecewiseLinearModel::double_spiral();
        let locs = grid_locations(1.0, 7);
        let masses = vec![1.0 / locs.len() as f64; locs.len()];
        let ebar = 0.01;
        let hint = LinearizationHint { masses: Some(&masses), ebar: Some(ebar), ..Default::default() };
        let tuned = m.norm_linearization_with(&locs, 2, &hint).unwrap();
        let fixed = m.norm_linearization(&locs, 2).unwrap();
        let score = |l: &NormLinearization| l.alpha_hat() * ebar + l.weighted_beta(&masses);
        assert!(score(&tuned) <= score(&fixed) + 1e-12);
        assert!(tuned.split.unwrap() != 1.0);
        assert!(max_violation(&m, &locs, &tuned, 2, -3.0, 3.0, 100_000, 11) <= 1e-9);
    }

    #[test]
    fn rho_one_is_sound() {
        let locs = grid_locations(2.0, 5);
        for m in [PiecewiseLinearModel::double_spiral(), PiecewiseLinearModel::switched_benchmark()] {
            let lin = m.norm_linearization(&locs, 1).unwrap();
            assert!(max_violation(&m, &locs, &lin, 1, -5.0, 5.0, 50_000, 3) <= 1e-9);
        }
    }

    #[test]
    fn within_mode_quotients_respect_bound() {
        let m = PiecewiseLinearModel::switched_benchmark();
        let l = m.lipschitz_bound().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let x = v(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
            let y = &x + v(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
            if m.mode_of(&x) == m.mode_of(&y) {
                let q = (m.eval(&x).unwrap() - m.eval(&y).unwrap()).norm() / (&x - &y).norm();
                assert!(q <= l + 1e-9);
            }
        }
    }

    #[test]
    fn coverage_gap_is_rejected() {
        let r = PiecewiseLinearModel::new(vec![(DMatrix::identity(2, 2), vec![halfspace(&[1.0, 0.0], 0.0)])]);
        assert!(matches!(r, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn golden_section_finds_minimum() {
        let x = golden_section(|x| (x - 1.3).powi(2), -5.0, 5.0, 100);
        assert!((x - 1.3).abs() < 1e-8);
    }
}
