use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_point, check_rho, Dynamics, LinearizationHint, NormLinearization};
use crate::linalg::spectral_norm;
use crate::{Error, Result};

/// Four-tank process: two pumps feed tanks 1/4 and 2/3 through valves,
/// tanks 3 and 4 drain into tanks 1 and 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadrupleTankParams {
    pub tank_areas: [f64; 4],
    pub outlet_areas: [f64; 4],
    pub pump_gains: [f64; 2],
    pub pump_inputs: [f64; 2],
    pub valve_splits: [f64; 2],
    pub gravity: f64,
    pub dt: f64,
    pub level_min: f64,
    pub level_max: f64,
    /// Sub-intervals per level for the Jacobian bound.
    pub subdivisions: usize,
}

impl Default for QuadrupleTankParams {
    /// Operating point with steady levels near (1.5, 2.5, 0.5, 1.0).
    fn default() -> Self {
        Self {
            tank_areas: [28.0, 32.0, 28.0, 32.0],
            outlet_areas: [1.2643, 1.4449, 1.2643, 1.4449],
            pump_gains: [3.1, 2.56],
            pump_inputs: [3.0, 3.0],
            valve_splits: [0.3117, 0.4843],
            gravity: 9.81,
            dt: 1.0,
            level_min: 0.05,
            level_max: 5.0,
            subdivisions: 256,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadrupleTankModel {
    params: QuadrupleTankParams,
    /// a_i √(2g) / A_i
    drain: [f64; 4],
    /// a_3 √(2g) / A_1 and a_4 √(2g) / A_2
    inflow: [f64; 2],
    pump: [f64; 4],
    lipschitz: f64,
}

impl QuadrupleTankModel {
    pub fn new(params: QuadrupleTankParams) -> Result<Self> {
        let p = &params;
        let positive = p
            .tank_areas
            .iter()
            .chain(&p.outlet_areas)
            .chain(&p.pump_gains)
            .chain([&p.gravity, &p.dt])
            .all(|v| v.is_finite() && *v > 0.0);
        if !positive || p.pump_inputs.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidModel("tank parameters must be positive".into()));
        }
        if p.valve_splits.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::InvalidModel("valve splits must lie in [0, 1]".into()));
        }
        if !(p.level_min > 0.0 && p.level_min < p.level_max && p.level_max.is_finite()) {
            return Err(Error::InvalidModel(
                "clamp box must satisfy 0 < level_min < level_max; the Jacobian is unbounded at zero level".into(),
            ));
        }
        let s = (2.0 * p.gravity).sqrt();
        let a = &p.tank_areas;
        let drain = [0, 1, 2, 3].map(|i| p.outlet_areas[i] * s / a[i]);
        let inflow = [p.outlet_areas[2] * s / a[0], p.outlet_areas[3] * s / a[1]];
        let (q1, q2) = (p.pump_gains[0] * p.pump_inputs[0], p.pump_gains[1] * p.pump_inputs[1]);
        let (g1, g2) = (p.valve_splits[0], p.valve_splits[1]);
        let pump = [g1 * q1 / a[0], g2 * q2 / a[1], (1.0 - g2) * q2 / a[2], (1.0 - g1) * q1 / a[3]];
        let mut model = Self { params, drain, inflow, pump, lipschitz: 0.0 };
        model.lipschitz = model.jacobian_bound();
        Ok(model)
    }

    pub fn params(&self) -> &QuadrupleTankParams {
        &self.params
    }

    fn clamp(&self, h: &DVector<f64>) -> DVector<f64> {
        h.map(|v| v.clamp(self.params.level_min, self.params.level_max))
    }

    /// The Jacobian of the Euler step is block diagonal over tank pairs
    /// (1, 3) and (2, 4); each 2×2 block depends on its two levels only.
    fn jacobian_bound(&self) -> f64 {
        let p = &self.params;
        let n = p.subdivisions.max(1);
        let width = (p.level_max - p.level_min) / n as f64;
        let slope = |c: f64, h: f64| p.dt * c / (2.0 * h.sqrt());
        let mut worst = 0.0f64;
        for (upper, lower, link) in [(0usize, 2usize, 0usize), (1, 3, 1)] {
            for i in 0..n {
                let (ulo, uhi) = (p.level_min + width * i as f64, p.level_min + width * (i + 1) as f64);
                let diag_u = (1.0 - slope(self.drain[upper], ulo)).abs().max((1.0 - slope(self.drain[upper], uhi)).abs());
                for j in 0..n {
                    let (llo, lhi) = (p.level_min + width * j as f64, p.level_min + width * (j + 1) as f64);
                    let diag_l =
                        (1.0 - slope(self.drain[lower], llo)).abs().max((1.0 - slope(self.drain[lower], lhi)).abs());
                    let off = slope(self.inflow[link], llo);
                    let block = DMatrix::from_row_slice(2, 2, &[diag_u, off, 0.0, diag_l]);
                    worst = worst.max(spectral_norm(&block));
                }
            }
        }
        worst * (1.0 + 1e-9)
    }
}

impl Dynamics for QuadrupleTankModel {
    fn dim(&self) -> usize {
        4
    }

    fn family(&self) -> &'static str {
        "quadruple_tank"
    }

    /// clamp ∘ (one Euler step) ∘ clamp.
    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_point(x, 4)?;
        let h = self.clamp(x);
        let r: Vec<f64> = h.iter().map(|v| v.sqrt()).collect();
        let d = &self.drain;
        let rate = [
            -d[0] * r[0] + self.inflow[0] * r[2] + self.pump[0],
            -d[1] * r[1] + self.inflow[1] * r[3] + self.pump[1],
            -d[2] * r[2] + self.pump[2],
            -d[3] * r[3] + self.pump[3],
        ];
        let next = DVector::from_fn(4, |i, _| h[i] + self.params.dt * rate[i]);
        Ok(self.clamp(&next))
    }

    fn norm_linearization_with(
        &self,
        locations: &[DVector<f64>],
        rho: u32,
        _hint: &LinearizationHint<'_>,
    ) -> Result<NormLinearization> {
        check_rho(rho)?;
        Ok(NormLinearization::uniform(locations.len(), self.lipschitz.powi(rho as i32), self.lipschitz))
    }

    fn lipschitz_bound(&self) -> Result<f64> {
        Ok(self.lipschitz)
    }

    fn is_continuous(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::max_violation;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn operating_point_is_nearly_steady() {
        let m = QuadrupleTankModel::new(QuadrupleTankParams::default()).unwrap();
        let h = DVector::from_vec(vec![1.5, 2.5, 0.5, 1.0]);
        let next = m.eval(&h).unwrap();
        assert!((next - h).amax() < 5e-3);
    }

    #[test]
    fn lipschitz_bound_dominates_samples() {
        let m = QuadrupleTankModel::new(QuadrupleTankParams::default()).unwrap();
        let l = m.lipschitz_bound().unwrap();
        assert!(l > 1.0 && l < 1.5, "{l}");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20_000 {
            let x = DVector::from_fn(4, |_, _| rng.random_range(0.0..5.5));
            let y = &x + DVector::from_fn(4, |_, _| rng.random_range(-0.05..0.05));
            let q = (m.eval(&x).unwrap() - m.eval(&y).unwrap()).norm() / (&x - &y).norm();
            assert!(q <= l);
        }
        let locs = vec![DVector::from_vec(vec![1.5, 2.5, 0.5, 1.0]), DVector::from_vec(vec![0.1, 0.1, 4.0, 4.0])];
        for rho in [1, 2] {
            let lin = m.norm_linearization(&locs, rho).unwrap();
            assert!(max_violation(&m, &locs, &lin, rho, 0.0, 5.5, 20_000, 1) <= 1e-9);
        }
    }

    #[test]
    fn invalid_parameters() {
        let p = QuadrupleTankParams { level_min: 0.0, ..Default::default() };
        assert!(QuadrupleTankModel::new(p).is_err());
        let p = QuadrupleTankParams { tank_areas: [1.0, -1.0, 1.0, 1.0], ..Default::default() };
        assert!(QuadrupleTankModel::new(p).is_err());
        let p = QuadrupleTankParams { valve_splits: [1.5, 0.5], ..Default::default() };
        assert!(QuadrupleTankModel::new(p).is_err());
    }
}
