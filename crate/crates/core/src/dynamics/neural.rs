use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::interval::{sigmoid, sigmoid_range, sigmoid_slope_range, Interval};
use super::{check_point, check_rho, Dynamics, LinearizationHint, NormLinearization};
use crate::linalg::{matrix_from_rows, spectral_norm};
use crate::{Error, Result};

/// Sub-boxes per input axis for the interval Jacobian bound.
pub const DEFAULT_SUBDIVISIONS: usize = 32;
const MAX_SUBBOXES: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    /// Row-major weight matrix, output × input.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// Weights file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetFile {
    pub layers: Vec<Layer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_box: Option<Vec<[f64; 2]>>,
}

impl NetFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Feed-forward network with sigmoid hidden layers and a linear output layer.
///
/// When an input box is given the model is NN(clamp(x)), so the Jacobian
/// bound over the box is a global Lipschitz bound.
#[derive(Debug, Clone)]
pub struct NeuralNetModel {
    layers: Vec<(DMatrix<f64>, DVector<f64>)>,
    input_box: Option<Vec<(f64, f64)>>,
    product_bound: f64,
    interval_bound: Option<f64>,
}

impl NeuralNetModel {
    pub fn new(layers: &[Layer], input_box: Option<&[[f64; 2]]>, subdivisions: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidModel("network has no layers".into()));
        }
        let mut parsed = Vec::with_capacity(layers.len());
        for (k, l) in layers.iter().enumerate() {
            let w = matrix_from_rows(&l.weights)?;
            if w.nrows() != l.bias.len() {
                return Err(Error::InvalidModel(format!("layer {k}: bias length {} for {} rows", l.bias.len(), w.nrows())));
            }
            if let Some((prev, _)) = parsed.last() {
                let prev: &DMatrix<f64> = prev;
                if prev.nrows() != w.ncols() {
                    return Err(Error::InvalidModel(format!("layer {k}: shapes do not chain")));
                }
            }
            if w.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!("layer {k}: non-finite parameter")));
            }
            parsed.push((w, DVector::from_vec(l.bias.clone())));
        }
        let dim = parsed[0].0.ncols();
        if parsed.last().map(|l| l.0.nrows()) != Some(dim) {
            return Err(Error::InvalidModel("network output dimension must equal input dimension".into()));
        }
        let hidden = parsed.len() - 1;
        let product_bound = parsed.iter().map(|(w, _)| spectral_norm(w)).product::<f64>() * 0.25f64.powi(hidden as i32);
        let input_box = match input_box {
            None => None,
            Some(b) => {
                if b.len() != dim || b.iter().any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
                    return Err(Error::InvalidModel("input box must give finite [lo, hi] per input".into()));
                }
                Some(b.iter().map(|[lo, hi]| (*lo, *hi)).collect::<Vec<_>>())
            }
        };
        let mut model = Self { layers: parsed, input_box, product_bound, interval_bound: None };
        if let Some(b) = model.input_box.clone() {
            model.interval_bound = Some(model.interval_jacobian_bound(&b, subdivisions.max(1)));
        }
        Ok(model)
    }

    pub fn from_file(path: &Path, subdivisions: usize) -> Result<Self> {
        let file = NetFile::load(path)?;
        Self::new(&file.layers, file.input_box.as_deref(), subdivisions)
    }

    /// Π‖W_l‖₂ · (1/4)^{hidden layers}.
    pub fn product_bound(&self) -> f64 {
        self.product_bound
    }

    /// sup over the input box of ‖J‖₂, bounded by interval arithmetic.
    pub fn interval_bound(&self) -> Option<f64> {
        self.interval_bound
    }

    pub fn input_box(&self) -> Option<&[(f64, f64)]> {
        self.input_box.as_deref()
    }

    fn interval_jacobian_bound(&self, bx: &[(f64, f64)], subdivisions: usize) -> f64 {
        let dim = bx.len();
        let mut per_axis = subdivisions;
        while per_axis > 1 && per_axis.pow(dim as u32) > MAX_SUBBOXES {
            per_axis -= 1;
        }
        let total = per_axis.pow(dim as u32);
        let mut worst = 0.0f64;
        for k in 0..total {
            let sub: Vec<Interval> = (0..dim)
                .map(|a| {
                    let j = (k / per_axis.pow(a as u32)) % per_axis;
                    let (lo, hi) = bx[a];
                    let w = (hi - lo) / per_axis as f64;
                    let right = if j + 1 == per_axis { hi } else { lo + w * (j + 1) as f64 };
                    Interval::new(lo + w * j as f64, right)
                })
                .collect();
            worst = worst.max(self.subbox_bound(&sub));
        }
        worst * (1.0 + 1e-9)
    }

    /// ‖ |J|_upper ‖₂ over one sub-box, where |J|_upper bounds the entrywise
    /// magnitude of the Jacobian.
    fn subbox_bound(&self, x: &[Interval]) -> f64 {
        let dim = x.len();
        let mut h: Vec<Interval> = x.to_vec();
        // jac: rows × dim, row-major
        let mut jac: Vec<Interval> =
            (0..dim * dim).map(|idx| Interval::point(if idx / dim == idx % dim { 1.0 } else { 0.0 })).collect();
        let mut rows = dim;
        let last = self.layers.len() - 1;
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let out = w.nrows();
            let mut next = vec![Interval::ZERO; out * dim];
            for r in 0..out {
                for s in 0..rows {
                    let wrs = w[(r, s)];
                    if wrs == 0.0 {
                        continue;
                    }
                    for c in 0..dim {
                        next[r * dim + c] = next[r * dim + c].add(jac[s * dim + c].scale(wrs));
                    }
                }
            }
            if l < last {
                let z: Vec<Interval> = (0..out)
                    .map(|r| (0..rows).fold(Interval::point(b[r]), |acc, s| acc.add(h[s].scale(w[(r, s)]))))
                    .collect();
                for r in 0..out {
                    let d = sigmoid_slope_range(z[r]);
                    for c in 0..dim {
                        next[r * dim + c] = next[r * dim + c].mul_nonneg(d);
                    }
                }
                h = z.into_iter().map(sigmoid_range).collect();
            }
            jac = next;
            rows = out;
        }
        let upper = DMatrix::from_fn(rows, dim, |r, c| jac[r * dim + c].magnitude());
        spectral_norm(&upper)
    }

    fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut h = match &self.input_box {
            Some(b) => DVector::from_fn(x.len(), |a, _| x[a].clamp(b[a].0, b[a].1)),
            None => x.clone(),
        };
        let last = self.layers.len() - 1;
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let z = w * &h + b;
            h = if l < last { z.map(sigmoid) } else { z };
        }
        h
    }
}

impl Dynamics for NeuralNetModel {
    fn dim(&self) -> usize {
        self.layers[0].0.ncols()
    }

    fn family(&self) -> &'static str {
        "neural_net"
    }

    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_point(x, self.dim())?;
        Ok(self.forward(x))
    }

    fn norm_linearization_with(
        &self,
        locations: &[DVector<f64>],
        rho: u32,
        _hint: &LinearizationHint<'_>,
    ) -> Result<NormLinearization> {
        check_rho(rho)?;
        let l = self.lipschitz_bound()?;
        Ok(NormLinearization::uniform(locations.len(), l.powi(rho as i32), l))
    }

    fn lipschitz_bound(&self) -> Result<f64> {
        Ok(self.interval_bound.map_or(self.product_bound, |b| b.min(self.product_bound)))
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

    fn layer(w: &[&[f64]], b: &[f64]) -> Layer {
        Layer { weights: w.iter().map(|r| r.to_vec()).collect(), bias: b.to_vec() }
    }

    fn random_net(seed: u64, width: usize, scale: f64) -> Vec<Layer> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mk = |o: usize, i: usize| Layer {
            weights: (0..o).map(|_| (0..i).map(|_| rng.random_range(-scale..scale)).collect()).collect(),
            bias: (0..o).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        vec![mk(width, 2), mk(width, width), mk(2, width)]
    }

    #[test]
    fn zero_hidden_weights_forward_pass() {
        let net = NeuralNetModel::new(
            &[layer(&[&[0.0, 0.0], &[0.0, 0.0]], &[0.0, 0.0]), layer(&[&[1.0, 2.0], &[3.0, 4.0]], &[0.1, 0.2])],
            None,
            1,
        )
        .unwrap();
        let y = net.eval(&DVector::from_vec(vec![5.0, -7.0])).unwrap();
        assert!((y[0] - 1.6).abs() < 1e-15);
        assert!((y[1] - 3.7).abs() < 1e-15);
    }

    #[test]
    fn product_rule() {
        let net = NeuralNetModel::new(
            &[layer(&[&[2.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0]), layer(&[&[0.0, 2.0], &[1.0, 0.0]], &[0.0, 0.0])],
            None,
            1,
        )
        .unwrap();
        assert!((net.lipschitz_bound().unwrap() - 1.0).abs() < 1e-12);
        let lin = net.norm_linearization(&[DVector::zeros(2)], 2).unwrap();
        assert!((lin.alphas[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let bad = NeuralNetModel::new(&[layer(&[&[1.0, 0.0]], &[0.0, 0.0])], None, 1);
        assert!(bad.is_err());
        let not_square = NeuralNetModel::new(&[layer(&[&[1.0, 0.0]], &[0.0])], None, 1);
        assert!(not_square.is_err());
    }

    #[test]
    fn interval_bound_is_sound_and_tighter() {
        let layers = random_net(1, 16, 1.0);
        let bx = [[-2.0, 2.0], [-2.0, 2.0]];
        let net = NeuralNetModel::new(&layers, Some(&bx), 16).unwrap();
        let l = net.lipschitz_bound().unwrap();
        assert!(net.interval_bound().unwrap() <= net.product_bound());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut sampled = 0.0f64;
        for _ in 0..20_000 {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
            let y = &x + DVector::from_fn(2, |_, _| rng.random_range(-0.05..0.05));
            let q = (net.eval(&x).unwrap() - net.eval(&y).unwrap()).norm() / (&x - &y).norm();
            sampled = sampled.max(q);
        }
        assert!(sampled <= l);
        let locs: Vec<DVector<f64>> = (0..10).map(|k| DVector::from_vec(vec![k as f64 * 0.3 - 1.5, 0.2])).collect();
        let lin = net.norm_linearization(&locs, 2).unwrap();
        assert!(max_violation(&net, &locs, &lin, 2, -3.0, 3.0, 20_000, 4) <= 1e-9);
    }

    #[test]
    fn clamp_applies_outside_box() {
        let layers = random_net(3, 4, 1.0);
        let net = NeuralNetModel::new(&layers, Some(&[[-1.0, 1.0], [-1.0, 1.0]]), 4).unwrap();
        let a = net.eval(&DVector::from_vec(vec![5.0, -9.0])).unwrap();
        let b = net.eval(&DVector::from_vec(vec![1.0, -1.0])).unwrap();
        assert_eq!(a, b);
    }
}
