//! Scalar standard-normal helpers.

use std::f64::consts::{PI, SQRT_2};

pub(crate) fn pdf(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub(crate) fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

pub(crate) fn sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// P(lo < Z ≤ hi) for standard normal Z, evaluated on the tail that avoids cancellation.
pub(crate) fn interval_prob(lo: f64, hi: f64) -> f64 {
    if lo >= hi {
        return 0.0;
    }
    let p = if lo > 0.0 { sf(lo) - sf(hi) } else { cdf(hi) - cdf(lo) };
    p.max(0.0)
}

/// `z·φ(z)`, zero at ±∞.
pub(crate) fn z_pdf(z: f64) -> f64 {
    if z.is_infinite() {
        0.0
    } else {
        z * pdf(z)
    }
}

pub(crate) const GL8_NODES: [f64; 8] = [
    -0.9602898564975362,
    -0.7966664774136267,
    -0.525532409916329,
    -0.18343464249564978,
    0.18343464249564978,
    0.525532409916329,
    0.7966664774136267,
    0.9602898564975362,
];

pub(crate) const GL8_WEIGHTS: [f64; 8] = [
    0.10122853629037669,
    0.22238103445337434,
    0.31370664587788705,
    0.36268378337836177,
    0.36268378337836177,
    0.31370664587788705,
    0.22238103445337434,
    0.10122853629037669,
];
