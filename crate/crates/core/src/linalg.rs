//! Small dense linear-algebra helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};


use crate::{Error, Result};

/// Orthonormal eigenvectors (columns of `rotation`) and nonnegative
/// eigenvalues of a symmetric positive-semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigenbasis {
    pub rotation: DMatrix<f64>,
    pub values: DVector<f64>,
}

impl Eigenbasis {
    /// Standard deviation along each eigen-axis.
    pub fn std_devs(&self) -> DVector<f64> {
        self.values.map(f64::sqrt)
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.rotation * DMatrix::from_diagonal(&self.values) * self.rotation.transpose()
    }
}

/// Eigendecomposition of a symmetric PSD matrix with a canonical basis.
///
/// Diagonal inputs keep the coordinate axes. Otherwise eigenpairs are ordered
/// by decreasing eigenvalue and each eigenvector is signed so that its largest
/// entry is positive, so equal covariances always map to equal rotations.
/// Eigenvalues within `-1e-12 * scale` of zero are clamped to zero.
pub fn psd_eigen(m: &DMatrix<f64>) -> Result<Eigenbasis> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: m.ncols() });
    }
    let scale = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(1e-300);
    let neg_tol = -1e-12 * scale;

    let is_diagonal = (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == 0.0));
    let (rotation, values) = if is_diagonal {
        (DMatrix::identity(n, n), m.diagonal())
    } else {
        let eig = SymmetricEigen::new(m.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut rotation = DMatrix::zeros(n, n);
        let mut values = DVector::zeros(n);
        for (col, &src) in order.iter().enumerate() {
            let mut v = eig.eigenvectors.column(src).into_owned();
            let pivot = v.iter().copied().fold(0.0_f64, |best, x| if x.abs() > best.abs() { x } else { best });
            if pivot < 0.0 {
                v = -v;
            }
            rotation.set_column(col, &v);
            values[col] = eig.eigenvalues[src];
        }
        (rotation, values)
    };

    let mut clamped = values;
    for v in clamped.iter_mut() {
        if !v.is_finite() {
            return Err(Error::InvalidDistribution("covariance has non-finite eigenvalues".into()));
        }
        if *v < neg_tol {
            return Err(Error::InvalidDistribution(format!(
                "covariance is not positive semidefinite (eigenvalue {v:e})"
            )));
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(Eigenbasis { rotation, values: clamped })
}

/// Spectral norm ‖A‖₂ from the largest eigenvalue of AᵀA.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let gram = a.transpose() * a;
    let eig = SymmetricEigen::new(gram);
    eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max).sqrt()
}

/// Spectral norm by power iteration on AᵀA.
pub fn spectral_norm_power(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let gram = a.transpose() * a;
    // Deterministic start with no zero entries.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64);
    v.normalize_mut();
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = &gram * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = w / norm;
        let next_lambda = next.dot(&(&gram * &next));
        v = next;
        if (next_lambda - lambda).abs() <= tol * next_lambda.abs().max(1e-300) {
            lambda = next_lambda;
            break;
        }
        lambda = next_lambda;
    }
    lambda.max(0.0).sqrt()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch { expected: ncols, got: bad.len() });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn vector_to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}
