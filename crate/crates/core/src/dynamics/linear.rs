use nalgebra::{DMatrix, DVector};

use super::{check_point, check_rho, Dynamics, LinearizationHint, NormLinearization};
use crate::linalg::spectral_norm;
use crate::{Error, Result};

/// f(x) = A x.
#[derive(Debug, Clone)]
pub struct LinearModel {
    a: DMatrix<f64>,
    norm: f64,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::InvalidModel("linear map must be square".into()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite matrix entry".into()));
        }
        let norm = spectral_norm(&a);
        Ok(Self { a, norm })
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim)).expect("identity is valid")
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
}

impl Dynamics for LinearModel {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn family(&self) -> &'static str {
        "linear"
    }

    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_point(x, self.dim())?;
        Ok(&self.a * x)
    }

    fn norm_linearization_with(
        &self,
        locations: &[DVector<f64>],
        rho: u32,
        _hint: &LinearizationHint<'_>,
    ) -> Result<NormLinearization> {
        check_rho(rho)?;
        Ok(NormLinearization::uniform(locations.len(), self.norm.powi(rho as i32), self.norm))
    }

    fn lipschitz_bound(&self) -> Result<f64> {
        Ok(self.norm)
    }

    fn is_continuous(&self) -> bool {
        true
    }
}
