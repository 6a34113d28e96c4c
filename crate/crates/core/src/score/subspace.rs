use nalgebra::{DMatrix, DVector};

use super::{check_input, gaussian_log_density_dense, ScoreModel};
use crate::error::{Error, Result};

pub const DEFAULT_RESIDUAL_VARIANCE: f64 = 1e-4;

/// Gaussian data concentrated on the column space of an orthonormal `D x d`
/// basis `A`: `x0 = A z`, `z ~ N(m, S)`.
///
/// At signal level `a` the marginal is
/// `N(sqrt(a) A m, a A S A^T + (1 - a + r) I)`, where the residual variance `r`
/// keeps the density nondegenerate off the subspace. Because `r` is added at
/// every level, the off-subspace score is exactly `-x_perp / (r + 1 - a)`.
#[derive(Debug, Clone)]
pub struct LinearSubspaceModel {
    basis: DMatrix<f64>,
    latent_mean: DVector<f64>,
    latent_cov: DMatrix<f64>,
    residual: f64,
}

impl LinearSubspaceModel {
    pub fn new(basis: DMatrix<f64>, latent_cov: DMatrix<f64>, residual: f64) -> Result<Self> {
        let d = basis.ncols();
        Self::with_latent_mean(basis, DVector::zeros(d), latent_cov, residual)
    }

    pub fn with_latent_mean(
        basis: DMatrix<f64>,
        latent_mean: DVector<f64>,
        latent_cov: DMatrix<f64>,
        residual: f64,
    ) -> Result<Self> {
        let (big_d, d) = basis.shape();
        if d == 0 || d > big_d {
            return Err(Error::invalid("subspace needs 1 <= d <= D"));
        }
        let gram = basis.transpose() * &basis;
        if (&gram - DMatrix::identity(d, d)).amax() > 1e-10 {
            return Err(Error::invalid("subspace basis columns must be orthonormal"));
        }
        if latent_cov.shape() != (d, d) || latent_mean.len() != d {
            return Err(Error::Shape {
                expected: format!("latent dimension {d}"),
                actual: format!("{:?} / {}", latent_cov.shape(), latent_mean.len()),
            });
        }
        if (&latent_cov - latent_cov.transpose()).amax() > 1e-12 * latent_cov.amax().max(1.0)
            || latent_cov.clone().cholesky().is_none()
        {
            return Err(Error::invalid("latent covariance must be symmetric positive definite"));
        }
        if !(residual > 0.0 && residual.is_finite()) {
            return Err(Error::invalid("residual variance must be positive"));
        }
        Ok(Self {
            basis,
            latent_mean,
            latent_cov,
            residual,
        })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn latent_mean(&self) -> &DVector<f64> {
        &self.latent_mean
    }

    pub fn latent_cov(&self) -> &DMatrix<f64> {
        &self.latent_cov
    }

    pub fn residual_variance(&self) -> f64 {
        self.residual
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// `(I - A A^T) x`.
    pub fn orthogonal_part(&self, x: &[f64]) -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        let z = self.basis.transpose() * &xv;
        (xv - &self.basis * z).iter().copied().collect()
    }
}

impl ScoreModel for LinearSubspaceModel {
    fn dim(&self) -> usize {
        self.basis.nrows()
    }

    fn score(&self, x: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
        check_input(x, self.dim(), alpha_bar)?;
        let a = alpha_bar;
        let iso = 1.0 - a + self.residual;
        let xv = DVector::from_column_slice(x);
        let z = self.basis.transpose() * &xv;
        let perp = &xv - &self.basis * &z;
        let d = self.latent_dim();
        let latent_var = &self.latent_cov * a + DMatrix::identity(d, d) * iso;
        let rhs = z - &self.latent_mean * a.sqrt();
        let chol = latent_var
            .cholesky()
            .ok_or_else(|| Error::invalid("latent covariance lost definiteness"))?;
        let inside = &self.basis * chol.solve(&rhs);
        Ok((-inside - perp / iso).iter().copied().collect())
    }

    fn log_density(&self, x: &[f64], alpha_bar: f64) -> Result<f64> {
        check_input(x, self.dim(), alpha_bar)?;
        let a = alpha_bar;
        let big_d = self.dim();
        let mean: Vec<f64> = (&self.basis * &self.latent_mean * a.sqrt()).iter().copied().collect();
        let cov = &self.basis * &self.latent_cov * self.basis.transpose() * a
            + DMatrix::identity(big_d, big_d) * (1.0 - a + self.residual);
        gaussian_log_density_dense(x, &mean, cov)
    }
}
