//! Exact score models.
//!
//! Each model describes a data distribution `p_0` whose forward-noised
//! marginals `p_t` are available in closed form. Models are addressed by the
//! signal level `alpha_bar` rather than by step index, so one model serves
//! every schedule; [`crate::diffusion`] maps steps to levels.

mod demo_io;
mod empirical;
mod gaussian;
mod subspace;

pub use demo_io::{load_demo_set, save_demo_set, DemoManifest};
pub use empirical::{fit_empirical, EmpiricalScoreModel, DEFAULT_KERNEL_FLOOR};
pub use gaussian::{fit_gaussian, GaussianMixtureModel};
pub use subspace::{LinearSubspaceModel, DEFAULT_RESIDUAL_VARIANCE};

use crate::error::{Error, Result};

pub trait ScoreModel: Send + Sync {
    /// Flattened dimension the model is defined on.
    fn dim(&self) -> usize;

    /// `grad_x log p_t(x)` at signal level `alpha_bar`.
    fn score(&self, x: &[f64], alpha_bar: f64) -> Result<Vec<f64>>;

    /// `log p_t(x)` at signal level `alpha_bar`, including normalization.
    fn log_density(&self, x: &[f64], alpha_bar: f64) -> Result<f64>;
}

impl<M: ScoreModel + ?Sized> ScoreModel for Box<M> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn score(&self, x: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
        (**self).score(x, alpha_bar)
    }
    fn log_density(&self, x: &[f64], alpha_bar: f64) -> Result<f64> {
        (**self).log_density(x, alpha_bar)
    }
}

impl<M: ScoreModel + ?Sized> ScoreModel for std::sync::Arc<M> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn score(&self, x: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
        (**self).score(x, alpha_bar)
    }
    fn log_density(&self, x: &[f64], alpha_bar: f64) -> Result<f64> {
        (**self).log_density(x, alpha_bar)
    }
}

pub(crate) fn check_input(x: &[f64], dim: usize, alpha_bar: f64) -> Result<()> {
    if x.len() != dim {
        return Err(Error::Shape {
            expected: format!("{dim}"),
            actual: format!("{}", x.len()),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("score input".into()));
    }
    if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
        return Err(Error::invalid(format!("signal level {alpha_bar} outside (0, 1]")));
    }
    Ok(())
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Normalized weights `exp(v_k - logsumexp(v))`, in place.
pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log density of `N(mean, cov)` at `x`, computed through a dense Cholesky
/// factorization. Slow; used for mixtures and as the reference path.
pub(crate) fn gaussian_log_density_dense(
    x: &[f64],
    mean: &[f64],
    cov: nalgebra::DMatrix<f64>,
) -> Result<f64> {
    let d = x.len();
    let chol = nalgebra::Cholesky::new(cov)
        .ok_or_else(|| Error::invalid("covariance is not positive definite"))?;
    let diff = nalgebra::DVector::from_iterator(d, x.iter().zip(mean).map(|(a, b)| a - b));
    let sol = chol.solve(&diff);
    let quad = diff.dot(&sol);
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(-0.5 * (quad + log_det + d as f64 * LN_2PI))
}

#[cfg(test)]
pub(crate) mod testing {
    use super::ScoreModel;

    /// Central finite-difference gradient of the model's log density.
    pub fn fd_score(model: &dyn ScoreModel, x: &[f64], alpha_bar: f64) -> Vec<f64> {
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|k| {
                let h = 1e-5 * x[k].abs().max(1.0);
                probe[k] = x[k] + h;
                let up = model.log_density(&probe, alpha_bar).unwrap();
                probe[k] = x[k] - h;
                let down = model.log_density(&probe, alpha_bar).unwrap();
                probe[k] = x[k];
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-8);
        num / den
    }
}
