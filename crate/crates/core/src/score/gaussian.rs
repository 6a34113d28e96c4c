use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{check_input, gaussian_log_density_dense, log_sum_exp, softmax_in_place, ScoreModel};
use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Finite mixture of Gaussians. A single component gives the plain Gaussian
/// model.
///
/// At signal level `a` component `k` becomes `N(sqrt(a) mu_k, a C_k + (1 - a) I)`.
/// Scores use a cached eigendecomposition of each `C_k`; `log_density` builds
/// the noised covariance explicitly and factors it, so the two paths are
/// independent.
#[derive(Debug, Clone)]
pub struct GaussianMixtureModel {
    dim: usize,
    log_weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
    eigen: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl GaussianMixtureModel {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covs: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covs.len() != k {
            return Err(Error::invalid("mixture needs matching, nonempty component lists"));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::invalid("mixture dimension must be positive"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("mixture weights must be nonnegative"));
        }
        if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("mixture weights must sum to one"));
        }
        let mut mean_vecs = Vec::with_capacity(k);
        let mut cov_mats = Vec::with_capacity(k);
        let mut eigen = Vec::with_capacity(k);
        for (m, c) in means.into_iter().zip(covs) {
            if m.len() != dim || c.len() != dim || c.iter().any(|r| r.len() != dim) {
                return Err(Error::Shape {
                    expected: format!("{dim}-dimensional component"),
                    actual: "mismatched component".into(),
                });
            }
            let cm = DMatrix::from_fn(dim, dim, |r, q| c[r][q]);
            if (&cm - cm.transpose()).amax() > 1e-12 * cm.amax().max(1.0) {
                return Err(Error::invalid("covariance must be symmetric"));
            }
            let eig = SymmetricEigen::new(cm.clone());
            if eig.eigenvalues.iter().any(|l| *l <= 0.0) {
                return Err(Error::invalid("covariance must be positive definite"));
            }
            eigen.push((eig.eigenvectors, eig.eigenvalues));
            mean_vecs.push(DVector::from_vec(m));
            cov_mats.push(cm);
        }
        Ok(Self {
            dim,
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            means: mean_vecs,
            covs: cov_mats,
            eigen,
        })
    }

    pub fn gaussian(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![cov])
    }

    pub fn components(&self) -> usize {
        self.means.len()
    }

    /// Overall data mean.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = DVector::zeros(self.dim);
        for (lw, mu) in self.log_weights.iter().zip(&self.means) {
            m += mu * lw.exp();
        }
        m.iter().copied().collect()
    }

    /// Overall data covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = DVector::from_vec(self.mean());
        let mut c = DMatrix::zeros(self.dim, self.dim);
        for ((lw, mu), cov) in self.log_weights.iter().zip(&self.means).zip(&self.covs) {
            let d = mu - &mean;
            c += (cov + &d * d.transpose()) * lw.exp();
        }
        c
    }

    /// Per-component `(log N(x), score)` at level `a` using the eigenbasis.
    fn component(&self, k: usize, x: &DVector<f64>, a: f64) -> (f64, DVector<f64>) {
        let (q, lambda) = &self.eigen[k];
        let diff = x - &self.means[k] * a.sqrt();
        let proj = q.transpose() * &diff;
        let mut quad = 0.0;
        let mut log_det = 0.0;
        let mut scaled = proj.clone();
        for j in 0..self.dim {
            let var = a * lambda[j] + (1.0 - a);
            quad += proj[j] * proj[j] / var;
            log_det += var.ln();
            scaled[j] = -proj[j] / var;
        }
        let logp = -0.5 * (quad + log_det + self.dim as f64 * LN_2PI);
        (logp, q * scaled)
    }
}

impl ScoreModel for GaussianMixtureModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, x: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
        check_input(x, self.dim, alpha_bar)?;
        let xv = DVector::from_column_slice(x);
        let parts: Vec<_> = (0..self.components())
            .map(|k| self.component(k, &xv, alpha_bar))
            .collect();
        let mut resp: Vec<f64> = parts
            .iter()
            .zip(&self.log_weights)
            .map(|((lp, _), lw)| lp + lw)
            .collect();
        softmax_in_place(&mut resp);
        let mut out = DVector::zeros(self.dim);
        for (r, (_, s)) in resp.iter().zip(&parts) {
            if *r > 0.0 {
                out += s * *r;
            }
        }
        Ok(out.iter().copied().collect())
    }

    fn log_density(&self, x: &[f64], alpha_bar: f64) -> Result<f64> {
        check_input(x, self.dim, alpha_bar)?;
        let terms: Result<Vec<f64>> = (0..self.components())
            .map(|k| {
                let mean: Vec<f64> = self.means[k].iter().map(|m| m * alpha_bar.sqrt()).collect();
                let cov = &self.covs[k] * alpha_bar
                    + DMatrix::identity(self.dim, self.dim) * (1.0 - alpha_bar);
                Ok(gaussian_log_density_dense(x, &mean, cov)? + self.log_weights[k])
            })
            .collect();
        Ok(log_sum_exp(&terms?))
    }
}

/// Single Gaussian with the demos' sample mean and covariance, plus `ridge`
/// on the diagonal so pinned channels stay invertible.
pub fn fit_gaussian(demos: &[Trajectory], ridge: f64) -> Result<GaussianMixtureModel> {
    let first = demos.first().ok_or_else(|| Error::invalid("need at least one demo"))?;
    let shape = first.shape();
    if let Some(bad) = demos.iter().find(|d| d.shape() != shape) {
        return Err(Error::Shape {
            expected: format!("{shape:?}"),
            actual: format!("{:?}", bad.shape()),
        });
    }
    if !(ridge > 0.0) {
        return Err(Error::invalid("ridge must be positive"));
    }
    let dim = shape.len();
    let n = demos.len() as f64;
    let mut mean = DVector::zeros(dim);
    for d in demos {
        mean += DVector::from_column_slice(d.as_slice());
    }
    mean /= n;
    let mut cov = DMatrix::identity(dim, dim) * ridge;
    for d in demos {
        let c = DVector::from_column_slice(d.as_slice()) - &mean;
        cov += &c * c.transpose() / n;
    }
    GaussianMixtureModel::gaussian(
        mean.iter().copied().collect(),
        (0..dim).map(|r| cov.row(r).iter().copied().collect()).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::super::testing::{fd_score, rel_err};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spd(dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let b = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        let c = &b * b.transpose() + DMatrix::identity(dim, dim) * 0.2;
        (0..dim).map(|r| (0..dim).map(|q| c[(r, q)]).collect()).collect()
    }

    #[test]
    fn gaussian_score_at_level_zero_is_negative_precision_times_x() {
        let cov = vec![vec![2.0, 0.5], vec![0.5, 1.0]];
        let g = GaussianMixtureModel::gaussian(vec![0.0, 0.0], cov.clone()).unwrap();
        assert!(g.score(&[0.0, 0.0], 1.0).unwrap().iter().all(|v| v.abs() < 1e-15));
        let x = [0.3, -1.2];
        let det = 2.0 * 1.0 - 0.25;
        let expect = [
            -(1.0 * x[0] - 0.5 * x[1]) / det,
            -(-0.5 * x[0] + 2.0 * x[1]) / det,
        ];
        let s = g.score(&x, 1.0).unwrap();
        for k in 0..2 {
            assert!((s[k] - expect[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn mixture_score_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dim = 5;
        let means = (0..3)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let covs = (0..3).map(|_| spd(dim, &mut rng)).collect();
        let m = GaussianMixtureModel::new(vec![0.2, 0.5, 0.3], means, covs).unwrap();
        for &a in &[0.999, 0.7, 0.3, 0.05] {
            for _ in 0..20 {
                let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
                let s = m.score(&x, a).unwrap();
                assert!(rel_err(&s, &fd_score(&m, &x, a)) < 1e-5);
            }
        }
    }

    #[test]
    fn rejects_invalid_components() {
        let c = vec![vec![1.0]];
        assert!(GaussianMixtureModel::new(vec![0.5, 0.6], vec![vec![0.0]; 2], vec![c.clone(); 2]).is_err());
        assert!(GaussianMixtureModel::gaussian(vec![0.0], vec![vec![-1.0]]).is_err());
        let g = GaussianMixtureModel::gaussian(vec![0.0], c).unwrap();
        assert!(g.score(&[f64::NAN], 0.5).is_err());
    }
}
