use std::cmp::Ordering;

use super::{check_input, log_sum_exp, softmax_in_place, ScoreModel};
use crate::error::{Error, Result};
use crate::trajectory::{Shape, Trajectory};

pub const DEFAULT_KERNEL_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Exact score of a finite demonstration set under forward noising.
///
/// At signal level `a` the density is the equal-weight mixture
/// `sum_k N(sqrt(a) m_k, (1 - a + floor) I)`. The floor keeps the clean-data
/// density from collapsing onto Dirac masses.
///
/// Demos are stored sorted with duplicates merged into multiplicities, so the
/// model (and every score it returns) is bitwise independent of the order and
/// repetition pattern of the input list.
#[derive(Debug, Clone)]
pub struct EmpiricalScoreModel {
    shape: Shape,
    demos: Vec<f64>,
    sq_norms: Vec<f64>,
    log_weights: Vec<f64>,
    total: usize,
    floor: f64,
}

pub fn fit_empirical(demos: &[Trajectory]) -> Result<EmpiricalScoreModel> {
    EmpiricalScoreModel::fit(demos, DEFAULT_KERNEL_FLOOR)
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

impl EmpiricalScoreModel {
    pub fn fit(demos: &[Trajectory], floor: f64) -> Result<Self> {
        let first = demos
            .first()
            .ok_or_else(|| Error::invalid("empirical model needs at least one demo"))?;
        let shape = first.shape();
        if let Some(bad) = demos.iter().find(|d| d.shape() != shape) {
            return Err(Error::Shape {
                expected: format!("{}x{}", shape.horizon, shape.channels),
                actual: format!("{}x{}", bad.horizon(), bad.channels()),
            });
        }
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(Error::invalid("kernel floor must be positive"));
        }
        let mut rows: Vec<&[f64]> = demos.iter().map(Trajectory::as_slice).collect();
        rows.sort_by(|a, b| cmp_rows(a, b));
        let mut unique: Vec<(&[f64], usize)> = Vec::new();
        for r in rows {
            match unique.last_mut() {
                Some((last, count)) if cmp_rows(last, r).is_eq() => *count += 1,
                _ => unique.push((r, 1)),
            }
        }
        let total = demos.len();
        let mut flat = Vec::with_capacity(unique.len() * shape.len());
        let mut sq_norms = Vec::with_capacity(unique.len());
        let mut log_weights = Vec::with_capacity(unique.len());
        for (r, count) in unique {
            flat.extend_from_slice(r);
            sq_norms.push(r.iter().map(|v| v * v).sum());
            log_weights.push((count as f64 / total as f64).ln());
        }
        Ok(Self {
            shape,
            demos: flat,
            sq_norms,
            log_weights,
            total,
            floor,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Number of demos fitted, counting duplicates.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn kernel_floor(&self) -> f64 {
        self.floor
    }

    /// Distinct demos in canonical order.
    pub fn unique_demos(&self) -> impl Iterator<Item = &[f64]> {
        self.demos.chunks_exact(self.shape.len())
    }

    /// Mean of the demo set, weighted by multiplicity.
    pub fn demo_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.shape.len()];
        for (row, lw) in self.unique_demos().zip(&self.log_weights) {
            let w = lw.exp();
            for (acc, v) in m.iter_mut().zip(row) {
                *acc += w * v;
            }
        }
        m
    }

    fn variance(&self, a: f64) -> f64 {
        1.0 - a + self.floor
    }

    /// Mixture responsibilities at `x`. Uses
    /// `|x - s m|^2 = |x|^2 - 2 s <x, m> + s^2 |m|^2` and drops the shared
    /// `|x|^2` term.
    fn responsibilities(&self, x: &[f64], a: f64) -> Vec<f64> {
        let s = a.sqrt();
        let inv2v = 0.5 / self.variance(a);
        let mut logits: Vec<f64> = self
            .unique_demos()
            .zip(&self.sq_norms)
            .zip(&self.log_weights)
            .map(|((m, n2), lw)| {
                let dot: f64 = x.iter().zip(m).map(|(p, q)| p * q).sum();
                lw - inv2v * (a * n2 - 2.0 * s * dot)
            })
            .collect();
        softmax_in_place(&mut logits);
        logits
    }

    /// Posterior mean of the clean demo given `x` at level `a`.
    pub fn denoised_mean(&self, x: &[f64], a: f64) -> Vec<f64> {
        let r = self.responsibilities(x, a);
        let mut out = vec![0.0; x.len()];
        for (m, rk) in self.unique_demos().zip(&r) {
            if *rk == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(m) {
                *o += rk * v;
            }
        }
        out
    }
}

impl ScoreModel for EmpiricalScoreModel {
    fn dim(&self) -> usize {
        self.shape.len()
    }

    fn score(&self, x: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
        check_input(x, self.dim(), alpha_bar)?;
        let s = alpha_bar.sqrt();
        let v = self.variance(alpha_bar);
        let m = self.denoised_mean(x, alpha_bar);
        Ok(x.iter().zip(&m).map(|(xi, mi)| (s * mi - xi) / v).collect())
    }

    fn log_density(&self, x: &[f64], alpha_bar: f64) -> Result<f64> {
        check_input(x, self.dim(), alpha_bar)?;
        let s = alpha_bar.sqrt();
        let v = self.variance(alpha_bar);
        let terms: Vec<f64> = self
            .unique_demos()
            .zip(&self.log_weights)
            .map(|(m, lw)| {
                let d2: f64 = x.iter().zip(m).map(|(p, q)| (p - s * q).powi(2)).sum();
                lw - 0.5 * d2 / v
            })
            .collect();
        let d = self.dim() as f64;
        Ok(log_sum_exp(&terms) - 0.5 * d * (LN_2PI + v.ln()))
    }
}
