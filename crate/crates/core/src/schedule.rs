//! Discrete variance-preserving noise schedules.
//!
//! Step `i` runs from 0 (clean data) to `N` (close to standard normal). The
//! forward marginal at step `i` is `N(sqrt(abar_i) x0, (1 - abar_i) I)`.
//!
//! Two kinds are provided:
//!
//! * `linear`: betas evenly spaced from `1e-4 * 1000/N` to `0.02 * 1000/N`,
//!   so the total noise is roughly independent of `N`.
//! * `cosine`: `abar(t) = f(t)/f(0)` with `f(t) = cos^2(((t/N + s)/(1 + s)) * pi/2)`,
//!   `s = 0.008`; each beta is `min(1 - abar(t)/abar(t-1), 0.999)` and the
//!   stored `abar` is the running product of `1 - beta`.
//!
//! The per-step sampler variance is the posterior variance
//! `beta_i (1 - abar_{i-1}) / (1 - abar_i)`. At `i = 1` that expression is
//! zero, so step 1 borrows the value of step 2 (or `beta_1` when `N = 1`).
//! Step 1 never adds noise anyway; the value only scales guidance there.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BETA_MAX: f64 = 0.999;
const COSINE_OFFSET: f64 = 0.008;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Linear,
    Cosine,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::invalid(format!("unknown schedule kind `{other}`"))),
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Cosine => "cosine",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    /// `betas[i - 1]` is the rate of step `i`.
    betas: Vec<f64>,
    /// `alpha_bars[i]` for `i = 0..=N`; `alpha_bars[0] == 1`.
    alpha_bars: Vec<f64>,
    variances: Vec<f64>,
    mean_coef_x0: Vec<f64>,
    mean_coef_xt: Vec<f64>,
}

pub fn make_schedule(n: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    NoiseSchedule::new(n, kind)
}

impl NoiseSchedule {
    pub fn new(n: usize, kind: ScheduleKind) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        let betas = match kind {
            ScheduleKind::Linear => linear_betas(n),
            ScheduleKind::Cosine => cosine_betas(n),
        };
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::invalid("betas must lie in (0, 1)"));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self::assemble(betas, alpha_bars))
    }

    /// Schedule whose step `j` lands on `abar` of `self` at `levels[j - 1]`.
    /// `levels` must be strictly increasing and start above zero. Used for
    /// strided fast denoising.
    pub fn respaced(&self, levels: &[usize]) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::invalid("respacing needs at least one level"));
        }
        let mut prev = 0usize;
        let mut betas = Vec::with_capacity(levels.len());
        for &l in levels {
            if l <= prev || l > self.steps() {
                return Err(Error::invalid("respacing levels must increase within 1..=N"));
            }
            betas.push(1.0 - self.alpha_bars[l] / self.alpha_bars[prev]);
            prev = l;
        }
        Self::from_betas(betas)
    }

    /// The first `n` steps of `self`.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.steps() {
            return Err(Error::invalid(format!(
                "truncation length {n} outside 1..={}",
                self.steps()
            )));
        }
        Self::from_betas(self.betas[..n].to_vec())
    }

    fn assemble(betas: Vec<f64>, alpha_bars: Vec<f64>) -> Self {
        let n = betas.len();
        let posterior = |i: usize| betas[i - 1] * (1.0 - alpha_bars[i - 1]) / (1.0 - alpha_bars[i]);
        let mut variances = Vec::with_capacity(n);
        for i in 1..=n {
            let v = if i >= 2 {
                posterior(i)
            } else if n >= 2 {
                posterior(2)
            } else {
                betas[0]
            };
            variances.push(v);
        }
        let mut mean_coef_x0 = Vec::with_capacity(n);
        let mut mean_coef_xt = Vec::with_capacity(n);
        for i in 1..=n {
            let b = betas[i - 1];
            let one_minus = 1.0 - alpha_bars[i];
            mean_coef_x0.push(alpha_bars[i - 1].sqrt() * b / one_minus);
            mean_coef_xt.push((1.0 - b).sqrt() * (1.0 - alpha_bars[i - 1]) / one_minus);
        }
        Self {
            betas,
            alpha_bars,
            variances,
            mean_coef_x0,
            mean_coef_xt,
        }
    }

    /// Number of diffusion steps `N`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, i: usize) -> f64 {
        self.betas[i - 1]
    }

    pub fn alpha_bar(&self, i: usize) -> f64 {
        self.alpha_bars[i]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Sampler variance of reverse step `i` (`1..=N`).
    pub fn variance(&self, i: usize) -> f64 {
        self.variances[i - 1]
    }

    /// Coefficients `(c0, c1)` of the posterior mean `c0 * x0_hat + c1 * x_i`.
    pub fn posterior_coefs(&self, i: usize) -> (f64, f64) {
        (self.mean_coef_x0[i - 1], self.mean_coef_xt[i - 1])
    }

    pub fn check_level(&self, i: usize) -> Result<()> {
        if i > self.steps() {
            Err(Error::OutOfRange(format!(
                "step {i} outside 0..={}",
                self.steps()
            )))
        } else {
            Ok(())
        }
    }
}

fn linear_betas(n: usize) -> Vec<f64> {
    let scale = 1000.0 / n as f64;
    let (lo, hi) = (1e-4 * scale, 0.02 * scale);
    (0..n)
        .map(|k| {
            let frac = if n == 1 { 0.0 } else { k as f64 / (n - 1) as f64 };
            (lo + (hi - lo) * frac).min(BETA_MAX)
        })
        .collect()
}

fn cosine_betas(n: usize) -> Vec<f64> {
    let f = |t: f64| {
        let u = (t / n as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
        (u * std::f64::consts::FRAC_PI_2).cos().powi(2)
    };
    let f0 = f(0.0);
    (1..=n)
        .map(|i| {
            let ratio = (f(i as f64) / f0) / (f((i - 1) as f64) / f0);
            (1.0 - ratio).min(BETA_MAX)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_invariants(s: &NoiseSchedule) {
        assert_eq!(s.alpha_bar(0), 1.0);
        for i in 1..=s.steps() {
            assert!(s.alpha_bar(i) < s.alpha_bar(i - 1));
            assert!(s.alpha_bar(i) > 0.0);
            assert!(s.variance(i) > 0.0);
            let signal = s.alpha_bar(i).sqrt().powi(2);
            assert!((signal + (1.0 - s.alpha_bar(i)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_step() {
        let s = make_schedule(1, ScheduleKind::Linear).unwrap();
        assert!(s.alpha_bar(1) < 1.0);
        check_invariants(&s);
        check_invariants(&make_schedule(1, ScheduleKind::Cosine).unwrap());
    }

    #[test]
    fn long_schedules_are_monotone() {
        check_invariants(&make_schedule(1000, ScheduleKind::Linear).unwrap());
        check_invariants(&make_schedule(1000, ScheduleKind::Cosine).unwrap());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(make_schedule(0, ScheduleKind::Linear).is_err());
        assert!("quadratic".parse::<ScheduleKind>().is_err());
        assert_eq!("cosine".parse::<ScheduleKind>().unwrap(), ScheduleKind::Cosine);
    }

    #[test]
    fn cosine_terminal_level_matches_direct_product() {
        // Recompute from the closed form without going through the schedule code.
        let n = 20;
        let mut prod = 1.0f64;
        for i in 1..=n {
            let g = |t: f64| (((t / 20.0 + 0.008) / 1.008) * std::f64::consts::PI / 2.0).cos().powi(2);
            let beta = (1.0 - g(i as f64) / g(i as f64 - 1.0)).min(0.999);
            prod *= 1.0 - beta;
        }
        let s = make_schedule(n, ScheduleKind::Cosine).unwrap();
        assert!((s.alpha_bar(n) - prod).abs() < 1e-15);
    }

    #[test]
    fn posterior_variance_formula() {
        let s = make_schedule(50, ScheduleKind::Linear).unwrap();
        for i in 2..=50 {
            let expect = s.beta(i) * (1.0 - s.alpha_bar(i - 1)) / (1.0 - s.alpha_bar(i));
            assert_eq!(s.variance(i), expect);
        }
        assert_eq!(s.variance(1), s.variance(2));
    }

    #[test]
    fn respacing_and_truncation_keep_levels() {
        let s = make_schedule(100, ScheduleKind::Linear).unwrap();
        let r = s.respaced(&[10, 20, 30]).unwrap();
        for (j, l) in [10, 20, 30].into_iter().enumerate() {
            assert!((r.alpha_bar(j + 1) - s.alpha_bar(l)).abs() < 1e-12);
        }
        let t = s.truncated(10).unwrap();
        for i in 0..=10 {
            assert!((t.alpha_bar(i) - s.alpha_bar(i)).abs() < 1e-14);
        }
        assert!(s.respaced(&[5, 5]).is_err());
        assert!(s.truncated(101).is_err());
    }
}
