//! Cold versus warm starts for gradient guidance on subspace data.
//!
//! Data lies near a `d`-dimensional subspace `span(A)` of `R^D`. The guide is
//! the sum of a narrow bump `J1` centred on the subspace point `A v1` (the
//! global optimum) and a wide bump `J2` centred on `w_perp`, a point
//! orthogonal to the subspace (a local optimum off the data). Guided chains
//! started from pure noise drift towards `w_perp`; chains started from a
//! lightly re-noised unconditional sample stay on the subspace and settle
//! at `A v1`.
//!
//! Stability note: near `A v1` the guided mean update contracts the distance
//! to the peak by `1 - alpha * var_i / sigma1^2` per step, so the warm chain
//! needs `alpha * var_i < 2 sigma1^2` on its steps, while pushing cold chains
//! off the subspace needs `alpha * r` of order one. The defaults therefore
//! pair a large strength with a long cosine schedule whose late steps are
//! tiny. At 20k steps the warm chain already overshoots the peak.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::{Denoiser, NoGuidance};
use crate::error::{Error, Result};
use crate::guidance::{GradientGuidance, GuideFunction};
use crate::par::Parallelism;
use crate::rng::{tags, SeedStream};
use crate::schedule::{NoiseSchedule, ScheduleKind};
use crate::score::LinearSubspaceModel;
use crate::trajectory::{ConditionSet, Shape, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Prop1Config {
    pub ambient_dim: usize,
    pub latent_dim: usize,
    pub sigma1: f64,
    pub sigma2: f64,
    pub w_perp_norm: f64,
    /// Standard deviation of the data along `v1`; the other latent
    /// directions get half of it, which makes `v1` the top eigenvector.
    pub latent_std: f64,
    pub residual_variance: f64,
    pub strength: f64,
    pub steps: usize,
    pub schedule: ScheduleKind,
    pub fast_steps: usize,
    pub trials: usize,
    pub seed: u64,
    /// Largest allowed `E[J1] / E[J2]` under standard normal inputs.
    pub ordering_ratio: f64,
    pub ordering_samples: usize,
}

impl Default for Prop1Config {
    fn default() -> Self {
        Self {
            ambient_dim: 16,
            latent_dim: 2,
            sigma1: 0.1,
            sigma2: 1.0,
            w_perp_norm: 1.0,
            latent_std: 0.05,
            residual_variance: 1e-4,
            strength: 3e4,
            steps: 50_000,
            schedule: ScheduleKind::Cosine,
            fast_steps: 100,
            trials: 200,
            seed: 0,
            ordering_ratio: 1e-2,
            ordering_samples: 100_000,
        }
    }
}

impl Prop1Config {
    /// Parses a TOML table; omitted keys keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Standard normal start, full guided chain.
    Cold,
    /// Unconditional sample re-noised to the fast level, then the fast
    /// guided chain.
    Warm,
}

/// Geometry and model of one configuration.
#[derive(Debug, Clone)]
pub struct Prop1Setup {
    pub config: Prop1Config,
    pub model: LinearSubspaceModel,
    pub target: DVector<f64>,
    pub w_perp: DVector<f64>,
}

impl Prop1Setup {
    pub fn new(cfg: &Prop1Config) -> Result<Self> {
        let (big_d, d) = (cfg.ambient_dim, cfg.latent_dim);
        if d == 0 || d >= big_d {
            return Err(Error::Config("need 1 <= latent_dim < ambient_dim".into()));
        }
        if !(cfg.sigma1 > 0.0 && cfg.sigma1 < cfg.sigma2) {
            return Err(Error::Config("need 0 < sigma1 < sigma2".into()));
        }
        if cfg.trials == 0 || cfg.steps == 0 || cfg.fast_steps == 0 || cfg.fast_steps > cfg.steps {
            return Err(Error::Config("trials, steps and fast_steps must be positive with fast_steps <= steps".into()));
        }
        if !(cfg.strength >= 0.0 && cfg.latent_std > 0.0) {
            return Err(Error::Config("strength must be nonnegative and latent_std positive".into()));
        }
        let mut rng = SeedStream::new(cfg.seed).derive(tags::TASK).rng();
        let raw = DMatrix::from_fn(big_d, d + 1, |_, _| StandardNormal.sample(&mut rng));
        let q = raw.qr().q();
        let basis = q.columns(0, d).into_owned();
        // The extra QR column is orthogonal to the basis; project once more
        // to wash out rounding.
        let mut w = q.column(d).into_owned();
        w -= &basis * (basis.transpose() * &w);
        w *= cfg.w_perp_norm / w.norm();
        let mut v1 = DVector::zeros(d);
        v1[0] = 1.0;
        let mut cov = DMatrix::identity(d, d) * (0.25 * cfg.latent_std * cfg.latent_std);
        cov[(0, 0)] = cfg.latent_std * cfg.latent_std;
        let model = LinearSubspaceModel::with_latent_mean(basis.clone(), v1.clone(), cov, cfg.residual_variance)?;
        Ok(Self {
            config: cfg.clone(),
            target: &basis * v1,
            w_perp: w,
            model,
        })
    }

    pub fn guide(&self) -> Prop1Guide {
        Prop1Guide {
            basis: self.model.basis().clone(),
            target: self.target.clone(),
            w_perp: self.w_perp.clone(),
            sigma1: self.config.sigma1,
            sigma2: self.config.sigma2,
        }
    }

    fn denoiser(&self) -> Result<Denoiser> {
        let schedule = NoiseSchedule::new(self.config.steps, self.config.schedule)?;
        Denoiser::new(
            Arc::new(self.model.clone()),
            schedule,
            Shape::new(1, self.config.ambient_dim),
        )
    }
}

pub fn prop1_guide(cfg: &Prop1Config) -> Result<Prop1Guide> {
    Ok(Prop1Setup::new(cfg)?.guide())
}

/// `J1 + J2` with `J1 = exp(-|x - A v1|^2 / (2 s1^2))` and
/// `J2 = exp(-|x - w_perp|^2 / (2 s2^2))`.
#[derive(Debug, Clone)]
pub struct Prop1Guide {
    basis: DMatrix<f64>,
    target: DVector<f64>,
    w_perp: DVector<f64>,
    sigma1: f64,
    sigma2: f64,
}

impl Prop1Guide {
    pub fn terms(&self, x: &[f64]) -> (f64, f64) {
        let xv = DVector::from_column_slice(x);
        let j1 = (-(&xv - &self.target).norm_squared() / (2.0 * self.sigma1 * self.sigma1)).exp();
        let j2 = (-(&xv - &self.w_perp).norm_squared() / (2.0 * self.sigma2 * self.sigma2)).exp();
        (j1, j2)
    }

    fn project_out(&self, v: &DVector<f64>) -> DVector<f64> {
        v - &self.basis * (self.basis.transpose() * v)
    }

    /// Orthogonal part of the gradient in closed form:
    /// `-[(I - AA^T)(x - A v1) J1 / s1^2 + (I - AA^T)(x - w_perp) J2 / s2^2]`.
    pub fn orthogonal_gradient(&self, x: &[f64]) -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        let (j1, j2) = self.terms(x);
        let a = self.project_out(&(&xv - &self.target)) * (j1 / (self.sigma1 * self.sigma1));
        let b = self.project_out(&(&xv - &self.w_perp)) * (j2 / (self.sigma2 * self.sigma2));
        (-(a + b)).iter().copied().collect()
    }

    /// The bracket with the second term left unprojected:
    /// `-[(I - AA^T)(x - A v1) J1 / s1^2 + (x - w_perp) J2 / s2^2]`. It agrees
    /// with [`Prop1Guide::orthogonal_gradient`] only when `x` has no
    /// in-subspace component.
    pub fn orthogonal_gradient_unprojected(&self, x: &[f64]) -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        let (j1, j2) = self.terms(x);
        let a = self.project_out(&(&xv - &self.target)) * (j1 / (self.sigma1 * self.sigma1));
        let b = (&xv - &self.w_perp) * (j2 / (self.sigma2 * self.sigma2));
        (-(a + b)).iter().copied().collect()
    }
}

impl GuideFunction for Prop1Guide {
    fn name(&self) -> &str {
        "subspace_bumps"
    }

    fn value(&self, traj: &Trajectory) -> f64 {
        let (j1, j2) = self.terms(traj.as_slice());
        j1 + j2
    }

    fn analytic_gradient(&self, traj: &Trajectory) -> Option<Vec<f64>> {
        let x = traj.as_slice();
        let (j1, j2) = self.terms(x);
        let k1 = j1 / (self.sigma1 * self.sigma1);
        let k2 = j2 / (self.sigma2 * self.sigma2);
        Some(
            x.iter()
                .zip(self.target.iter().zip(self.w_perp.iter()))
                .map(|(xi, (ti, wi))| -k1 * (xi - ti) - k2 * (xi - wi))
                .collect(),
        )
    }
}

/// Monte Carlo `(E[J1(n)], E[J2(n)])` for `n ~ N(0, I)`.
pub fn expectation_ordering(setup: &Prop1Setup, samples: usize, seeds: &SeedStream) -> (f64, f64) {
    let guide = setup.guide();
    let mut rng = seeds.derive(tags::PROBES).rng();
    let d = setup.config.ambient_dim;
    let mut sums = (0.0, 0.0);
    let mut x = vec![0.0; d];
    for _ in 0..samples {
        for v in x.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let (a, b) = guide.terms(&x);
        sums.0 += a;
        sums.1 += b;
    }
    (sums.0 / samples as f64, sums.1 / samples as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub perp_norm: f64,
    pub dist_to_target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop1Summary {
    pub init: Init,
    pub sigma2: f64,
    pub strength: f64,
    pub trials: usize,
    pub mean_perp_norm: f64,
    pub mean_dist_to_target: f64,
    pub w_perp_norm: f64,
    pub target_norm: f64,
    pub expected_j1: f64,
    pub expected_j2: f64,
    pub records: Vec<TrialRecord>,
}

/// Runs `cfg.trials` guided chains from the given initialization. Refuses
/// configurations where `E[J1] / E[J2]` exceeds `cfg.ordering_ratio`.
pub fn run_prop1(cfg: &Prop1Config, init: Init, parallelism: Parallelism) -> Result<Prop1Summary> {
    let setup = Prop1Setup::new(cfg)?;
    let seeds = SeedStream::new(cfg.seed);
    let (e1, e2) = expectation_ordering(&setup, cfg.ordering_samples, &seeds);
    if !(e1 <= cfg.ordering_ratio * e2) {
        return Err(Error::Config(format!(
            "expectation ordering violated: E[J1] = {e1:e}, E[J2] = {e2:e}"
        )));
    }
    let denoiser = setup.denoiser()?.with_parallelism(parallelism);
    let guide = setup.guide();
    let guidance = GradientGuidance {
        guide: &guide,
        alpha_g: cfg.strength,
        mask: None,
    };
    let none = [ConditionSet::new()];
    let finals = match init {
        Init::Cold => {
            let mut rngs = seeds.derive(tags::PARENTS).batch(cfg.trials);
            denoiser.sample_with(&none, &guidance, &mut rngs)?
        }
        Init::Warm => {
            let mut rngs = seeds.derive(tags::WARM).batch(cfg.trials);
            let starts = denoiser.sample_with(&none, &NoGuidance, &mut rngs)?;
            let mut rngs = seeds.derive(tags::CHILDREN).batch(cfg.trials);
            denoiser.partial_denoise(&starts, cfg.fast_steps, &none, &guidance, &mut rngs)?
        }
    };
    let records: Vec<TrialRecord> = finals
        .iter()
        .map(|t| {
            let x = t.as_slice();
            let perp: f64 = setup.model.orthogonal_part(x).iter().map(|v| v * v).sum::<f64>().sqrt();
            let dist = x
                .iter()
                .zip(setup.target.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            TrialRecord {
                perp_norm: perp,
                dist_to_target: dist,
            }
        })
        .collect();
    let n = records.len() as f64;
    Ok(Prop1Summary {
        init,
        sigma2: cfg.sigma2,
        strength: cfg.strength,
        trials: records.len(),
        mean_perp_norm: records.iter().map(|r| r.perp_norm).sum::<f64>() / n,
        mean_dist_to_target: records.iter().map(|r| r.dist_to_target).sum::<f64>() / n,
        w_perp_norm: setup.w_perp.norm(),
        target_norm: setup.target.norm(),
        expected_j1: e1,
        expected_j2: e2,
        records,
    })
}

/// Cold-start mean off-subspace distance for each `sigma2` in `sweep`.
pub fn sigma2_sweep(cfg: &Prop1Config, sweep: &[f64], parallelism: Parallelism) -> Result<Vec<(f64, f64)>> {
    sweep
        .iter()
        .map(|&s2| {
            let c = Prop1Config { sigma2: s2, ..cfg.clone() };
            run_prop1(&c, Init::Cold, parallelism).map(|s| (s2, s.mean_perp_norm))
        })
        .collect()
}
