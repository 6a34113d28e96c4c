//! Forward noising, conditioning and the (guided) reverse chain.
//!
//! The reverse mean comes from the score through Tweedie denoising followed by
//! the DDPM posterior mean:
//!
//! ```text
//! x0_hat = (x_i + (1 - abar_i) * score(x_i)) / sqrt(abar_i)
//! mu_i   = c0_i * x0_hat + c1_i * x_i
//! ```
//!
//! A guided step draws `x_{i-1} ~ N(mu_i + var_i * d, var_i)`, where `d` is the
//! strength-scaled guidance direction supplied by a [`Guidance`]
//! implementation. Step 1 returns its mean without noise. Each batch element
//! owns its generator and draws exactly one standard normal vector per noisy
//! step whether or not guidance is active, so guided and unguided chains that
//! share seeds see the same noise.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Parallelism;
use crate::rng::{Rng, SeedStream};
use crate::schedule::NoiseSchedule;
use crate::score::ScoreModel;
use crate::trajectory::{ConditionSet, Shape, Trajectory};

/// Supplies per-sample mean-shift directions at every reverse step.
///
/// `means` holds the posterior means of the whole batch at step `step`; the
/// returned vectors are added to the means after scaling by the step's sampler
/// variance. Returning `None` means no shift. Implementations that couple
/// samples (particle guidance) see the full batch here, which is the only
/// synchronization point of a parallel chain.
pub trait Guidance: Sync {
    fn directions(&self, means: &[Trajectory], step: usize) -> Result<Option<Vec<Vec<f64>>>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoGuidance;

impl Guidance for NoGuidance {
    fn directions(&self, _: &[Trajectory], _: usize) -> Result<Option<Vec<Vec<f64>>>> {
        Ok(None)
    }
}

/// How fast (partial) denoising maps its `n_f` steps onto the full schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FastSchedule {
    /// Noise to original level `n_f` and run original steps `n_f..=1`.
    #[default]
    Truncated,
    /// Noise to level `n_f * stride` with `stride = N / n_f` and run `n_f`
    /// strided steps.
    Respaced,
}

pub fn forward_noise(
    schedule: &NoiseSchedule,
    traj: &Trajectory,
    i: usize,
    rng: &mut Rng,
) -> Result<Trajectory> {
    schedule.check_level(i)?;
    let a = schedule.alpha_bar(i);
    let (s, n) = (a.sqrt(), (1.0 - a).sqrt());
    let values = traj
        .as_slice()
        .iter()
        .map(|v| {
            let e: f64 = StandardNormal.sample(rng);
            s * v + n * e
        })
        .collect();
    Ok(Trajectory::from_flat_unchecked(traj.horizon(), traj.channels(), values))
}

/// Clamps `traj` in place to the condition values at level `i`.
pub fn condition_in_place(
    traj: &mut Trajectory,
    conds: &ConditionSet,
    schedule: &NoiseSchedule,
    i: usize,
) -> Result<()> {
    schedule.check_level(i)?;
    conds.validate(traj.shape())?;
    let scale = schedule.alpha_bar(i).sqrt();
    for &(t, w, v) in conds.entries() {
        traj.set(t, w, if i == 0 { v } else { scale * v });
    }
    Ok(())
}

pub fn apply_condition(
    traj: &Trajectory,
    conds: &ConditionSet,
    schedule: &NoiseSchedule,
    i: usize,
) -> Result<Trajectory> {
    let mut out = traj.clone();
    condition_in_place(&mut out, conds, schedule, i)?;
    Ok(out)
}

/// Score of `model` at step `i` of `schedule`.
pub fn score_at(
    model: &dyn ScoreModel,
    schedule: &NoiseSchedule,
    x: &[f64],
    i: usize,
) -> Result<Vec<f64>> {
    schedule.check_level(i)?;
    let s = model.score(x, schedule.alpha_bar(i))?;
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteScore { step: i });
    }
    Ok(s)
}

/// Tweedie estimate of the clean sample from `x` at step `i`.
pub fn denoised_estimate(
    model: &dyn ScoreModel,
    schedule: &NoiseSchedule,
    x: &Trajectory,
    i: usize,
) -> Result<Trajectory> {
    if i == 0 {
        return Ok(x.clone());
    }
    let s = score_at(model, schedule, x.as_slice(), i)?;
    let a = schedule.alpha_bar(i);
    let inv = 1.0 / a.sqrt();
    let values = x
        .as_slice()
        .iter()
        .zip(&s)
        .map(|(xv, sv)| (xv + (1.0 - a) * sv) * inv)
        .collect();
    Ok(Trajectory::from_flat_unchecked(x.horizon(), x.channels(), values))
}

/// DDPM posterior mean of step `i >= 1`.
pub fn posterior_mean(
    model: &dyn ScoreModel,
    schedule: &NoiseSchedule,
    x: &Trajectory,
    i: usize,
) -> Result<Trajectory> {
    if i == 0 {
        return Err(Error::invalid("posterior mean needs step >= 1"));
    }
    let x0 = denoised_estimate(model, schedule, x, i)?;
    let (c0, c1) = schedule.posterior_coefs(i);
    let values = x0
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .map(|(a, b)| c0 * a + c1 * b)
        .collect();
    Ok(Trajectory::from_flat_unchecked(x.horizon(), x.channels(), values))
}

/// Turns a posterior mean into `x_{i-1}`. `direction` is scaled by the
/// sampler variance; `noise_scale` multiplies the noise standard deviation.
pub fn step_from_mean(
    schedule: &NoiseSchedule,
    mean: &Trajectory,
    direction: Option<&[f64]>,
    i: usize,
    noise_scale: f64,
    rng: &mut Rng,
) -> Trajectory {
    let var = schedule.variance(i);
    let mut values = mean.as_slice().to_vec();
    if let Some(d) = direction {
        for (v, g) in values.iter_mut().zip(d) {
            *v += var * g;
        }
    }
    if i > 1 {
        let sd = var.sqrt() * noise_scale;
        for v in values.iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *v += sd * e;
        }
    }
    Trajectory::from_flat_unchecked(mean.horizon(), mean.channels(), values)
}

/// One reverse step. `direction` is the strength-scaled guidance direction.
pub fn reverse_step(
    model: &dyn ScoreModel,
    schedule: &NoiseSchedule,
    x: &Trajectory,
    i: usize,
    direction: Option<&[f64]>,
    rng: &mut Rng,
) -> Result<Trajectory> {
    if i == 0 || i > schedule.steps() {
        return Err(Error::OutOfRange(format!("reverse step {i}")));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite(format!("input to reverse step {i}")));
    }
    let mean = posterior_mean(model, schedule, x, i)?;
    Ok(step_from_mean(schedule, &mean, direction, i, 1.0, rng))
}

/// Batch sampler bound to one model, schedule and trajectory shape.
///
/// Counts every per-sample reverse step it executes, which is how planners
/// report their budget.
pub struct Denoiser {
    model: Arc<dyn ScoreModel>,
    schedule: NoiseSchedule,
    shape: Shape,
    parallelism: Parallelism,
    fast: FastSchedule,
    noise_scale: f64,
    steps_taken: AtomicU64,
}

impl std::fmt::Debug for Denoiser {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Denoiser")
            .field("shape", &self.shape)
            .field("steps", &self.schedule.steps())
            .field("parallelism", &self.parallelism)
            .field("fast", &self.fast)
            .finish()
    }
}

/// Clones share the model but start with a fresh step counter.
impl Clone for Denoiser {
    fn clone(&self) -> Self {
        Self {
            model: Arc::clone(&self.model),
            schedule: self.schedule.clone(),
            shape: self.shape,
            parallelism: self.parallelism,
            fast: self.fast,
            noise_scale: self.noise_scale,
            steps_taken: AtomicU64::new(0),
        }
    }
}

impl Denoiser {
    pub fn new(model: Arc<dyn ScoreModel>, schedule: NoiseSchedule, shape: Shape) -> Result<Self> {
        if model.dim() != shape.len() {
            return Err(Error::Shape {
                expected: format!("model dimension {}", shape.len()),
                actual: format!("{}", model.dim()),
            });
        }
        Ok(Self {
            model,
            schedule,
            shape,
            parallelism: Parallelism::available(),
            fast: FastSchedule::default(),
            noise_scale: 1.0,
            steps_taken: AtomicU64::new(0),
        })
    }

    pub fn with_parallelism(mut self, p: Parallelism) -> Self {
        self.parallelism = p;
        self
    }

    pub fn with_fast_schedule(mut self, f: FastSchedule) -> Self {
        self.fast = f;
        self
    }

    /// Multiplies the reverse-step noise. Zero gives the deterministic
    /// mean chain.
    pub fn with_noise_scale(mut self, s: f64) -> Self {
        self.noise_scale = s;
        self
    }

    pub fn model(&self) -> &dyn ScoreModel {
        self.model.as_ref()
    }

    pub fn model_arc(&self) -> Arc<dyn ScoreModel> {
        Arc::clone(&self.model)
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn parallelism(&self) -> Parallelism {
        self.parallelism
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn reverse_steps(&self) -> u64 {
        self.steps_taken.load(Ordering::Relaxed)
    }

    pub fn reset_counter(&self) {
        self.steps_taken.store(0, Ordering::Relaxed);
    }

    pub(crate) fn count_steps(&self, n: u64) {
        self.steps_taken.fetch_add(n, Ordering::Relaxed);
    }

    /// Full chain from standard normal noise.
    pub fn sample(
        &self,
        conds: &ConditionSet,
        guidance: &dyn Guidance,
        batch: usize,
        seeds: &SeedStream,
    ) -> Result<Vec<Trajectory>> {
        let mut rngs = seeds.batch(batch);
        self.sample_with(std::slice::from_ref(conds), guidance, &mut rngs)
    }

    /// Full chain with caller-owned generators, one per sample. `conds` is
    /// either one set shared by all samples or one per sample.
    pub fn sample_with(
        &self,
        conds: &[ConditionSet],
        guidance: &dyn Guidance,
        rngs: &mut [Rng],
    ) -> Result<Vec<Trajectory>> {
        if rngs.is_empty() {
            return Err(Error::invalid("batch must be at least 1"));
        }
        let n = self.schedule.steps();
        let mut states: Vec<Trajectory> = rngs.iter_mut().map(|rng| self.initial_state(rng)).collect();
        self.condition_all(&mut states, conds, &self.schedule, n)?;
        self.run_chain(&self.schedule, states, conds, guidance, rngs)
    }

    /// Standard normal draw of the trajectory shape.
    pub fn initial_state(&self, rng: &mut Rng) -> Trajectory {
        let shape = self.shape;
        let v = (0..shape.len()).map(|_| StandardNormal.sample(rng)).collect();
        Trajectory::from_flat_unchecked(shape.horizon, shape.channels, v)
    }

    /// Partially noises each start to the fast level and denoises it with
    /// `n_f` guided steps.
    pub fn partial_denoise(
        &self,
        starts: &[Trajectory],
        n_f: usize,
        conds: &[ConditionSet],
        guidance: &dyn Guidance,
        rngs: &mut [Rng],
    ) -> Result<Vec<Trajectory>> {
        let sub = self.fast_schedule(n_f)?;
        if starts.len() != rngs.len() {
            return Err(Error::invalid("one generator per start trajectory required"));
        }
        let mut states = Vec::with_capacity(starts.len());
        for (s, rng) in starts.iter().zip(rngs.iter_mut()) {
            if s.shape() != self.shape {
                return Err(Error::invalid("start trajectory has the wrong shape"));
            }
            states.push(forward_noise(&sub, s, n_f, rng)?);
        }
        self.condition_all(&mut states, conds, &sub, n_f)?;
        self.run_chain(&sub, states, conds, guidance, rngs)
    }

    /// The schedule a fast denoise of `n_f` steps runs on.
    pub fn fast_schedule(&self, n_f: usize) -> Result<NoiseSchedule> {
        let n = self.schedule.steps();
        if n_f == 0 || n_f > n {
            return Err(Error::invalid(format!("fast step count {n_f} outside 1..={n}")));
        }
        match self.fast {
            FastSchedule::Truncated => self.schedule.truncated(n_f),
            FastSchedule::Respaced => {
                let stride = n / n_f;
                let levels: Vec<usize> = (1..=n_f).map(|j| j * stride).collect();
                self.schedule.respaced(&levels)
            }
        }
    }

    fn condition_all(
        &self,
        states: &mut [Trajectory],
        conds: &[ConditionSet],
        schedule: &NoiseSchedule,
        level: usize,
    ) -> Result<()> {
        if conds.len() != 1 && conds.len() != states.len() {
            return Err(Error::invalid("condition sets must be shared or one per sample"));
        }
        for (k, s) in states.iter_mut().enumerate() {
            let c = if conds.len() == 1 { &conds[0] } else { &conds[k] };
            condition_in_place(s, c, schedule, level).map_err(|e| e.in_batch(k))?;
        }
        Ok(())
    }

    fn run_chain(
        &self,
        schedule: &NoiseSchedule,
        mut states: Vec<Trajectory>,
        conds: &[ConditionSet],
        guidance: &dyn Guidance,
        rngs: &mut [Rng],
    ) -> Result<Vec<Trajectory>> {
        let batch = states.len();
        let model = self.model.as_ref();
        let noise_scale = self.noise_scale;
        for i in (1..=schedule.steps()).rev() {
            let means = self.parallelism.try_map(batch, |k| {
                posterior_mean(model, schedule, &states[k], i)
            })?;
            self.count_steps(batch as u64);
            let dirs = guidance.directions(&means, i)?;
            if let Some(d) = &dirs {
                if d.len() != batch {
                    return Err(Error::invalid("guidance returned the wrong batch size"));
                }
            }
            let mut work: Vec<(&mut Rng, Trajectory)> =
                rngs.iter_mut().zip(means).collect();
            self.parallelism.for_each_mut(&mut work, |k, (rng, mean)| {
                let dir = dirs.as_ref().map(|d| d[k].as_slice());
                *mean = step_from_mean(schedule, mean, dir, i, noise_scale, rng);
            });
            states = work.into_iter().map(|(_, s)| s).collect();
            self.condition_all(&mut states, conds, schedule, i - 1)?;
        }
        Ok(states)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{make_schedule, ScheduleKind};
    use crate::score::{GaussianMixtureModel, LinearSubspaceModel};
    use rand::SeedableRng;

    fn gaussian_2d() -> Arc<dyn ScoreModel> {
        Arc::new(
            GaussianMixtureModel::gaussian(vec![1.0, -2.0], vec![vec![0.5, 0.2], vec![0.2, 0.3]])
                .unwrap(),
        )
    }

    #[test]
    fn forward_noise_level_zero_is_identity() {
        let s = make_schedule(10, ScheduleKind::Linear).unwrap();
        let t = Trajectory::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut rng = Rng::seed_from_u64(0);
        assert_eq!(forward_noise(&s, &t, 0, &mut rng).unwrap(), t);
        assert!(forward_noise(&s, &t, 11, &mut rng).is_err());
    }

    #[test]
    fn forward_noise_moments() {
        let s = make_schedule(50, ScheduleKind::Linear).unwrap();
        let n = 100_000;
        let mut rng = Rng::seed_from_u64(1);
        let zeros = Trajectory::zeros(1, 1);
        let var = (0..n)
            .map(|_| forward_noise(&s, &zeros, 50, &mut rng).unwrap().get(0, 0).powi(2))
            .sum::<f64>()
            / n as f64;
        assert!((var / (1.0 - s.alpha_bar(50)) - 1.0).abs() < 0.05);

        let c = Trajectory::new(1, 1, vec![3.0]).unwrap();
        let i = 20;
        let draws: Vec<f64> = (0..n)
            .map(|_| forward_noise(&s, &c, i, &mut rng).unwrap().get(0, 0))
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let se = ((1.0 - s.alpha_bar(i)) / n as f64).sqrt();
        assert!((mean - s.alpha_bar(i).sqrt() * 3.0).abs() < 3.0 * se);
    }

    #[test]
    fn conditioning_scales_to_level() {
        let s = make_schedule(10, ScheduleKind::Cosine).unwrap();
        let t = Trajectory::new(3, 2, vec![9.0; 6]).unwrap();
        assert_eq!(apply_condition(&t, &ConditionSet::new(), &s, 4).unwrap(), t);
        let mut c = ConditionSet::new();
        c.insert_row(0, &[0.1, 0.7]).unwrap();
        let at0 = apply_condition(&t, &c, &s, 0).unwrap();
        assert_eq!(at0.row(0), &[0.1, 0.7]);
        let at4 = apply_condition(&t, &c, &s, 4).unwrap();
        let k = s.alpha_bar(4).sqrt();
        assert_eq!(at4.row(0), &[k * 0.1, k * 0.7]);
        assert_eq!(at4.row(1), t.row(1));
        let bad = ConditionSet::from_entries([(3, 0, 1.0)]).unwrap();
        assert!(apply_condition(&t, &bad, &s, 0).is_err());
    }

    #[test]
    fn zero_noise_step_returns_mean() {
        let s = make_schedule(10, ScheduleKind::Linear).unwrap();
        let m = gaussian_2d();
        let x = Trajectory::new(1, 2, vec![0.3, 0.9]).unwrap();
        let mean = posterior_mean(m.as_ref(), &s, &x, 5).unwrap();
        let mut rng = Rng::seed_from_u64(3);
        let out = step_from_mean(&s, &mean, None, 5, 0.0, &mut rng);
        assert_eq!(out, mean);
    }

    #[test]
    fn shift_is_additive_under_shared_noise() {
        let s = make_schedule(10, ScheduleKind::Linear).unwrap();
        let m = gaussian_2d();
        let x = Trajectory::new(1, 2, vec![0.3, 0.9]).unwrap();
        let g = [0.7, -1.3];
        let a = reverse_step(m.as_ref(), &s, &x, 6, Some(&g), &mut Rng::seed_from_u64(9)).unwrap();
        let b = reverse_step(m.as_ref(), &s, &x, 6, None, &mut Rng::seed_from_u64(9)).unwrap();
        for k in 0..2 {
            let diff = a.as_slice()[k] - b.as_slice()[k];
            assert!((diff - s.variance(6) * g[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn posterior_mean_pulls_toward_data() {
        let s = make_schedule(20, ScheduleKind::Linear).unwrap();
        let m = GaussianMixtureModel::gaussian(vec![2.0, -1.0], vec![vec![0.1, 0.0], vec![0.0, 0.1]])
            .unwrap();
        let i = 8;
        let x = Trajectory::new(1, 2, vec![2.0 * s.alpha_bar(i).sqrt() + 0.8, -s.alpha_bar(i).sqrt()])
            .unwrap();
        let mu = posterior_mean(&m, &s, &x, i).unwrap();
        let target = [2.0 * s.alpha_bar(i - 1).sqrt(), -s.alpha_bar(i - 1).sqrt()];
        let d = |v: &[f64]| ((v[0] - target[0]).powi(2) + (v[1] - target[1]).powi(2)).sqrt();
        assert!(d(mu.as_slice()) < d(x.as_slice()));
    }

    #[test]
    fn sample_honours_conditions_and_shape() {
        let s = make_schedule(20, ScheduleKind::Linear).unwrap();
        let m = gaussian_2d();
        let den = Denoiser::new(m, s, Shape::new(1, 2)).unwrap();
        let out = den.sample(&ConditionSet::new(), &NoGuidance, 1, &SeedStream::new(1)).unwrap();
        assert!(out[0].is_finite());
        assert!((out[0].get(0, 0) - 1.0).abs() < 8.0 * 0.5f64.sqrt());
        assert_eq!(den.reverse_steps(), 20);
        assert!(den.sample(&ConditionSet::new(), &NoGuidance, 0, &SeedStream::new(1)).is_err());
    }

    #[test]
    fn subspace_samples_stay_near_subspace() {
        let basis = nalgebra::DMatrix::from_fn(6, 2, |r, c| if r == c { 1.0 } else { 0.0 });
        let model = LinearSubspaceModel::new(basis, nalgebra::DMatrix::identity(2, 2), 1e-4).unwrap();
        let s = make_schedule(100, ScheduleKind::Linear).unwrap();
        let den = Denoiser::new(Arc::new(model.clone()), s, Shape::new(1, 6)).unwrap();
        let out = den
            .sample(&ConditionSet::new(), &NoGuidance, 1000, &SeedStream::new(4))
            .unwrap();
        let mean_norm = out
            .iter()
            .map(|t| model.orthogonal_part(t.as_slice()).iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum::<f64>()
            / 1000.0;
        // Four off-subspace directions each with variance r.
        assert!(mean_norm <= 3.0 * (4.0 * 1e-4f64).sqrt(), "{mean_norm}");
    }

    #[test]
    fn fast_schedules() {
        let s = make_schedule(100, ScheduleKind::Linear).unwrap();
        let den = Denoiser::new(gaussian_2d(), s.clone(), Shape::new(1, 2)).unwrap();
        assert!(den.fast_schedule(0).is_err());
        assert!(den.fast_schedule(101).is_err());
        let t = den.fast_schedule(10).unwrap();
        assert!((t.alpha_bar(10) - s.alpha_bar(10)).abs() < 1e-14);
        let den = den.with_fast_schedule(FastSchedule::Respaced);
        let r = den.fast_schedule(10).unwrap();
        assert!((r.alpha_bar(10) - s.alpha_bar(100)).abs() < 1e-12);
    }
}
