//! Sampling baselines: a single gradient-guided chain, best-of-N selection
//! over guided chains, and best-of-N with per-step stochastic resampling.

use rand::Rng as _;

use crate::diffusion::{condition_in_place, denoised_estimate, posterior_mean, step_from_mean, Denoiser};
use crate::error::{Error, Result};
use crate::guidance::{GradientGuidance, GuideFunction};
use crate::planner::tree::argmax_first;
use crate::rng::{tags, Rng, SeedStream};
use crate::score::softmax_in_place;
use crate::trajectory::{ConditionSet, Trajectory};

/// One chain whose posterior mean is shifted by `alpha_g * grad J(mu)` at
/// every step. Uses candidate stream 0, so it coincides with the first MCSS
/// candidate.
pub fn diffuser_gg(
    denoiser: &Denoiser,
    guide: &dyn GuideFunction,
    conds: &ConditionSet,
    alpha_g: f64,
    seeds: &SeedStream,
) -> Result<Trajectory> {
    let mut out = mcss_candidates(denoiser, guide, conds, alpha_g, 1, seeds)?;
    Ok(out.remove(0))
}

/// `n` independent guided chains on candidate streams `0..n`.
pub fn mcss_candidates(
    denoiser: &Denoiser,
    guide: &dyn GuideFunction,
    conds: &ConditionSet,
    alpha_g: f64,
    n: usize,
    seeds: &SeedStream,
) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return Err(Error::invalid("mcss needs at least one sample"));
    }
    let guidance = GradientGuidance {
        guide,
        alpha_g,
        mask: None,
    };
    let mut rngs = seeds.derive(tags::PARENTS).batch(n);
    denoiser.sample_with(std::slice::from_ref(conds), &guidance, &mut rngs)
}

/// Best of `n` guided chains under `select`. Returns the winner and its
/// index.
pub fn mcss(
    denoiser: &Denoiser,
    guide: &dyn GuideFunction,
    select: &dyn GuideFunction,
    conds: &ConditionSet,
    alpha_g: f64,
    n: usize,
    seeds: &SeedStream,
) -> Result<(Trajectory, usize)> {
    let mut c = mcss_candidates(denoiser, guide, conds, alpha_g, n, seeds)?;
    let scores: Vec<f64> = c.iter().map(|t| select.value(t)).collect();
    let k = argmax_first(&scores).ok_or_else(|| Error::invalid("no candidates"))?;
    Ok((c.swap_remove(k), k))
}

#[derive(Debug, Clone)]
pub struct StochasticSamples {
    pub samples: Vec<Trajectory>,
    pub candidate_draws: u64,
}

/// `n` chains where every reverse step draws `m` candidates for the next
/// state, scores each by `guide` on its denoised estimate, and keeps one by
/// softmax sampling at `temperature`. With `m = 1` no selection draw is made,
/// so the chains coincide with [`mcss_candidates`].
#[allow(clippy::too_many_arguments)]
pub fn mcss_ss_candidates(
    denoiser: &Denoiser,
    guide: &dyn GuideFunction,
    conds: &ConditionSet,
    alpha_g: f64,
    n: usize,
    m: usize,
    temperature: f64,
    seeds: &SeedStream,
) -> Result<StochasticSamples> {
    if n == 0 || m == 0 {
        return Err(Error::invalid("stochastic sampling needs n >= 1 and m >= 1"));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    conds.validate(denoiser.shape())?;
    let stream = seeds.derive(tags::PARENTS);
    let samples = denoiser.parallelism().try_map(n, |k| {
        let mut rng = stream.element(k).rng();
        ss_chain(denoiser, guide, conds, alpha_g, m, temperature, &mut rng)
    })?;
    let steps = denoiser.schedule().steps() as u64;
    denoiser.count_steps(n as u64 * steps);
    Ok(StochasticSamples {
        samples,
        candidate_draws: (n * m) as u64 * steps,
    })
}

fn ss_chain(
    denoiser: &Denoiser,
    guide: &dyn GuideFunction,
    conds: &ConditionSet,
    alpha_g: f64,
    m: usize,
    temperature: f64,
    rng: &mut Rng,
) -> Result<Trajectory> {
    let schedule = denoiser.schedule();
    let model = denoiser.model();
    let mut x = denoiser.initial_state(rng);
    condition_in_place(&mut x, conds, schedule, schedule.steps())?;
    for i in (1..=schedule.steps()).rev() {
        let mean = posterior_mean(model, schedule, &x, i)?;
        let dir: Option<Vec<f64>> =
            (alpha_g != 0.0).then(|| guide.gradient(&mean).iter().map(|g| alpha_g * g).collect());
        let mut cands = Vec::with_capacity(m);
        for _ in 0..m {
            let mut c = step_from_mean(schedule, &mean, dir.as_deref(), i, denoiser.noise_scale(), rng);
            condition_in_place(&mut c, conds, schedule, i - 1)?;
            cands.push(c);
        }
        x = if m == 1 {
            cands.pop().expect("one candidate")
        } else {
            let mut w = Vec::with_capacity(m);
            for c in &cands {
                let est = denoised_estimate(model, schedule, c, i - 1)?;
                w.push(guide.value(&est) / temperature);
            }
            softmax_in_place(&mut w);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = m - 1;
            for (k, wk) in w.iter().enumerate() {
                acc += wk;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            cands.swap_remove(pick)
        };
    }
    Ok(x)
}

/// Best of the stochastic-sampling chains under `select`.
#[allow(clippy::too_many_arguments)]
pub fn mcss_ss(
    denoiser: &Denoiser,
    guide: &dyn GuideFunction,
    select: &dyn GuideFunction,
    conds: &ConditionSet,
    alpha_g: f64,
    n: usize,
    m: usize,
    temperature: f64,
    seeds: &SeedStream,
) -> Result<(Trajectory, u64)> {
    let mut out = mcss_ss_candidates(denoiser, guide, conds, alpha_g, n, m, temperature, seeds)?;
    let scores: Vec<f64> = out.samples.iter().map(|t| select.value(t)).collect();
    let k = argmax_first(&scores).ok_or_else(|| Error::invalid("no candidates"))?;
    Ok((out.samples.swap_remove(k), out.candidate_draws))
}
