//! Guide functions and the three guidance mechanisms built on them: gradient
//! guidance on observation channels, RBF particle guidance on control
//! channels, and their sum.

use serde::{Deserialize, Serialize};

use crate::diffusion::Guidance;
use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// Scalar objective over a whole trajectory.
pub trait GuideFunction: Send + Sync {
    fn name(&self) -> &str;

    fn value(&self, traj: &Trajectory) -> f64;

    /// Analytic gradient in flattened row-major layout, if the guide has one.
    fn analytic_gradient(&self, _traj: &Trajectory) -> Option<Vec<f64>> {
        None
    }

    /// Analytic gradient when available, central finite differences otherwise.
    fn gradient(&self, traj: &Trajectory) -> Vec<f64> {
        self.analytic_gradient(traj)
            .unwrap_or_else(|| fd_gradient(self, traj))
    }
}

/// Central finite differences with step `1e-5 * max(1, |x|)`.
pub fn fd_gradient<G: GuideFunction + ?Sized>(guide: &G, traj: &Trajectory) -> Vec<f64> {
    let mut probe = traj.clone();
    let n = traj.as_slice().len();
    (0..n)
        .map(|k| {
            let x = traj.as_slice()[k];
            let h = 1e-5 * x.abs().max(1.0);
            probe.as_mut_slice()[k] = x + h;
            let up = guide.value(&probe);
            probe.as_mut_slice()[k] = x - h;
            let down = guide.value(&probe);
            probe.as_mut_slice()[k] = x;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Guide defined by closures; handy for tests and ad hoc objectives.
pub struct FnGuide<V, G = fn(&Trajectory) -> Vec<f64>> {
    name: String,
    value: V,
    gradient: Option<G>,
}

impl<V> FnGuide<V>
where
    V: Fn(&Trajectory) -> f64 + Send + Sync,
{
    pub fn new(name: impl Into<String>, value: V) -> Self {
        Self {
            name: name.into(),
            value,
            gradient: None,
        }
    }
}

impl<V, G> FnGuide<V, G>
where
    V: Fn(&Trajectory) -> f64 + Send + Sync,
    G: Fn(&Trajectory) -> Vec<f64> + Send + Sync,
{
    pub fn with_gradient(name: impl Into<String>, value: V, gradient: G) -> Self {
        Self {
            name: name.into(),
            value,
            gradient: Some(gradient),
        }
    }
}

impl<V, G> GuideFunction for FnGuide<V, G>
where
    V: Fn(&Trajectory) -> f64 + Send + Sync,
    G: Fn(&Trajectory) -> Vec<f64> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn value(&self, traj: &Trajectory) -> f64 {
        (self.value)(traj)
    }

    fn analytic_gradient(&self, traj: &Trajectory) -> Option<Vec<f64>> {
        self.gradient.as_ref().map(|g| g(traj))
    }
}

/// Per-channel split into observation channels (the guide reacts to them)
/// and control channels (it does not).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateMask {
    observation: Vec<bool>,
}

impl StateMask {
    pub fn from_observation(channels: usize, obs: &[usize]) -> Result<Self> {
        let mut observation = vec![false; channels];
        for &c in obs {
            *observation
                .get_mut(c)
                .ok_or_else(|| Error::OutOfRange(format!("channel {c}")))? = true;
        }
        Ok(Self { observation })
    }

    pub fn all_observation(channels: usize) -> Self {
        Self {
            observation: vec![true; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.observation.len()
    }

    pub fn is_observation(&self, c: usize) -> bool {
        self.observation[c]
    }

    pub fn observation_channels(&self) -> Vec<usize> {
        (0..self.channels()).filter(|&c| self.observation[c]).collect()
    }

    pub fn control_channels(&self) -> Vec<usize> {
        (0..self.channels()).filter(|&c| !self.observation[c]).collect()
    }
}

pub const DEFAULT_DECOMPOSITION_EPS: f64 = 1e-8;

/// A channel is an observation channel iff some probe has a gradient entry on
/// it with magnitude above `eps`.
pub fn decompose_states(
    guide: &dyn GuideFunction,
    probes: &[Trajectory],
    eps: f64,
) -> Result<StateMask> {
    let first = probes
        .first()
        .ok_or_else(|| Error::invalid("state decomposition needs at least one probe"))?;
    if !(eps > 0.0) {
        return Err(Error::invalid("decomposition tolerance must be positive"));
    }
    let w = first.channels();
    let mut observation = vec![false; w];
    for p in probes {
        if p.shape() != first.shape() {
            return Err(Error::invalid("probes must share one shape"));
        }
        let g = guide.gradient(p);
        for (k, v) in g.iter().enumerate() {
            if v.abs() > eps {
                observation[k % w] = true;
            }
        }
    }
    Ok(StateMask { observation })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Bandwidth {
    /// Median pairwise distance over `sqrt(2)`, recomputed per call.
    #[default]
    Median,
    Fixed(f64),
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise distance over `sqrt(2)`; 1 when the batch has fewer than
/// two distinct points.
pub fn median_bandwidth(batch: &[Vec<f64>]) -> f64 {
    let mut d: Vec<f64> = Vec::new();
    for i in 0..batch.len() {
        for j in i + 1..batch.len() {
            d.push(sq_dist(&batch[i], &batch[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if med > 0.0 {
        med / std::f64::consts::SQRT_2
    } else {
        1.0
    }
}

fn resolve_bandwidth(batch: &[Vec<f64>], bw: Bandwidth) -> Result<f64> {
    match bw {
        Bandwidth::Median => Ok(median_bandwidth(batch)),
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => Ok(h),
        Bandwidth::Fixed(h) => Err(Error::invalid(format!("bandwidth {h} must be positive"))),
    }
}

/// `Phi(x_k) = -sum_{j != k} exp(-|x_k - x_j|^2 / (2 h^2))` for each `k`.
pub fn rbf_potential(batch: &[Vec<f64>], h: f64) -> Vec<f64> {
    let inv = 1.0 / (2.0 * h * h);
    (0..batch.len())
        .map(|k| {
            -(0..batch.len())
                .filter(|&j| j != k)
                .map(|j| (-sq_dist(&batch[k], &batch[j]) * inv).exp())
                .sum::<f64>()
        })
        .collect()
}

/// `grad_{x_k} Phi(x_k)`. Moving along it pushes `x_k` away from the others.
pub fn rbf_potential_grad(batch: &[Vec<f64>], bandwidth: Bandwidth) -> Result<Vec<Vec<f64>>> {
    let h = resolve_bandwidth(batch, bandwidth)?;
    let inv = 1.0 / (2.0 * h * h);
    let inv_h2 = 1.0 / (h * h);
    let n = batch.len();
    let mut out = vec![vec![0.0; batch.first().map_or(0, Vec::len)]; n];
    for k in 0..n {
        for j in 0..n {
            if j == k {
                continue;
            }
            let w = (-sq_dist(&batch[k], &batch[j]) * inv).exp() * inv_h2;
            for (o, (a, b)) in out[k].iter_mut().zip(batch[k].iter().zip(&batch[j])) {
                *o += w * (a - b);
            }
        }
    }
    Ok(out)
}

fn gather(traj: &Trajectory, channels: &[usize]) -> Vec<f64> {
    traj.rows()
        .flat_map(|row| channels.iter().map(move |&c| row[c]))
        .collect()
}

/// `alpha_g * grad J(mu)` on observation channels, zero on control channels.
pub fn gradient_guidance_shift(
    mean: &Trajectory,
    mask: &StateMask,
    alpha_g: f64,
    guide: &dyn GuideFunction,
) -> Vec<f64> {
    let n = mean.as_slice().len();
    if alpha_g == 0.0 {
        return vec![0.0; n];
    }
    let w = mean.channels();
    let g = guide.gradient(mean);
    g.iter()
        .enumerate()
        .map(|(k, v)| if mask.is_observation(k % w) { alpha_g * v } else { 0.0 })
        .collect()
}

/// `alpha_p * grad Phi` over the control channels of the batch, scattered back
/// into full-trajectory layout (zero on observation channels).
pub fn particle_shift(
    means: &[Trajectory],
    mask: &StateMask,
    alpha_p: f64,
    bandwidth: Bandwidth,
) -> Result<Vec<Vec<f64>>> {
    if let Bandwidth::Fixed(h) = bandwidth {
        resolve_bandwidth(&[], Bandwidth::Fixed(h))?;
    }
    let control = mask.control_channels();
    let mut full: Vec<Vec<f64>> = means.iter().map(|m| vec![0.0; m.as_slice().len()]).collect();
    if alpha_p == 0.0 || control.is_empty() || means.len() < 2 {
        return Ok(full);
    }
    let gathered: Vec<Vec<f64>> = means.iter().map(|m| gather(m, &control)).collect();
    let grads = rbf_potential_grad(&gathered, bandwidth)?;
    for ((out, g), m) in full.iter_mut().zip(&grads).zip(means) {
        let w = m.channels();
        for (k, v) in g.iter().enumerate() {
            let t = k / control.len();
            let c = control[k % control.len()];
            out[t * w + c] = alpha_p * v;
        }
    }
    Ok(full)
}

/// Particle shift plus gradient shift, per sample.
pub fn integrated_shift(
    means: &[Trajectory],
    mask: &StateMask,
    alpha_p: f64,
    alpha_g: f64,
    guide: &dyn GuideFunction,
    bandwidth: Bandwidth,
) -> Result<Vec<Vec<f64>>> {
    let particle = particle_shift(means, mask, alpha_p, bandwidth)?;
    Ok(particle
        .into_iter()
        .zip(means)
        .map(|(p, m)| {
            let g = gradient_guidance_shift(m, mask, alpha_g, guide);
            p.iter().zip(&g).map(|(a, b)| a + b).collect()
        })
        .collect())
}

/// Gradient guidance on every sample independently. With `mask = None` the
/// whole mean is shifted.
pub struct GradientGuidance<'a> {
    pub guide: &'a dyn GuideFunction,
    pub alpha_g: f64,
    pub mask: Option<StateMask>,
}

impl Guidance for GradientGuidance<'_> {
    fn directions(&self, means: &[Trajectory], _step: usize) -> Result<Option<Vec<Vec<f64>>>> {
        if self.alpha_g == 0.0 {
            return Ok(None);
        }
        Ok(Some(
            means
                .iter()
                .map(|m| match &self.mask {
                    Some(mask) => gradient_guidance_shift(m, mask, self.alpha_g, self.guide),
                    None => self.guide.gradient(m).iter().map(|g| self.alpha_g * g).collect(),
                })
                .collect(),
        ))
    }
}

/// Particle guidance on control channels plus gradient guidance on
/// observation channels, coupled across the batch.
pub struct IntegratedGuidance<'a> {
    pub guide: &'a dyn GuideFunction,
    pub mask: StateMask,
    pub alpha_p: f64,
    pub alpha_g: f64,
    pub bandwidth: Bandwidth,
}

impl Guidance for IntegratedGuidance<'_> {
    fn directions(&self, means: &[Trajectory], _step: usize) -> Result<Option<Vec<Vec<f64>>>> {
        if self.alpha_p == 0.0 && self.alpha_g == 0.0 {
            return Ok(None);
        }
        integrated_shift(
            means,
            &self.mask,
            self.alpha_p,
            self.alpha_g,
            self.guide,
            self.bandwidth,
        )
        .map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_traj(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Trajectory {
        Trajectory::new(h, w, (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn constant_guide_is_all_control() {
        let g = FnGuide::new("zero", |_: &Trajectory| 0.0);
        let mask = decompose_states(&g, &[Trajectory::zeros(4, 3)], 1e-8).unwrap();
        assert_eq!(mask.observation_channels(), Vec::<usize>::new());
        assert_eq!(mask.control_channels(), vec![0, 1, 2]);
    }

    #[test]
    fn single_channel_guide_detected_by_finite_differences() {
        let g = FnGuide::new("ch3", |t: &Trajectory| t.rows().map(|r| (r[3] - 0.2).powi(2)).sum());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let probes: Vec<_> = (0..10).map(|_| random_traj(&mut rng, 5, 4)).collect();
        let mask = decompose_states(&g, &probes, 1e-8).unwrap();
        assert_eq!(mask.observation_channels(), vec![3]);
        let mut reversed = probes.clone();
        reversed.reverse();
        assert_eq!(decompose_states(&g, &reversed, 1e-8).unwrap(), mask);
    }

    #[test]
    fn potential_gradient_edge_cases() {
        assert_eq!(
            rbf_potential_grad(&[vec![1.0, 2.0]], Bandwidth::Median).unwrap(),
            vec![vec![0.0, 0.0]]
        );
        let g = rbf_potential_grad(&[vec![0.5, -1.0], vec![-0.5, 1.0]], Bandwidth::Fixed(0.8)).unwrap();
        for c in 0..2 {
            assert!((g[0][c] + g[1][c]).abs() < 1e-15);
        }
        // Particle 0 sits at +p, so its push points along +p.
        assert!(g[0][0] > 0.0 && g[0][1] < 0.0);
        assert!(rbf_potential_grad(&[vec![0.0]], Bandwidth::Fixed(0.0)).is_err());
    }

    #[test]
    fn potential_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let h = 0.9;
        let g = rbf_potential_grad(&batch, Bandwidth::Fixed(h)).unwrap();
        for k in 0..8 {
            let mut num = [0.0; 6];
            for (c, slot) in num.iter_mut().enumerate() {
                let mut p = batch.clone();
                p[k][c] += 1e-5;
                let up = rbf_potential(&p, h)[k];
                p[k][c] -= 2e-5;
                let down = rbf_potential(&p, h)[k];
                *slot = (up - down) / 2e-5;
            }
            let err: f64 = num.iter().zip(&g[k]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = g[k].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err <= 1e-6 * scale, "particle {k}: {err} vs {scale}");
        }
    }

    #[test]
    fn linear_guide_shift_is_constant() {
        let c: Vec<f64> = (0..8).map(|k| k as f64 - 3.0).collect();
        let cc = c.clone();
        let g = FnGuide::new("lin", move |t: &Trajectory| {
            t.as_slice().iter().zip(&cc).map(|(a, b)| a * b).sum()
        });
        let mask = StateMask::from_observation(2, &[1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..3 {
            let mu = random_traj(&mut rng, 4, 2);
            let s = gradient_guidance_shift(&mu, &mask, 0.5, &g);
            for k in 0..8 {
                let expect = if k % 2 == 1 { 0.5 * c[k] } else { 0.0 };
                assert!((s[k] - expect).abs() < 1e-8);
            }
        }
        let mu = random_traj(&mut rng, 4, 2);
        assert!(gradient_guidance_shift(&mu, &mask, 0.0, &g).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn integrated_shift_is_sum_of_parts() {
        let g = FnGuide::new("quad", |t: &Trajectory| -t.row(0).iter().map(|v| v * v).sum::<f64>());
        let mask = StateMask::from_observation(3, &[0, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch: Vec<_> = (0..4).map(|_| random_traj(&mut rng, 5, 3)).collect();
        let total = integrated_shift(&batch, &mask, 0.7, 1.3, &g, Bandwidth::Median).unwrap();
        let part = particle_shift(&batch, &mask, 0.7, Bandwidth::Median).unwrap();
        for (k, m) in batch.iter().enumerate() {
            let grad = gradient_guidance_shift(m, &mask, 1.3, &g);
            for e in 0..15 {
                assert_eq!(total[k][e].to_bits(), (part[k][e] + grad[e]).to_bits());
                if mask.is_observation(e % 3) {
                    assert_eq!(part[k][e], 0.0);
                } else {
                    assert_eq!(grad[e], 0.0);
                }
            }
        }
        let single = integrated_shift(&batch[..1], &mask, 0.7, 0.0, &g, Bandwidth::Median).unwrap();
        assert!(single[0].iter().all(|v| *v == 0.0));
    }
}
