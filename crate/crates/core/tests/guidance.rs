use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tdp_core::diffusion::{posterior_mean, step_from_mean, Guidance};
use tdp_core::guidance::{
    decompose_states, gradient_guidance_shift, integrated_shift, particle_shift, Bandwidth, FnGuide,
    IntegratedGuidance, StateMask,
};
use tdp_core::schedule::{NoiseSchedule, ScheduleKind};
use tdp_core::score::GaussianMixtureModel;
use tdp_core::Trajectory;

const H: usize = 5;
const W: usize = 3;

fn batch_strategy(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Trajectory>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, H * W), n)
        .prop_map(|v| v.into_iter().map(|x| Trajectory::new(H, W, x).unwrap()).collect())
}

fn mask_strategy() -> impl Strategy<Value = StateMask> {
    prop::collection::vec(any::<bool>(), W).prop_map(|obs| {
        let chans: Vec<usize> = (0..W).filter(|&c| obs[c]).collect();
        StateMask::from_observation(W, &chans).unwrap()
    })
}

/// Quadratic guide on channels 0 and 2; channel 1 never affects it.
fn guide() -> impl tdp_core::guidance::GuideFunction {
    FnGuide::with_gradient(
        "quad",
        |t: &Trajectory| -t.rows().map(|r| r[0] * r[0] + 0.5 * r[2] * r[2]).sum::<f64>(),
        |t: &Trajectory| t.rows().flat_map(|r| [-2.0 * r[0], 0.0, -r[2]]).collect(),
    )
}

fn distance(a: &Trajectory, b: &Trajectory) -> f64 {
    a.distance(b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn integrated_shift_is_particle_plus_gradient(
        batch in batch_strategy(1..6),
        mask in mask_strategy(),
        ap in 0.0f64..3.0,
        ag in 0.0f64..50.0,
        fixed in any::<bool>(),
    ) {
        let g = guide();
        let bw = if fixed { Bandwidth::Fixed(0.9) } else { Bandwidth::Median };
        let total = integrated_shift(&batch, &mask, ap, ag, &g, bw).unwrap();
        let part = particle_shift(&batch, &mask, ap, bw).unwrap();
        for (k, m) in batch.iter().enumerate() {
            let grad = gradient_guidance_shift(m, &mask, ag, &g);
            for (i, v) in total[k].iter().enumerate() {
                prop_assert_eq!(v.to_bits(), (part[k][i] + grad[i]).to_bits());
            }
        }
    }

    #[test]
    fn shifts_stay_on_their_channels(
        batch in batch_strategy(2..6),
        mask in mask_strategy(),
        ap in 0.01f64..3.0,
        ag in 0.01f64..50.0,
    ) {
        let g = guide();
        let part = particle_shift(&batch, &mask, ap, Bandwidth::Median).unwrap();
        for (k, m) in batch.iter().enumerate() {
            let grad = gradient_guidance_shift(m, &mask, ag, &g);
            for i in 0..H * W {
                if mask.is_observation(i % W) {
                    prop_assert_eq!(part[k][i], 0.0);
                } else {
                    prop_assert_eq!(grad[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn decomposition_ignores_probe_order(
        probes in batch_strategy(1..6),
        rot in 0usize..6,
    ) {
        let g = guide();
        let a = decompose_states(&g, &probes, 1e-8).unwrap();
        let b = decompose_states(&g, &probes, 1e-8).unwrap();
        let mut shuffled = probes.clone();
        shuffled.reverse();
        let r = rot % shuffled.len();
        shuffled.rotate_left(r);
        let c = decompose_states(&g, &shuffled, 1e-8).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&a, &c);
        // The guide ignores channel 1 entirely.
        prop_assert!(!a.is_observation(1));
    }
}

/// One reverse step of a pair with particle guidance only spreads the pair
/// further than the same step without it.
#[test]
fn repulsion_widens_a_pair() {
    use rand::Rng as _;
    let d = H * W;
    let model = GaussianMixtureModel::gaussian(
        vec![0.0; d],
        (0..d).map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect()).collect(),
    )
    .unwrap();
    let schedule = NoiseSchedule::new(100, ScheduleKind::Linear).unwrap();
    let g = guide();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let pair: Vec<Trajectory> = (0..2)
            .map(|_| Trajectory::new(H, W, (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap())
            .collect();
        let i = rng.random_range(1..=100);
        let means: Vec<Trajectory> = pair
            .iter()
            .map(|x| posterior_mean(&model, &schedule, x, i).unwrap())
            .collect();
        let guidance = IntegratedGuidance {
            guide: &g,
            mask: StateMask::from_observation(W, &[]).unwrap(),
            alpha_p: rng.random_range(0.05..2.0),
            alpha_g: 0.0,
            bandwidth: Bandwidth::Median,
        };
        let dirs = guidance.directions(&means, i).unwrap().unwrap();
        let seed: u64 = rng.random();
        let step = |k: usize, dir: Option<&[f64]>| {
            let mut r = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            step_from_mean(&schedule, &means[k], dir, i, 1.0, &mut r)
        };
        let plain = distance(&step(0, None), &step(1, None));
        let pushed = distance(&step(0, Some(&dirs[0])), &step(1, Some(&dirs[1])));
        assert!(pushed > plain, "step {i}: {pushed} <= {plain}");
    }
}
