use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tdp_core::env::{
    gold_true, maps, Dynamics, GoldTask, MazeEnv, MultiGoalTask, PlacementField, PlacementTask, State,
    PLACEMENT_WEIGHTS,
};
use tdp_core::guidance::{fd_gradient, GuideFunction};
use tdp_core::Trajectory;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-8);
    num / den
}

/// Random trajectory whose positions lie within `spread` of `center`.
fn near(rng: &mut ChaCha8Rng, h: usize, center: [f64; 2], spread: f64) -> Trajectory {
    let rows: Vec<Vec<f64>> = (0..h)
        .map(|_| {
            vec![
                center[0] + rng.random_range(-spread..spread),
                center[1] + rng.random_range(-spread..spread),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]
        })
        .collect();
    Trajectory::from_rows(&rows).unwrap()
}

fn check_gradient(guide: &dyn GuideFunction, mut sample: impl FnMut(&mut ChaCha8Rng) -> Trajectory) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for k in 0..100 {
        let t = sample(&mut rng);
        let analytic = guide.analytic_gradient(&t).expect("guide has an analytic gradient");
        let e = rel_err(&analytic, &fd_gradient(guide, &t));
        assert!(e <= 1e-4, "{} probe {k}: relative error {e}", guide.name());
    }
}

#[test]
fn guide_gradients_match_finite_differences() {
    let start: State = [1.5, 1.5, 0.0, 0.0];
    let gold = tdp_core::env::gold_guidance(&GoldTask {
        start,
        goal: [8.5, 4.5],
        gold: [4.5, 3.5],
        threshold: 0.3,
    });
    check_gradient(&gold, |rng| near(rng, 16, [4.5, 3.5], 3.0));

    for field in [PlacementField::Peaks, PlacementField::SignedDistance] {
        let task = PlacementTask::new(start, [3.5, 3.5], [7.5, 7.5], PLACEMENT_WEIGHTS, field);
        check_gradient(&task.guide(), |rng| near(rng, 8, [5.5, 5.5], 3.0));
    }

    let goals = vec![[2.0, 2.0], [2.1, 2.05], [1.9, 2.1], [2.05, 1.9]];
    let multi = MultiGoalTask::with_defaults(start, goals, 100);
    check_gradient(&multi.guide(), |rng| near(rng, 2, [2.0, 2.0], 0.06));
}

#[test]
fn gold_objective_is_zero_exactly_on_the_gold() {
    let task = GoldTask {
        start: [1.5, 1.5, 0.0, 0.0],
        goal: [8.5, 4.5],
        gold: [4.5, 3.5],
        threshold: 0.3,
    };
    let t = gold_true(&task);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let mut traj = near(&mut rng, 10, [4.5, 3.5], 2.0);
        assert!(t.value(&traj) < 0.0);
        let r = rng.random_range(0..10);
        traj.set(r, 0, 4.5);
        traj.set(r, 1, 3.5);
        assert_eq!(t.value(&traj), 0.0);
    }
}

proptest! {
    #[test]
    fn step_is_deterministic_and_lipschitz_in_action(
        x in 3.0f64..7.0,
        y in 3.0f64..7.0,
        vx in -2.0f64..2.0,
        vy in -2.0f64..2.0,
        a in prop::array::uniform2(-30.0f64..30.0),
        b in prop::array::uniform2(-30.0f64..30.0),
    ) {
        let env = MazeEnv::from_ascii(maps::OPEN_ROOM, Dynamics::default()).unwrap();
        let dt = env.dynamics().dt;
        let s: State = [x, y, vx, vy];
        let sa = env.step(&s, a);
        prop_assert_eq!(sa, env.step(&s, a));
        let sb = env.step(&s, b);
        let da = (a[0] - b[0]).hypot(a[1] - b[1]);
        let dv = (sa[2] - sb[2]).hypot(sa[3] - sb[3]);
        let dp = (sa[0] - sb[0]).hypot(sa[1] - sb[1]);
        prop_assert!(dv <= dt * da + 1e-12);
        prop_assert!(dp <= dt * dt * da + 1e-12);
    }
}
