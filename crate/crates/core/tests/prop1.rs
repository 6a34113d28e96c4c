use tdp_core::par::Parallelism;
use tdp_core::prop1::{run_prop1, Init, Prop1Config};

fn small() -> Prop1Config {
    Prop1Config {
        trials: 200,
        ..Prop1Config::default()
    }
}

#[test]
fn warm_start_stays_on_the_subspace() {
    let cfg = small();
    let cold = run_prop1(&cfg, Init::Cold, Parallelism::available()).unwrap();
    let warm = run_prop1(&cfg, Init::Warm, Parallelism::available()).unwrap();
    assert_eq!((cold.trials, warm.trials), (200, 200));
    assert!(
        cold.mean_perp_norm >= 5.0 * warm.mean_perp_norm,
        "cold {} warm {}",
        cold.mean_perp_norm,
        warm.mean_perp_norm
    );
    assert!(cold.expected_j1 <= cfg.ordering_ratio * cold.expected_j2);
}

#[test]
fn results_do_not_depend_on_parallelism() {
    let cfg = Prop1Config {
        trials: 16,
        ..Prop1Config::default()
    };
    for init in [Init::Cold, Init::Warm] {
        let a = run_prop1(&cfg, init, Parallelism::Sequential).unwrap();
        let b = run_prop1(&cfg, init, Parallelism::available()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn violated_ordering_is_refused() {
    let cfg = Prop1Config {
        trials: 4,
        ordering_ratio: 0.0,
        ..Prop1Config::default()
    };
    assert!(run_prop1(&cfg, Init::Cold, Parallelism::Sequential).is_err());
}

#[test]
fn toml_overrides_keep_the_rest() {
    let cfg = Prop1Config::from_toml("trials = 7\nsigma2 = 0.25\n").unwrap();
    assert_eq!(cfg.trials, 7);
    assert_eq!(cfg.sigma2, 0.25);
    assert_eq!(cfg.steps, Prop1Config::default().steps);
    assert!(Prop1Config::from_toml("trails = 7").is_err());
}
