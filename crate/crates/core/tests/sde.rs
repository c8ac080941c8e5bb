mod common;

use smoothctl_core::dynamics::{closures, ControlProblem, ControlSet};
use smoothctl_core::grid::Grid;
use smoothctl_core::policy::{ConstantPolicy, FeedbackPolicy, GridPolicy, Interpolation};
use smoothctl_core::sde::*;

fn ou() -> ControlProblem {
    ControlProblem::new(
        "ou",
        1,
        ControlSet::interval(-1.0, 1.0).unwrap(),
        closures::drift(|x, z, out| out[0] = -x[0] + z[0]),
        closures::scalar_diffusion(1.0),
        closures::cost(|x, z| x[0] * x[0] + 0.5 * z[0] * z[0]),
    )
    .unwrap()
    .with_discount(1.0)
    .unwrap()
    .with_horizon(1.0, closures::state(|x| x[0].abs()))
    .unwrap()
    .with_exit(
        ControlSet::interval(-1.0, 1.0).unwrap(),
        closures::cost(|_, _| 0.5),
        closures::constant_state(1.0),
    )
    .unwrap()
}

#[test]
fn doubling_paths_shrinks_the_standard_error() {
    let p = ou();
    let policy = ConstantPolicy(vec![0.3]);
    let ratios: Vec<f64> = (0..10u64)
        .map(|rep| {
            let small = SimConfig::new(0.01, 1.0, 2000, 100 + rep);
            let large = SimConfig {
                paths: 4000,
                seed: 1000 + rep,
                ..small.clone()
            };
            let a = estimate_finite_horizon(&p, &policy, &[0.5], &small).unwrap();
            let b = estimate_finite_horizon(&p, &policy, &[0.5], &large).unwrap();
            b.std_error / a.std_error
        })
        .collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let target = std::f64::consts::FRAC_1_SQRT_2;
    assert!((mean - target).abs() <= 0.2 * target, "{mean} vs {target}");
}

#[test]
fn policies_equal_on_the_grid_give_identical_estimates() {
    let p = ou();
    let grid = Grid::uniform_1d(-3.0, 3.0, 121).unwrap();
    let set = p.controls().clone();
    let a = GridPolicy::from_fn(grid.clone(), set.clone(), Interpolation::Nearest, |x| vec![(-x[0]).clamp(-1.0, 1.0)]).unwrap();
    let b = GridPolicy::from_text(&a.to_text()).unwrap();
    let c = FeedbackPolicy::new(1, |_t: f64, x: &[f64], out: &mut [f64]| a.evaluate_into(x, out));
    let cfg = SimConfig::new(0.01, 2.0, 300, 9);
    let ea = estimate_discounted(&p, &a, &[0.4], &cfg).unwrap();
    assert_eq!(ea, estimate_discounted(&p, &b, &[0.4], &cfg).unwrap());
    assert_eq!(ea, estimate_discounted(&p, &c, &[0.4], &cfg).unwrap());
    assert_eq!(simulate_path(&p, &a, &[0.4], &cfg, 17).unwrap(), simulate_path(&p, &c, &[0.4], &cfg, 17).unwrap());
}

#[test]
fn discounted_tail_bound_covers_the_omitted_cost() {
    let p = common::scalar(ControlSet::interval(0.0, 0.0).unwrap(), |_, _| 0.0, 1.0, |_, _| 2.0)
        .with_discount(0.5)
        .unwrap();
    let policy = ConstantPolicy(vec![0.0]);
    for horizon in [1.0, 4.0, 10.0] {
        let cfg = SimConfig::new(0.05, horizon, 50, 1);
        let est = estimate_discounted(&p, &policy, &[0.0], &cfg).unwrap();
        let tail = 2.0 * (-0.5 * horizon).exp() / 0.5;
        assert!(est.tail_bound >= tail * (1.0 - 1e-12), "{} < {tail}", est.tail_bound);
        assert!((est.mean + tail - 4.0).abs() < 1e-12);
    }
}

#[test]
fn estimates_ignore_the_thread_count() {
    let p = ou();
    let policy = FeedbackPolicy::new(1, |_t: f64, x: &[f64], out: &mut [f64]| out[0] = (-0.5 * x[0]).clamp(-1.0, 1.0));
    let mut cfg = SimConfig::new(0.01, 3.0, 500, 42);
    cfg.antithetic = true;
    cfg.bridge = true;
    let run = || {
        (
            estimate_finite_horizon(&p, &policy, &[0.2], &cfg).unwrap(),
            estimate_discounted(&p, &policy, &[0.2], &cfg).unwrap(),
            estimate_ergodic(&p, &policy, &[0.2], &cfg).unwrap(),
            estimate_exit(&p, &policy, &[0.2], &cfg).unwrap(),
        )
    };
    let many = run();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
    assert_eq!(many, one);
}
