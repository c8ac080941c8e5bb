mod common;

use proptest::prelude::*;
use smoothctl_core::dynamics::{closures, ControlProblem, ControlSet};
use smoothctl_core::grid::Grid;
use smoothctl_core::hjb::*;
use smoothctl_core::policy::{GridPolicy, Interpolation};

/// Random scalar problem with every criterion attached.
fn problem(a: f64, b0: f64, sigma: f64, q: f64) -> ControlProblem {
    ControlProblem::new(
        "random",
        1,
        ControlSet::interval(-1.0, 1.0).unwrap(),
        closures::drift(move |x, z, out| out[0] = a * x[0] + b0 * z[0]),
        closures::scalar_diffusion(sigma),
        closures::cost(move |x, z| q * x[0] * x[0] + (z[0] - 0.3).powi(2)),
    )
    .unwrap()
    .with_discount(0.7)
    .unwrap()
    .with_horizon(1.0, closures::state(|x| x[0].abs()))
    .unwrap()
    .with_exit(
        ControlSet::interval(-1.0, 1.0).unwrap(),
        closures::cost(|x, _| 0.1 + 0.1 * x[0] * x[0]),
        closures::state(|x| 1.0 + x[0]),
    )
    .unwrap()
}

fn nine_nodes() -> Grid {
    Grid::uniform_1d(-1.0, 1.0, 9).unwrap()
}

fn small_cfg() -> SolverConfig {
    SolverConfig {
        controls_per_axis: Some(9),
        tolerance: 1e-10,
        ..SolverConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bellman_map_is_monotone(
        a in -1.0f64..1.0,
        b0 in 0.2f64..2.0,
        sigma in 0.3f64..1.5,
        q in 0.0f64..2.0,
        v in prop::collection::vec(-3.0f64..3.0, 9),
        node in 0usize..9,
        bump in 1e-6f64..1.0,
    ) {
        let p = problem(a, b0, sigma, q);
        for criterion in [Criterion::Discounted, Criterion::Exit, Criterion::FiniteHorizon, Criterion::Ergodic] {
            let map = BellmanMap::new(&p, criterion, &nine_nodes(), &small_cfg()).unwrap();
            let base = map.apply(&v).unwrap();
            let mut raised = v.clone();
            raised[node] += bump;
            let up = map.apply(&raised).unwrap();
            for k in 0..9 {
                prop_assert!(up[k] >= base[k] - 1e-12, "{criterion}: node {k} fell by {}", base[k] - up[k]);
            }
        }
    }

    #[test]
    fn selector_is_consistent_and_dominant(
        a in -1.0f64..1.0,
        b0 in 0.2f64..2.0,
        sigma in 0.3f64..1.5,
        q in 0.0f64..2.0,
        picks in prop::collection::vec(prop::collection::vec(0usize..9, 9), 10),
    ) {
        let p = problem(a, b0, sigma, q);
        let grid = nine_nodes();
        let cfg = small_cfg();
        let lattice = cfg.control_lattice(&p).unwrap();
        for criterion in [Criterion::Discounted, Criterion::Exit, Criterion::Ergodic] {
            let best = solve(&p, criterion, &grid, &cfg).unwrap();
            let sel = extract_selector(&p, &best.value, &cfg).unwrap();
            let own = evaluate_policy_pde(&p, &sel, criterion, &grid, &cfg).unwrap();
            let tol = 5.0 * cfg.tolerance;
            match criterion {
                Criterion::Ergodic => prop_assert!((own.rho.unwrap() - best.rho.unwrap()).abs() <= tol),
                _ => for (x, y) in own.value.values().iter().zip(best.value.values()) {
                    prop_assert!((x - y).abs() <= tol, "{criterion}: {x} vs {y}");
                },
            }
            for pick in &picks {
                let values: Vec<f64> = pick.iter().map(|&j| lattice[j][0]).collect();
                let w = GridPolicy::new(grid.clone(), false, p.controls().clone(), values, Interpolation::Nearest).unwrap();
                let ev = evaluate_policy_pde(&p, &w, criterion, &grid, &cfg).unwrap();
                match criterion {
                    Criterion::Ergodic => prop_assert!(ev.rho.unwrap() >= best.rho.unwrap() - tol),
                    _ => for (x, y) in ev.value.values().iter().zip(best.value.values()) {
                        prop_assert!(*x >= y - tol, "{criterion}: {x} < {y}");
                    },
                }
            }
        }
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let p = problem(-0.5, 1.0, 0.8, 1.0);
    let grid = Grid::uniform_1d(-4.0, 4.0, 201).unwrap();
    let cfg = SolverConfig::default();
    let run = || {
        let d = solve(&p, Criterion::Discounted, &grid, &cfg).unwrap();
        let e = solve(&p, Criterion::Ergodic, &grid, &cfg).unwrap();
        let s = extract_selector(&p, &d.value, &cfg).unwrap();
        (d, e, s)
    };
    let many = run();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
    assert_eq!(many, one);
}
