use serde_json::json;
use smoothctl_core::experiments::*;
use smoothctl_core::hjb::{self, Criterion};

fn spec(v: serde_json::Value) -> ExperimentSpec {
    ExperimentSpec::from_json(&v.to_string(), &[]).unwrap()
}

fn lq_spec(evaluation: &str) -> ExperimentSpec {
    spec(json!({
        "problem": {"name": "lq"},
        "criterion": "discounted",
        "grid": {"lower": [-3.0], "upper": [3.0], "spacing": [0.05]},
        "solver": {"refine_iters": 40, "tolerance": 1e-10},
        "eta_ladder": [0.4, 0.2, 0.1],
        "evaluation": evaluation,
        "mc": {"dt": 0.01, "horizon": 12.0, "paths": 4000, "seed": 11},
        "extra_probes": [[0.5]]
    }))
}

fn double_well_spec() -> ExperimentSpec {
    spec(json!({
        "problem": {"name": "double_well"},
        "criterion": "discounted",
        "grid": {"lower": [-2.5], "upper": [2.5], "spacing": [0.05]},
        "solver": {"refine_iters": 40, "tolerance": 1e-10},
        "eta_ladder": [0.8, 0.4, 0.2],
        "evaluation": "both",
        "mc": {"dt": 0.02, "horizon": 6.0, "paths": 200, "seed": 5}
    }))
}

#[test]
fn lq_selector_gives_tiny_gaps() {
    let s = lq_spec("pde");
    let r = run_near_optimality(&s).unwrap();
    let oracle = reference_value("lq", &Default::default(), Criterion::Discounted, &[0.0]).unwrap().unwrap();
    assert!((r.j_star - oracle).abs() <= 0.02 * oracle, "{} vs {oracle}", r.j_star);
    for row in &r.rows {
        assert!(row.gap >= -5.0 * r.tolerance, "eta {}: {}", row.eta, row.gap);
        assert!(row.gap <= 0.02 * r.j_star, "eta {}: {}", row.eta, row.gap);
        assert!(row.lipschitz <= row.lipschitz_bound);
    }
    assert!(r.assumption_failures.is_empty(), "{:?}", r.assumption_failures);
}

#[test]
fn uncontrolled_ergodic_gaps_vanish() {
    let s = spec(json!({
        "problem": {"name": "ou"},
        "criterion": "ergodic",
        "grid": {"lower": [-4.0], "upper": [4.0], "spacing": [0.1]},
        "eta_ladder": [0.8, 0.4, 0.2]
    }));
    let r = run_near_optimality(&s).unwrap();
    for row in &r.rows {
        assert!(row.gap.abs() <= 5.0 * r.tolerance, "{}", row.gap);
        assert_eq!(row.pairing_gap, 0.0);
    }
    let c = run_continuity_sweep(&s).unwrap();
    for row in &c.rows {
        assert_eq!((row.pairing_gap, row.cost_gap), (0.0, 0.0));
    }
    assert!(c.passes(0.05));
}

#[test]
fn reports_are_deterministic_and_roundtrip() {
    let s = double_well_spec();
    let many = run_near_optimality(&s).unwrap();
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_near_optimality(&s).unwrap());
    assert_eq!(many, one);
    assert_eq!(GapReport::from_csv(&many.to_csv()).unwrap(), many);
    assert!(many.rows.iter().all(|r| r.mc.is_some()));
    assert!(many.rows.windows(2).all(|w| w[0].eta > w[1].eta));
    // rungs draw different noise
    let means: Vec<f64> = many.rows.iter().map(|r| r.mc.unwrap().mean).collect();
    assert_ne!(means[0], means[1]);
}

#[test]
fn pde_and_mc_agree() {
    let s = lq_spec("both");
    for r in run_near_optimality_probes(&s).unwrap() {
        for row in &r.rows {
            let mc = row.mc.unwrap();
            assert!(!mc.unreliable);
            let allowance = 3.0 * mc.std_error + 0.02 * row.cost;
            assert!((mc.mean - row.cost).abs() <= allowance, "x0 {:?} eta {}: mc {} pde {}", r.probe, row.eta, mc.mean, row.cost);
        }
    }
}

#[test]
fn shifted_selector_cost_is_linearly_bounded() {
    let s = lq_spec("pde");
    let deltas = [0.4, 0.3, 0.2, 0.1, 0.05];
    let p = run_perturbation_sweep(&s, &deltas).unwrap();
    assert!(p.r_squared >= 0.9, "R² = {}", p.r_squared);

    // secant sensitivity at the largest shift, computed directly
    let base = solve_baseline(&s).unwrap();
    let shifted = base.selector.map_values(|z| vec![z[0] + 0.4]);
    let sol = hjb::evaluate_policy_pde(&base.problem, &shifted, Criterion::Discounted, &base.grid, &s.solver).unwrap();
    let k_fd = (sol.cost_at(&[0.0]) - base.selector_solution.cost_at(&[0.0])) / 0.4;
    assert!(k_fd > 0.0);
    for &(d, gap) in &p.rows {
        assert!(gap >= -5.0 * s.solver.tolerance);
        assert!(gap <= k_fd * d + 5.0 * s.solver.tolerance, "delta {d}: {gap} > {}", k_fd * d);
    }
}

#[test]
fn threshold_is_checked_on_the_final_rung() {
    let mut s = lq_spec("pde");
    s.epsilon = Some(0.05);
    s.epsilon_relative = true;
    let r = run_near_optimality(&s).unwrap();
    assert!(r.threshold_met());
    assert_eq!(r.threshold, Some(0.05 * r.j_star.abs()));
    let mut tight = r.clone();
    tight.threshold = Some(-1.0);
    assert!(!tight.threshold_met());
}

#[test]
fn exit_and_finite_horizon_pipelines() {
    let exit = spec(json!({
        "problem": {"name": "brownian_exit"},
        "criterion": "exit",
        "grid": {"lower": [-1.0], "upper": [1.0], "spacing": [0.02]},
        "eta_ladder": [0.4, 0.2, 0.1]
    }));
    let r = run_near_optimality(&exit).unwrap();
    assert!((r.j_star - 0.5).abs() < 1e-3);
    assert!(r.rows.iter().all(|row| row.gap.abs() <= 5.0 * r.tolerance));

    let fh = spec(json!({
        "problem": {"name": "lq"},
        "criterion": "finite_horizon",
        "grid": {"lower": [-3.0], "upper": [3.0], "spacing": [0.1]},
        "solver": {"refine_iters": 40, "time_slices": 21},
        "eta_ladder": [0.4, 0.2, 0.1]
    }));
    let r = run_near_optimality(&fh).unwrap();
    let oracle = reference_value("lq", &Default::default(), Criterion::FiniteHorizon, &[0.0]).unwrap().unwrap();
    assert!((r.j_star - oracle).abs() <= 0.02 * oracle);
    for row in &r.rows {
        assert!(row.gap >= -5.0 * r.tolerance && row.gap <= 0.02 * r.j_star, "{}", row.gap);
    }
}

#[test]
fn probes_get_their_own_reports() {
    let s = lq_spec("pde");
    let reports = run_near_optimality_probes(&s).unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[1].probe, vec![0.5]);
    assert!(reports[1].j_star > reports[0].j_star);
}

#[test]
fn documented_specs_parse_and_match_the_schema() {
    let docs = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs");
    let schema: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(docs.join("experiment-spec.schema.json")).unwrap()).unwrap();
    let keys = |v: &serde_json::Value| -> Vec<String> {
        let mut k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
        k.sort();
        k
    };
    let props = &schema["properties"];
    let mut count = 0;
    for entry in std::fs::read_dir(docs.join("examples")).unwrap() {
        let path = entry.unwrap().path();
        let spec = ExperimentSpec::load(&path, &[]).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        spec.validate().unwrap();
        let full: serde_json::Value = serde_json::from_str(&spec.to_json()).unwrap();
        assert_eq!(keys(&full), keys(props));
        assert_eq!(keys(&full["solver"]), keys(&props["solver"]["properties"]));
        if !full["mc"].is_null() {
            assert_eq!(keys(&full["mc"]), keys(&props["mc"]["properties"]));
        }
        count += 1;
    }
    assert!(count >= 3);
}
