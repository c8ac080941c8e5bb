use proptest::prelude::*;
use smoothctl_core::dynamics::ControlSet;
use smoothctl_core::grid::Grid;
use smoothctl_core::policy::*;

fn box_controls() -> ControlSet {
    ControlSet::new(vec![-1.0, 0.5], vec![2.0, 3.0]).unwrap()
}

fn random_policy(grid: Grid, raw: &[f64]) -> GridPolicy {
    let set = box_controls();
    let values: Vec<f64> = raw
        .chunks(2)
        .flat_map(|z| set.project(&[z[0], z[1]]))
        .collect();
    GridPolicy::new(grid, false, set, values, Interpolation::Nearest).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mollified_values_stay_in_the_control_set_and_contract(
        raw in prop::collection::vec(-2.0f64..4.0, 2 * 41),
        eta in 0.03f64..1.5,
    ) {
        let v = random_policy(Grid::uniform_1d(-2.0, 2.0, 41).unwrap(), &raw);
        let out = mollify(&v, eta).unwrap().policy;
        for z in out.values().chunks(2) {
            prop_assert!(v.controls().contains(z), "{z:?}");
        }
        prop_assert!(out.spread() <= v.spread() + 1e-12);
    }

    #[test]
    fn two_dimensional_mollification_contracts(
        raw in prop::collection::vec(-2.0f64..4.0, 2 * 81),
        eta in 0.1f64..1.0,
    ) {
        let grid = Grid::from_spacing(&[-1.0, -1.0], &[1.0, 1.0], &[0.25, 0.25]).unwrap();
        let v = random_policy(grid, &raw);
        let out = mollify(&v, eta).unwrap().policy;
        for z in out.values().chunks(2) {
            prop_assert!(v.controls().contains(z));
        }
        prop_assert!(out.spread() <= v.spread() + 1e-12);
    }

    #[test]
    fn lipschitz_estimate_respects_the_kernel_bound(
        raw in prop::collection::vec(-2.0f64..4.0, 2 * 81),
        eta in 0.05f64..1.0,
    ) {
        let v = random_policy(Grid::uniform_1d(-2.0, 2.0, 81).unwrap(), &raw);
        let out = mollify(&v, eta).unwrap().policy;
        let k = lipschitz_bound_constant(&v);
        prop_assert!(lipschitz_estimate(&out) <= k / eta * (1.0 + 1e-9), "{} > {}", lipschitz_estimate(&out), k / eta);
    }
}

#[test]
fn tanh_policy_converges_at_twice_the_spacing() {
    let h = 0.01;
    let grid = Grid::uniform_1d(-3.0, 3.0, 601).unwrap();
    let set = ControlSet::interval(-1.0, 1.0).unwrap();
    let v = GridPolicy::from_fn(grid, set, Interpolation::Multilinear, |x| vec![x[0].tanh()]).unwrap();
    let eta = 2.0 * h;
    let out = mollify(&v, eta).unwrap().policy;
    // tanh is 1-Lipschitz and |tanh''| ≤ 0.77
    let bound = 2.0 * eta + 0.77 * h * h / 8.0;
    let dev = v.max_node_deviation(&out).unwrap();
    assert!(dev <= bound, "{dev} > {bound}");
}

#[test]
fn pairing_gap_shrinks_with_the_bandwidth() {
    let grid = Grid::uniform_1d(-3.0, 3.0, 601).unwrap();
    let set = ControlSet::interval(-1.0, 1.0).unwrap();
    let ladder = [0.8, 0.4, 0.2, 0.1, 0.05];
    let laws: [fn(f64) -> f64; 3] = [
        |x| x.signum(),
        |x| (2.0 * x).tanh(),
        |x| if (x * 2.0).floor() as i64 % 2 == 0 { 0.8 } else { -0.3 },
    ];
    for law in laws {
        let v = GridPolicy::from_fn(grid.clone(), set.clone(), Interpolation::Nearest, |x| vec![law(x[0])]).unwrap();
        let dict = PairingDictionary::default_for(&grid, &set);
        let gaps: Vec<f64> = ladder
            .iter()
            .map(|&eta| pairing_gap(&v, &mollify(&v, eta).unwrap().policy, &dict).unwrap())
            .collect();
        for w in gaps.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{gaps:?}");
        }
    }
}
