//! Finite-dictionary pairings `∫ f(x) g(x, v(x)) dx` for comparing policies.

use std::fmt;
use std::sync::Arc;

use super::GridPolicy;
use crate::dynamics::ControlSet;
use crate::error::{Error, Result};
use crate::grid::Grid;

pub type TestFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type ControlTestFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// One `(f, g)` pair. Both receive the full grid point, so for time-dependent
/// policies the first coordinate is time.
#[derive(Clone)]
pub struct TestPair {
    pub name: String,
    pub f: TestFn,
    pub g: ControlTestFn,
    /// Upper bound on `|g|` over the grid box and control set.
    pub g_bound: f64,
}

impl fmt::Debug for TestPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestPair")
            .field("name", &self.name)
            .field("g_bound", &self.g_bound)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Default)]
pub struct PairingDictionary {
    pub pairs: Vec<TestPair>,
}

impl PairingDictionary {
    pub fn new(pairs: Vec<TestPair>) -> Self {
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The standard six pairs built on the box of `grid`.
    ///
    /// Coordinates are rescaled to `u ∈ [0,1]` per axis, so a time axis is
    /// treated like any other. The `f` family is a Gaussian bump at `u = 0.6`,
    /// a hat at `u = 0.4` and a sine window; the `g` family is the mean control,
    /// its squared norm, and the mean control times a parabolic window.
    pub fn default_for(grid: &Grid, controls: &ControlSet) -> Self {
        let lower = grid.lower();
        let width: Vec<f64> = grid
            .axes()
            .iter()
            .map(|a| (a.upper - a.lower).max(f64::MIN_POSITIVE))
            .collect();
        let scale = move |x: &[f64]| -> Vec<f64> {
            x.iter().zip(&lower).zip(&width).map(|((x, l), w)| (x - l) / w).collect()
        };

        let s1 = scale.clone();
        let gauss: TestFn = Arc::new(move |x| {
            let r2: f64 = s1(x).iter().map(|u| ((u - 0.6) / 0.15).powi(2)).sum();
            (-0.5 * r2).exp()
        });
        let s2 = scale.clone();
        let hat: TestFn = Arc::new(move |x| s2(x).iter().map(|u| (1.0 - (u - 0.4).abs() / 0.25).max(0.0)).product());
        let s3 = scale.clone();
        let sine: TestFn = Arc::new(move |x| {
            let u = s3(x);
            let w: f64 = u.iter().map(|u| (std::f64::consts::PI * u.clamp(0.0, 1.0)).sin()).product();
            w * (0.5 + u[0])
        });

        let zmax = controls
            .lower()
            .iter()
            .zip(controls.upper())
            .map(|(l, u)| l.abs().max(u.abs()))
            .fold(0.0, f64::max);
        let sq_bound: f64 = controls
            .lower()
            .iter()
            .zip(controls.upper())
            .map(|(l, u)| l.abs().max(u.abs()).powi(2))
            .sum();

        let lin: ControlTestFn = Arc::new(|_x, z| z.iter().sum::<f64>() / z.len() as f64);
        let sq: ControlTestFn = Arc::new(|_x, z| z.iter().map(|v| v * v).sum());
        let s4 = scale;
        let win: ControlTestFn = Arc::new(move |x, z| {
            let w: f64 = s4(x).iter().map(|u| (1.0 - (2.0 * u - 1.0).powi(2)).max(0.0)).product();
            w * z.iter().sum::<f64>() / z.len() as f64
        });

        let pair = |name: &str, f: &TestFn, g: &ControlTestFn, g_bound: f64| TestPair {
            name: name.to_string(),
            f: f.clone(),
            g: g.clone(),
            g_bound,
        };
        Self::new(vec![
            pair("gauss-lin", &gauss, &lin, zmax),
            pair("gauss-sq", &gauss, &sq, sq_bound),
            pair("hat-lin", &hat, &lin, zmax),
            pair("hat-win", &hat, &win, zmax),
            pair("sine-sq", &sine, &sq, sq_bound),
            pair("sine-win", &sine, &win, zmax),
        ])
    }
}

/// Trapezoidal quadrature of `∫ f(x) g(x, v(x)) dx` over the policy grid.
pub fn borkar_pairing(policy: &GridPolicy, f: &dyn Fn(&[f64]) -> f64, g: &dyn Fn(&[f64], &[f64]) -> f64) -> f64 {
    let grid = policy.grid();
    let mut x = vec![0.0; grid.dim()];
    let mut acc = 0.0;
    for k in 0..grid.len() {
        grid.point_into(k, &mut x);
        let fx = f(&x);
        if fx == 0.0 {
            continue;
        }
        acc += grid.trapezoid_weight(k) * fx * g(&x, policy.node_value(k));
    }
    acc
}

/// Largest pairing difference over the dictionary.
pub fn pairing_gap(a: &GridPolicy, b: &GridPolicy, dictionary: &PairingDictionary) -> Result<f64> {
    if dictionary.is_empty() {
        return Err(Error::invalid("pairing dictionary is empty"));
    }
    Ok(dictionary
        .pairs
        .iter()
        .map(|p| (borkar_pairing(a, &*p.f, &*p.g) - borkar_pairing(b, &*p.f, &*p.g)).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{mollify, Interpolation};

    fn unit() -> ControlSet {
        ControlSet::interval(-1.0, 1.0).unwrap()
    }

    fn sign_policy(grid: Grid) -> GridPolicy {
        GridPolicy::from_fn(grid, unit(), Interpolation::Nearest, |x| vec![x[0].signum()]).unwrap()
    }

    #[test]
    fn zero_test_function_gives_zero() {
        let v = sign_policy(Grid::uniform_1d(-1.0, 1.0, 20).unwrap());
        assert_eq!(borkar_pairing(&v, &|_| 0.0, &|_, z| z[0]), 0.0);
    }

    #[test]
    fn constant_control_factors_out() {
        let grid = Grid::uniform_1d(0.0, 1.0, 101).unwrap();
        let c0 = 0.3;
        let v = GridPolicy::constant(grid, unit(), &[c0]).unwrap();
        let hat = |x: &[f64]| (1.0 - (2.0 * x[0] - 1.0).abs()).max(0.0);
        // the trapezoid rule is exact for this piecewise linear hat
        let got = borkar_pairing(&v, &hat, &|_, z| z[0]);
        assert!((got - c0 * 0.5).abs() < 1e-14);
    }

    #[test]
    fn gaussian_times_square_of_sign() {
        // no node at the origin
        let grid = Grid::uniform_1d(-3.0, 3.0, 600).unwrap();
        let v = sign_policy(grid);
        let got = borkar_pairing(&v, &|x| (-x[0] * x[0]).exp(), &|_, z| z[0] * z[0]);
        // composite Simpson on a much finer grid
        let n = 20_000;
        let h = 6.0 / n as f64;
        let mut oracle = 0.0;
        for i in 0..=n {
            let x = -3.0 + i as f64 * h;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            oracle += w * (-x * x).exp();
        }
        oracle *= h / 3.0;
        assert!((got - oracle).abs() < 1e-4, "{got} vs {oracle}");
    }

    #[test]
    fn shifted_policy_gap_is_linear() {
        let grid = Grid::uniform_1d(-1.0, 1.0, 81).unwrap();
        let v = GridPolicy::from_fn(grid.clone(), unit(), Interpolation::Nearest, |x| vec![0.5 * x[0]]).unwrap();
        let delta = 0.2;
        let w = v.map_values(|z| vec![z[0] + delta]);
        let f: TestFn = Arc::new(|x| (1.0 - x[0] * x[0]).max(0.0));
        let dict = PairingDictionary::new(vec![TestPair {
            name: "lin".into(),
            f: f.clone(),
            g: Arc::new(|_, z| z[0]),
            g_bound: 1.0,
        }]);
        let gap = pairing_gap(&v, &w, &dict).unwrap();
        let int_f = borkar_pairing(&v, &*f, &|_, _| 1.0);
        assert!((gap - delta * int_f).abs() < 1e-12);
        assert_eq!(pairing_gap(&v, &v, &dict).unwrap(), 0.0);
        assert!(pairing_gap(&v, &w, &PairingDictionary::default()).is_err());
    }

    #[test]
    fn mollified_sign_gap_shrinks_along_ladder() {
        let grid = Grid::uniform_1d(-2.0, 2.0, 800).unwrap();
        let v = sign_policy(grid.clone());
        let dict = PairingDictionary::default_for(&grid, &unit());
        assert_eq!(dict.len(), 6);
        let gaps: Vec<f64> = [0.8, 0.4, 0.2, 0.1]
            .iter()
            .map(|&eta| pairing_gap(&v, &mollify(&v, eta).unwrap().policy, &dict).unwrap())
            .collect();
        for w in gaps.windows(2) {
            assert!(w[1] <= w[0], "{gaps:?}");
        }
        // The squared-control pairs see the band of width ~η where the
        // smoothed sign leaves ±1, so the gap halves with each rung.
        for w in gaps.windows(2) {
            let r = w[1] / w[0];
            assert!((0.4..0.6).contains(&r), "{gaps:?}");
        }
    }
}
