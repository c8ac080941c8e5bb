//! Built-in benchmark problems and their closed-form reference values.
//!
//! Every problem carries all four criteria: a discount rate `alpha`, a
//! horizon `horizon` with terminal cost `terminal·|x|²`, and an exit box
//! `(-exit_half_width, exit_half_width)^d` with exit discount
//! `exit_discount` and zero exit cost.

use serde_json::{Map, Value};

use crate::dynamics::{closures, BoxSet, ControlProblem, ControlSet};
use crate::error::{Error, Result};
use crate::hjb::Criterion;

pub const BUILTIN_PROBLEMS: [&str; 5] = ["lq", "double_well", "ou", "brownian_exit", "controlled_ou_ergodic"];

/// Numeric parameters with defaults; unknown keys are rejected so typos do
/// not silently fall back to a default.
struct Params {
    values: Vec<(&'static str, f64)>,
}

impl Params {
    fn read(name: &str, defaults: &[(&'static str, f64)], given: &Map<String, Value>) -> Result<Self> {
        let mut values = defaults.to_vec();
        for (key, raw) in given {
            let slot = values
                .iter_mut()
                .find(|(k, _)| k == key)
                .ok_or_else(|| {
                    let known: Vec<&str> = defaults.iter().map(|(k, _)| *k).collect();
                    Error::invalid(format!("`{name}` has no parameter `{key}` (known: {})", known.join(", ")))
                })?;
            slot.1 = raw
                .as_f64()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::invalid(format!("parameter `{key}` must be a finite number")))?;
        }
        Ok(Self { values })
    }

    fn get(&self, key: &str) -> f64 {
        self.values.iter().find(|(k, _)| *k == key).map(|(_, v)| *v).unwrap()
    }

    fn dim(&self) -> Result<usize> {
        let d = self.get("dim");
        if d.fract() != 0.0 || !(1.0..=3.0).contains(&d) {
            return Err(Error::invalid("dim must be 1, 2 or 3"));
        }
        Ok(d as usize)
    }

    fn positive(&self, key: &str) -> Result<f64> {
        let v = self.get(key);
        if v > 0.0 {
            Ok(v)
        } else {
            Err(Error::invalid(format!("parameter `{key}` must be positive")))
        }
    }
}

const COMMON: [(&str, f64); 5] = [
    ("dim", 1.0),
    ("alpha", 1.0),
    ("horizon", 1.0),
    ("terminal", 0.0),
    ("exit_discount", 0.0),
];

fn with_defaults(extra: &[(&'static str, f64)], exit_half_width: f64) -> Vec<(&'static str, f64)> {
    let mut v = COMMON.to_vec();
    v.push(("exit_half_width", exit_half_width));
    v.extend_from_slice(extra);
    v
}

fn defaults(name: &str) -> Option<Vec<(&'static str, f64)>> {
    let sqrt2 = std::f64::consts::SQRT_2;
    let v = match name {
        "lq" => with_defaults(&[("sigma", 1.0), ("u_max", 3.0)], 2.0),
        "double_well" => with_defaults(&[("sigma", 1.0), ("control_weight", 0.1)], 2.0),
        "ou" => with_defaults(&[("theta", 1.0), ("sigma", sqrt2)], 2.0),
        "brownian_exit" => with_defaults(&[("sigma", sqrt2)], 1.0),
        "controlled_ou_ergodic" => with_defaults(&[("theta", 1.0), ("sigma", 1.0), ("u_max", 2.0)], 2.0),
        _ => return None,
    };
    Some(v)
}

fn read_params(name: &str, given: &Map<String, Value>) -> Result<Params> {
    let defaults = defaults(name).ok_or_else(|| Error::UnknownProblem {
        name: name.to_string(),
        available: BUILTIN_PROBLEMS.to_vec(),
    })?;
    Params::read(name, &defaults, given)
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn finish(problem: ControlProblem, p: &Params) -> Result<ControlProblem> {
    let d = problem.dim();
    let w = p.positive("exit_half_width")?;
    let terminal = p.get("terminal");
    let delta = p.get("exit_discount");
    if delta < 0.0 {
        return Err(Error::invalid("exit_discount must be nonnegative"));
    }
    problem
        .with_discount(p.positive("alpha")?)?
        .with_horizon(p.positive("horizon")?, closures::state(move |x| terminal * norm2(x)))?
        .with_exit(
            BoxSet::new(vec![-w; d], vec![w; d])?,
            closures::cost(move |_, _| delta),
            closures::constant_state(0.0),
        )
}

/// Look up a benchmark problem by name.
///
/// * `lq`: `b = ζ`, `σ = sigma·I`, `c = |x|² + |ζ|²`, `𝕌 = [-u_max, u_max]^d`.
/// * `double_well`: `b = ζ`, `c = Σ(x_i² − 1)² + 0.1|ζ|²`, `𝕌 = [-1, 1]^d`.
/// * `ou`: `b = −theta·x`, `c = |x|²`, no control (`𝕌 = {0}`).
/// * `brownian_exit`: `b = 0`, `σ = √2`, `c = 1`, exit box `(-1, 1)^d`.
/// * `controlled_ou_ergodic`: `b = −theta·x + ζ`, `c = |x|² + |ζ|²`,
///   `𝕌 = [-u_max, u_max]^d`.
pub fn builtin_problem(name: &str, params: &Map<String, Value>) -> Result<ControlProblem> {
    let p = read_params(name, params)?;
    match name {
        "lq" => {
            let d = p.dim()?;
            let u = p.positive("u_max")?;
            let prob = ControlProblem::new(
                name,
                d,
                ControlSet::new(vec![-u; d], vec![u; d])?,
                closures::drift(|_, z, out| out.copy_from_slice(z)),
                closures::scalar_diffusion(p.get("sigma")),
                closures::cost(|x, z| norm2(x) + norm2(z)),
            )?;
            finish(prob, &p)
        }
        "double_well" => {
            let d = p.dim()?;
            let r = p.get("control_weight");
            if r < 0.0 {
                return Err(Error::invalid("control_weight must be nonnegative"));
            }
            let prob = ControlProblem::new(
                name,
                d,
                ControlSet::new(vec![-1.0; d], vec![1.0; d])?,
                closures::drift(|_, z, out| out.copy_from_slice(z)),
                closures::scalar_diffusion(p.get("sigma")),
                closures::cost(move |x, z| x.iter().map(|v| (v * v - 1.0).powi(2)).sum::<f64>() + r * norm2(z)),
            )?;
            finish(prob, &p)
        }
        "ou" => {
            let d = p.dim()?;
            let theta = p.get("theta");
            let prob = ControlProblem::new(
                name,
                d,
                ControlSet::point(vec![0.0])?,
                closures::drift(move |x, _, out| {
                    for (o, xi) in out.iter_mut().zip(x) {
                        *o = -theta * xi;
                    }
                }),
                closures::scalar_diffusion(p.get("sigma")),
                closures::cost(|x, _| norm2(x)),
            )?;
            finish(prob, &p)
        }
        "brownian_exit" => {
            let d = p.dim()?;
            let prob = ControlProblem::new(
                name,
                d,
                ControlSet::point(vec![0.0])?,
                closures::drift(|_, _, out| out.iter_mut().for_each(|o| *o = 0.0)),
                closures::scalar_diffusion(p.get("sigma")),
                closures::cost(|_, _| 1.0),
            )?;
            finish(prob, &p)
        }
        "controlled_ou_ergodic" => {
            let d = p.dim()?;
            let theta = p.get("theta");
            let u = p.positive("u_max")?;
            let prob = ControlProblem::new(
                name,
                d,
                ControlSet::new(vec![-u; d], vec![u; d])?,
                closures::drift(move |x, z, out| {
                    for i in 0..out.len() {
                        out[i] = -theta * x[i] + z[i];
                    }
                }),
                closures::scalar_diffusion(p.get("sigma")),
                closures::cost(|x, z| norm2(x) + norm2(z)),
            )?;
            finish(prob, &p)
        }
        _ => unreachable!("read_params rejects unknown names"),
    }
}

/// Closed-form optimal cost at `x0`, where one is known.
///
/// The linear-quadratic formulas ignore the control bound, so they hold
/// only while the optimal feedback stays inside `𝕌` (true for the default
/// parameters on the default boxes up to a negligible tail). The
/// finite-horizon entries assume `terminal = 0`.
pub fn reference_value(name: &str, params: &Map<String, Value>, criterion: Criterion, x0: &[f64]) -> Result<Option<f64>> {
    let d = builtin_problem(name, params)?.dim();
    if x0.len() != d {
        return Err(Error::invalid("probe point has the wrong dimension"));
    }
    let p = read_params(name, params)?;
    let s2 = p.get("sigma").powi(2);
    let alpha = p.get("alpha");
    let r2 = norm2(x0);
    let df = d as f64;
    let value = match (name, criterion) {
        ("lq", Criterion::Discounted) => {
            let k = (-alpha + (alpha * alpha + 4.0).sqrt()) / 2.0;
            Some(k * r2 + df * s2 * k / alpha)
        }
        ("lq", Criterion::Ergodic) => Some(df * s2),
        ("lq", Criterion::FiniteHorizon) if p.get("terminal") == 0.0 => {
            let tau = p.get("horizon");
            Some(tau.tanh() * r2 + df * s2 * tau.cosh().ln())
        }
        ("ou", Criterion::Discounted) => {
            let k = 1.0 / (alpha + 2.0 * p.get("theta"));
            Some(k * r2 + df * s2 * k / alpha)
        }
        ("ou", Criterion::Ergodic) => Some(df * s2 / (2.0 * p.get("theta"))),
        ("brownian_exit", Criterion::Exit) if d == 1 && p.get("exit_discount") == 0.0 => {
            let w = p.get("exit_half_width");
            Some((w * w - r2) / s2)
        }
        ("controlled_ou_ergodic", Criterion::Ergodic) => {
            let theta = p.get("theta");
            Some(df * s2 * ((theta * theta + 1.0).sqrt() - theta))
        }
        _ => None,
    };
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn params(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn unknown_name_lists_alternatives() {
        let err = builtin_problem("pendulum", &Map::new()).unwrap_err();
        let msg = err.to_string();
        for name in BUILTIN_PROBLEMS {
            assert!(msg.contains(name), "{msg}");
        }
    }

    #[test]
    fn unknown_parameter_rejected() {
        assert!(builtin_problem("lq", &params(json!({"sigmaa": 1.0}))).is_err());
        assert!(builtin_problem("lq", &params(json!({"sigma": "x"}))).is_err());
        assert!(builtin_problem("lq", &params(json!({"dim": 1.5}))).is_err());
    }

    #[test]
    fn definitions() {
        let lq = builtin_problem("lq", &Map::new()).unwrap();
        assert_eq!(lq.drift(&[0.3], &[-0.7]), vec![-0.7]);
        assert_eq!(lq.running_cost(&[2.0], &[0.5]), 4.25);
        assert_eq!(lq.discount(), Some(1.0));

        let bm = builtin_problem("brownian_exit", &Map::new()).unwrap();
        assert_eq!(bm.drift(&[0.4], &[0.0]), vec![0.0]);
        assert_eq!(bm.sigma(&[0.4]), vec![std::f64::consts::SQRT_2]);
        assert_eq!(bm.running_cost(&[0.4], &[0.0]), 1.0);
        let exit = bm.exit().unwrap();
        assert_eq!(exit.domain.lower(), &[-1.0]);
        assert_eq!(exit.domain.upper(), &[1.0]);

        let dw = builtin_problem("double_well", &Map::new()).unwrap();
        assert_eq!(dw.drift(&[2.0], &[0.25]), vec![0.25]);
        assert!((dw.running_cost(&[2.0], &[0.5]) - 9.025).abs() < 1e-15);
        assert_eq!(dw.controls().lower(), &[-1.0]);

        let two = builtin_problem("controlled_ou_ergodic", &params(json!({"dim": 2}))).unwrap();
        assert_eq!(two.dim(), 2);
        assert_eq!(two.drift(&[1.0, -1.0], &[0.5, 0.5]), vec![-0.5, 1.5]);
    }

    #[test]
    fn references() {
        let none = Map::new();
        let lq = reference_value("lq", &none, Criterion::Discounted, &[0.0]).unwrap().unwrap();
        assert!((lq - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-15);
        let bm = reference_value("brownian_exit", &none, Criterion::Exit, &[0.0]).unwrap().unwrap();
        assert!((bm - 0.5).abs() < 1e-15);
        let ou = reference_value("ou", &none, Criterion::Ergodic, &[0.0]).unwrap().unwrap();
        assert!((ou - 1.0).abs() < 1e-15);
        assert_eq!(reference_value("double_well", &none, Criterion::Discounted, &[0.0]).unwrap(), None);
    }
}
