//! End-to-end near-optimality experiments: solve the dynamic programming
//! equation, extract the minimizing selector `v*`, smooth it over a ladder of
//! bandwidths and measure how much cost the smoothing gives up.
//!
//! Rungs of the ladder are evaluated in parallel. Each rung gets its own
//! Monte Carlo seed derived from the base seed and the rung index, so reports
//! are bit-identical for a given spec whatever the thread count.

mod problems;
mod report;

use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dynamics::{check_assumptions, AssumptionInputs, AssumptionReport, CheckStatus, ControlProblem};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::hjb::{self, Criterion, Solution, SolverConfig};
use crate::policy::{
    lipschitz_bound_constant, lipschitz_estimate, mollify, pairing_gap, GridPolicy, Interpolation, PairingDictionary,
};
use crate::sde::{self, CostEstimate, SimConfig};

pub use problems::{builtin_problem, reference_value, BUILTIN_PROBLEMS};
pub use report::{EvaluationMode, GapReport, GapRow, McColumns};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemRef {
    pub name: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

/// Uniform grid over `[lower, upper]` with approximately the given spacing
/// on every axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub spacing: Vec<f64>,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        Grid::from_spacing(&self.lower, &self.upper, &self.spacing)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub problem: ProblemRef,
    pub criterion: Criterion,
    pub grid: GridSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Mollifier bandwidths, strictly decreasing, at least three.
    pub eta_ladder: Vec<f64>,
    #[serde(default)]
    pub evaluation: EvaluationMode,
    /// Required when the evaluation mode uses Monte Carlo.
    #[serde(default)]
    pub mc: Option<SimConfig>,
    /// Probe point `x0`; the origin when absent.
    #[serde(default)]
    pub probe: Option<Vec<f64>>,
    /// Further probe points, each producing its own report.
    #[serde(default)]
    pub extra_probes: Vec<Vec<f64>>,
    /// Threshold on the final-rung gap.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Read `epsilon` as a fraction of `|J*|`.
    #[serde(default)]
    pub epsilon_relative: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// Set `path = raw` inside a JSON document. `path` is dot separated; numeric
/// components index arrays. `raw` is read as JSON and falls back to a plain
/// string, so `grid.spacing=[0.05]`, `solver.implicit=true` and
/// `problem.name=lq` all work.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::invalid(format!("override `{assignment}` is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::invalid(format!("override path `{path}` has an empty component")));
    }
    let mut node = doc;
    for key in &keys {
        node = match node {
            Value::Array(items) => {
                let i: usize = key
                    .parse()
                    .map_err(|_| Error::invalid(format!("`{key}` in `{path}` must index an array")))?;
                let len = items.len();
                items
                    .get_mut(i)
                    .ok_or_else(|| Error::invalid(format!("index {i} in `{path}` is out of range ({len} items)")))?
            }
            Value::Null => {
                *node = Value::Object(Map::new());
                node.as_object_mut().unwrap().entry(key.to_string()).or_insert(Value::Null)
            }
            Value::Object(map) => map.entry(key.to_string()).or_insert(Value::Null),
            _ => return Err(Error::invalid(format!("`{path}` descends into a scalar"))),
        };
    }
    *node = value;
    Ok(())
}

impl ExperimentSpec {
    /// Parse a JSON spec, apply `key=value` overrides, and validate.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: Value = serde_json::from_str(text)?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let spec: Self = serde_json::from_value(doc)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?, overrides)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("specs always serialize")
    }

    pub fn validate(&self) -> Result<()> {
        let problem = self.build_problem()?;
        let d = problem.dim();
        if self.grid.lower.len() != d {
            return Err(Error::invalid(format!("grid has {} axes but the problem has dimension {d}", self.grid.lower.len())));
        }
        self.grid.build()?;
        self.solver.validate()?;
        if self.eta_ladder.len() < 3 {
            return Err(Error::invalid("the eta ladder needs at least three rungs"));
        }
        if self.eta_ladder.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::invalid("eta values must be positive and finite"));
        }
        if self.eta_ladder.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("the eta ladder must be strictly decreasing"));
        }
        for p in self.probes() {
            if p.len() != d {
                return Err(Error::invalid(format!("probe {p:?} does not have dimension {d}")));
            }
        }
        match (&self.mc, self.evaluation.uses_mc()) {
            (Some(mc), _) => mc.validate()?,
            (None, true) => return Err(Error::invalid("Monte Carlo evaluation needs an `mc` section")),
            (None, false) => {}
        }
        if let Some(eps) = self.epsilon {
            if !(eps >= 0.0) {
                return Err(Error::invalid("epsilon must be nonnegative"));
            }
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<ControlProblem> {
        builtin_problem(&self.problem.name, &self.problem.params)
    }

    /// The primary probe followed by the extra ones.
    pub fn probes(&self) -> Vec<Vec<f64>> {
        let d = self.grid.lower.len();
        let mut v = vec![self.probe.clone().unwrap_or_else(|| vec![0.0; d])];
        v.extend(self.extra_probes.iter().cloned());
        v
    }

    fn threshold(&self, j_star: f64) -> Option<f64> {
        self.epsilon
            .map(|eps| if self.epsilon_relative { eps * j_star.abs() } else { eps })
    }

    fn seed(&self) -> u64 {
        self.mc.as_ref().map(|m| m.seed).unwrap_or(0)
    }
}

/// Output of the dynamic programming stage shared by all experiments.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub problem: ControlProblem,
    pub grid: Grid,
    pub solution: Solution,
    /// Minimizing selector `v*`, nearest-node interpolation.
    pub selector: GridPolicy,
    /// PDE evaluation of `v*`.
    pub selector_solution: Solution,
    pub assumptions: AssumptionReport,
}

impl Baseline {
    pub fn failed_assumptions(&self) -> Vec<String> {
        self.assumptions
            .checks()
            .iter()
            .filter(|c| c.status == CheckStatus::Fail)
            .map(|c| c.name.clone())
            .collect()
    }
}

/// Solve the spec's criterion and extract its selector.
pub fn solve_baseline(spec: &ExperimentSpec) -> Result<Baseline> {
    spec.validate()?;
    let problem = spec.build_problem()?;
    let grid = spec.grid.build()?;
    info!("solving {} ({}) on {} nodes", problem.name(), spec.criterion, grid.len());
    let solution = hjb::solve(&problem, spec.criterion, &grid, &spec.solver)?;
    let selector = hjb::extract_selector(&problem, &solution.value, &spec.solver)?;
    let selector_solution = hjb::evaluate_policy_pde(&problem, &selector, spec.criterion, &grid, &spec.solver)?;
    let lattice = spec.solver.control_lattice(&problem)?;
    let inputs = AssumptionInputs {
        rho_candidate: solution.rho,
        ..AssumptionInputs::default()
    };
    let assumptions = check_assumptions(&problem, &grid, &lattice, &inputs)?;
    for w in &assumptions.warnings {
        warn!("{w}");
    }
    Ok(Baseline {
        problem,
        grid,
        solution,
        selector,
        selector_solution,
        assumptions,
    })
}

/// `v_η = φ_η * v*`, interpolated multilinearly so that it is Lipschitz
/// between nodes too.
pub fn smooth_selector(selector: &GridPolicy, eta: f64) -> Result<GridPolicy> {
    Ok(mollify(selector, eta)?.policy.with_interpolation(Interpolation::Multilinear))
}

/// Per-rung Monte Carlo seed: a splitmix64 step of the base seed offset by
/// the rung index.
pub fn rung_seed(base: u64, rung: usize) -> u64 {
    let mut z = base.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(rung as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Monte Carlo cost of `policy` from `x0` under `criterion`.
pub fn estimate_cost(
    problem: &ControlProblem,
    policy: &GridPolicy,
    criterion: Criterion,
    x0: &[f64],
    cfg: &SimConfig,
) -> Result<CostEstimate> {
    match criterion {
        Criterion::FiniteHorizon => sde::estimate_finite_horizon(problem, policy, x0, cfg),
        Criterion::Discounted => sde::estimate_discounted(problem, policy, x0, cfg),
        Criterion::Ergodic => sde::estimate_ergodic(problem, policy, x0, cfg),
        Criterion::Exit => sde::estimate_exit(problem, policy, x0, cfg),
    }
}

struct Rung {
    eta: f64,
    lipschitz: f64,
    pairing_gap: f64,
    pde: Option<Solution>,
    mc: Vec<Option<CostEstimate>>,
}

fn evaluate_rung(spec: &ExperimentSpec, base: &Baseline, dict: &PairingDictionary, probes: &[Vec<f64>], rung: usize) -> Result<Rung> {
    let eta = spec.eta_ladder[rung];
    let policy = smooth_selector(&base.selector, eta)?;
    let pde = if spec.evaluation.uses_pde() {
        Some(hjb::evaluate_policy_pde(&base.problem, &policy, spec.criterion, &base.grid, &spec.solver)?)
    } else {
        None
    };
    let mc = match (&spec.mc, spec.evaluation.uses_mc()) {
        (Some(cfg), true) => {
            let cfg = SimConfig {
                seed: rung_seed(cfg.seed, rung),
                ..cfg.clone()
            };
            probes
                .iter()
                .map(|x0| estimate_cost(&base.problem, &policy, spec.criterion, x0, &cfg).map(Some))
                .collect::<Result<_>>()?
        }
        _ => vec![None; probes.len()],
    };
    Ok(Rung {
        eta,
        lipschitz: lipschitz_estimate(&policy),
        pairing_gap: pairing_gap(&base.selector, &policy, dict)?,
        pde,
        mc,
    })
}

/// One report per probe point (the primary probe first).
pub fn run_near_optimality_probes(spec: &ExperimentSpec) -> Result<Vec<GapReport>> {
    let base = solve_baseline(spec)?;
    let probes = spec.probes();
    let dict = PairingDictionary::default_for(base.selector.grid(), base.problem.controls());
    let rungs: Vec<Rung> = (0..spec.eta_ladder.len())
        .into_par_iter()
        .map(|r| evaluate_rung(spec, &base, &dict, &probes, r))
        .collect::<Result<_>>()?;
    let k = lipschitz_bound_constant(&base.selector);
    let failures = base.failed_assumptions();

    let reports: Vec<GapReport> = probes
        .iter()
        .enumerate()
        .map(|(p, x0)| {
            let j_star = base.solution.cost_at(x0);
            let rows = rungs
                .iter()
                .map(|r| {
                    let mc = r.mc[p].as_ref().map(|e| McColumns {
                        mean: e.mean,
                        std_error: e.std_error,
                        unreliable: e.unreliable || e.nonstationary,
                    });
                    let cost = match &r.pde {
                        Some(sol) => sol.cost_at(x0),
                        None => mc.map(|m| m.mean).unwrap_or(f64::NAN),
                    };
                    GapRow {
                        eta: r.eta,
                        lipschitz: r.lipschitz,
                        lipschitz_bound: k / r.eta,
                        cost,
                        gap: cost - j_star,
                        pairing_gap: r.pairing_gap,
                        mc,
                    }
                })
                .collect();
            GapReport {
                problem: base.problem.name().to_string(),
                criterion: spec.criterion,
                evaluation: spec.evaluation,
                probe: x0.clone(),
                j_star,
                selector_cost: base.selector_solution.cost_at(x0),
                kernel_constant: k,
                threshold: spec.threshold(j_star),
                seed: spec.seed(),
                tolerance: spec.solver.tolerance,
                grid: base.grid.clone(),
                assumption_failures: failures.clone(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                rows,
            }
        })
        .collect();
    for r in &reports {
        let neg = r.negative_gaps();
        if !neg.is_empty() && spec.evaluation.uses_pde() {
            warn!("gap below -5 tol at eta {neg:?}; the control lattice may be too coarse (try refine_iters)");
        }
    }
    Ok(reports)
}

/// Solve, extract `v*`, smooth it along the ladder and tabulate the gaps at
/// the primary probe point.
pub fn run_near_optimality(spec: &ExperimentSpec) -> Result<GapReport> {
    Ok(run_near_optimality_probes(spec)?.swap_remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityRow {
    pub eta: f64,
    pub pairing_gap: f64,
    /// `|J(v_η) − J(v*)|` from PDE evaluation.
    pub cost_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub problem: String,
    pub criterion: Criterion,
    pub probe: Vec<f64>,
    pub j_star: f64,
    pub selector_cost: f64,
    pub rows: Vec<ContinuityRow>,
}

fn shrink_ratio(first: f64, last: f64) -> f64 {
    if first == 0.0 {
        if last == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        last / first
    }
}

impl ContinuityReport {
    /// Final-rung pairing gap over the first-rung one.
    pub fn pairing_ratio(&self) -> f64 {
        shrink_ratio(self.rows[0].pairing_gap, self.rows[self.rows.len() - 1].pairing_gap)
    }

    /// Final-rung cost gap over the first-rung one.
    pub fn cost_ratio(&self) -> f64 {
        shrink_ratio(self.rows[0].cost_gap, self.rows[self.rows.len() - 1].cost_gap)
    }

    /// Both columns shrank to at most `fraction` of their first-rung values.
    pub fn passes(&self, fraction: f64) -> bool {
        self.pairing_ratio() <= fraction && self.cost_ratio() <= fraction
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "#problem={}\n#criterion={}\n#j_star={}\n#selector_cost={}\neta,pairing_gap,cost_gap\n",
            self.problem, self.criterion, self.j_star, self.selector_cost
        );
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.eta, r.pairing_gap, r.cost_gap));
        }
        s
    }
}

/// Pairing gap against cost gap along the ladder, PDE evaluation only.
pub fn run_continuity_sweep(spec: &ExperimentSpec) -> Result<ContinuityReport> {
    let base = solve_baseline(spec)?;
    let x0 = spec.probes().swap_remove(0);
    let reference = base.selector_solution.cost_at(&x0);
    let dict = PairingDictionary::default_for(base.selector.grid(), base.problem.controls());
    let rows = spec
        .eta_ladder
        .par_iter()
        .map(|&eta| {
            let policy = smooth_selector(&base.selector, eta)?;
            let sol = hjb::evaluate_policy_pde(&base.problem, &policy, spec.criterion, &base.grid, &spec.solver)?;
            Ok(ContinuityRow {
                eta,
                pairing_gap: pairing_gap(&base.selector, &policy, &dict)?,
                cost_gap: (sol.cost_at(&x0) - reference).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ContinuityReport {
        problem: base.problem.name().to_string(),
        criterion: spec.criterion,
        probe: x0,
        j_star: base.solution.cost_at(&spec.probes()[0]),
        selector_cost: reference,
        rows,
    })
}

/// Cost of constant shifts `v* + δ` (projected onto the control set).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub problem: String,
    pub criterion: Criterion,
    pub probe: Vec<f64>,
    /// `(δ, J(v* + δ) − J(v*))`.
    pub rows: Vec<(f64, f64)>,
    /// Least-squares fit `gap ≈ slope·δ + intercept`.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl PerturbationReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "#problem={}\n#criterion={}\n#slope={}\n#intercept={}\n#r_squared={}\ndelta,cost_gap\n",
            self.problem, self.criterion, self.slope, self.intercept, self.r_squared
        );
        for (d, g) in &self.rows {
            s.push_str(&format!("{d},{g}\n"));
        }
        s
    }
}

/// Ordinary least squares `y ≈ a·x + b`; returns `(a, b, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r2 = if sxx > 0.0 && syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

/// Shift every control of `v*` by `δ` along each axis and measure the cost.
pub fn run_perturbation_sweep(spec: &ExperimentSpec, deltas: &[f64]) -> Result<PerturbationReport> {
    if deltas.len() < 2 {
        return Err(Error::invalid("the perturbation sweep needs at least two shifts"));
    }
    let base = solve_baseline(spec)?;
    let x0 = spec.probes().swap_remove(0);
    let reference = base.selector_solution.cost_at(&x0);
    let rows = deltas
        .par_iter()
        .map(|&delta| {
            let shifted = base
                .selector
                .map_values(|z| z.iter().map(|v| v + delta).collect());
            let sol = hjb::evaluate_policy_pde(&base.problem, &shifted, spec.criterion, &base.grid, &spec.solver)?;
            Ok((delta, sol.cost_at(&x0) - reference))
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let (slope, intercept, r_squared) = linear_fit(&xs, &ys);
    Ok(PerturbationReport {
        problem: base.problem.name().to_string(),
        criterion: spec.criterion,
        probe: x0,
        rows,
        slope,
        intercept,
        r_squared,
    })
}

/// Write `<stem>.csv` and `<stem>.txt` into `dir`, creating it if needed.
pub fn write_report(report: &GapReport, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let csv = dir.join(format!("{stem}.csv"));
    let txt = dir.join(format!("{stem}.txt"));
    std::fs::write(&csv, report.to_csv())?;
    std::fs::write(&txt, report.to_text())?;
    Ok((csv, txt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn base_json() -> Value {
        json!({
            "problem": {"name": "lq"},
            "criterion": "discounted",
            "grid": {"lower": [-3.0], "upper": [3.0], "spacing": [0.1]},
            "eta_ladder": [0.8, 0.4, 0.2]
        })
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let mut doc = base_json();
        apply_override(&mut doc, "grid.spacing.0=0.05").unwrap();
        apply_override(&mut doc, "solver.tolerance=1e-7").unwrap();
        apply_override(&mut doc, "problem.params.sigma=0.5").unwrap();
        apply_override(&mut doc, "problem.name=ou").unwrap();
        assert_eq!(doc["grid"]["spacing"][0], json!(0.05));
        assert_eq!(doc["solver"]["tolerance"], json!(1e-7));
        assert_eq!(doc["problem"]["params"]["sigma"], json!(0.5));
        assert_eq!(doc["problem"]["name"], json!("ou"));
        assert!(apply_override(&mut doc, "grid.spacing.4=1").is_err());
        assert!(apply_override(&mut doc, "criterion.x=1").is_err());
        assert!(apply_override(&mut doc, "novalue").is_err());
    }

    #[test]
    fn spec_validation() {
        let text = base_json().to_string();
        let spec = ExperimentSpec::from_json(&text, &[]).unwrap();
        assert_eq!(spec.probes(), vec![vec![0.0]]);
        assert_eq!(ExperimentSpec::from_json(&spec.to_json(), &[]).unwrap(), spec);
        for bad in [
            "eta_ladder=[0.8,0.4]",
            "eta_ladder=[0.8,0.8,0.2]",
            "eta_ladder=[0.8,0.4,-0.2]",
            "evaluation=mc",
            "probe=[0.0,1.0]",
            "grid.lower=[-1,-1]",
            "problem.name=pendulum",
            "surprise=1",
            "epsilon=-1",
        ] {
            assert!(ExperimentSpec::from_json(&text, &[bad.to_string()]).is_err(), "{bad}");
        }
    }

    #[test]
    fn rung_seeds_differ() {
        let s: Vec<u64> = (0..5).map(|r| rung_seed(7, r)).collect();
        for i in 0..5 {
            for j in 0..i {
                assert_ne!(s[i], s[j]);
            }
        }
        assert_eq!(rung_seed(7, 3), s[3]);
    }

    #[test]
    fn linear_fit_recovers_a_line() {
        let x = [0.1, 0.2, 0.4, 0.8];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 0.5).collect();
        let (a, b, r2) = linear_fit(&x, &y);
        assert!((a - 3.0).abs() < 1e-12 && (b + 0.5).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }
}
