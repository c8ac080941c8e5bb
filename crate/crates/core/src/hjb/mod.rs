//! Dynamic programming equations of the four cost criteria on rectangular
//! grids, minimizing selectors, and linear policy evaluation.
//!
//! All solvers share one monotone Markov-chain discretization (see
//! [`scheme`](self)) and differ only in the fixed-point map:
//!
//! * discounted: `V(k) = min_ζ (c + Σ q V(n)) / (α + Σ q)`;
//! * exit: the same with `δ(x, ζ)` in place of `α` and Dirichlet nodes on ∂O;
//! * finite horizon: backward explicit (or implicit) Euler in time;
//! * ergodic: relative value iteration pinned at an anchor node.
//!
//! Sweeps are Jacobi-style and run in parallel over nodes; results do not
//! depend on the number of worker threads.

mod scheme;

use serde::{Deserialize, Serialize};

use crate::dynamics::ControlProblem;
use crate::error::{Error, Result};
use crate::field::{BoundaryKind, SolveStats, ValueField};
use crate::grid::{Axis, Grid};
use crate::policy::{GridPolicy, Interpolation, Policy};

use scheme::{Scheme, Tables};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    FiniteHorizon,
    Discounted,
    Ergodic,
    Exit,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::FiniteHorizon => "finite_horizon",
            Criterion::Discounted => "discounted",
            Criterion::Ergodic => "ergodic",
            Criterion::Exit => "exit",
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finite_horizon" => Ok(Criterion::FiniteHorizon),
            "discounted" => Ok(Criterion::Discounted),
            "ergodic" => Ok(Criterion::Ergodic),
            "exit" => Ok(Criterion::Exit),
            other => Err(Error::invalid(format!("unknown criterion `{other}`"))),
        }
    }
}

fn default_tolerance() -> f64 {
    1e-9
}

fn default_max_iters() -> usize {
    2_000_000
}

fn default_relaxation() -> f64 {
    0.9
}

fn default_time_slices() -> usize {
    101
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Explicit control candidates; overrides `controls_per_axis`.
    #[serde(default)]
    pub control_samples: Option<Vec<Vec<f64>>>,
    /// Lattice points per control axis (33 for scalar controls, 17 otherwise).
    #[serde(default)]
    pub controls_per_axis: Option<usize>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Pseudo-time step of relative value iteration as a fraction of the
    /// stability limit `1 / max rate`.
    #[serde(default = "default_relaxation")]
    pub relaxation: f64,
    /// Finite-horizon time step; defaults to 90% of the explicit limit.
    #[serde(default)]
    pub dt: Option<f64>,
    /// Backward-implicit time stepping for the finite horizon.
    #[serde(default)]
    pub implicit: bool,
    /// Stored time slices of finite-horizon fields.
    #[serde(default = "default_time_slices")]
    pub time_slices: usize,
    /// Golden-section steps polishing each lattice minimum (scalar controls).
    #[serde(default)]
    pub refine_iters: usize,
    /// Ergodic normalization point; the node nearest the origin by default.
    #[serde(default)]
    pub anchor: Option<Vec<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            control_samples: None,
            controls_per_axis: None,
            tolerance: default_tolerance(),
            max_iters: default_max_iters(),
            relaxation: default_relaxation(),
            dt: None,
            implicit: false,
            time_slices: default_time_slices(),
            refine_iters: 0,
            anchor: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be positive"));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::invalid("relaxation must lie in (0, 1]"));
        }
        if self.time_slices < 2 {
            return Err(Error::invalid("at least two time slices are needed"));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(Error::invalid("dt must be positive"));
            }
        }
        Ok(())
    }

    /// Candidate controls for the pointwise minimization.
    pub fn control_lattice(&self, problem: &ControlProblem) -> Result<Vec<Vec<f64>>> {
        let set = problem.controls();
        if let Some(samples) = &self.control_samples {
            if samples.is_empty() {
                return Err(Error::invalid("control_samples is empty"));
            }
            if let Some(z) = samples.iter().find(|z| z.len() != set.dim() || !set.contains(z)) {
                return Err(Error::invalid(format!("control sample {z:?} lies outside the control set")));
            }
            return Ok(samples.clone());
        }
        let per_axis = self
            .controls_per_axis
            .unwrap_or(if set.dim() == 1 { 33 } else { 17 });
        Ok(set.lattice(per_axis))
    }
}

/// `(V, ρ)` with `V = 0` at the anchor node.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicSolution {
    pub value: ValueField,
    pub rho: f64,
    pub anchor: usize,
}

/// Value field of any criterion; `rho` is set for ergodic problems.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub criterion: Criterion,
    pub value: ValueField,
    pub rho: Option<f64>,
}

impl Solution {
    /// The cost seen from `x0`: `ρ` for the ergodic criterion, the
    /// (initial-time) value at `x0` otherwise.
    pub fn cost_at(&self, x0: &[f64]) -> f64 {
        self.rho.unwrap_or_else(|| self.value.value_at(x0))
    }
}

impl From<ErgodicSolution> for Solution {
    fn from(e: ErgodicSolution) -> Self {
        Self {
            criterion: Criterion::Ergodic,
            value: e.value,
            rho: Some(e.rho),
        }
    }
}

/// Dispatches to the solver of `criterion`.
pub fn solve(problem: &ControlProblem, criterion: Criterion, grid: &Grid, cfg: &SolverConfig) -> Result<Solution> {
    let value = match criterion {
        Criterion::FiniteHorizon => solve_finite_horizon(problem, grid, cfg)?,
        Criterion::Discounted => solve_discounted(problem, grid, cfg)?,
        Criterion::Exit => solve_exit(problem, grid, cfg)?,
        Criterion::Ergodic => return Ok(solve_ergodic(problem, grid, cfg)?.into()),
    };
    Ok(Solution {
        criterion,
        value,
        rho: None,
    })
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Jacobi fixed-point iteration until the sup-norm update is at most `tol`.
fn fixed_point(
    scheme: &Scheme,
    solver: &'static str,
    cfg: &SolverConfig,
    mut v: Vec<f64>,
    update: impl Fn(usize, &[f64]) -> f64 + Sync,
) -> Result<(Vec<f64>, SolveStats)> {
    let mut next = v.clone();
    let mut residuals = Vec::new();
    for _ in 0..cfg.max_iters {
        scheme.sweep(&v, &mut next, |k| update(k, &v));
        let r = sup_diff(&v, &next);
        std::mem::swap(&mut v, &mut next);
        residuals.push(r);
        if !r.is_finite() {
            break;
        }
        if r <= cfg.tolerance {
            let iterations = residuals.len();
            return Ok((
                v,
                SolveStats {
                    iterations,
                    residuals,
                    dt_eff: 0.0,
                },
            ));
        }
    }
    Err(Error::NonConvergence { solver, residuals })
}

fn reflecting(grid: &Grid) -> Vec<bool> {
    vec![false; grid.len()]
}

struct Prepared<'a> {
    scheme: Scheme<'a>,
    tables: Tables,
}

fn prepare<'a>(problem: &'a ControlProblem, grid: &Grid, cfg: &SolverConfig, fixed: Vec<bool>, use_delta: bool) -> Result<Prepared<'a>> {
    cfg.validate()?;
    let scheme = Scheme::new(problem, grid, fixed, use_delta)?;
    let tables = scheme.lattice_tables(&cfg.control_lattice(problem)?);
    Ok(Prepared { scheme, tables })
}

fn dt_eff(scheme: &Scheme, tables: &Tables) -> f64 {
    let lam = scheme.max_rate(tables);
    if lam > 0.0 {
        1.0 / lam
    } else {
        f64::INFINITY
    }
}

// ---------------------------------------------------------------- discounted

fn discounted_with(scheme: &Scheme, tables: &Tables, alpha: f64, cfg: &SolverConfig, refine: usize) -> Result<ValueField> {
    let (v, mut stats) = fixed_point(scheme, "discounted", cfg, vec![0.0; scheme.len()], |k, v| {
        scheme.minimize(k, v, tables, refine, |c, s, lam, _| (c + s) / (alpha + lam)).0
    })?;
    stats.dt_eff = dt_eff(scheme, tables);
    let mut field = ValueField::new(scheme.grid.clone(), v, BoundaryKind::Reflecting)?;
    field.stats = stats;
    Ok(field)
}

pub fn solve_discounted(problem: &ControlProblem, grid: &Grid, cfg: &SolverConfig) -> Result<ValueField> {
    let alpha = problem.discount().ok_or_else(|| Error::invalid("problem has no discount rate"))?;
    let p = prepare(problem, grid, cfg, reflecting(grid), false)?;
    discounted_with(&p.scheme, &p.tables, alpha, cfg, cfg.refine_iters)
}

// ---------------------------------------------------------------------- exit

fn exit_setup(problem: &ControlProblem, grid: &Grid) -> Result<(Vec<bool>, Vec<f64>)> {
    let exit = problem.exit().ok_or_else(|| Error::invalid("problem has no exit data"))?;
    let dom = &exit.domain;
    for (i, a) in grid.axes().iter().enumerate() {
        let scale = (dom.upper()[i] - dom.lower()[i]).abs().max(1.0);
        if (a.lower - dom.lower()[i]).abs() > 1e-9 * scale || (a.upper - dom.upper()[i]).abs() > 1e-9 * scale {
            return Err(Error::invalid("the exit grid must span the closure of the exit domain"));
        }
    }
    let fixed: Vec<bool> = (0..grid.len()).map(|k| grid.is_boundary(k)).collect();
    let init = (0..grid.len())
        .map(|k| if fixed[k] { (exit.terminal)(&grid.point(k)) } else { 0.0 })
        .collect();
    Ok((fixed, init))
}

fn exit_with(scheme: &Scheme, tables: &Tables, init: Vec<f64>, cfg: &SolverConfig, refine: usize) -> Result<ValueField> {
    let (v, mut stats) = fixed_point(scheme, "exit", cfg, init, |k, v| {
        scheme.minimize(k, v, tables, refine, |c, s, lam, delta| (c + s) / (delta + lam)).0
    })?;
    stats.dt_eff = dt_eff(scheme, tables);
    let mut field = ValueField::new(scheme.grid.clone(), v, BoundaryKind::Dirichlet)?;
    field.stats = stats;
    Ok(field)
}

/// Exit problem on a grid spanning the closure of the exit domain; boundary
/// nodes carry the exit cost.
pub fn solve_exit(problem: &ControlProblem, grid: &Grid, cfg: &SolverConfig) -> Result<ValueField> {
    let (fixed, init) = exit_setup(problem, grid)?;
    let p = prepare(problem, grid, cfg, fixed, true)?;
    exit_with(&p.scheme, &p.tables, init, cfg, cfg.refine_iters)
}

// ------------------------------------------------------------------- ergodic

fn anchor_node(grid: &Grid, cfg: &SolverConfig) -> Result<usize> {
    match &cfg.anchor {
        Some(a) if a.len() != grid.dim() => Err(Error::invalid("anchor dimension mismatch")),
        Some(a) => Ok(grid.nearest(a)),
        None => Ok(grid.nearest(&vec![0.0; grid.dim()])),
    }
}

fn ergodic_with(scheme: &Scheme, tables: &Tables, cfg: &SolverConfig, refine: usize) -> Result<ErgodicSolution> {
    cfg.validate()?;
    let anchor = anchor_node(&scheme.grid, cfg)?;
    let dt = cfg.relaxation * dt_eff(scheme, tables);
    if !dt.is_finite() {
        return Err(Error::invalid("the ergodic chain has no transitions"));
    }
    let n = scheme.len();
    let mut v = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut residuals = Vec::new();
    for _ in 0..cfg.max_iters {
        scheme.sweep(&v, &mut w, |k| {
            let vk = v[k];
            vk + dt * scheme.minimize(k, &v, tables, refine, |c, s, lam, _| c + s - lam * vk).0
        });
        let (lo, hi) = v
            .iter()
            .zip(&w)
            .map(|(a, b)| (b - a) / dt)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), g| (lo.min(g), hi.max(g)));
        let rho = (w[anchor] - v[anchor]) / dt;
        let shift = w[anchor];
        for (vk, wk) in v.iter_mut().zip(&w) {
            *vk = wk - shift;
        }
        let span = hi - lo;
        residuals.push(span);
        if !span.is_finite() {
            break;
        }
        if span <= cfg.tolerance {
            let iterations = residuals.len();
            let mut value = ValueField::new(scheme.grid.clone(), v, BoundaryKind::Reflecting)?;
            value.stats = SolveStats {
                iterations,
                residuals,
                dt_eff: dt,
            };
            return Ok(ErgodicSolution { value, rho, anchor });
        }
    }
    Err(Error::NonConvergence {
        solver: "ergodic",
        residuals,
    })
}

/// Relative value iteration `W = V + Δt·min_ζ[c + Σ q (V(n) − V(k))]`,
/// `V ← W − W(anchor)`, stopped when the span of `(W − V)/Δt` is at most the
/// tolerance. `ρ` lies between the smallest and largest entry of that
/// quotient, so the span bounds its error.
pub fn solve_ergodic(problem: &ControlProblem, grid: &Grid, cfg: &SolverConfig) -> Result<ErgodicSolution> {
    let p = prepare(problem, grid, cfg, reflecting(grid), false)?;
    ergodic_with(&p.scheme, &p.tables, cfg, cfg.refine_iters)
}

// ------------------------------------------------------------ finite horizon

struct Clock {
    dt: f64,
    steps: usize,
    /// Steps between stored slices.
    stride: usize,
    slices: usize,
}

fn clock(horizon: f64, dt_max: f64, cfg: &SolverConfig) -> Result<Clock> {
    let requested = match cfg.dt {
        Some(dt) => {
            if !cfg.implicit && dt > dt_max * (1.0 + 1e-12) {
                return Err(Error::Cfl { dt, max_dt: dt_max });
            }
            dt
        }
        None => 0.9 * dt_max,
    };
    let requested = requested.min(horizon);
    let min_steps = ((horizon / requested) - 1e-9).ceil().max(1.0) as usize;
    let intervals = (cfg.time_slices - 1).min(min_steps);
    let stride = min_steps.div_ceil(intervals);
    let steps = stride * intervals;
    Ok(Clock {
        dt: horizon / steps as f64,
        steps,
        stride,
        slices: intervals + 1,
    })
}

/// Backward march from the terminal cost. `tables_at(t)` supplies the
/// control data of a step: `t` is the later end of the step for the explicit
/// scheme and the earlier end for the implicit one.
fn march<'t>(
    scheme: &Scheme,
    horizon: f64,
    clock: &Clock,
    cfg: &SolverConfig,
    refine: usize,
    tables_at: impl Fn(f64) -> std::borrow::Cow<'t, Tables>,
) -> Result<ValueField> {
    let problem = scheme.problem;
    let grid = &scheme.grid;
    let n = grid.len();
    let mut psi: Vec<f64> = (0..n)
        .map(|k| problem.terminal_cost(&grid.point(k)).unwrap_or(0.0))
        .collect();
    let mut store = vec![0.0; n * clock.slices];
    store[(clock.slices - 1) * n..].copy_from_slice(&psi);
    let mut next = psi.clone();
    let mut residuals = Vec::with_capacity(clock.steps);
    let dt = clock.dt;
    for s in (0..clock.steps).rev() {
        // explicit steps use the control at the time they start from
        let t = if cfg.implicit { s } else { s + 1 } as f64 * dt;
        let tables = tables_at(t);
        if cfg.implicit {
            let prev = psi.clone();
            let mut inner = 0;
            loop {
                scheme.sweep(&psi, &mut next, |k| {
                    scheme
                        .minimize(k, &psi, &tables, refine, |c, sum, lam, _| (prev[k] + dt * (c + sum)) / (1.0 + dt * lam))
                        .0
                });
                let r = sup_diff(&psi, &next);
                std::mem::swap(&mut psi, &mut next);
                inner += 1;
                if r <= cfg.tolerance {
                    break;
                }
                if inner >= cfg.max_iters || !r.is_finite() {
                    residuals.push(r);
                    return Err(Error::NonConvergence {
                        solver: "finite_horizon",
                        residuals,
                    });
                }
            }
            residuals.push(sup_diff(&prev, &psi));
        } else {
            scheme.sweep(&psi, &mut next, |k| {
                let pk = psi[k];
                pk + dt * scheme.minimize(k, &psi, &tables, refine, |c, sum, lam, _| c + sum - lam * pk).0
            });
            residuals.push(sup_diff(&psi, &next));
            std::mem::swap(&mut psi, &mut next);
        }
        if s % clock.stride == 0 {
            let i = s / clock.stride;
            store[i * n..(i + 1) * n].copy_from_slice(&psi);
        }
    }
    let time = Axis::new(0.0, horizon, clock.slices)?;
    let mut field = ValueField::with_time(grid.clone(), time, store)?;
    field.stats = SolveStats {
        iterations: clock.steps,
        residuals,
        dt_eff: dt,
    };
    Ok(field)
}

/// Backward Euler-in-time march of the finite-horizon equation. The
/// explicit scheme needs `dt ≤ 1 / max rate` (in one dimension this is
/// `h² / (2a + h|b|)`); a larger explicit `dt` is rejected.
pub fn solve_finite_horizon(problem: &ControlProblem, grid: &Grid, cfg: &SolverConfig) -> Result<ValueField> {
    let horizon = problem.horizon().ok_or_else(|| Error::invalid("problem has no horizon"))?;
    let p = prepare(problem, grid, cfg, reflecting(grid), false)?;
    let clock = clock(horizon, dt_eff(&p.scheme, &p.tables), cfg)?;
    march(&p.scheme, horizon, &clock, cfg, cfg.refine_iters, |_| std::borrow::Cow::Borrowed(&p.tables))
}

// ---------------------------------------------------------------- selectors

fn argmin_controls(scheme: &Scheme, tables: &Tables, v: &[f64], refine: usize) -> Vec<f64> {
    use rayon::prelude::*;
    let m = scheme.control_dim();
    let exit = scheme.use_delta;
    (0..scheme.len())
        .into_par_iter()
        .with_min_len(64)
        .flat_map_iter(|k| {
            let vk = v[k];
            let (_, choice) = scheme.minimize(k, v, tables, refine, |c, s, lam, delta| {
                let h = c + s - lam * vk;
                if exit {
                    h - delta * vk
                } else {
                    h
                }
            });
            let z = scheme.choice_control(k, tables, choice);
            debug_assert_eq!(z.len(), m);
            z
        })
        .collect()
}

/// Per-node argmin of the discrete Hamiltonian `c + Σ q (V(n) − V(k))`
/// (minus `δ V(k)` for exit problems). Ties go to the first lattice control.
/// The result interpolates by nearest node; time-dependent fields give a
/// policy over `time × space`.
pub fn extract_selector(problem: &ControlProblem, value: &ValueField, cfg: &SolverConfig) -> Result<GridPolicy> {
    let grid = value.space();
    let (fixed, use_delta) = match value.boundary() {
        BoundaryKind::Dirichlet => (exit_setup(problem, grid)?.0, true),
        _ => (reflecting(grid), false),
    };
    let p = prepare(problem, grid, cfg, fixed, use_delta)?;
    let controls = problem.controls().clone();
    match value.time() {
        None => {
            let z = argmin_controls(&p.scheme, &p.tables, value.initial(), cfg.refine_iters);
            let z = project_all(&controls, z);
            GridPolicy::new(grid.clone(), false, controls, z, Interpolation::Nearest)
        }
        Some(time) => {
            let mut z = Vec::with_capacity(grid.len() * time.count * controls.dim());
            for i in 0..time.count {
                z.extend(argmin_controls(&p.scheme, &p.tables, value.slice(i), cfg.refine_iters));
            }
            let z = project_all(&controls, z);
            GridPolicy::new(grid.prepend(*time), true, controls, z, Interpolation::Nearest)
        }
    }
}

fn project_all(controls: &crate::dynamics::ControlSet, mut z: Vec<f64>) -> Vec<f64> {
    for chunk in z.chunks_mut(controls.dim()) {
        controls.project_in_place(chunk);
    }
    z
}

// -------------------------------------------------------- policy evaluation

fn node_controls(grid: &Grid, policy: &dyn Policy, t: f64, m: usize) -> Vec<f64> {
    use rayon::prelude::*;
    (0..grid.len())
        .into_par_iter()
        .with_min_len(64)
        .flat_map_iter(|k| {
            let mut z = vec![0.0; m];
            policy.act(t, &grid.point(k), &mut z);
            z
        })
        .collect()
}

/// Cost of a fixed policy under `criterion`: the linear version of the
/// corresponding solver with the minimization replaced by `ζ = v(t, x_k)`.
pub fn evaluate_policy_pde(
    problem: &ControlProblem,
    policy: &dyn Policy,
    criterion: Criterion,
    grid: &Grid,
    cfg: &SolverConfig,
) -> Result<Solution> {
    cfg.validate()?;
    let m = problem.control_dim();
    if policy.control_dim() != m {
        return Err(Error::invalid("policy and problem control dimensions differ"));
    }
    let (fixed, init, use_delta) = match criterion {
        Criterion::Exit => {
            let (f, i) = exit_setup(problem, grid)?;
            (f, i, true)
        }
        _ => (reflecting(grid), vec![0.0; grid.len()], false),
    };
    let scheme = Scheme::new(problem, grid, fixed, use_delta)?;
    let stationary = scheme.policy_tables(node_controls(grid, policy, 0.0, m));
    let value = match criterion {
        Criterion::Discounted => {
            let alpha = problem.discount().ok_or_else(|| Error::invalid("problem has no discount rate"))?;
            discounted_with(&scheme, &stationary, alpha, cfg, 0)?
        }
        Criterion::Exit => exit_with(&scheme, &stationary, init, cfg, 0)?,
        Criterion::Ergodic => return Ok(ergodic_with(&scheme, &stationary, cfg, 0)?.into()),
        Criterion::FiniteHorizon => {
            let horizon = problem.horizon().ok_or_else(|| Error::invalid("problem has no horizon"))?;
            // the explicit limit must hold for every control the policy may use
            let lattice = scheme.lattice_tables(&cfg.control_lattice(problem)?);
            let dt_max = dt_eff(&scheme, &lattice).min(dt_eff(&scheme, &stationary));
            let clock = clock(horizon, dt_max, cfg)?;
            march(&scheme, horizon, &clock, cfg, 0, |t| {
                std::borrow::Cow::Owned(scheme.policy_tables(node_controls(grid, policy, t, m)))
            })?
        }
    };
    Ok(Solution {
        criterion,
        value,
        rho: None,
    })
}

// ------------------------------------------------------------- Bellman map

/// One application of a criterion's Bellman operator on a fixed grid, for
/// inspecting the discrete scheme directly.
pub struct BellmanMap<'a> {
    criterion: Criterion,
    prepared: Prepared<'a>,
    alpha: f64,
    dt: f64,
    refine: usize,
}

impl<'a> BellmanMap<'a> {
    pub fn new(problem: &'a ControlProblem, criterion: Criterion, grid: &Grid, cfg: &SolverConfig) -> Result<Self> {
        let (fixed, use_delta) = match criterion {
            Criterion::Exit => (exit_setup(problem, grid)?.0, true),
            _ => (reflecting(grid), false),
        };
        let prepared = prepare(problem, grid, cfg, fixed, use_delta)?;
        let alpha = match criterion {
            Criterion::Discounted => problem.discount().ok_or_else(|| Error::invalid("problem has no discount rate"))?,
            _ => 0.0,
        };
        let dt = cfg.relaxation * dt_eff(&prepared.scheme, &prepared.tables);
        Ok(Self {
            criterion,
            prepared,
            alpha,
            dt,
            refine: cfg.refine_iters,
        })
    }

    /// Effective pseudo-time step `1 / max rate`.
    pub fn dt_eff(&self) -> f64 {
        dt_eff(&self.prepared.scheme, &self.prepared.tables)
    }

    /// `T V`. For the finite horizon and ergodic criteria this is one
    /// explicit step of length `relaxation · dt_eff`, before normalization.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let s = &self.prepared.scheme;
        if v.len() != s.len() {
            return Err(Error::invalid("value vector length differs from the grid"));
        }
        let t = &self.prepared.tables;
        let mut out = vec![0.0; v.len()];
        let (alpha, dt, refine) = (self.alpha, self.dt, self.refine);
        match self.criterion {
            Criterion::Discounted => s.sweep(v, &mut out, |k| s.minimize(k, v, t, refine, |c, sum, lam, _| (c + sum) / (alpha + lam)).0),
            Criterion::Exit => s.sweep(v, &mut out, |k| s.minimize(k, v, t, refine, |c, sum, lam, dl| (c + sum) / (dl + lam)).0),
            Criterion::FiniteHorizon | Criterion::Ergodic => s.sweep(v, &mut out, |k| {
                let vk = v[k];
                vk + dt * s.minimize(k, v, t, refine, |c, sum, lam, _| c + sum - lam * vk).0
            }),
        }
        Ok(out)
    }
}
