//! Euler–Maruyama simulation of the controlled SDE and Monte Carlo cost
//! estimators.
//!
//! Every path owns a ChaCha8 stream selected by `(seed, stream = path)`, so a
//! path's noise depends only on its index. Paths run in parallel and their
//! results are reduced in path order, which makes every estimate bit-identical
//! across thread counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{BoxSet, ControlProblem};
use crate::error::{Error, Result};
use crate::policy::Policy;

/// Key mixed into the seed of the uniform stream (policy sampling and
/// bridge tests) so it never coincides with the Gaussian stream.
const UNIFORM_KEY: u64 = 0x9e37_79b9_7f4a_7c15;

fn default_blowup() -> f64 {
    1e6
}

fn default_burn_in() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    /// Horizon for trajectories and ergodic averages, truncation time for
    /// discounted and exit costs.
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
    #[serde(default = "default_blowup")]
    pub blowup: f64,
    /// Fraction of the horizon discarded before ergodic averaging.
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    /// Bound on `|c|` used for the discounted tail; the largest observed
    /// `|c|` is used when absent.
    #[serde(default)]
    pub cost_bound: Option<f64>,
    /// Brownian-bridge test for exits between grid times.
    #[serde(default)]
    pub bridge: bool,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, paths: usize, seed: u64) -> Self {
        Self {
            dt,
            horizon,
            paths,
            seed,
            antithetic: false,
            blowup: default_blowup(),
            burn_in: default_burn_in(),
            cost_bound: None,
            bridge: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::invalid("dt must be positive"));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::invalid("horizon must be positive"));
        }
        if self.paths == 0 {
            return Err(Error::invalid("at least one path is required"));
        }
        if self.antithetic && self.paths % 2 == 1 {
            return Err(Error::invalid("antithetic sampling needs an even path count"));
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::invalid("burn-in fraction must lie in [0, 1)"));
        }
        if !(self.blowup > 0.0) {
            return Err(Error::invalid("blow-up guard must be positive"));
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        ((self.horizon / self.dt) - 1e-9).ceil().max(1.0) as usize
    }

    fn step_length(&self, k: usize) -> f64 {
        self.dt.min(self.horizon - k as f64 * self.dt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `d` entries per recorded time.
    pub states: Vec<f64>,
    /// `m` entries per step; the control applied on `[times[k], times[k+1])`.
    pub controls: Vec<f64>,
    pub exit_time: Option<f64>,
    pub diverged: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        let d = self.states.len() / self.times.len();
        &self.states[k * d..(k + 1) * d]
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// CSV with columns `t, x1..xd, u1..um`; the final row repeats the last control.
    pub fn to_csv(&self) -> String {
        let n = self.len();
        let d = self.states.len() / n;
        let m = if n > 1 { self.controls.len() / (n - 1) } else { 0 };
        let mut s = String::from("t");
        (1..=d).for_each(|i| s.push_str(&format!(",x{i}")));
        (1..=m).for_each(|j| s.push_str(&format!(",u{j}")));
        s.push('\n');
        for k in 0..n {
            s.push_str(&self.times[k].to_string());
            for v in self.state(k) {
                s.push_str(&format!(",{v}"));
            }
            let c = k.min(n.saturating_sub(2));
            for v in self.controls.get(c * m..(c + 1) * m).unwrap_or(&[]) {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub paths: usize,
    pub seed: u64,
    pub diverged: usize,
    /// Paths that never left the exit domain (exit estimates only).
    pub unexited: usize,
    /// Bound on the cost omitted by truncation (discounted estimates only).
    pub tail_bound: f64,
    /// First-window minus second-window average (ergodic estimates only).
    pub window_gap: Option<f64>,
    pub nonstationary: bool,
    pub unreliable: bool,
}

/// How a single path ended.
struct PathEnd {
    diverged: bool,
    exit: Option<(f64, Vec<f64>)>,
    last: Vec<f64>,
}

/// Signed distance to the boundary of a box, positive inside.
fn inner_distance(domain: &BoxSet, x: &[f64]) -> f64 {
    x.iter()
        .zip(domain.lower().iter().zip(domain.upper()))
        .map(|(&v, (&l, &u))| (v - l).min(u - v))
        .fold(f64::INFINITY, f64::min)
}

struct Engine<'a> {
    problem: &'a ControlProblem,
    policy: &'a dyn Policy,
    cfg: &'a SimConfig,
    watch_exit: bool,
}

impl<'a> Engine<'a> {
    fn new(problem: &'a ControlProblem, policy: &'a dyn Policy, x0: &[f64], cfg: &'a SimConfig, watch_exit: bool) -> Result<Self> {
        cfg.validate()?;
        if x0.len() != problem.dim() {
            return Err(Error::invalid(format!("x0 has {} entries, state dimension is {}", x0.len(), problem.dim())));
        }
        if policy.control_dim() != problem.control_dim() {
            return Err(Error::invalid("policy and problem control dimensions differ"));
        }
        Ok(Self {
            problem,
            policy,
            cfg,
            watch_exit,
        })
    }

    /// Walks one path; `on_step(t_k, x_k, ζ_k, length)` sees every step, the
    /// final one possibly cut short at the exit time.
    fn walk(&self, x0: &[f64], path: usize, mut on_step: impl FnMut(f64, &[f64], &[f64], f64)) -> PathEnd {
        let cfg = self.cfg;
        let d = self.problem.dim();
        let m = self.problem.control_dim();
        let (stream, sign) = if cfg.antithetic { ((path / 2) as u64, if path % 2 == 1 { -1.0 } else { 1.0 }) } else { (path as u64, 1.0) };
        let mut normals = ChaCha8Rng::seed_from_u64(cfg.seed);
        normals.set_stream(stream);
        let mut uniforms = ChaCha8Rng::seed_from_u64(cfg.seed ^ UNIFORM_KEY);
        uniforms.set_stream(stream);

        let domain = if self.watch_exit { self.problem.exit().map(|e| &e.domain) } else { None };
        let randomized = self.policy.is_randomized();
        let mut x = x0.to_vec();
        let mut next = vec![0.0; d];
        let mut z = vec![0.0; m];
        let mut b = vec![0.0; d];
        let mut s = vec![0.0; d * d];
        let mut xi = vec![0.0; d];

        if let Some(dom) = domain {
            if !dom.contains_open(&x) {
                return PathEnd {
                    diverged: false,
                    exit: Some((0.0, x.clone())),
                    last: x,
                };
            }
        }

        for k in 0..cfg.steps() {
            let t = k as f64 * cfg.dt;
            let h = cfg.step_length(k);
            if randomized {
                let u: f64 = uniforms.random();
                self.policy.act_sampled(t, &x, u, &mut z);
            } else {
                self.policy.act(t, &x, &mut z);
            }
            self.problem.drift_into(&x, &z, &mut b);
            self.problem.sigma_into(&x, &mut s);
            for v in xi.iter_mut() {
                let n: f64 = normals.sample(StandardNormal);
                *v = sign * n;
            }
            let sq = h.sqrt();
            for i in 0..d {
                let noise: f64 = (0..d).map(|j| s[i * d + j] * xi[j]).sum();
                next[i] = x[i] + b[i] * h + noise * sq;
            }

            if let Some(dom) = domain {
                let before = inner_distance(dom, &x);
                let after = inner_distance(dom, &next);
                if after <= 0.0 {
                    let theta = (before / (before - after)).clamp(0.0, 1.0);
                    let hit: Vec<f64> = x.iter().zip(&next).map(|(a, c)| a + theta * (c - a)).collect();
                    on_step(t, &x, &z, theta * h);
                    return PathEnd {
                        diverged: false,
                        exit: Some((t + theta * h, hit.clone())),
                        last: hit,
                    };
                }
                if cfg.bridge {
                    if let Some(hit) = self.bridge_exit(dom, &x, &next, &s, h, &mut uniforms) {
                        on_step(t, &x, &z, 0.5 * h);
                        return PathEnd {
                            diverged: false,
                            exit: Some((t + 0.5 * h, hit.clone())),
                            last: hit,
                        };
                    }
                }
            }

            on_step(t, &x, &z, h);
            std::mem::swap(&mut x, &mut next);
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() || norm > cfg.blowup {
                return PathEnd {
                    diverged: true,
                    exit: None,
                    last: x,
                };
            }
        }
        PathEnd {
            diverged: false,
            exit: None,
            last: x,
        }
    }

    /// Probability that the Brownian bridge between two interior points
    /// touched a face, treating faces independently with the frozen local
    /// variance. Returns the face point hit, if any.
    fn bridge_exit(&self, dom: &BoxSet, x: &[f64], next: &[f64], s: &[f64], h: f64, uniforms: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        let d = x.len();
        let mut survive = 1.0;
        let mut worst: Option<(usize, f64, f64)> = None;
        for i in 0..d {
            let var: f64 = (0..d).map(|j| s[i * d + j] * s[i * d + j]).sum::<f64>() * h;
            if var <= 0.0 {
                continue;
            }
            for (face, dist_a, dist_b) in [
                (dom.lower()[i], x[i] - dom.lower()[i], next[i] - dom.lower()[i]),
                (dom.upper()[i], dom.upper()[i] - x[i], dom.upper()[i] - next[i]),
            ] {
                let p = (-2.0 * dist_a * dist_b / var).exp();
                survive *= 1.0 - p;
                if worst.is_none_or(|w| p > w.2) {
                    worst = Some((i, face, p));
                }
            }
        }
        let u: f64 = uniforms.random();
        if u < 1.0 - survive {
            let (i, face, _) = worst?;
            let mut hit: Vec<f64> = x.iter().zip(next).map(|(a, b)| 0.5 * (a + b)).collect();
            hit[i] = face;
            Some(hit)
        } else {
            None
        }
    }
}

/// Simulates path 0 and records the whole trajectory.
pub fn simulate(problem: &ControlProblem, policy: &dyn Policy, x0: &[f64], cfg: &SimConfig) -> Result<Trajectory> {
    simulate_path(problem, policy, x0, cfg, 0)
}

/// Simulates the path with index `path`; its noise is the same stream the
/// estimators use for that index.
pub fn simulate_path(problem: &ControlProblem, policy: &dyn Policy, x0: &[f64], cfg: &SimConfig, path: usize) -> Result<Trajectory> {
    let engine = Engine::new(problem, policy, x0, cfg, true)?;
    let mut times = vec![0.0];
    let mut states = Vec::new();
    let mut controls = Vec::new();
    let end = engine.walk(x0, path, |t, x, z, h| {
        states.extend_from_slice(x);
        controls.extend_from_slice(z);
        times.push(t + h);
    });
    if states.is_empty() {
        times.clear();
        times.push(0.0);
    }
    states.extend_from_slice(&end.last);
    Ok(Trajectory {
        times,
        states,
        controls,
        exit_time: end.exit.map(|e| e.0),
        diverged: end.diverged,
    })
}

/// States at the horizon, one per path (diverged paths are dropped).
pub fn terminal_states(problem: &ControlProblem, policy: &dyn Policy, x0: &[f64], cfg: &SimConfig) -> Result<Vec<Vec<f64>>> {
    let engine = Engine::new(problem, policy, x0, cfg, false)?;
    let ends: Vec<PathEnd> = (0..cfg.paths).into_par_iter().map(|p| engine.walk(x0, p, |_, _, _, _| {})).collect();
    Ok(ends.into_iter().filter(|e| !e.diverged).map(|e| e.last).collect())
}

/// Per-path sample plus bookkeeping.
struct Sample {
    value: f64,
    aux: f64,
    diverged: bool,
    unexited: bool,
    max_cost: f64,
}

fn run_paths(engine: &Engine, f: impl Fn(&Engine, usize) -> Sample + Sync) -> Vec<Sample> {
    (0..engine.cfg.paths).into_par_iter().map(|p| f(engine, p)).collect()
}

/// Mean and standard error over kept samples; antithetic pairs are averaged first.
fn summarize(samples: &[Sample], antithetic: bool, pick: impl Fn(&Sample) -> f64) -> (f64, f64, usize) {
    let groups: Vec<f64> = if antithetic {
        samples
            .chunks(2)
            .filter(|c| c.iter().all(|s| !s.diverged))
            .map(|c| 0.5 * (pick(&c[0]) + pick(&c[1])))
            .collect()
    } else {
        samples.iter().filter(|s| !s.diverged).map(&pick).collect()
    };
    let n = groups.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = groups.iter().sum::<f64>() / n as f64;
    let se = if n > 1 {
        let var = groups.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    (mean, se, n)
}

fn finish(samples: &[Sample], cfg: &SimConfig) -> CostEstimate {
    let (mean, std_error, _) = summarize(samples, cfg.antithetic, |s| s.value);
    let diverged = samples.iter().filter(|s| s.diverged).count();
    let unexited = samples.iter().filter(|s| s.unexited).count();
    let limit = 0.01 * cfg.paths as f64;
    CostEstimate {
        mean,
        std_error,
        paths: cfg.paths,
        seed: cfg.seed,
        diverged,
        unexited,
        tail_bound: 0.0,
        window_gap: None,
        nonstationary: false,
        unreliable: diverged as f64 > limit || unexited as f64 > limit || !mean.is_finite(),
    }
}

/// `E[∫₀ᵀ c dt + c_T(X_T)]` by a left-endpoint Riemann sum.
pub fn estimate_finite_horizon(problem: &ControlProblem, policy: &dyn Policy, x0: &[f64], cfg: &SimConfig) -> Result<CostEstimate> {
    let horizon = problem.horizon().ok_or_else(|| Error::invalid("problem has no horizon"))?;
    let mut cfg = cfg.clone();
    cfg.horizon = horizon;
    let engine = Engine::new(problem, policy, x0, &cfg, false)?;
    let samples = run_paths(&engine, |e, p| {
        let mut acc = 0.0;
        let end = e.walk(x0, p, |_, x, z, h| acc += problem.running_cost(x, z) * h);
        let terminal = problem.terminal_cost(&end.last).unwrap_or(0.0);
        Sample {
            value: acc + terminal,
            aux: 0.0,
            diverged: end.diverged,
            unexited: false,
            max_cost: 0.0,
        }
    });
    Ok(finish(&samples, &cfg))
}

/// `E[∫₀^∞ e^{−αt} c dt]` truncated at `cfg.horizon`. Each step integrates
/// the discount factor exactly over the step, and the tail beyond the
/// truncation time is bounded by `e^{−αT} ‖c‖ / α`.
pub fn estimate_discounted(problem: &ControlProblem, policy: &dyn Policy, x0: &[f64], cfg: &SimConfig) -> Result<CostEstimate> {
    let alpha = problem.discount().ok_or_else(|| Error::invalid("problem has no discount rate"))?;
    let engine = Engine::new(problem, policy, x0, cfg, false)?;
    let samples = run_paths(&engine, |e, p| {
        let mut acc = 0.0;
        let mut max_cost: f64 = 0.0;
        let end = e.walk(x0, p, |t, x, z, h| {
            let c = problem.running_cost(x, z);
            max_cost = max_cost.max(c.abs());
            acc += c * (-alpha * t).exp() * (-(-alpha * h).exp_m1()) / alpha;
        });
        Sample {
            value: acc,
            aux: 0.0,
            diverged: end.diverged,
            unexited: false,
            max_cost,
        }
    });
    let mut est = finish(&samples, cfg);
    let bound = cfg
        .cost_bound
        .unwrap_or_else(|| samples.iter().map(|s| s.max_cost).fold(0.0, f64::max));
    est.tail_bound = (-alpha * cfg.horizon).exp() * bound / alpha;
    Ok(est)
}

/// Long-run average cost after burn-in, with a first-half versus second-half
/// stationarity check.
pub fn estimate_ergodic(problem: &ControlProblem, policy: &dyn Policy, x0: &[f64], cfg: &SimConfig) -> Result<CostEstimate> {
    let engine = Engine::new(problem, policy, x0, cfg, false)?;
    let start = cfg.burn_in * cfg.horizon;
    let mid = 0.5 * (start + cfg.horizon);
    let samples = run_paths(&engine, |e, p| {
        let (mut first, mut second) = (0.0, 0.0);
        let (mut len1, mut len2) = (0.0, 0.0);
        let end = e.walk(x0, p, |t, x, z, h| {
            if t < start {
                return;
            }
            let c = problem.running_cost(x, z);
            if t < mid {
                first += c * h;
                len1 += h;
            } else {
                second += c * h;
                len2 += h;
            }
        });
        let total = len1 + len2;
        let avg = if total > 0.0 { (first + second) / total } else { 0.0 };
        let gap = if len1 > 0.0 && len2 > 0.0 { first / len1 - second / len2 } else { 0.0 };
        Sample {
            value: avg,
            aux: gap,
            diverged: end.diverged,
            unexited: false,
            max_cost: 0.0,
        }
    });
    let mut est = finish(&samples, cfg);
    let (gap, gap_se, _) = summarize(&samples, cfg.antithetic, |s| s.aux);
    est.window_gap = Some(gap);
    est.nonstationary = gap.abs() > 5.0 * gap_se + 1e-12 * est.mean.abs().max(1.0);
    Ok(est)
}

/// `E[∫₀^τ Λ_t c dt + Λ_τ c_e(X_τ)]` with `Λ_t = exp(−∫₀ᵗ δ)`. Paths still
/// inside at the truncation time contribute their accumulated running cost
/// and are counted as unexited.
pub fn estimate_exit(problem: &ControlProblem, policy: &dyn Policy, x0: &[f64], cfg: &SimConfig) -> Result<CostEstimate> {
    let exit = problem.exit().ok_or_else(|| Error::invalid("problem has no exit data"))?;
    if !exit.domain.contains_open(x0) {
        return Err(Error::invalid("x0 must lie inside the exit domain"));
    }
    let engine = Engine::new(problem, policy, x0, cfg, true)?;
    let samples = run_paths(&engine, |e, p| {
        let mut acc = 0.0;
        let mut lambda = 1.0;
        let end = e.walk(x0, p, |_, x, z, h| {
            let c = problem.running_cost(x, z);
            let delta = (exit.discount)(x, z);
            let weight = if delta == 0.0 { h } else { -(-delta * h).exp_m1() / delta };
            acc += lambda * c * weight;
            lambda *= (-delta * h).exp();
        });
        let (value, unexited) = match &end.exit {
            Some((_, hit)) => (acc + lambda * (exit.terminal)(hit), false),
            None => (acc, !end.diverged),
        };
        Sample {
            value,
            aux: 0.0,
            diverged: end.diverged,
            unexited,
            max_cost: 0.0,
        }
    });
    Ok(finish(&samples, cfg))
}
