//! Markov-chain approximation of the controlled generator on a grid.
//!
//! For node `k` and control `ζ` the chain jumps to neighbour `n` at rate
//! `q(k→n, ζ) ≥ 0`. Drift enters by upwinding (`b⁺/h` forward, `b⁻/h`
//! backward); diffusion by centred rates `a_ii/h²`; cross terms by the
//! diagonal stencil, which moves `|a_ij|/(h_i h_j)` from the axial rates onto
//! the matching diagonal. Transitions to nodes outside the box are dropped.

use rayon::prelude::*;

use crate::dynamics::ControlProblem;
use crate::error::{Error, Result};
use crate::grid::Grid;

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// What the fixed control set looks like at a node.
#[derive(Clone, Copy)]
pub(crate) enum ControlLayout {
    /// Every node shares the lattice.
    Shared,
    /// One control per node (policy evaluation).
    PerNode,
}

/// Control-dependent data on a finite control set.
#[derive(Clone)]
pub(crate) struct Tables {
    pub layout: ControlLayout,
    /// Candidate count per node.
    pub width: usize,
    /// `m` entries per candidate (per node and candidate for `PerNode`).
    pub controls: Vec<f64>,
    pub cost: Vec<f64>,
    pub drift: Vec<f64>,
    /// Exit discount rate per entry; empty when unused.
    pub delta: Vec<f64>,
}

impl Tables {
    pub fn control(&self, k: usize, j: usize, m: usize) -> &[f64] {
        let idx = match self.layout {
            ControlLayout::Shared => j,
            ControlLayout::PerNode => k * self.width + j,
        };
        &self.controls[idx * m..(idx + 1) * m]
    }
}

/// The chosen control at a node: a lattice entry or a refined value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Choice {
    Lattice(usize),
    Refined(f64),
}

pub(crate) struct Scheme<'a> {
    pub problem: &'a ControlProblem,
    pub grid: Grid,
    d: usize,
    m: usize,
    /// Inverse spacing per axis (zero for degenerate axes).
    inv_h: Vec<f64>,
    /// `(minus, plus)` neighbour per node and axis.
    axial: Vec<[Option<usize>; 2]>,
    /// Flattened diffusion transitions, `diff_start[k]..diff_start[k+1]`.
    diff_start: Vec<usize>,
    diff_to: Vec<usize>,
    diff_rate: Vec<f64>,
    diff_total: Vec<f64>,
    /// Nodes with prescribed values (exit problems).
    pub fixed: Vec<bool>,
    pub use_delta: bool,
}

impl<'a> Scheme<'a> {
    pub fn new(problem: &'a ControlProblem, grid: &Grid, fixed: Vec<bool>, use_delta: bool) -> Result<Self> {
        let d = grid.dim();
        if d != problem.dim() {
            return Err(Error::invalid(format!(
                "grid dimension {d} differs from the state dimension {}",
                problem.dim()
            )));
        }
        let n = grid.len();
        let strides = grid.strides();
        let inv_h: Vec<f64> = (0..d)
            .map(|i| if grid.axis(i).count > 1 { 1.0 / grid.spacing(i) } else { 0.0 })
            .collect();
        let mut axial = Vec::with_capacity(n * d);
        for k in 0..n {
            for i in 0..d {
                axial.push([grid.neighbor(k, i, -1), grid.neighbor(k, i, 1)]);
            }
        }

        let mut diff_start = Vec::with_capacity(n + 1);
        let mut diff_to = Vec::new();
        let mut diff_rate = Vec::new();
        let mut diff_total = Vec::with_capacity(n);
        let mut x = vec![0.0; d];
        for k in 0..n {
            diff_start.push(diff_to.len());
            if fixed[k] {
                diff_total.push(0.0);
                continue;
            }
            grid.point_into(k, &mut x);
            let a = problem.diffusion_matrix(&x);
            let mut total = 0.0;
            let mut push = |to: Option<usize>, rate: f64, total: &mut f64| {
                if let Some(to) = to {
                    if rate != 0.0 {
                        diff_to.push(to);
                        diff_rate.push(rate);
                        *total += rate;
                    }
                }
            };
            for i in 0..d {
                if inv_h[i] == 0.0 {
                    continue;
                }
                let mut w = a[i * d + i] * inv_h[i] * inv_h[i];
                for j in 0..d {
                    if j != i && inv_h[j] != 0.0 {
                        w -= 0.5 * (a[i * d + j] + a[j * d + i]).abs() * inv_h[i] * inv_h[j];
                    }
                }
                if w < -1e-12 * a[i * d + i].abs().max(1.0) * inv_h[i] * inv_h[i] {
                    return Err(Error::NonMonotone {
                        node: grid.unravel(k),
                        axis: i,
                        weight: w,
                    });
                }
                let w = w.max(0.0);
                let [lo, hi] = axial[k * d + i];
                push(lo, w, &mut total);
                push(hi, w, &mut total);
            }
            for i in 0..d {
                for j in i + 1..d {
                    if inv_h[i] == 0.0 || inv_h[j] == 0.0 {
                        continue;
                    }
                    let aij = 0.5 * (a[i * d + j] + a[j * d + i]);
                    if aij == 0.0 {
                        continue;
                    }
                    let w = aij.abs() * inv_h[i] * inv_h[j];
                    let idx = grid.unravel(k);
                    let diag = |si: i64, sj: i64| -> Option<usize> {
                        let ni = idx[i] as i64 + si;
                        let nj = idx[j] as i64 + sj;
                        if ni < 0 || nj < 0 || ni >= grid.axis(i).count as i64 || nj >= grid.axis(j).count as i64 {
                            return None;
                        }
                        Some((k as i64 + si * strides[i] as i64 + sj * strides[j] as i64) as usize)
                    };
                    let (p, q) = if aij > 0.0 { ((1, 1), (-1, -1)) } else { ((1, -1), (-1, 1)) };
                    push(diag(p.0, p.1), w, &mut total);
                    push(diag(q.0, q.1), w, &mut total);
                }
            }
            diff_total.push(total);
        }
        diff_start.push(diff_to.len());

        Ok(Self {
            problem,
            grid: grid.clone(),
            d,
            m: problem.control_dim(),
            inv_h,
            axial,
            diff_start,
            diff_to,
            diff_rate,
            diff_total,
            fixed,
            use_delta,
        })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn control_dim(&self) -> usize {
        self.m
    }

    fn eval_tables(&self, layout: ControlLayout, width: usize, controls: Vec<f64>, control_at: impl Fn(usize, usize) -> usize + Sync) -> Tables {
        let n = self.len();
        let (d, m) = (self.d, self.m);
        let exit = self.problem.exit();
        let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|k| {
                let x = self.grid.point(k);
                let mut cost = Vec::with_capacity(width);
                let mut drift = vec![0.0; width * d];
                let mut delta = Vec::new();
                for j in 0..width {
                    let c = control_at(k, j);
                    let z = &controls[c * m..(c + 1) * m];
                    cost.push(self.problem.running_cost(&x, z));
                    self.problem.drift_into(&x, z, &mut drift[j * d..(j + 1) * d]);
                    if self.use_delta {
                        delta.push(exit.map_or(0.0, |e| (e.discount)(&x, z)));
                    }
                }
                (cost, drift, delta)
            })
            .collect();
        let mut t = Tables {
            layout,
            width,
            controls,
            cost: Vec::with_capacity(n * width),
            drift: Vec::with_capacity(n * width * d),
            delta: Vec::new(),
        };
        for (c, b, dl) in rows {
            t.cost.extend(c);
            t.drift.extend(b);
            t.delta.extend(dl);
        }
        t
    }

    /// Tables over a control lattice shared by all nodes.
    pub fn lattice_tables(&self, lattice: &[Vec<f64>]) -> Tables {
        let flat: Vec<f64> = lattice.iter().flatten().copied().collect();
        self.eval_tables(ControlLayout::Shared, lattice.len(), flat, |_, j| j)
    }

    /// Tables for one fixed control per node.
    pub fn policy_tables(&self, controls: Vec<f64>) -> Tables {
        self.eval_tables(ControlLayout::PerNode, 1, controls, |k, _| k)
    }

    /// Largest total jump rate over nodes and candidates (discount excluded).
    pub fn max_rate(&self, t: &Tables) -> f64 {
        let mut best: f64 = 0.0;
        for k in 0..self.len() {
            if self.fixed[k] {
                continue;
            }
            for j in 0..t.width {
                let (_, lam) = self.drift_terms(k, &t.drift[(k * t.width + j) * self.d..][..self.d], &[]);
                best = best.max(self.diff_total[k] + lam);
            }
        }
        best
    }

    /// `(Σ q V(n), Σ q)` of the diffusion part.
    #[inline]
    pub fn diffusion_terms(&self, k: usize, v: &[f64]) -> (f64, f64) {
        let (s, e) = (self.diff_start[k], self.diff_start[k + 1]);
        let mut acc = 0.0;
        for (to, r) in self.diff_to[s..e].iter().zip(&self.diff_rate[s..e]) {
            acc += r * v[*to];
        }
        (acc, self.diff_total[k])
    }

    /// `(Σ q V(n), Σ q)` of the drift part; `v` may be empty to get rates only.
    #[inline]
    pub fn drift_terms(&self, k: usize, b: &[f64], v: &[f64]) -> (f64, f64) {
        let mut s = 0.0;
        let mut lam = 0.0;
        for i in 0..self.d {
            let bi = b[i];
            if bi == 0.0 || self.inv_h[i] == 0.0 {
                continue;
            }
            let [lo, hi] = self.axial[k * self.d + i];
            let (to, r) = if bi > 0.0 { (hi, bi * self.inv_h[i]) } else { (lo, -bi * self.inv_h[i]) };
            if let Some(to) = to {
                lam += r;
                if !v.is_empty() {
                    s += r * v[to];
                }
            }
        }
        (s, lam)
    }

    /// Minimizes `obj(c, S, λ, δ)` over the candidates at node `k`, where
    /// `S = Σ q V(n)` and `λ = Σ q`. The first minimizer in candidate order
    /// wins ties. With `refine > 0` and a scalar control, every local lattice
    /// minimum is polished by golden-section search on its two neighbouring
    /// cells.
    pub fn minimize(&self, k: usize, v: &[f64], t: &Tables, refine: usize, obj: impl Fn(f64, f64, f64, f64) -> f64) -> (f64, Choice) {
        let (sd, ld) = self.diffusion_terms(k, v);
        let d = self.d;
        let w = t.width;
        let eval = |j: usize| {
            let row = k * w + j;
            let (sb, lb) = self.drift_terms(k, &t.drift[row * d..(row + 1) * d], v);
            let delta = if self.use_delta { t.delta[row] } else { 0.0 };
            obj(t.cost[row], sd + sb, ld + lb, delta)
        };
        if refine == 0 || self.m != 1 || w < 3 {
            let mut best = (f64::INFINITY, Choice::Lattice(0));
            for j in 0..w {
                let val = eval(j);
                if val < best.0 {
                    best = (val, Choice::Lattice(j));
                }
            }
            return best;
        }

        let vals: Vec<f64> = (0..w).map(eval).collect();
        let mut best = (f64::INFINITY, Choice::Lattice(0));
        for (j, &val) in vals.iter().enumerate() {
            if val < best.0 {
                best = (val, Choice::Lattice(j));
            }
        }
        let x = self.grid.point(k);
        let exit = self.problem.exit();
        let mut b = vec![0.0; d];
        let mut off = |z: f64| {
            let zs = [z];
            self.problem.drift_into(&x, &zs, &mut b);
            let (sb, lb) = self.drift_terms(k, &b, v);
            let delta = if self.use_delta { exit.map_or(0.0, |e| (e.discount)(&x, &zs)) } else { 0.0 };
            obj(self.problem.running_cost(&x, &zs), sd + sb, ld + lb, delta)
        };
        for j in 0..w {
            let left = if j > 0 { vals[j - 1] } else { f64::INFINITY };
            let right = if j + 1 < w { vals[j + 1] } else { f64::INFINITY };
            if !(vals[j] <= left && vals[j] <= right) {
                continue;
            }
            let mut lo = t.control(k, j.saturating_sub(1), 1)[0];
            let mut hi = t.control(k, (j + 1).min(w - 1), 1)[0];
            let mut c = hi - GOLDEN * (hi - lo);
            let mut e = lo + GOLDEN * (hi - lo);
            let (mut fc, mut fe) = (off(c), off(e));
            for _ in 0..refine {
                if fc <= fe {
                    hi = e;
                    e = c;
                    fe = fc;
                    c = hi - GOLDEN * (hi - lo);
                    fc = off(c);
                } else {
                    lo = c;
                    c = e;
                    fc = fe;
                    e = lo + GOLDEN * (hi - lo);
                    fe = off(e);
                }
            }
            let (z, val) = if fc <= fe { (c, fc) } else { (e, fe) };
            if val < best.0 {
                best = (val, Choice::Refined(z));
            }
        }
        best
    }

    /// Control vector for a choice at node `k`.
    pub fn choice_control(&self, k: usize, t: &Tables, choice: Choice) -> Vec<f64> {
        match choice {
            Choice::Lattice(j) => t.control(k, j, self.m).to_vec(),
            Choice::Refined(z) => vec![z],
        }
    }

    /// One Jacobi sweep: `out[k] = update(k)` for free nodes, fixed nodes copied.
    pub fn sweep(&self, v: &[f64], out: &mut [f64], update: impl Fn(usize) -> f64 + Sync) {
        out.par_iter_mut().with_min_len(64).enumerate().for_each(|(k, o)| {
            *o = if self.fixed[k] { v[k] } else { update(k) };
        });
    }
}
