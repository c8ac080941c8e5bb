//! Controlled diffusions `dX = b(X, U) dt + σ(X) dW` and their generators.
//!
//! A [`ControlProblem`] bundles the drift, the diffusion matrix, the running
//! cost and the extra data each cost criterion needs (horizon and terminal
//! cost, discount rate, exit domain with its discount and exit cost).

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ValueField;
use crate::grid::Grid;

/// `b(x, ζ)` written into the output slice.
pub type DriftFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `σ(x)` written row-major into a `d × d` output slice.
pub type DiffusionFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// A function of state and control, such as the running cost.
pub type StateControlFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
/// A function of state only, such as a terminal cost.
pub type StateFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Axis-aligned box. Used for the control set and for exit domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

pub type ControlSet = BoxSet;

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::invalid("box bounds must be non-empty and of equal length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::invalid(format!("box needs finite lower <= upper, got {lower:?} / {upper:?}")));
        }
        Ok(Self { lower, upper })
    }

    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower], vec![upper])
    }

    /// The single point `{p}`.
    pub fn point(p: Vec<f64>) -> Result<Self> {
        Self::new(p.clone(), p)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&l, &u))| v >= l && v <= u)
    }

    /// Strict membership in the open box.
    pub fn contains_open(&self, z: &[f64]) -> bool {
        z.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&l, &u))| v > l && v < u)
    }

    pub fn project_in_place(&self, z: &mut [f64]) {
        for (v, (&l, &u)) in z.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(l, u);
        }
    }

    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        let mut out = z.to_vec();
        self.project_in_place(&mut out);
        out
    }

    /// Euclidean diameter.
    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l) * (u - l))
            .sum::<f64>()
            .sqrt()
    }

    /// Uniform lattice with `per_axis` points on every non-degenerate axis,
    /// in lexicographic order.
    pub fn lattice(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| {
                if u == l || per_axis < 2 {
                    vec![0.5 * (l + u)]
                } else {
                    (0..per_axis)
                        .map(|i| {
                            if i + 1 == per_axis {
                                u
                            } else {
                                l + (u - l) * i as f64 / (per_axis - 1) as f64
                            }
                        })
                        .collect()
                }
            })
            .collect();
        let mut out = vec![Vec::new()];
        for axis in &axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |&v| {
                        let mut p = prefix.clone();
                        p.push(v);
                        p
                    })
                })
                .collect();
        }
        out
    }
}

/// A finite mixture of controls, the relaxed control `Σ wᵢ δ_{ζᵢ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedControl {
    atoms: Vec<(Vec<f64>, f64)>,
}

impl RelaxedControl {
    pub fn new(atoms: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::invalid("relaxed control needs at least one atom"));
        }
        if atoms.iter().any(|(_, w)| !(0.0..=1.0).contains(w)) {
            return Err(Error::invalid("atom weights must lie in [0, 1]"));
        }
        let total: f64 = atoms.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("atom weights sum to {total}, not 1")));
        }
        let m = atoms[0].0.len();
        if atoms.iter().any(|(z, _)| z.len() != m) {
            return Err(Error::invalid("atoms differ in control dimension"));
        }
        Ok(Self { atoms })
    }

    pub fn dirac(z: Vec<f64>) -> Self {
        Self { atoms: vec![(z, 1.0)] }
    }

    pub fn atoms(&self) -> &[(Vec<f64>, f64)] {
        &self.atoms
    }

    /// `λ·self + (1-λ)·other` as a mixture over the union of atoms.
    pub fn mix(&self, lambda: f64, other: &RelaxedControl) -> Result<Self> {
        let mut atoms: Vec<(Vec<f64>, f64)> = self.atoms.iter().map(|(z, w)| (z.clone(), lambda * w)).collect();
        atoms.extend(other.atoms.iter().map(|(z, w)| (z.clone(), (1.0 - lambda) * w)));
        Self::new(atoms)
    }

    /// Atom selected by a uniform draw `u ∈ [0, 1)` (inverse CDF over atom order).
    pub fn sample(&self, u: f64) -> &[f64] {
        let mut acc = 0.0;
        for (z, w) in &self.atoms {
            acc += w;
            if u < acc {
                return z;
            }
        }
        &self.atoms[self.atoms.len() - 1].0
    }
}

/// Lyapunov pair for the stability condition `L_ζ V ≤ C0 − h(x, ζ)`.
#[derive(Clone)]
pub struct LyapunovCertificate {
    pub lyapunov: StateFn,
    pub h: StateControlFn,
    pub c0: f64,
}

impl fmt::Debug for LyapunovCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LyapunovCertificate").field("c0", &self.c0).finish_non_exhaustive()
    }
}

/// Exit-time data: the open domain, the state/control dependent discount
/// rate and the cost paid on exit.
#[derive(Clone)]
pub struct ExitData {
    pub domain: BoxSet,
    pub discount: StateControlFn,
    pub terminal: StateFn,
}

#[derive(Clone)]
pub struct ControlProblem {
    name: String,
    dim: usize,
    controls: ControlSet,
    drift: DriftFn,
    diffusion: DiffusionFn,
    running_cost: StateControlFn,
    horizon: Option<(f64, StateFn)>,
    discount: Option<f64>,
    exit: Option<ExitData>,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("controls", &self.controls)
            .field("horizon", &self.horizon.as_ref().map(|h| h.0))
            .field("discount", &self.discount)
            .field("exit_domain", &self.exit.as_ref().map(|e| &e.domain))
            .finish_non_exhaustive()
    }
}

impl ControlProblem {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        controls: ControlSet,
        drift: DriftFn,
        diffusion: DiffusionFn,
        running_cost: StateControlFn,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("state dimension must be positive"));
        }
        Ok(Self {
            name: name.into(),
            dim,
            controls,
            drift,
            diffusion,
            running_cost,
            horizon: None,
            discount: None,
            exit: None,
        })
    }

    pub fn with_horizon(mut self, horizon: f64, terminal_cost: StateFn) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::invalid("horizon must be positive"));
        }
        self.horizon = Some((horizon, terminal_cost));
        Ok(self)
    }

    pub fn with_discount(mut self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::invalid("discount rate must be positive"));
        }
        self.discount = Some(alpha);
        Ok(self)
    }

    pub fn with_exit(mut self, domain: BoxSet, discount: StateControlFn, terminal: StateFn) -> Result<Self> {
        if domain.dim() != self.dim {
            return Err(Error::invalid("exit domain dimension differs from the state dimension"));
        }
        self.exit = Some(ExitData {
            domain,
            discount,
            terminal,
        });
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn control_dim(&self) -> usize {
        self.controls.dim()
    }

    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    pub fn horizon(&self) -> Option<f64> {
        self.horizon.as_ref().map(|h| h.0)
    }

    pub fn discount(&self) -> Option<f64> {
        self.discount
    }

    pub fn exit(&self) -> Option<&ExitData> {
        self.exit.as_ref()
    }

    pub fn drift_into(&self, x: &[f64], z: &[f64], out: &mut [f64]) {
        (self.drift)(x, z, out)
    }

    pub fn drift(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.drift_into(x, z, &mut out);
        out
    }

    pub fn sigma_into(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out)
    }

    pub fn sigma(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.sigma_into(x, &mut out);
        out
    }

    /// `a(x) = ½ σ σᵀ`, row-major.
    pub fn diffusion_matrix(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let s = self.sigma(x);
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] = 0.5 * (0..d).map(|k| s[i * d + k] * s[j * d + k]).sum::<f64>();
            }
        }
        a
    }

    pub fn running_cost(&self, x: &[f64], z: &[f64]) -> f64 {
        (self.running_cost)(x, z)
    }

    pub fn terminal_cost(&self, x: &[f64]) -> Option<f64> {
        self.horizon.as_ref().map(|(_, f)| f(x))
    }
}

/// `b(x, ν) = Σ wᵢ b(x, ζᵢ)` for a finite mixture `ν`.
pub fn relaxed_drift(problem: &ControlProblem, x: &[f64], nu: &RelaxedControl) -> Result<Vec<f64>> {
    if nu.atoms().is_empty() {
        return Err(Error::invalid("relaxed control has no atoms"));
    }
    let mut out = vec![0.0; problem.dim()];
    let mut b = vec![0.0; problem.dim()];
    for (z, w) in nu.atoms() {
        if z.len() != problem.control_dim() {
            return Err(Error::invalid("atom has the wrong control dimension"));
        }
        problem.drift_into(x, z, &mut b);
        for (o, bi) in out.iter_mut().zip(&b) {
            *o += w * bi;
        }
    }
    Ok(out)
}

/// `trace(a ∇²f) + b(x, ζ)·∇f` at an interior node using centred differences.
pub fn apply_generator(problem: &ControlProblem, field: &ValueField, z: &[f64], node: &[usize]) -> Result<f64> {
    generator_on_grid(problem, field.space(), field.initial(), z, node)
}

pub(crate) fn generator_on_grid(
    problem: &ControlProblem,
    grid: &Grid,
    f: &[f64],
    z: &[f64],
    node: &[usize],
) -> Result<f64> {
    let d = grid.dim();
    if node.len() != d || d != problem.dim() {
        return Err(Error::invalid("node index dimension mismatch"));
    }
    let interior = node
        .iter()
        .zip(grid.axes())
        .all(|(&i, a)| a.count == 1 || (i > 0 && i + 1 < a.count));
    if !interior {
        return Err(Error::OutOfDomain { point: node.to_vec() });
    }
    let strides = grid.strides();
    let k = grid.ravel(node);
    let x = grid.point(k);
    let a = problem.diffusion_matrix(&x);
    let b = problem.drift(&x, z);
    let active: Vec<usize> = (0..d).filter(|&i| grid.axis(i).count > 1).collect();

    let mut acc = 0.0;
    for &i in &active {
        let h = grid.spacing(i);
        let (p, m) = (f[k + strides[i]], f[k - strides[i]]);
        acc += a[i * d + i] * (p - 2.0 * f[k] + m) / (h * h);
        acc += b[i] * (p - m) / (2.0 * h);
    }
    for (n, &i) in active.iter().enumerate() {
        for &j in &active[n + 1..] {
            let (si, sj) = (strides[i], strides[j]);
            let hij = 4.0 * grid.spacing(i) * grid.spacing(j);
            let cross = (f[k + si + sj] - f[k + si - sj] - f[k - si + sj] + f[k - si - sj]) / hij;
            acc += (a[i * d + j] + a[j * d + i]) * cross;
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotChecked,
}

/// Outcome of one sampled assumption check with its numerical witness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub status: CheckStatus,
    pub witness: Option<f64>,
    pub detail: String,
}

impl AssumptionCheck {
    fn new(name: &str, status: CheckStatus, witness: Option<f64>, detail: String) -> Self {
        Self {
            name: name.to_string(),
            status,
            witness,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub local_lipschitz: AssumptionCheck,
    /// `(ball radius, max Lipschitz ratio inside the ball)`.
    pub lipschitz_by_ball: Vec<(f64, f64)>,
    pub affine_growth: AssumptionCheck,
    pub nondegeneracy: AssumptionCheck,
    pub near_monotone: AssumptionCheck,
    pub lyapunov: AssumptionCheck,
    pub warnings: Vec<String>,
}

impl AssumptionReport {
    pub fn checks(&self) -> [&AssumptionCheck; 5] {
        [
            &self.local_lipschitz,
            &self.affine_growth,
            &self.nondegeneracy,
            &self.near_monotone,
            &self.lyapunov,
        ]
    }

    /// No check failed (unchecked ones do not count as failures).
    pub fn all_passed_or_unchecked(&self) -> bool {
        self.checks().iter().all(|c| c.status != CheckStatus::Fail)
    }
}

/// Optional inputs of the ergodic checks.
#[derive(Clone, Default)]
pub struct AssumptionInputs<'a> {
    /// Candidate for the optimal ergodic value in the near-monotone check.
    pub rho_candidate: Option<f64>,
    pub certificate: Option<&'a LyapunovCertificate>,
    /// Growth ratios above this raise a warning (default 100).
    pub growth_warning: Option<f64>,
}

/// Sampled evidence for the standing assumptions on a grid and a finite
/// sample of controls.
pub fn check_assumptions(
    problem: &ControlProblem,
    grid: &Grid,
    control_samples: &[Vec<f64>],
    inputs: &AssumptionInputs<'_>,
) -> Result<AssumptionReport> {
    let d = problem.dim();
    if grid.dim() != d {
        return Err(Error::invalid("grid dimension differs from the state dimension"));
    }
    if control_samples.is_empty() {
        return Err(Error::invalid("need at least one control sample"));
    }
    let n = grid.len();
    let points: Vec<Vec<f64>> = (0..n).map(|k| grid.point(k)).collect();
    let sigmas: Vec<Vec<f64>> = points.iter().map(|x| problem.sigma(x)).collect();
    let drifts: Vec<Vec<Vec<f64>>> = points
        .iter()
        .map(|x| control_samples.iter().map(|z| problem.drift(x, z)).collect())
        .collect();
    let norm = |v: &[f64]| v.iter().map(|t| t * t).sum::<f64>().sqrt();
    let mut warnings = Vec::new();

    // (A1) local Lipschitz ratios over nested balls
    let rmax = points.iter().map(|p| norm(p)).fold(0.0, f64::max);
    let radii: Vec<f64> = [0.25, 0.5, 0.75, 1.0].iter().map(|f| f * rmax).collect();
    let mut by_ball = vec![0.0f64; radii.len()];
    let mut all_finite = true;
    for k in 0..n {
        for axis in 0..d {
            let Some(m) = grid.neighbor(k, axis, 1) else { continue };
            let dx = norm(&points[k].iter().zip(&points[m]).map(|(a, b)| a - b).collect::<Vec<_>>());
            let ds2: f64 = sigmas[k].iter().zip(&sigmas[m]).map(|(a, b)| (a - b) * (a - b)).sum();
            let reach = norm(&points[k]).max(norm(&points[m]));
            for j in 0..control_samples.len() {
                let db2: f64 = drifts[k][j].iter().zip(&drifts[m][j]).map(|(a, b)| (a - b) * (a - b)).sum();
                let ratio = (db2 + ds2).sqrt() / dx;
                if !ratio.is_finite() {
                    all_finite = false;
                }
                for (r, best) in radii.iter().zip(by_ball.iter_mut()) {
                    if reach <= *r + 1e-12 {
                        *best = best.max(ratio);
                    }
                }
            }
        }
    }
    let lipschitz_by_ball: Vec<(f64, f64)> = radii.iter().copied().zip(by_ball.iter().copied()).collect();
    let lip_max = by_ball.last().copied().unwrap_or(0.0);
    let local_lipschitz = AssumptionCheck::new(
        "A1 local Lipschitz",
        if all_finite { CheckStatus::Pass } else { CheckStatus::Fail },
        Some(lip_max),
        format!("max ratio over adjacent nodes in balls of radius {radii:?}"),
    );

    // (A2) affine growth
    let mut growth = 0.0f64;
    for k in 0..n {
        let x = &points[k];
        let s2: f64 = sigmas[k].iter().map(|v| v * v).sum();
        let denom = 1.0 + x.iter().map(|v| v * v).sum::<f64>();
        for b in &drifts[k] {
            let inner: f64 = b.iter().zip(x).map(|(a, c)| a * c).sum();
            growth = growth.max((inner.max(0.0) + s2) / denom);
        }
    }
    let growth_limit = inputs.growth_warning.unwrap_or(100.0);
    if growth > growth_limit {
        warnings.push(format!("affine growth ratio {growth:.3e} exceeds {growth_limit:.3e} on this grid"));
    }
    let affine_growth = AssumptionCheck::new(
        "A2 affine growth",
        if growth.is_finite() { CheckStatus::Pass } else { CheckStatus::Fail },
        Some(growth),
        "max of (<b,x>+ + |σ|²)/(1+|x|²)".into(),
    );

    // (A3) uniform ellipticity
    let mut min_eig = f64::INFINITY;
    let mut asym = 0.0f64;
    for x in &points {
        let a = problem.diffusion_matrix(x);
        let m = DMatrix::from_row_slice(d, d, &a);
        asym = asym.max((&m - m.transpose()).abs().max());
        let e = if d == 1 { a[0] } else { m.symmetric_eigen().eigenvalues.min() };
        min_eig = min_eig.min(e);
    }
    let nondegeneracy = AssumptionCheck::new(
        "A3 nondegeneracy",
        if min_eig > 0.0 && asym <= 1e-12 { CheckStatus::Pass } else { CheckStatus::Fail },
        Some(min_eig),
        format!("min eigenvalue of a(x) over the grid (asymmetry {asym:e})"),
    );

    // (A4) near-monotone cost on the outer shell
    let near_monotone = match inputs.rho_candidate {
        None => AssumptionCheck::new(
            "A4 near-monotone",
            CheckStatus::NotChecked,
            None,
            "no ergodic value candidate supplied".into(),
        ),
        Some(rho) => {
            let shell_min = (0..n)
                .filter(|&k| grid.is_boundary(k))
                .flat_map(|k| control_samples.iter().map(move |z| (k, z)))
                .map(|(k, z)| problem.running_cost(&points[k], z))
                .fold(f64::INFINITY, f64::min);
            AssumptionCheck::new(
                "A4 near-monotone",
                if shell_min > rho { CheckStatus::Pass } else { CheckStatus::Fail },
                Some(shell_min),
                format!("min cost on the outer shell versus candidate {rho}"),
            )
        }
    };

    // (A5) Lyapunov drift inequality
    let lyapunov = match inputs.certificate {
        None => AssumptionCheck::new(
            "A5 Lyapunov",
            CheckStatus::NotChecked,
            None,
            "no Lyapunov certificate supplied".into(),
        ),
        Some(cert) => {
            let vals: Vec<f64> = points.iter().map(|x| (cert.lyapunov)(x)).collect();
            let v_ok = vals.iter().all(|&v| v > 1.0);
            let mut h_ok = true;
            let mut worst = f64::NEG_INFINITY;
            for k in 0..n {
                let idx = grid.unravel(k);
                for z in control_samples {
                    let hv = (cert.h)(&points[k], z);
                    if !(hv > 0.0) {
                        h_ok = false;
                    }
                    if let Ok(lv) = generator_on_grid(problem, grid, &vals, z, &idx) {
                        worst = worst.max(lv + hv - cert.c0);
                    }
                }
            }
            let pass = v_ok && h_ok && worst <= 0.0;
            let mut detail = "max of L V + h - C0 over interior nodes".to_string();
            if !v_ok {
                detail.push_str("; V <= 1 somewhere");
            }
            if !h_ok {
                detail.push_str("; h <= 0 somewhere");
            }
            AssumptionCheck::new(
                "A5 Lyapunov",
                if pass { CheckStatus::Pass } else { CheckStatus::Fail },
                Some(worst),
                detail,
            )
        }
    };

    Ok(AssumptionReport {
        local_lipschitz,
        lipschitz_by_ball,
        affine_growth,
        nondegeneracy,
        near_monotone,
        lyapunov,
        warnings,
    })
}

/// Convenience constructors for problems written with plain closures.
pub mod closures {
    use super::*;

    pub fn drift(f: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static) -> DriftFn {
        Arc::new(f)
    }

    pub fn diffusion(f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> DiffusionFn {
        Arc::new(f)
    }

    /// Constant diagonal `σ = s·I`.
    pub fn scalar_diffusion(s: f64) -> DiffusionFn {
        Arc::new(move |x: &[f64], out: &mut [f64]| {
            let d = x.len();
            out.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..d {
                out[i * d + i] = s;
            }
        })
    }

    pub fn cost(f: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> StateControlFn {
        Arc::new(f)
    }

    pub fn state(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> StateFn {
        Arc::new(f)
    }

    pub fn constant_state(c: f64) -> StateFn {
        Arc::new(move |_| c)
    }
}
