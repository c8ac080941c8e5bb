//! Convolution of grid policies with a compactly supported bump.
//!
//! The kernel is `φ(x) = C_d (1 − |x|²)³` on the unit ball, zero outside,
//! with `C_d` chosen so that `∫φ = 1`, and `φ_η(x) = η^{-d} φ(x/η)`.
//! Time-dependent policies use the product `φ_η(t) · φ_η(x)` of a 1-D kernel
//! in time and a `d`-dimensional kernel in space.
//!
//! On the grid the convolution becomes a weighted average over the nodes in
//! the kernel support. Weights are renormalized per output node over the
//! nodes that exist, so every output value is a convex combination of input
//! values and stays in the (convex) control set.

use std::f64::consts::PI;

use log::warn;
use rayon::prelude::*;

use super::GridPolicy;
use crate::error::{Error, Result};

/// `‖∂φ/∂x₁‖_{L¹}` for the unit-bandwidth kernel in dimensions 1, 2 and 3.
///
/// For this kernel the value is `2·C_d / C_{d−1}`; the table is frozen and
/// checked against quadrature in the tests.
pub const KERNEL_GRADIENT_L1: [f64; 3] = [35.0 / 16.0, 256.0 / (35.0 * PI), 315.0 / 128.0];

/// `Γ(k/2)` for positive integers `k`.
fn gamma_half(k: usize) -> f64 {
    match k {
        1 => PI.sqrt(),
        2 => 1.0,
        _ => (k as f64 / 2.0 - 1.0) * gamma_half(k - 2),
    }
}

/// Normalizing constant of `(1 − |x|²)³` on the unit ball of `ℝ^d`.
fn normalization(d: usize) -> f64 {
    if d == 0 {
        return 1.0;
    }
    let h = d as f64 / 2.0;
    gamma_half(d + 2) * (h + 1.0) * (h + 2.0) * (h + 3.0) / (6.0 * PI.powf(h))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mollifier {
    bandwidth: f64,
    dim: usize,
    scale: f64,
}

impl Mollifier {
    pub fn new(bandwidth: f64, dim: usize) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid(format!("mollifier bandwidth must be positive, got {bandwidth}")));
        }
        if dim == 0 {
            return Err(Error::invalid("mollifier dimension must be positive"));
        }
        Ok(Self {
            bandwidth,
            dim,
            scale: normalization(dim) / bandwidth.powi(dim as i32),
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Unit-bandwidth kernel `φ(y)`.
    pub fn unit_kernel(y: &[f64]) -> f64 {
        let r2: f64 = y.iter().map(|v| v * v).sum();
        if r2 >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - r2;
        normalization(y.len()) * s * s * s
    }

    /// `φ_η(y)`.
    pub fn value(&self, y: &[f64]) -> f64 {
        let eta2 = self.bandwidth * self.bandwidth;
        let r2: f64 = y.iter().map(|v| v * v).sum::<f64>() / eta2;
        if r2 >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - r2;
        self.scale * s * s * s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MollifyStatus {
    Smoothed,
    /// Bandwidth below half the grid spacing; the input was returned as is.
    UnderResolved,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mollified {
    pub policy: GridPolicy,
    pub status: MollifyStatus,
}

/// Discrete convolution of `policy` with `φ_η` (jointly in `(t, x)` for
/// time-dependent policies). The output keeps the input grid.
pub fn mollify(policy: &GridPolicy, eta: f64) -> Result<Mollified> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid(format!("mollifier bandwidth must be positive, got {eta}")));
    }
    let grid = policy.grid();
    let d = grid.dim();
    let active: Vec<usize> = (0..d).filter(|&i| grid.axis(i).count > 1).collect();
    let min_spacing = active.iter().map(|&i| grid.spacing(i)).fold(f64::INFINITY, f64::min);
    if active.is_empty() || eta < 0.5 * min_spacing {
        warn!("mollifier bandwidth {eta} is below half the grid spacing {min_spacing}; policy left unchanged");
        return Ok(Mollified {
            policy: policy.clone(),
            status: MollifyStatus::UnderResolved,
        });
    }

    let time_axis = policy.has_time_axis();
    let space_axes: Vec<usize> = active.iter().copied().filter(|&i| !(time_axis && i == 0)).collect();
    let space_kernel = if space_axes.is_empty() {
        None
    } else {
        Some(Mollifier::new(eta, space_axes.len())?)
    };
    let time_kernel = if time_axis && grid.axis(0).count > 1 {
        Some(Mollifier::new(eta, 1)?)
    } else {
        None
    };

    // Offsets inside the kernel support with their (unnormalized) weights,
    // enumerated in lexicographic order.
    let reach: Vec<i64> = active.iter().map(|&i| (eta / grid.spacing(i)).floor() as i64).collect();
    let widths: Vec<i64> = reach.iter().map(|r| 2 * r + 1).collect();
    let total: i64 = widths.iter().product();
    let mut stencil: Vec<(Vec<i64>, f64)> = Vec::new();
    for code in 0..total {
        let mut rest = code;
        let mut offset = vec![0i64; active.len()];
        for n in (0..active.len()).rev() {
            offset[n] = rest % widths[n] - reach[n];
            rest /= widths[n];
        }
        let mut space_disp = Vec::with_capacity(space_axes.len());
        let mut t_disp = 0.0;
        for (n, &i) in active.iter().enumerate() {
            let disp = offset[n] as f64 * grid.spacing(i);
            if time_axis && i == 0 {
                t_disp = disp;
            } else {
                space_disp.push(disp);
            }
        }
        let mut w = space_kernel.map_or(1.0, |k| k.value(&space_disp));
        if let Some(k) = time_kernel {
            w *= k.value(&[t_disp]);
        }
        if w > 0.0 {
            stencil.push((offset, w));
        }
    }

    let m = policy.controls().dim();
    let strides = grid.strides();
    let counts = grid.counts();
    let values = policy.values();
    let out: Vec<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let idx = grid.unravel(k);
            let centre = &values[k * m..(k + 1) * m];
            // Accumulate deviations from the centre value so that constant
            // policies come back bit-identical.
            let mut acc = vec![0.0; m];
            let mut total = 0.0;
            for (off, w) in &stencil {
                let mut flat = k as i64;
                let mut inside = true;
                for (n, &i) in active.iter().enumerate() {
                    let j = idx[i] as i64 + off[n];
                    if j < 0 || j >= counts[i] as i64 {
                        inside = false;
                        break;
                    }
                    flat += off[n] * strides[i] as i64;
                }
                if !inside {
                    continue;
                }
                let flat = flat as usize;
                total += w;
                for ((a, v), c) in acc.iter_mut().zip(&values[flat * m..(flat + 1) * m]).zip(centre) {
                    *a += w * (v - c);
                }
            }
            for (a, c) in acc.iter_mut().zip(centre) {
                *a = c + *a / total;
            }
            policy.controls().project_in_place(&mut acc);
            acc
        })
        .collect();

    Ok(Mollified {
        policy: policy.with_values(out.concat()),
        status: MollifyStatus::Smoothed,
    })
}

/// Largest difference quotient `‖Δv‖ / ‖Δx‖` over adjacent node pairs.
/// Axes with a single node are skipped.
pub fn lipschitz_estimate(policy: &GridPolicy) -> f64 {
    let grid = policy.grid();
    let m = policy.controls().dim();
    let strides = grid.strides();
    let values = policy.values();
    let mut best = 0.0f64;
    for axis in 0..grid.dim() {
        let n = grid.axis(axis).count;
        if n < 2 {
            continue;
        }
        let h = grid.spacing(axis);
        for k in 0..grid.len() {
            if grid.unravel(k)[axis] + 1 == n {
                continue;
            }
            let j = k + strides[axis];
            let diff: f64 = values[k * m..(k + 1) * m]
                .iter()
                .zip(&values[j * m..(j + 1) * m])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            best = best.max(diff / h);
        }
    }
    best
}

/// Constant `K` with `lipschitz(φ_η * v) ≤ K / η` for any policy with values
/// in the control set: the control-set diameter times the largest
/// per-axis kernel gradient norm.
pub fn lipschitz_bound_constant(policy: &GridPolicy) -> f64 {
    let space_dim = policy.state_dim().clamp(1, 3);
    let mut g = KERNEL_GRADIENT_L1[space_dim - 1];
    if policy.has_time_axis() {
        g = g.max(KERNEL_GRADIENT_L1[0]);
    }
    policy.controls().diameter() * g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ControlSet;
    use crate::grid::{Axis, Grid};
    use crate::policy::Interpolation;

    #[test]
    fn normalization_matches_closed_forms() {
        assert!((normalization(1) - 35.0 / 32.0).abs() < 1e-14);
        assert!((normalization(2) - 4.0 / PI).abs() < 1e-14);
        assert!((normalization(3) - 315.0 / (64.0 * PI)).abs() < 1e-14);
        for d in 1..3 {
            assert!((KERNEL_GRADIENT_L1[d] - 2.0 * normalization(d + 1) / normalization(d)).abs() < 1e-14);
        }
    }

    #[test]
    fn kernel_integrates_to_one() {
        // midpoint rule on a fine lattice
        for d in 1..=3usize {
            let n: usize = [4000, 800, 120][d - 1];
            let h = 2.0 / n as f64;
            let mut total = 0.0;
            let mut idx = vec![0usize; d];
            loop {
                let y: Vec<f64> = idx.iter().map(|&i| -1.0 + (i as f64 + 0.5) * h).collect();
                total += Mollifier::unit_kernel(&y);
                let mut a = 0;
                while a < d {
                    idx[a] += 1;
                    if idx[a] < n {
                        break;
                    }
                    idx[a] = 0;
                    a += 1;
                }
                if a == d {
                    break;
                }
            }
            total *= h.powi(d as i32);
            assert!((total - 1.0).abs() < 1e-6, "d={d}: {total}");
        }
    }

    #[test]
    fn scaled_kernel_support() {
        let k = Mollifier::new(0.5, 1).unwrap();
        assert_eq!(k.value(&[0.5]), 0.0);
        assert!(k.value(&[0.49]) > 0.0);
        assert!((k.value(&[0.0]) - 2.0 * 35.0 / 32.0).abs() < 1e-14);
        assert!(Mollifier::new(0.0, 1).is_err());
    }

    fn unit() -> ControlSet {
        ControlSet::interval(-1.0, 1.0).unwrap()
    }

    #[test]
    fn constant_policy_is_fixed() {
        let g = Grid::from_spacing(&[-1.0, -1.0], &[1.0, 1.0], &[0.1, 0.1]).unwrap();
        let p = GridPolicy::constant(g, unit(), &[0.37]).unwrap();
        for eta in [0.05, 0.2, 0.9] {
            let m = mollify(&p, eta).unwrap();
            assert_eq!(m.policy, p);
        }
    }

    #[test]
    fn under_resolved_bandwidth_returns_input() {
        let g = Grid::uniform_1d(-1.0, 1.0, 21).unwrap();
        let p = GridPolicy::from_fn(g, unit(), Interpolation::Nearest, |x| vec![x[0].signum()]).unwrap();
        let m = mollify(&p, 0.04).unwrap();
        assert_eq!(m.status, MollifyStatus::UnderResolved);
        assert_eq!(m.policy, p);
        assert!(mollify(&p, -1.0).is_err());
    }

    #[test]
    fn sign_policy_is_odd_and_saturates() {
        let g = Grid::uniform_1d(-2.0, 2.0, 401).unwrap();
        let h = g.spacing(0);
        let sign = |x: f64| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 };
        let p = GridPolicy::from_fn(g.clone(), unit(), Interpolation::Nearest, |x| vec![sign(x[0])]).unwrap();
        let m = mollify(&p, 0.5).unwrap().policy;
        for k in 0..g.len() {
            let x = g.point(k)[0];
            let v = m.node_value(k)[0];
            let mirror = m.node_value(g.len() - 1 - k)[0];
            assert!((v + mirror).abs() < 1e-12, "odd symmetry at {x}");
            if x.abs() >= 0.5 + h {
                assert_eq!(v, sign(x));
            }
        }
    }

    #[test]
    fn lipschitz_examples() {
        let g = Grid::from_spacing(&[0.0], &[1.0], &[0.1]).unwrap();
        let c = GridPolicy::constant(g.clone(), unit(), &[0.2]).unwrap();
        assert_eq!(lipschitz_estimate(&c), 0.0);
        let lin = GridPolicy::from_fn(g, unit(), Interpolation::Multilinear, |x| vec![x[0]]).unwrap();
        assert!((lipschitz_estimate(&lin) - 1.0).abs() < 1e-12);
        // single-node axes are skipped
        let g2 = Grid::new(vec![Axis::new(0.0, 0.0, 1).unwrap(), Axis::new(0.0, 1.0, 11).unwrap()]).unwrap();
        let p = GridPolicy::from_fn(g2, unit(), Interpolation::Multilinear, |x| vec![0.5 * x[1]]).unwrap();
        assert!((lipschitz_estimate(&p) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn time_policy_mollifies_jointly() {
        let space = Grid::uniform_1d(-1.0, 1.0, 41).unwrap();
        let time = Axis::new(0.0, 1.0, 21).unwrap();
        let p = GridPolicy::from_fn_time(time, &space, unit(), Interpolation::Nearest, |t, _| {
            vec![if t < 0.5 { -1.0 } else { 1.0 }]
        })
        .unwrap();
        let m = mollify(&p, 0.2).unwrap().policy;
        // smoothing happens along time even though the policy is constant in x
        let at = |t: f64| m.evaluate(&[t, 0.0])[0];
        assert!(at(0.45) > -1.0 && at(0.55) < 1.0);
        assert_eq!(at(0.0), -1.0);
        assert!(lipschitz_estimate(&m) <= lipschitz_bound_constant(&m) / 0.2);
    }
}
