#![allow(dead_code)]

use smoothctl_core::dynamics::{closures, ControlProblem, ControlSet};

/// `dX = ζ dt + σ dW`, `c = x² + ζ²`, `|ζ| ≤ u_max`, in one dimension.
pub fn lq_1d(sigma: f64, u_max: f64) -> ControlProblem {
    ControlProblem::new(
        "lq",
        1,
        ControlSet::interval(-u_max, u_max).unwrap(),
        closures::drift(|_, z, out| out[0] = z[0]),
        closures::scalar_diffusion(sigma),
        closures::cost(|x, z| x[0] * x[0] + z[0] * z[0]),
    )
    .unwrap()
}

pub fn scalar(
    controls: ControlSet,
    b: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    sigma: f64,
    c: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
) -> ControlProblem {
    ControlProblem::new(
        "scalar",
        1,
        controls,
        closures::drift(move |x, z, out| out[0] = b(x[0], z[0])),
        closures::scalar_diffusion(sigma),
        closures::cost(move |x, z| c(x[0], z[0])),
    )
    .unwrap()
}

pub fn double_well(sigma: f64) -> ControlProblem {
    scalar(
        ControlSet::interval(-1.0, 1.0).unwrap(),
        |_, z| z,
        sigma,
        |x, z| (x * x - 1.0).powi(2) + 0.1 * z * z,
    )
}

/// Classical RK4 for a scalar ODE `y' = f(t, y)` from `t0` to `t1`.
pub fn rk4(f: impl Fn(f64, f64) -> f64, t0: f64, y0: f64, t1: f64, steps: usize) -> f64 {
    let h = (t1 - t0) / steps as f64;
    let mut y = y0;
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        let k1 = f(t, y);
        let k2 = f(t + 0.5 * h, y + 0.5 * h * k1);
        let k3 = f(t + 0.5 * h, y + 0.5 * h * k2);
        let k4 = f(t + h, y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    y
}

/// Root of a continuous function with a sign change on `[lo, hi]`.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
