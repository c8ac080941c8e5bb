//! Deterministic Markov policies stored on grids.
//!
//! A [`GridPolicy`] keeps one control per grid node. Stationary policies live
//! on a space grid; time-dependent ones carry time as the first grid axis.
//! Evaluation clamps the query point to the grid box, interpolates, and
//! projects the result onto the control set.

mod mollify;
mod pairing;

use std::sync::Arc;

use crate::dynamics::{ControlSet, RelaxedControl};
use crate::error::{Error, Result};
use crate::grid::{Axis, Grid};
use crate::textio::{self, Header};

pub use mollify::{lipschitz_bound_constant, lipschitz_estimate, mollify, Mollified, MollifyStatus, Mollifier, KERNEL_GRADIENT_L1};
pub use pairing::{borkar_pairing, pairing_gap, PairingDictionary, TestPair};

/// Anything that maps `(t, x)` to a control.
pub trait Policy: Sync {
    fn control_dim(&self) -> usize;

    fn act(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// Randomized policies draw from `u ∈ [0, 1)` on every call of
    /// [`Policy::act_sampled`]; deterministic ones ignore it.
    fn is_randomized(&self) -> bool {
        false
    }

    fn act_sampled(&self, t: f64, x: &[f64], _u: f64, out: &mut [f64]) {
        self.act(t, x, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Nearest,
    Multilinear,
}

impl Interpolation {
    fn as_str(self) -> &'static str {
        match self {
            Interpolation::Nearest => "nearest",
            Interpolation::Multilinear => "multilinear",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Interpolation::Nearest),
            "multilinear" => Ok(Interpolation::Multilinear),
            other => Err(textio::parse_err(1, format!("unknown interpolation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPolicy {
    grid: Grid,
    time_axis: bool,
    controls: ControlSet,
    values: Vec<f64>,
    interpolation: Interpolation,
}

impl GridPolicy {
    /// `values` holds `control_dim` entries per node in node order. Every
    /// node value must lie in the control set.
    pub fn new(
        grid: Grid,
        time_axis: bool,
        controls: ControlSet,
        values: Vec<f64>,
        interpolation: Interpolation,
    ) -> Result<Self> {
        let m = controls.dim();
        if values.len() != grid.len() * m {
            return Err(Error::invalid(format!(
                "policy has {} values for {} nodes of control dimension {m}",
                values.len(),
                grid.len()
            )));
        }
        if time_axis && grid.dim() < 2 {
            return Err(Error::invalid("a time-dependent policy needs a time axis and a space axis"));
        }
        if let Some(k) = values.chunks(m).position(|z| !controls.contains(z)) {
            return Err(Error::invalid(format!("policy value at node {k} lies outside the control set")));
        }
        Ok(Self {
            grid,
            time_axis,
            controls,
            values,
            interpolation,
        })
    }

    /// Stationary policy from a feedback law, projected onto the control set.
    pub fn from_fn(
        grid: Grid,
        controls: ControlSet,
        interpolation: Interpolation,
        f: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Result<Self> {
        let values = Self::sample(&grid, &controls, f);
        Self::new(grid, false, controls, values, interpolation)
    }

    /// Time-dependent policy on `time × space`, `f` receives `(t, x)`.
    pub fn from_fn_time(
        time: Axis,
        space: &Grid,
        controls: ControlSet,
        interpolation: Interpolation,
        f: impl Fn(f64, &[f64]) -> Vec<f64>,
    ) -> Result<Self> {
        let grid = space.prepend(time);
        let values = Self::sample(&grid, &controls, |p| f(p[0], &p[1..]));
        Self::new(grid, true, controls, values, interpolation)
    }

    pub fn constant(grid: Grid, controls: ControlSet, z: &[f64]) -> Result<Self> {
        let z = z.to_vec();
        Self::from_fn(grid, controls, Interpolation::Nearest, move |_| z.clone())
    }

    fn sample(grid: &Grid, controls: &ControlSet, f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
        let mut values = Vec::with_capacity(grid.len() * controls.dim());
        for k in 0..grid.len() {
            values.extend(controls.project(&f(&grid.point(k))));
        }
        values
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn has_time_axis(&self) -> bool {
        self.time_axis
    }

    /// Dimension of the state space (grid dimension minus the time axis).
    pub fn state_dim(&self) -> usize {
        self.grid.dim() - self.time_axis as usize
    }

    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn node_value(&self, k: usize) -> &[f64] {
        let m = self.controls.dim();
        &self.values[k * m..(k + 1) * m]
    }

    pub fn with_interpolation(mut self, interpolation: Interpolation) -> Self {
        self.interpolation = interpolation;
        self
    }

    /// Same grid, node values replaced through `f(node_value)`, then projected.
    pub fn map_values(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let m = self.controls.dim();
        let mut values = Vec::with_capacity(self.values.len());
        for z in self.values.chunks(m) {
            values.extend(self.controls.project(&f(z)));
        }
        Self { values, ..self.clone() }
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        Self { values, ..self.clone() }
    }

    /// Control at `point` (time first when the policy has a time axis).
    pub fn evaluate(&self, point: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.controls.dim()];
        self.evaluate_into(point, &mut out);
        out
    }

    pub fn evaluate_into(&self, point: &[f64], out: &mut [f64]) {
        let m = self.controls.dim();
        match self.interpolation {
            Interpolation::Nearest => {
                let k = self.grid.nearest(point);
                out.copy_from_slice(&self.values[k * m..(k + 1) * m]);
            }
            Interpolation::Multilinear => {
                let d = self.grid.dim();
                let strides = self.grid.strides();
                let cells: Vec<(usize, f64)> = (0..d).map(|i| self.grid.axis(i).locate(point[i])).collect();
                out.iter_mut().for_each(|v| *v = 0.0);
                for corner in 0..(1usize << d) {
                    let mut w = 1.0;
                    let mut flat = 0;
                    for i in 0..d {
                        let up = (corner >> i) & 1 == 1;
                        if self.grid.axis(i).count == 1 {
                            if up {
                                w = 0.0;
                            }
                            continue;
                        }
                        let (c, frac) = cells[i];
                        w *= if up { frac } else { 1.0 - frac };
                        flat += (c + up as usize) * strides[i];
                    }
                    if w != 0.0 {
                        for (o, v) in out.iter_mut().zip(&self.values[flat * m..(flat + 1) * m]) {
                            *o += w * v;
                        }
                    }
                }
            }
        }
        self.controls.project_in_place(out);
    }

    /// Largest componentwise spread `max v − min v` over all nodes.
    pub fn spread(&self) -> f64 {
        let m = self.controls.dim();
        (0..m)
            .map(|j| {
                let (lo, hi) = self
                    .values
                    .iter()
                    .skip(j)
                    .step_by(m)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                hi - lo
            })
            .fold(0.0, f64::max)
    }

    /// Max over nodes of the Euclidean distance between node values.
    pub fn max_node_deviation(&self, other: &GridPolicy) -> Result<f64> {
        if self.grid != other.grid || self.controls.dim() != other.controls.dim() {
            return Err(Error::invalid("policies live on different grids"));
        }
        let m = self.controls.dim();
        Ok(self
            .values
            .chunks(m)
            .zip(other.values.chunks(m))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
            .fold(0.0, f64::max))
    }

    pub fn to_text(&self) -> String {
        let mut h = Header::new("policy");
        h.set_grid(&self.grid);
        h.set("time", self.time_axis as u8);
        h.set("m", self.controls.dim());
        h.set("interp", self.interpolation.as_str());
        h.set_list("ulower", self.controls.lower());
        h.set_list("uupper", self.controls.upper());
        textio::render_rows(&h, &self.values, self.controls.dim())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let first = text.lines().next().unwrap_or_default();
        let header = Header::parse(first.trim())?;
        let m: usize = header.get_parsed("m")?;
        let (h, values) = textio::parse_rows(text, m)?;
        if h.get("kind")? != "policy" {
            return Err(textio::parse_err(1, "not a policy file"));
        }
        let controls = ControlSet::new(h.get_list("ulower")?, h.get_list("uupper")?)?;
        let time_axis = h.get_parsed::<u8>("time")? == 1;
        let interpolation = Interpolation::parse(h.get("interp")?)?;
        Self::new(h.grid()?, time_axis, controls, values, interpolation)
    }

    /// CSV with columns `[t,] x1..xd, u1..um`.
    pub fn to_csv(&self) -> String {
        let mut names: Vec<String> = Vec::new();
        if self.time_axis {
            names.push("t".into());
        }
        names.extend((1..=self.state_dim()).map(|i| format!("x{i}")));
        let controls: Vec<String> = (1..=self.controls.dim()).map(|j| format!("u{j}")).collect();
        textio::render_csv(&self.grid, &names, &controls, &self.values)
    }
}

impl Policy for GridPolicy {
    fn control_dim(&self) -> usize {
        self.controls.dim()
    }

    fn act(&self, t: f64, x: &[f64], out: &mut [f64]) {
        if self.time_axis {
            let mut p = Vec::with_capacity(x.len() + 1);
            p.push(t);
            p.extend_from_slice(x);
            self.evaluate_into(&p, out);
        } else {
            self.evaluate_into(x, out);
        }
    }
}

/// The same control everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantPolicy(pub Vec<f64>);

impl Policy for ConstantPolicy {
    fn control_dim(&self) -> usize {
        self.0.len()
    }

    fn act(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

/// Feedback law given by a closure `(t, x) -> ζ`.
pub struct FeedbackPolicy<F> {
    control_dim: usize,
    law: F,
}

impl<F: Fn(f64, &[f64], &mut [f64]) + Sync> FeedbackPolicy<F> {
    pub fn new(control_dim: usize, law: F) -> Self {
        Self { control_dim, law }
    }
}

impl<F: Fn(f64, &[f64], &mut [f64]) + Sync> Policy for FeedbackPolicy<F> {
    fn control_dim(&self) -> usize {
        self.control_dim
    }

    fn act(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.law)(t, x, out)
    }
}

/// Relaxed stationary policy `x ↦ ν(x)` with finitely many atoms; each
/// simulation step samples one atom.
#[derive(Clone)]
pub struct MixturePolicy {
    control_dim: usize,
    law: Arc<dyn Fn(&[f64]) -> RelaxedControl + Send + Sync>,
}

impl MixturePolicy {
    pub fn new(control_dim: usize, law: impl Fn(&[f64]) -> RelaxedControl + Send + Sync + 'static) -> Self {
        Self {
            control_dim,
            law: Arc::new(law),
        }
    }
}

impl Policy for MixturePolicy {
    fn control_dim(&self) -> usize {
        self.control_dim
    }

    /// Mean control of the mixture (used only outside sampling).
    fn act(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (z, w) in (self.law)(x).atoms() {
            for (o, v) in out.iter_mut().zip(z) {
                *o += w * v;
            }
        }
    }

    fn is_randomized(&self) -> bool {
        true
    }

    fn act_sampled(&self, _t: f64, x: &[f64], u: f64, out: &mut [f64]) {
        out.copy_from_slice((self.law)(x).sample(u));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> ControlSet {
        ControlSet::interval(-1.0, 1.0).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let g = Grid::uniform_1d(-2.0, 2.0, 9).unwrap();
        let c = GridPolicy::constant(g, unit(), &[0.3]).unwrap();
        assert_eq!(c.evaluate(&[1.234]), vec![0.3]);
        assert_eq!(c.evaluate(&[99.0]), vec![0.3]);

        let g = Grid::uniform_1d(0.0, 1.0, 2).unwrap();
        let p = GridPolicy::new(g, false, unit(), vec![-1.0, 1.0], Interpolation::Multilinear).unwrap();
        assert_eq!(p.evaluate(&[0.5]), vec![0.0]);
        let p = p.with_interpolation(Interpolation::Nearest);
        assert_eq!(p.evaluate(&[0.4]), vec![-1.0]);
        // outside the box is clamped
        assert_eq!(p.evaluate(&[-3.0]), vec![-1.0]);
        assert_eq!(p.evaluate(&[3.0]), vec![1.0]);
    }

    #[test]
    fn rejects_values_outside_control_set() {
        let g = Grid::uniform_1d(0.0, 1.0, 2).unwrap();
        assert!(GridPolicy::new(g.clone(), false, unit(), vec![0.0, 1.5], Interpolation::Nearest).is_err());
        assert!(GridPolicy::new(g, false, unit(), vec![0.0], Interpolation::Nearest).is_err());
    }

    #[test]
    fn time_policy_uses_time_coordinate() {
        let space = Grid::uniform_1d(-1.0, 1.0, 3).unwrap();
        let time = Axis::new(0.0, 1.0, 3).unwrap();
        let p = GridPolicy::from_fn_time(time, &space, unit(), Interpolation::Multilinear, |t, x| vec![t - x[0]]).unwrap();
        let mut out = [0.0];
        p.act(0.5, &[0.25], &mut out);
        assert!((out[0] - 0.25).abs() < 1e-12);
        assert_eq!(p.state_dim(), 1);
    }

    #[test]
    fn text_roundtrip_is_exact() {
        let g = Grid::from_spacing(&[-1.0, 0.0], &[1.0, 0.7], &[0.1, 0.35]).unwrap();
        let u = ControlSet::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        let p = GridPolicy::from_fn(g, u, Interpolation::Multilinear, |x| vec![(3.0 * x[0]).sin(), x[1] / 3.0]).unwrap();
        let back = GridPolicy::from_text(&p.to_text()).unwrap();
        assert_eq!(back, p);
        let csv = p.to_csv();
        assert!(csv.starts_with("x1,x2,u1,u2\n"));
        assert_eq!(csv.lines().count(), p.grid().len() + 1);
    }

    #[test]
    fn mixture_policy_samples_atoms() {
        let p = MixturePolicy::new(1, |_| {
            RelaxedControl::new(vec![(vec![-1.0], 0.5), (vec![1.0], 0.5)]).unwrap()
        });
        let mut out = [0.0];
        p.act_sampled(0.0, &[0.0], 0.2, &mut out);
        assert_eq!(out, [-1.0]);
        p.act_sampled(0.0, &[0.0], 0.7, &mut out);
        assert_eq!(out, [1.0]);
        p.act(0.0, &[0.0], &mut out);
        assert_eq!(out, [0.0]);
    }
}
