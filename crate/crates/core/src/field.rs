//! Value functions sampled on a space grid, optionally on a time axis too.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Axis, Grid};
use crate::textio::{self, Header};

/// How the values on the edge of the grid were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    /// Boundary nodes carry prescribed data (exit problems).
    Dirichlet,
    /// Truncated whole-space problem; transitions leaving the box are dropped.
    Reflecting,
    /// Time-dependent field whose last slice is the terminal cost.
    Terminal,
}

impl BoundaryKind {
    fn as_str(self) -> &'static str {
        match self {
            BoundaryKind::Dirichlet => "dirichlet",
            BoundaryKind::Reflecting => "reflecting",
            BoundaryKind::Terminal => "terminal",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "dirichlet" => Ok(BoundaryKind::Dirichlet),
            "reflecting" => Ok(BoundaryKind::Reflecting),
            "terminal" => Ok(BoundaryKind::Terminal),
            other => Err(textio::parse_err(1, format!("unknown boundary `{other}`"))),
        }
    }
}

/// Iteration record of a solver run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    /// Sup-norm update per iteration (per time step for marching schemes).
    pub residuals: Vec<f64>,
    /// Effective pseudo-time step `1 / max total rate` of the discrete chain.
    pub dt_eff: f64,
}

impl SolveStats {
    /// Residual history as `iteration,residual` CSV.
    pub fn residuals_csv(&self) -> String {
        let mut s = String::from("iteration,residual\n");
        for (i, r) in self.residuals.iter().enumerate() {
            s.push_str(&format!("{},{}\n", i + 1, r));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    space: Grid,
    time: Option<Axis>,
    values: Vec<f64>,
    boundary: BoundaryKind,
    pub stats: SolveStats,
}

impl ValueField {
    pub fn new(space: Grid, values: Vec<f64>, boundary: BoundaryKind) -> Result<Self> {
        if values.len() != space.len() {
            return Err(Error::invalid(format!(
                "value field has {} values for {} nodes",
                values.len(),
                space.len()
            )));
        }
        Self::checked(space, None, values, boundary)
    }

    /// Field over `time × space`; slice `i` holds the values at `time.coord(i)`.
    pub fn with_time(space: Grid, time: Axis, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.len() * time.count {
            return Err(Error::invalid("time field size mismatch"));
        }
        Self::checked(space, Some(time), values, BoundaryKind::Terminal)
    }

    fn checked(space: Grid, time: Option<Axis>, values: Vec<f64>, boundary: BoundaryKind) -> Result<Self> {
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at node {k}")));
        }
        Ok(Self {
            space,
            time,
            values,
            boundary,
            stats: SolveStats::default(),
        })
    }

    pub fn from_fn(space: Grid, boundary: BoundaryKind, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..space.len()).map(|k| f(&space.point(k))).collect();
        Self::new(space, values, boundary)
    }

    pub fn space(&self) -> &Grid {
        &self.space
    }

    pub fn time(&self) -> Option<&Axis> {
        self.time.as_ref()
    }

    pub fn boundary(&self) -> BoundaryKind {
        self.boundary
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slice_count(&self) -> usize {
        self.time.map_or(1, |t| t.count)
    }

    /// Values at time slice `i` (the only slice for stationary fields).
    pub fn slice(&self, i: usize) -> &[f64] {
        let n = self.space.len();
        &self.values[i * n..(i + 1) * n]
    }

    /// The slice at the initial time (or the stationary values).
    pub fn initial(&self) -> &[f64] {
        self.slice(0)
    }

    /// Multilinear interpolation of the initial slice at `x` (clamped to the box).
    pub fn value_at(&self, x: &[f64]) -> f64 {
        interpolate(&self.space, self.initial(), x)
    }

    /// Multilinear interpolation in `(t, x)`.
    pub fn value_at_time(&self, t: f64, x: &[f64]) -> f64 {
        match self.time {
            None => self.value_at(x),
            Some(axis) => {
                if axis.count == 1 {
                    return self.value_at(x);
                }
                let (i, w) = axis.locate(t);
                let a = interpolate(&self.space, self.slice(i), x);
                let b = interpolate(&self.space, self.slice(i + 1), x);
                (1.0 - w) * a + w * b
            }
        }
    }

    pub fn to_text(&self) -> String {
        let mut h = Header::new("value");
        h.set_grid(&self.space);
        h.set("boundary", self.boundary.as_str());
        if let Some(t) = self.time {
            h.set("tlower", t.lower);
            h.set("tupper", t.upper);
            h.set("tcount", t.count);
        }
        textio::render_rows(&h, &self.values, 1)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (h, values) = textio::parse_rows(text, 1)?;
        if h.get("kind")? != "value" {
            return Err(textio::parse_err(1, "not a value field"));
        }
        let space = h.grid()?;
        let boundary = BoundaryKind::parse(h.get("boundary")?)?;
        match h.get_opt("tcount") {
            Some(_) => {
                let time = Axis::new(h.get_parsed("tlower")?, h.get_parsed("tupper")?, h.get_parsed("tcount")?)?;
                Self::with_time(space, time, values)
            }
            None => Self::new(space, values, boundary),
        }
    }

    /// CSV with columns `[t,] x1..xd, value`.
    pub fn to_csv(&self) -> String {
        let full = match self.time {
            Some(t) => self.space.prepend(t),
            None => self.space.clone(),
        };
        let mut names: Vec<String> = Vec::new();
        if self.time.is_some() {
            names.push("t".into());
        }
        names.extend((1..=self.space.dim()).map(|i| format!("x{i}")));
        textio::render_csv(&full, &names, &["value".to_string()], &self.values)
    }
}

/// Multilinear interpolation of node values at `x`, clamped to the grid box.
pub fn interpolate(grid: &Grid, values: &[f64], x: &[f64]) -> f64 {
    let d = grid.dim();
    let strides = grid.strides();
    let cells: Vec<(usize, f64)> = (0..d).map(|i| grid.axis(i).locate(x[i])).collect();
    let mut acc = 0.0;
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut flat = 0;
        for i in 0..d {
            let (c, frac) = cells[i];
            let up = (corner >> i) & 1 == 1;
            if grid.axis(i).count == 1 {
                if up {
                    w = 0.0;
                }
                continue;
            }
            w *= if up { frac } else { 1.0 - frac };
            flat += (c + up as usize) * strides[i];
        }
        if w != 0.0 {
            acc += w * values[flat];
        }
    }
    acc
}
