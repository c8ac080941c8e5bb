//! Uniform rectangular grids.
//!
//! Nodes are stored row-major: the last axis varies fastest. Every axis has
//! at least one node; an axis with one node has zero spacing and is treated
//! as degenerate by the difference stencils.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One axis of a uniform grid: `count` nodes spanning `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(lower: f64, upper: f64, count: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite()) {
            return Err(Error::invalid("axis bounds must be finite"));
        }
        if count == 0 {
            return Err(Error::invalid("axis needs at least one node"));
        }
        if count > 1 && !(upper > lower) {
            return Err(Error::invalid(format!(
                "axis upper bound {upper} must exceed lower bound {lower}"
            )));
        }
        Ok(Self {
            lower,
            upper,
            count,
        })
    }

    /// Axis over `[lower, upper]` whose spacing is as close to `spacing` as
    /// an integer node count allows.
    pub fn with_spacing(lower: f64, upper: f64, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::invalid("grid spacing must be positive"));
        }
        let cells = ((upper - lower) / spacing).round().max(1.0) as usize;
        Self::new(lower, upper, cells + 1)
    }

    pub fn spacing(&self) -> f64 {
        if self.count > 1 {
            (self.upper - self.lower) / (self.count - 1) as f64
        } else {
            0.0
        }
    }

    pub fn coord(&self, i: usize) -> f64 {
        if self.count == 1 {
            return self.lower;
        }
        // Pin the last node to `upper` exactly.
        if i + 1 == self.count {
            self.upper
        } else {
            self.lower + i as f64 * self.spacing()
        }
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lower, self.upper)
    }

    /// Index of the nearest node; exact midpoints round up.
    pub fn nearest(&self, x: f64) -> usize {
        if self.count == 1 {
            return 0;
        }
        let u = (self.clamp(x) - self.lower) / self.spacing();
        ((u + 0.5).floor() as usize).min(self.count - 1)
    }

    /// Cell index `i` and fraction `w` such that `x = (1-w)·coord(i) + w·coord(i+1)`.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        if self.count == 1 {
            return (0, 0.0);
        }
        let u = (self.clamp(x) - self.lower) / self.spacing();
        let i = (u.floor() as usize).min(self.count - 2);
        (i, (u - i as f64).clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Axis>,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::invalid("grid needs at least one axis"));
        }
        Ok(Self { axes })
    }

    /// Uniform grid over the box `[lower, upper]` with the given per-axis spacing.
    pub fn from_spacing(lower: &[f64], upper: &[f64], spacing: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != spacing.len() {
            return Err(Error::invalid("grid bounds and spacings differ in length"));
        }
        let axes = lower
            .iter()
            .zip(upper)
            .zip(spacing)
            .map(|((&lo, &hi), &h)| Axis::with_spacing(lo, hi, h))
            .collect::<Result<Vec<_>>>()?;
        Self::new(axes)
    }

    pub fn uniform_1d(lower: f64, upper: f64, count: usize) -> Result<Self> {
        Self::new(vec![Axis::new(lower, upper, count)?])
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, i: usize) -> &Axis {
        &self.axes[i]
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.axes[axis].spacing()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a.lower).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a.upper).collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.count).collect()
    }

    /// Stride of each axis in the flat node ordering.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dim()];
        for i in (0..self.dim().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.axes[i + 1].count;
        }
        strides
    }

    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for i in (0..self.dim()).rev() {
            let n = self.axes[i].count;
            idx[i] = flat % n;
            flat /= n;
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, a)| acc * a.count + i)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.point_into(flat, &mut out);
        out
    }

    pub fn point_into(&self, mut flat: usize, out: &mut [f64]) {
        for i in (0..self.dim()).rev() {
            let n = self.axes[i].count;
            out[i] = self.axes[i].coord(flat % n);
            flat /= n;
        }
    }

    /// Neighbour of `flat` one step along `axis` in direction `dir` (±1).
    pub fn neighbor(&self, flat: usize, axis: usize, dir: i32) -> Option<usize> {
        let idx = self.unravel(flat);
        let i = idx[axis] as i64 + dir as i64;
        if i < 0 || i >= self.axes[axis].count as i64 {
            return None;
        }
        let stride = self.strides()[axis];
        Some(if dir > 0 {
            flat + stride
        } else {
            flat - stride
        })
    }

    /// True when the node lies on the boundary of a non-degenerate axis.
    pub fn is_boundary(&self, flat: usize) -> bool {
        self.unravel(flat)
            .iter()
            .zip(&self.axes)
            .any(|(&i, a)| a.count > 1 && (i == 0 || i + 1 == a.count))
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.axes)
            .all(|(&v, a)| v >= a.lower && v <= a.upper)
    }

    pub fn clamp_point(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.axes).map(|(&v, a)| a.clamp(v)).collect()
    }

    pub fn nearest(&self, x: &[f64]) -> usize {
        let idx: Vec<usize> = x
            .iter()
            .zip(&self.axes)
            .map(|(&v, a)| a.nearest(v))
            .collect();
        self.ravel(&idx)
    }

    /// Trapezoidal quadrature weight of a node (product of 1-D weights).
    /// Degenerate axes contribute a factor of one.
    pub fn trapezoid_weight(&self, flat: usize) -> f64 {
        self.unravel(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| {
                if a.count == 1 {
                    1.0
                } else if i == 0 || i + 1 == a.count {
                    0.5 * a.spacing()
                } else {
                    a.spacing()
                }
            })
            .product()
    }

    /// True when the node lies in the centred box of half the width.
    pub fn in_inner_half(&self, flat: usize) -> bool {
        let p = self.point(flat);
        p.iter().zip(&self.axes).all(|(&v, a)| {
            let c = 0.5 * (a.lower + a.upper);
            let r = 0.25 * (a.upper - a.lower);
            (v - c).abs() <= r + 1e-12 * r.max(1.0)
        })
    }

    /// Same box, `factor` times as many cells per axis.
    pub fn refined(&self, factor: usize) -> Grid {
        let axes = self
            .axes
            .iter()
            .map(|a| Axis {
                count: if a.count > 1 {
                    (a.count - 1) * factor.max(1) + 1
                } else {
                    1
                },
                ..*a
            })
            .collect();
        Grid { axes }
    }

    /// Grid with `axis` prepended (used for time × space grids).
    pub fn prepend(&self, axis: Axis) -> Grid {
        let mut axes = Vec::with_capacity(self.dim() + 1);
        axes.push(axis);
        axes.extend_from_slice(&self.axes);
        Grid { axes }
    }

    /// Grid without its first axis.
    pub fn tail(&self) -> Result<Grid> {
        Grid::new(self.axes[1..].to_vec())
    }
}
