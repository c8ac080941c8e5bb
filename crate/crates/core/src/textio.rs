//! Line-oriented text format shared by policies and value fields.
//!
//! The first line is a header of `key=value` pairs prefixed by `#smoothctl`;
//! list values are comma separated. Every following non-empty line holds the
//! values of one node, whitespace separated, in row-major node order.
//! Floats are written with their shortest round-trip representation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{Axis, Grid};

pub(crate) const MAGIC: &str = "#smoothctl";

#[derive(Debug, Default)]
pub(crate) struct Header {
    fields: BTreeMap<String, String>,
    order: Vec<String>,
}

impl Header {
    pub fn new(kind: &str) -> Self {
        let mut h = Header::default();
        h.set("kind", kind);
        h
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        if !self.fields.contains_key(key) {
            self.order.push(key.to_string());
        }
        self.fields.insert(key.to_string(), value.to_string());
    }

    pub fn set_list<T: ToString>(&mut self, key: &str, values: &[T]) {
        let s = values
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(",");
        self.set(key, s);
    }

    pub fn set_grid(&mut self, grid: &Grid) {
        self.set("dims", grid.dim());
        self.set_list("lower", &grid.lower());
        self.set_list("upper", &grid.upper());
        let spacing: Vec<f64> = (0..grid.dim()).map(|i| grid.spacing(i)).collect();
        self.set_list("spacing", &spacing);
        self.set_list("counts", &grid.counts());
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.fields
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| parse_err(1, format!("header is missing `{key}`")))
    }

    pub fn get_opt(&self, key: &str) -> Option<&str> {
        self.fields.get(key).map(String::as_str)
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| parse_err(1, format!("bad value `{raw}` for `{key}`")))
    }

    pub fn get_list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.get(key)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.parse()
                    .map_err(|_| parse_err(1, format!("bad list item `{s}` for `{key}`")))
            })
            .collect()
    }

    pub fn grid(&self) -> Result<Grid> {
        let lower: Vec<f64> = self.get_list("lower")?;
        let upper: Vec<f64> = self.get_list("upper")?;
        if lower.len() != upper.len() {
            return Err(parse_err(1, "grid bounds differ in length"));
        }
        // Node counts win over spacings; spacings alone are accepted for
        // hand-written files.
        let axes = if self.get_opt("counts").is_some() {
            let counts: Vec<usize> = self.get_list("counts")?;
            if counts.len() != lower.len() {
                return Err(parse_err(1, "grid lists differ in length"));
            }
            lower
                .iter()
                .zip(&upper)
                .zip(&counts)
                .map(|((&lo, &hi), &n)| Axis::new(lo, hi, n))
                .collect::<Result<Vec<_>>>()?
        } else {
            let spacing: Vec<f64> = self.get_list("spacing")?;
            if spacing.len() != lower.len() {
                return Err(parse_err(1, "grid lists differ in length"));
            }
            lower
                .iter()
                .zip(&upper)
                .zip(&spacing)
                .map(|((&lo, &hi), &h)| Axis::with_spacing(lo, hi, h))
                .collect::<Result<Vec<_>>>()?
        };
        Grid::new(axes)
    }

    pub fn render(&self) -> String {
        let mut s = String::from(MAGIC);
        for key in &self.order {
            let _ = write!(s, " {}={}", key, self.fields[key]);
        }
        s
    }

    pub fn parse(line: &str) -> Result<Self> {
        let rest = line
            .strip_prefix(MAGIC)
            .ok_or_else(|| parse_err(1, "missing #smoothctl header"))?;
        let mut h = Header::default();
        for tok in rest.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| parse_err(1, format!("header token `{tok}` lacks `=`")))?;
            h.set(k, v);
        }
        Ok(h)
    }
}

pub(crate) fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Render a header plus one row of `width` values per node.
pub(crate) fn render_rows(header: &Header, values: &[f64], width: usize) -> String {
    let mut out = header.render();
    out.push('\n');
    for row in values.chunks(width.max(1)) {
        let line = row
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Parse the text back into a header and the flat value array.
pub(crate) fn parse_rows(text: &str, width: usize) -> Result<(Header, Vec<f64>)> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty input"))?;
    let header = Header::parse(first.trim())?;
    let mut values = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| parse_err(i + 1, format!("bad number `{t}`")))
            })
            .collect::<Result<_>>()?;
        if row.len() != width {
            return Err(parse_err(
                i + 1,
                format!("expected {width} values, found {}", row.len()),
            ));
        }
        values.extend(row);
    }
    Ok((header, values))
}

/// CSV with one row per node: node coordinates then the node values.
pub(crate) fn render_csv(grid: &Grid, coord_names: &[String], value_names: &[String], values: &[f64]) -> String {
    let width = value_names.len().max(1);
    let mut out = coord_names
        .iter()
        .chain(value_names)
        .cloned()
        .collect::<Vec<_>>()
        .join(",");
    out.push('\n');
    let mut p = vec![0.0; grid.dim()];
    for (k, row) in values.chunks(width).enumerate() {
        grid.point_into(k, &mut p);
        let line = p
            .iter()
            .chain(row)
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        out.push_str(&line);
        out.push('\n');
    }
    out
}
