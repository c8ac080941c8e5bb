//! Gap reports: CSV for machines, aligned text for people.
//!
//! The CSV starts with `#key=value` metadata lines followed by a header row
//! and one row per η. Floats use the shortest round-trip representation and
//! missing Monte Carlo columns are empty, so parsing a rendered report gives
//! back an identical value.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Axis, Grid};
use crate::hjb::Criterion;

/// How the cost of each mollified policy is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationMode {
    #[default]
    Pde,
    Mc,
    Both,
}

impl EvaluationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvaluationMode::Pde => "pde",
            EvaluationMode::Mc => "mc",
            EvaluationMode::Both => "both",
        }
    }

    pub fn uses_pde(self) -> bool {
        self != EvaluationMode::Mc
    }

    pub fn uses_mc(self) -> bool {
        self != EvaluationMode::Pde
    }
}

impl FromStr for EvaluationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pde" => Ok(EvaluationMode::Pde),
            "mc" => Ok(EvaluationMode::Mc),
            "both" => Ok(EvaluationMode::Both),
            other => Err(Error::invalid(format!("unknown evaluation mode `{other}`"))),
        }
    }
}

/// Monte Carlo columns of a row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McColumns {
    pub mean: f64,
    pub std_error: f64,
    pub unreliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub eta: f64,
    /// Finite-difference Lipschitz estimate of `v_η` on its grid.
    pub lipschitz: f64,
    /// `K / η` with the frozen kernel constant `K`.
    pub lipschitz_bound: f64,
    /// `J(v_η)`: the PDE cost, or the Monte Carlo mean in `mc` mode.
    pub cost: f64,
    /// `J(v_η) − J*`.
    pub gap: f64,
    pub pairing_gap: f64,
    pub mc: Option<McColumns>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub problem: String,
    pub criterion: Criterion,
    pub evaluation: EvaluationMode,
    pub probe: Vec<f64>,
    /// Optimal cost at the probe point from the dynamic programming solve.
    pub j_star: f64,
    /// PDE cost of the unsmoothed selector `v*`.
    pub selector_cost: f64,
    pub kernel_constant: f64,
    /// Absolute threshold on the final-rung gap, if one was requested.
    pub threshold: Option<f64>,
    pub seed: u64,
    pub tolerance: f64,
    pub grid: Grid,
    /// Names of failed assumption checks; empty when none failed.
    pub assumption_failures: Vec<String>,
    pub version: String,
    /// Rows by decreasing η.
    pub rows: Vec<GapRow>,
}

const COLUMNS: [&str; 9] = [
    "eta",
    "lipschitz",
    "lipschitz_bound",
    "cost",
    "gap",
    "pairing_gap",
    "mc_mean",
    "mc_std_error",
    "mc_unreliable",
];

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn split<T: FromStr>(s: &str, line: usize) -> Result<Vec<T>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|t| parse(t, line)).collect()
}

fn parse<T: FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad value `{s}`"),
    })
}

impl GapReport {
    /// The smallest-η row.
    pub fn final_row(&self) -> Option<&GapRow> {
        self.rows.last()
    }

    /// True when there is no threshold or the final gap is within it.
    pub fn threshold_met(&self) -> bool {
        match (self.threshold, self.final_row()) {
            (Some(eps), Some(row)) => row.gap <= eps,
            _ => true,
        }
    }

    /// Rows whose gap falls below `−5·tolerance`.
    pub fn negative_gaps(&self) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.gap < -5.0 * self.tolerance)
            .map(|r| r.eta)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut meta: Vec<(&str, String)> = vec![
            ("problem", self.problem.clone()),
            ("criterion", self.criterion.to_string()),
            ("evaluation", self.evaluation.as_str().to_string()),
            ("probe", join(&self.probe)),
            ("j_star", self.j_star.to_string()),
            ("selector_cost", self.selector_cost.to_string()),
            ("kernel_constant", self.kernel_constant.to_string()),
            ("threshold", self.threshold.map(|t| t.to_string()).unwrap_or_default()),
            ("seed", self.seed.to_string()),
            ("tolerance", self.tolerance.to_string()),
        ];
        let axes = self.grid.axes();
        meta.push(("grid_lower", join(&axes.iter().map(|a| a.lower).collect::<Vec<_>>())));
        meta.push(("grid_upper", join(&axes.iter().map(|a| a.upper).collect::<Vec<_>>())));
        meta.push(("grid_counts", join(&axes.iter().map(|a| a.count).collect::<Vec<_>>())));
        meta.push(("assumption_failures", self.assumption_failures.join(";")));
        meta.push(("version", self.version.clone()));

        let mut out = String::new();
        for (k, v) in meta {
            let _ = writeln!(out, "#{k}={v}");
        }
        out.push_str(&COLUMNS.join(","));
        out.push('\n');
        for r in &self.rows {
            let (mean, se, flag) = match r.mc {
                Some(mc) => (mc.mean.to_string(), mc.std_error.to_string(), mc.unreliable.to_string()),
                None => Default::default(),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{mean},{se},{flag}",
                r.eta, r.lipschitz, r.lipschitz_bound, r.cost, r.gap, r.pairing_gap
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut meta = BTreeMap::new();
        let mut rows = Vec::new();
        let mut seen_header = false;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest.split_once('=').ok_or_else(|| Error::Parse {
                    line: line_no,
                    msg: "metadata line lacks `=`".into(),
                })?;
                meta.insert(k.to_string(), (v.to_string(), line_no));
                continue;
            }
            if !seen_header {
                if line != COLUMNS.join(",") {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: "unexpected column header".into(),
                    });
                }
                seen_header = true;
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != COLUMNS.len() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected {} cells, found {}", COLUMNS.len(), cells.len()),
                });
            }
            let mc = if cells[6].is_empty() {
                None
            } else {
                Some(McColumns {
                    mean: parse(cells[6], line_no)?,
                    std_error: parse(cells[7], line_no)?,
                    unreliable: parse(cells[8], line_no)?,
                })
            };
            rows.push(GapRow {
                eta: parse(cells[0], line_no)?,
                lipschitz: parse(cells[1], line_no)?,
                lipschitz_bound: parse(cells[2], line_no)?,
                cost: parse(cells[3], line_no)?,
                gap: parse(cells[4], line_no)?,
                pairing_gap: parse(cells[5], line_no)?,
                mc,
            });
        }
        let get = |key: &str| -> Result<(&str, usize)> {
            meta.get(key)
                .map(|(v, l)| (v.as_str(), *l))
                .ok_or_else(|| Error::Parse {
                    line: 1,
                    msg: format!("metadata `{key}` is missing"),
                })
        };
        let num = |key: &str| -> Result<f64> {
            let (v, l) = get(key)?;
            parse(v, l)
        };
        let (lower, l1) = get("grid_lower")?;
        let (upper, l2) = get("grid_upper")?;
        let (counts, l3) = get("grid_counts")?;
        let lower: Vec<f64> = split(lower, l1)?;
        let upper: Vec<f64> = split(upper, l2)?;
        let counts: Vec<usize> = split(counts, l3)?;
        if lower.len() != upper.len() || lower.len() != counts.len() {
            return Err(Error::Parse {
                line: l1,
                msg: "grid metadata lists differ in length".into(),
            });
        }
        let axes = lower
            .iter()
            .zip(&upper)
            .zip(&counts)
            .map(|((&lo, &hi), &n)| Axis::new(lo, hi, n))
            .collect::<Result<Vec<_>>>()?;
        let (probe, lp) = get("probe")?;
        let (threshold, lt) = get("threshold")?;
        let (seed, ls) = get("seed")?;
        let failures = get("assumption_failures")?.0;
        Ok(Self {
            problem: get("problem")?.0.to_string(),
            criterion: get("criterion")?.0.parse()?,
            evaluation: get("evaluation")?.0.parse()?,
            probe: split(probe, lp)?,
            j_star: num("j_star")?,
            selector_cost: num("selector_cost")?,
            kernel_constant: num("kernel_constant")?,
            threshold: if threshold.is_empty() { None } else { Some(parse(threshold, lt)?) },
            seed: parse(seed, ls)?,
            tolerance: num("tolerance")?,
            grid: Grid::new(axes)?,
            assumption_failures: if failures.is_empty() {
                Vec::new()
            } else {
                failures.split(';').map(str::to_string).collect()
            },
            version: get("version")?.0.to_string(),
            rows,
        })
    }

    /// Human-readable summary with right-aligned columns.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "problem    {} ({}, {} evaluation)", self.problem, self.criterion, self.evaluation.as_str());
        let _ = writeln!(out, "probe      {:?}", self.probe);
        let _ = writeln!(out, "J*         {:.8}", self.j_star);
        let _ = writeln!(out, "J(v*)      {:.8}", self.selector_cost);
        if let Some(t) = self.threshold {
            let verdict = if self.threshold_met() { "met" } else { "missed" };
            let _ = writeln!(out, "threshold  {t:.6} ({verdict})");
        }
        if !self.assumption_failures.is_empty() {
            let _ = writeln!(out, "failed     {}", self.assumption_failures.join(", "));
        }
        out.push('\n');
        let mut table: Vec<[String; 7]> = vec![[
            "eta".into(),
            "lipschitz".into(),
            "K/eta".into(),
            "cost".into(),
            "gap".into(),
            "pairing".into(),
            "mc mean +- se".into(),
        ]];
        for r in &self.rows {
            let mc = match r.mc {
                Some(mc) => format!(
                    "{:.6} +- {:.6}{}",
                    mc.mean,
                    mc.std_error,
                    if mc.unreliable { " (unreliable)" } else { "" }
                ),
                None => "-".into(),
            };
            table.push([
                format!("{}", r.eta),
                format!("{:.4}", r.lipschitz),
                format!("{:.4}", r.lipschitz_bound),
                format!("{:.8}", r.cost),
                format!("{:.3e}", r.gap),
                format!("{:.3e}", r.pairing_gap),
                mc,
            ]);
        }
        let widths: Vec<usize> = (0..7).map(|c| table.iter().map(|row| row[c].len()).max().unwrap_or(0)).collect();
        for row in &table {
            let line: Vec<String> = row.iter().zip(&widths).map(|(cell, w)| format!("{cell:>w$}")).collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GapReport {
        GapReport {
            problem: "double_well".into(),
            criterion: Criterion::Discounted,
            evaluation: EvaluationMode::Both,
            probe: vec![0.1, -0.3],
            j_star: 0.123_456_789_012_345_67,
            selector_cost: 0.123_456_789_1,
            kernel_constant: 1.0 / 3.0,
            threshold: Some(1e-3),
            seed: u64::MAX,
            tolerance: 1e-10,
            grid: Grid::new(vec![Axis::new(-2.5, 2.5, 201).unwrap(), Axis::new(-0.1, 0.7, 9).unwrap()]).unwrap(),
            assumption_failures: vec!["A1 local Lipschitz".into()],
            version: "0.1.0".into(),
            rows: vec![
                GapRow {
                    eta: 0.8,
                    lipschitz: 2.0f64.sqrt(),
                    lipschitz_bound: 7.0 / 0.8,
                    cost: std::f64::consts::PI,
                    gap: -3e-9,
                    pairing_gap: 1e-300,
                    mc: Some(McColumns {
                        mean: 3.14,
                        std_error: 0.01,
                        unreliable: true,
                    }),
                },
                GapRow {
                    eta: 0.05,
                    lipschitz: 0.0,
                    lipschitz_bound: 140.0,
                    cost: 1.0 / 7.0,
                    gap: 5e-324,
                    pairing_gap: 0.0,
                    mc: None,
                },
            ],
        }
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let r = sample();
        let back = GapReport::from_csv(&r.to_csv()).unwrap();
        assert_eq!(back, r);
        let mut bare = r.clone();
        bare.threshold = None;
        bare.assumption_failures.clear();
        assert_eq!(GapReport::from_csv(&bare.to_csv()).unwrap(), bare);
    }

    #[test]
    fn csv_rejects_damage() {
        let csv = sample().to_csv();
        assert!(GapReport::from_csv(&csv.replace("#seed=", "#sead=")).is_err());
        assert!(GapReport::from_csv(&csv.replace("pairing_gap", "pairing")).is_err());
        let truncated: String = csv.lines().map(|l| format!("{}\n", l.trim_end_matches(",true"))).collect();
        assert!(GapReport::from_csv(&truncated).is_err());
    }

    #[test]
    fn text_summary_is_aligned() {
        let text = sample().to_text();
        assert!(text.contains("threshold"));
        let table: Vec<&str> = text.lines().skip_while(|l| !l.trim_start().starts_with("eta")).collect();
        assert_eq!(table.len(), 3);
    }

    #[test]
    fn threshold_uses_the_final_rung() {
        let mut r = sample();
        assert!(r.threshold_met());
        r.threshold = Some(-1.0);
        assert!(!r.threshold_met());
        assert_eq!(r.negative_gaps(), vec![0.8]);
    }
}
