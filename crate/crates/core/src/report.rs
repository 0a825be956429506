//! Result aggregation into a method × target-domain table and its rendering.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{schema_err, value_err, Result};

/// Top-1 accuracy of one (method, target domain, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub method: String,
    pub target: String,
    pub seed: u64,
    /// Percentage in `[0, 100]`.
    pub top1: f64,
    pub n_eval: usize,
}

impl EvalResult {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.top1) {
            return Err(value_err!("top-1 accuracy {} outside [0, 100]", self.top1));
        }
        Ok(())
    }
}

/// Per-method rows of mean (over seeds) top-1 accuracy per target domain.
///
/// Cells and averages are stored at full precision; rounding happens only when
/// the table is displayed.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub methods: Vec<String>,
    pub targets: Vec<String>,
    /// `cells[row][column]`.
    pub cells: Vec<Vec<f64>>,
    /// Per-row arithmetic mean of `cells[row]`.
    pub averages: Vec<f64>,
}

/// Half-up rounding to one decimal, tolerant to binary representation error
/// (86.55 stored as 86.54999… still rounds to 86.6).
pub fn round_half_up_1(value: f64) -> f64 {
    libm::floor(value * 10.0 + 0.5 + 1e-7) / 10.0
}

fn first_seen(values: impl Iterator<Item = String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    values.filter(|v| seen.insert(v.clone())).collect()
}

/// Builds the table from a full grid of results.
///
/// Row and column order follow first appearance in `results`. Every seed must
/// cover every (method, target) pair exactly once.
pub fn aggregate(results: &[EvalResult]) -> Result<ResultTable> {
    if results.is_empty() {
        return Err(schema_err!("no results to aggregate"));
    }
    let methods = first_seen(results.iter().map(|r| r.method.clone()));
    let targets = first_seen(results.iter().map(|r| r.target.clone()));
    let seeds: BTreeSet<u64> = results.iter().map(|r| r.seed).collect();

    let mut grid: BTreeMap<(&str, &str, u64), f64> = BTreeMap::new();
    for r in results {
        r.validate()?;
        if grid.insert((r.method.as_str(), r.target.as_str(), r.seed), r.top1).is_some() {
            return Err(schema_err!("duplicate result for method {} target {} seed {}", r.method, r.target, r.seed));
        }
    }
    let mut missing = Vec::new();
    for m in &methods {
        for t in &targets {
            for s in &seeds {
                if !grid.contains_key(&(m.as_str(), t.as_str(), *s)) {
                    missing.push(format!("{m}/{t}/seed{s}"));
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(schema_err!("incomplete result grid, missing cells: {}", missing.join(", ")));
    }

    let cells: Vec<Vec<f64>> = methods
        .iter()
        .map(|m| {
            targets
                .iter()
                .map(|t| seeds.iter().map(|s| grid[&(m.as_str(), t.as_str(), *s)]).sum::<f64>() / seeds.len() as f64)
                .collect()
        })
        .collect();
    let averages = cells.iter().map(|row| row.iter().sum::<f64>() / row.len() as f64).collect();
    Ok(ResultTable { methods, targets, cells, averages })
}

/// Emphasis of one displayed cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Emphasis {
    None,
    Best,
    SecondBest,
}

impl ResultTable {
    /// Column values at full precision, with the average column last.
    fn column(&self, c: usize) -> Vec<f64> {
        if c < self.targets.len() {
            self.cells.iter().map(|row| row[c]).collect()
        } else {
            self.averages.clone()
        }
    }

    /// Emphasis per `[row][column]` (average column last), ranking the
    /// displayed one-decimal values. Every row sharing the best value is
    /// marked best; every row sharing the next distinct value is second best.
    pub fn emphasis(&self) -> Vec<Vec<Emphasis>> {
        let cols = self.targets.len() + 1;
        let mut marks = alloc::vec![alloc::vec![Emphasis::None; cols]; self.methods.len()];
        for c in 0..cols {
            let shown: Vec<i64> = self.column(c).iter().map(|v| libm::round(round_half_up_1(*v) * 10.0) as i64).collect();
            let mut distinct: Vec<i64> = shown.clone();
            distinct.sort_unstable_by(|a, b| b.cmp(a));
            distinct.dedup();
            for (r, v) in shown.iter().enumerate() {
                if Some(v) == distinct.first() {
                    marks[r][c] = Emphasis::Best;
                } else if Some(v) == distinct.get(1) {
                    marks[r][c] = Emphasis::SecondBest;
                }
            }
        }
        marks
    }

    /// Markdown table with one-decimal cells, best values in bold and second
    /// best underlined.
    pub fn to_markdown(&self) -> String {
        let marks = self.emphasis();
        let mut out = String::new();
        let _ = write!(out, "| Method |");
        for t in &self.targets {
            let _ = write!(out, " {t} |");
        }
        out.push_str(" Avg |\n|---|");
        for _ in 0..=self.targets.len() {
            out.push_str("---|");
        }
        out.push('\n');
        for (r, m) in self.methods.iter().enumerate() {
            let _ = write!(out, "| {m} |");
            for (c, v) in self.cells[r].iter().chain(core::iter::once(&self.averages[r])).enumerate() {
                let text = format!("{:.1}", round_half_up_1(*v));
                let _ = match marks[r][c] {
                    Emphasis::Best => write!(out, " **{text}** |"),
                    Emphasis::SecondBest => write!(out, " <u>{text}</u> |"),
                    Emphasis::None => write!(out, " {text} |"),
                };
            }
            out.push('\n');
        }
        out
    }

    /// Comma-separated table at full precision: `method,<targets...>,Avg`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method");
        for t in &self.targets {
            out.push(',');
            out.push_str(t);
        }
        out.push_str(",Avg\n");
        for (r, m) in self.methods.iter().enumerate() {
            out.push_str(m);
            for v in self.cells[r].iter().chain(core::iter::once(&self.averages[r])) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn row(method: &str, values: [f64; 4]) -> Vec<EvalResult> {
        ["Art", "Cartoon", "Photo", "Sketch"]
            .iter()
            .zip(values)
            .map(|(t, v)| EvalResult { method: method.to_string(), target: t.to_string(), seed: 0, top1: v, n_eval: 100 })
            .collect()
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(round_half_up_1(86.55), 86.6);
        assert_eq!(round_half_up_1(84.325), 84.3);
        assert_eq!(round_half_up_1(82.1), 82.1);
        assert_eq!(round_half_up_1(0.04), 0.0);
    }

    #[test]
    fn constant_row_average() {
        let t = aggregate(&row("m", [71.3; 4])).unwrap();
        assert_eq!(round_half_up_1(t.averages[0]), 71.3);
    }

    #[test]
    fn mean_over_seeds() {
        let mut rs = row("m", [50.0; 4]);
        rs.extend(row("m", [60.0; 4]).into_iter().map(|r| EvalResult { seed: 1, ..r }));
        let t = aggregate(&rs).unwrap();
        assert_eq!(t.cells[0], vec![55.0; 4]);
    }

    #[test]
    fn incomplete_grid_lists_missing_cells() {
        let mut rs = row("a", [1.0; 4]);
        rs.extend(row("b", [1.0; 4]));
        rs.remove(5);
        let err = aggregate(&rs).unwrap_err();
        assert!(format!("{err}").contains("b/Cartoon/seed0"), "{err}");
    }

    #[test]
    fn duplicate_cell_rejected() {
        let mut rs = row("a", [1.0; 4]);
        rs.push(rs[0].clone());
        assert!(aggregate(&rs).is_err());
    }

    #[test]
    fn single_row_is_bold_without_underline() {
        let md = aggregate(&row("only", [10.0, 20.0, 30.0, 40.0])).unwrap().to_markdown();
        assert!(md.contains("**10.0**") && md.contains("**25.0**"));
        assert!(!md.contains("<u>"));
    }

    #[test]
    fn ties_are_all_bold() {
        let mut rs = row("a", [50.0, 1.0, 1.0, 1.0]);
        rs.extend(row("b", [50.0, 2.0, 2.0, 2.0]));
        rs.extend(row("c", [40.0, 3.0, 3.0, 3.0]));
        let t = aggregate(&rs).unwrap();
        let marks = t.emphasis();
        assert_eq!(marks[0][0], Emphasis::Best);
        assert_eq!(marks[1][0], Emphasis::Best);
        assert_eq!(marks[2][0], Emphasis::SecondBest);
    }

    #[test]
    fn csv_keeps_full_precision() {
        let t = aggregate(&row("m", [87.7, 82.0, 96.6, 79.9])).unwrap();
        let csv = t.to_csv();
        assert!(csv.starts_with("method,Art,Cartoon,Photo,Sketch,Avg\n"));
        let avg: f64 = csv.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(avg, t.averages[0]);
    }
}
