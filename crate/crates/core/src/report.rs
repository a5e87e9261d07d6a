//! Run diagnostics: per-step CSV series and benchmark comparison tables.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

/// Per-component size counters for one step.
#[derive(Debug, Clone)]
pub struct ComponentState {
    pub name: String,
    pub dofs: usize,
    pub leaves: usize,
}

/// Everything a timestep reports to the run log.
#[derive(Debug, Clone, Default)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub components: Vec<ComponentState>,
    pub nnz: usize,
    pub solver_iterations: usize,
    pub assemble_seconds: f64,
    pub solve_seconds: f64,
    pub adapt_seconds: f64,
    /// problem-specific named scalars, appended as extra columns
    pub extra: Vec<(String, f64)>,
}

/// Collects step records and writes them as one CSV file.
///
/// Counter columns (sizes, iteration counts) are integers and identical
/// across repeated runs of the same configuration; timing columns are
/// wall-clock measurements and are not.
#[derive(Debug, Default)]
pub struct RunLog {
    records: Vec<StepRecord>,
}

impl RunLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, r: StepRecord) {
        self.records.push(r);
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let Some(first) = self.records.first() else {
            return out;
        };
        out.push_str("step,time");
        for c in &first.components {
            let _ = write!(out, ",{0}_dofs,{0}_leaves", c.name);
        }
        out.push_str(",nnz,solver_iterations,assemble_seconds,solve_seconds,adapt_seconds");
        for (k, _) in &first.extra {
            let _ = write!(out, ",{k}");
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},{}", r.step, fmt(r.time));
            for c in &r.components {
                let _ = write!(out, ",{},{}", c.dofs, c.leaves);
            }
            let _ = write!(
                out,
                ",{},{},{},{},{}",
                r.nnz,
                r.solver_iterations,
                fmt(r.assemble_seconds),
                fmt(r.solve_seconds),
                fmt(r.adapt_seconds)
            );
            for (_, v) in &r.extra {
                let _ = write!(out, ",{}", fmt(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

fn fmt(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.9e}")
    }
}

/// One row of a runtime comparison between two discretization modes.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub label: String,
    pub single_seconds: f64,
    pub multi_seconds: f64,
    pub single_dofs: usize,
    pub multi_dofs: usize,
}

impl BenchRow {
    pub fn speedup(&self) -> f64 {
        if self.multi_seconds > 0.0 {
            self.single_seconds / self.multi_seconds
        } else {
            f64::INFINITY
        }
    }

    /// Runtime saved by the multi-mesh side, as a percentage of the
    /// single-mesh time.
    pub fn percent_saved(&self) -> f64 {
        if self.single_seconds > 0.0 {
            100.0 * (1.0 - self.multi_seconds / self.single_seconds)
        } else {
            0.0
        }
    }
}

/// An aligned text table comparing single-mesh and multi-mesh runs.
#[derive(Debug, Clone, Default)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub fn push(&mut self, row: BenchRow) {
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<28} {:>12} {:>12} {:>12} {:>12} {:>9} {:>9}",
            "case", "single dofs", "multi dofs", "single [s]", "multi [s]", "speedup", "saved"
        );
        let _ = writeln!(out, "{}", "-".repeat(28 + 5 * 13 + 2 * 10));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<28} {:>12} {:>12} {:>12.4} {:>12.4} {:>8.2}x {:>8.1}%",
                r.label,
                r.single_dofs,
                r.multi_dofs,
                r.single_seconds,
                r.multi_seconds,
                r.speedup(),
                r.percent_saved()
            );
        }
        out
    }
}
