//! Per-step records, the metrics CSV and the run summary.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::filter::Odometry;
use crate::geometry::ParticlePose;

pub const METRICS_HEADER: &str = "step,err_m,dispersion_m,ess,resampled,ms";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("metrics csv line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub truth: ParticlePose,
    pub estimate: ParticlePose,
    pub err_m: f64,
    pub dispersion_m: f64,
    pub ess: f64,
    pub resampled: bool,
    pub degenerate: bool,
    pub weight_sum: f64,
    pub ms: f64,
    pub measured_heading: f64,
    /// Odometry as fed to the filter, noise included.
    pub odometry: Odometry,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTrace {
    pub steps: Vec<StepRecord>,
    pub convergence_threshold_m: f64,
    pub lift_calls: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub steps: usize,
    pub final_error_m: f64,
    pub average_error_m: f64,
    pub convergence_step: Option<usize>,
}

/// Index of the first step from which every dispersion stays below
/// `threshold`.
pub fn convergence_step(dispersions: &[f64], threshold: f64) -> Option<usize> {
    let mut first = None;
    for (i, &d) in dispersions.iter().enumerate() {
        if d < threshold {
            first.get_or_insert(i);
        } else {
            first = None;
        }
    }
    first
}

impl Summary {
    pub fn from_rows(errors: &[f64], dispersions: &[f64], threshold: f64) -> Self {
        let n = errors.len();
        Self {
            steps: n,
            final_error_m: errors.last().copied().unwrap_or(f64::NAN),
            average_error_m: if n == 0 {
                f64::NAN
            } else {
                errors.iter().sum::<f64>() / n as f64
            },
            convergence_step: convergence_step(dispersions, threshold),
        }
    }

    pub fn converged(&self) -> bool {
        self.convergence_step.is_some()
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "steps: {}", self.steps)?;
        writeln!(f, "final_error_m: {:.3}", self.final_error_m)?;
        writeln!(f, "average_error_m: {:.3}", self.average_error_m)?;
        match self.convergence_step {
            Some(s) => writeln!(f, "convergence_step: {s}"),
            None => writeln!(f, "convergence_step: -"),
        }
    }
}

impl MetricsTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn errors(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.err_m).collect()
    }

    pub fn dispersions(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.dispersion_m).collect()
    }

    pub fn summary(&self) -> Summary {
        Summary::from_rows(
            &self.errors(),
            &self.dispersions(),
            self.convergence_threshold_m,
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(48 * (self.steps.len() + 1));
        out.push_str(METRICS_HEADER);
        out.push('\n');
        for s in &self.steps {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.step,
                s.err_m,
                s.dispersion_m,
                s.ess,
                u8::from(s.resampled),
                s.ms
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// One parsed row of a metrics CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvRow {
    pub step: usize,
    pub err_m: f64,
    pub dispersion_m: f64,
    pub ess: f64,
    pub resampled: bool,
    pub ms: f64,
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, MetricsError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        _ => {
            return Err(MetricsError::Parse {
                line: 1,
                msg: format!("expected header `{METRICS_HEADER}`"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| MetricsError::Parse { line: i + 1, msg };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
        rows.push(CsvRow {
            step: f[0].parse().map_err(|e| bad(format!("`{}`: {e}", f[0])))?,
            err_m: num(f[1])?,
            dispersion_m: num(f[2])?,
            ess: num(f[3])?,
            resampled: match f[4] {
                "0" => false,
                "1" => true,
                other => return Err(bad(format!("resampled flag `{other}`"))),
            },
            ms: num(f[5])?,
        });
    }
    Ok(rows)
}

/// Summary of a metrics CSV.
pub fn report(text: &str, threshold_m: f64) -> Result<Summary, MetricsError> {
    let rows = parse_csv(text)?;
    let errors: Vec<f64> = rows.iter().map(|r| r.err_m).collect();
    let disp: Vec<f64> = rows.iter().map(|r| r.dispersion_m).collect();
    Ok(Summary::from_rows(&errors, &disp, threshold_m))
}
