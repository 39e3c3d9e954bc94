//! Learning curves: the time-stamped series every training run emits, plus
//! smoothing, threshold scans, and a plain CSV representation.
//!
//! A curve row records a single evaluation point: how many optimizer
//! iterations and environment steps had elapsed, how much *training* wall
//! clock had been spent (evaluation pauses the clock), and the greedy
//! policy's mean/std return over the held-out evaluation episodes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("curve csv line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("curve row {row}: {column} decreased ({previous} -> {value})")]
    NonMonotonic {
        row: usize,
        column: &'static str,
        previous: f64,
        value: f64,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One evaluation point of a training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningCurveRow {
    /// Optimizer progress: generations for the evolutionary optimizer,
    /// environment steps for the value learner.
    pub iteration: u64,
    /// Environment steps consumed by training so far (evaluation episodes
    /// are not counted).
    pub env_steps_cum: u64,
    /// Cumulative training time in seconds; evaluation pauses the clock.
    pub wall_clock_s: f64,
    /// Mean greedy return over the held-out evaluation episodes.
    pub mean_reward: f64,
    /// Population standard deviation of those returns.
    pub std_reward: f64,
}

/// An append-only series of evaluation points with non-decreasing
/// `env_steps_cum` and `wall_clock_s` columns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    rows: Vec<LearningCurveRow>,
}

pub const CURVE_HEADER: &str = "iteration,env_steps_cum,wall_clock_s,mean_reward,std_reward";

impl LearningCurve {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[LearningCurveRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Append a row, enforcing the cumulative-axis invariants.
    pub fn push(&mut self, row: LearningCurveRow) -> Result<(), CurveError> {
        if let Some(last) = self.rows.last() {
            if row.env_steps_cum < last.env_steps_cum {
                return Err(CurveError::NonMonotonic {
                    row: self.rows.len(),
                    column: "env_steps_cum",
                    previous: last.env_steps_cum as f64,
                    value: row.env_steps_cum as f64,
                });
            }
            if row.wall_clock_s < last.wall_clock_s {
                return Err(CurveError::NonMonotonic {
                    row: self.rows.len(),
                    column: "wall_clock_s",
                    previous: last.wall_clock_s,
                    value: row.wall_clock_s,
                });
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn from_rows(rows: Vec<LearningCurveRow>) -> Result<Self, CurveError> {
        let mut curve = Self::new();
        for row in rows {
            curve.push(row)?;
        }
        Ok(curve)
    }

    /// Serialize to CSV. Floats use Rust's shortest round-trip formatting,
    /// so `from_csv(to_csv())` reproduces every value bit-exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CURVE_HEADER);
        out.push('\n');
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                row.iteration, row.env_steps_cum, row.wall_clock_s, row.mean_reward, row.std_reward
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, CurveError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == CURVE_HEADER => {}
            Some((_, header)) => {
                return Err(CurveError::Parse {
                    line: 1,
                    message: format!("expected header {CURVE_HEADER:?}, found {header:?}"),
                })
            }
            None => {
                return Err(CurveError::Parse {
                    line: 1,
                    message: "empty file".into(),
                })
            }
        }
        let mut curve = Self::new();
        for (index, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(CurveError::Parse {
                    line: index + 1,
                    message: format!("expected 5 fields, found {}", fields.len()),
                });
            }
            let parse_err = |what: &str, err: String| CurveError::Parse {
                line: index + 1,
                message: format!("{what}: {err}"),
            };
            curve.push(LearningCurveRow {
                iteration: fields[0]
                    .parse()
                    .map_err(|e: std::num::ParseIntError| parse_err("iteration", e.to_string()))?,
                env_steps_cum: fields[1].parse().map_err(|e: std::num::ParseIntError| {
                    parse_err("env_steps_cum", e.to_string())
                })?,
                wall_clock_s: fields[2].parse().map_err(|e: std::num::ParseFloatError| {
                    parse_err("wall_clock_s", e.to_string())
                })?,
                mean_reward: fields[3].parse().map_err(|e: std::num::ParseFloatError| {
                    parse_err("mean_reward", e.to_string())
                })?,
                std_reward: fields[4].parse().map_err(|e: std::num::ParseFloatError| {
                    parse_err("std_reward", e.to_string())
                })?,
            })?;
        }
        Ok(curve)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), CurveError> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, CurveError> {
        Self::from_csv(&fs::read_to_string(path)?)
    }
}

/// Trailing moving average over `mean_reward` with partial windows at the
/// start: row `i` becomes the mean of rows `max(0, i+1-window) ..= i`. All
/// other columns are copied through unchanged.
///
/// `window` must be ≥ 1 (a window of 1 is the identity).
pub fn smooth(curve: &LearningCurve, window: usize) -> LearningCurve {
    assert!(window >= 1, "smoothing window must be at least 1");
    let rows = curve.rows();
    let mut smoothed = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        // Each window is summed afresh: a sliding running sum would leak
        // rounding error across rows and break the window-1 identity.
        let start = (i + 1).saturating_sub(window);
        let sum: f64 = rows[start..=i].iter().map(|r| r.mean_reward).sum();
        smoothed.push(LearningCurveRow {
            mean_reward: sum / (i + 1 - start) as f64,
            ..*row
        });
    }
    LearningCurve { rows: smoothed }
}

/// First `wall_clock_s` at which the curve's `mean_reward` reaches
/// `fraction · reference_reward`, or `None` if it never does. The rows are
/// scanned as given; callers who want the smoothed crossing pass a
/// [`smooth`]ed curve.
pub fn time_to_threshold(
    curve: &LearningCurve,
    fraction: f64,
    reference_reward: f64,
) -> Option<f64> {
    assert!(
        fraction > 0.0 && fraction <= 1.0,
        "fraction must lie in (0, 1]"
    );
    assert!(reference_reward.is_finite(), "reference reward must be finite");
    let threshold = fraction * reference_reward;
    curve
        .rows()
        .iter()
        .find(|row| row.mean_reward >= threshold)
        .map(|row| row.wall_clock_s)
}
