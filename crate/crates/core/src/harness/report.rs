//! Cross-run comparison: a summary table (CSV) and a static SVG overlaying
//! per-algorithm mean ± std reward bands against cumulative training time.
//!
//! Threshold columns are relative to the best reward observed across *all*
//! compared runs, so "time to 25%" answers "how fast did this run reach a
//! quarter of the best anyone achieved" — a well-defined stand-in for the
//! optimal reward on environments where the optimum is unknown.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::curves::{smooth, time_to_threshold, LearningCurve};
use super::{Algo, HarnessError, RunMeta};
use crate::envs::EnvConfig;

/// One loaded run: identity plus its learning curve.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub algo: Algo,
    pub seed: u64,
    pub env: EnvConfig,
    pub curve: LearningCurve,
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub algo: Algo,
    pub seed: u64,
    /// Last value of the smoothed curve.
    pub final_smoothed_reward: f64,
    /// Best raw evaluation reward this run ever logged.
    pub best_reward: f64,
    /// Seconds of training until the smoothed curve reached 25/50/100% of
    /// the best reward across all compared runs; `None` = never.
    pub t25_s: Option<f64>,
    pub t50_s: Option<f64>,
    pub t100_s: Option<f64>,
}

#[derive(Debug)]
pub struct CompareReport {
    pub rows: Vec<ReportRow>,
    /// Best raw reward across all runs; thresholds are fractions of this.
    pub reference_reward: f64,
    pub csv: String,
    pub svg: String,
}

pub const REPORT_HEADER: &str =
    "algo,seed,final_smoothed_reward,best_reward,t25_s,t50_s,t100_s";

/// Load every run directory (anything containing `meta.json` + `curve.csv`)
/// under `dir`, sorted by directory name for deterministic reports.
pub fn load_runs(dir: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let mut entries: Vec<_> = fs::read_dir(dir)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join("meta.json").is_file())
        .collect();
    entries.sort();
    let mut runs = Vec::with_capacity(entries.len());
    for path in entries {
        let meta_text = fs::read_to_string(path.join("meta.json"))?;
        let meta: RunMeta = serde_json::from_str(&meta_text).map_err(|e| {
            HarnessError::Report(format!("{}: bad meta.json: {e}", path.display()))
        })?;
        let curve = LearningCurve::read_csv(&path.join("curve.csv"))?;
        runs.push(RunRecord {
            algo: meta.algo,
            seed: meta.seed,
            env: meta.env,
            curve,
        });
    }
    if runs.is_empty() {
        return Err(HarnessError::Report(format!(
            "no runs found under {}",
            dir.display()
        )));
    }
    Ok(runs)
}

/// Build the comparison table and plot for a set of runs of the same
/// environment. Curves are smoothed with `smoothing_window` before the
/// final-reward and threshold columns are computed.
pub fn compare_report(
    runs: &[RunRecord],
    smoothing_window: usize,
) -> Result<CompareReport, HarnessError> {
    if runs.is_empty() {
        return Err(HarnessError::Report("no runs to compare".into()));
    }
    if smoothing_window == 0 {
        return Err(HarnessError::Report("smoothing window must be at least 1".into()));
    }
    for run in runs {
        if run.curve.is_empty() {
            return Err(HarnessError::Report(format!(
                "run {}/seed {} has an empty curve",
                run.algo.label(),
                run.seed
            )));
        }
        if run.env != runs[0].env {
            return Err(HarnessError::Report(format!(
                "mismatched environments: run {}/seed {} was trained on a different \
                 environment than run {}/seed {}",
                run.algo.label(),
                run.seed,
                runs[0].algo.label(),
                runs[0].seed
            )));
        }
    }

    let reference_reward = runs
        .iter()
        .flat_map(|r| r.curve.rows())
        .map(|row| row.mean_reward)
        .fold(f64::NEG_INFINITY, f64::max);
    if !reference_reward.is_finite() {
        return Err(HarnessError::Report(
            "no finite rewards in any curve".into(),
        ));
    }

    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        let smoothed = smooth(&run.curve, smoothing_window);
        let best_reward = run
            .curve
            .rows()
            .iter()
            .map(|r| r.mean_reward)
            .fold(f64::NEG_INFINITY, f64::max);
        rows.push(ReportRow {
            algo: run.algo,
            seed: run.seed,
            final_smoothed_reward: smoothed.rows().last().expect("non-empty").mean_reward,
            best_reward,
            t25_s: time_to_threshold(&smoothed, 0.25, reference_reward),
            t50_s: time_to_threshold(&smoothed, 0.50, reference_reward),
            t100_s: time_to_threshold(&smoothed, 1.00, reference_reward),
        });
    }

    let csv = report_csv(&rows);
    let svg = render_svg(&band_series(runs, smoothing_window, 240));
    Ok(CompareReport {
        rows,
        reference_reward,
        csv,
        svg,
    })
}

/// Write `report.csv` and `report.svg` into `dir`.
pub fn write_report(dir: &Path, report: &CompareReport) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.csv"), &report.csv)?;
    fs::write(dir.join("report.svg"), &report.svg)?;
    Ok(())
}

fn report_csv(rows: &[ReportRow]) -> String {
    let fmt_t = |t: Option<f64>| match t {
        Some(seconds) => seconds.to_string(),
        None => "not_reached".to_string(),
    };
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.algo.label(),
            row.seed,
            row.final_smoothed_reward,
            row.best_reward,
            fmt_t(row.t25_s),
            fmt_t(row.t50_s),
            fmt_t(row.t100_s),
        );
    }
    out
}

/// One sampled point of an algorithm's cross-seed band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct BandPoint {
    pub t: f64,
    pub mean: f64,
    pub std: f64,
}

/// Sample each algorithm's smoothed curves onto a shared wall-clock grid and
/// aggregate across seeds. Between evaluation points a curve holds its last
/// value; before its first point it holds the first (every run starts at
/// t = 0 in practice).
pub(crate) fn band_series(
    runs: &[RunRecord],
    smoothing_window: usize,
    samples: usize,
) -> Vec<(Algo, Vec<BandPoint>)> {
    let max_t = runs
        .iter()
        .filter_map(|r| r.curve.rows().last())
        .map(|row| row.wall_clock_s)
        .fold(0.0f64, f64::max);
    let span = if max_t > 0.0 { max_t } else { 1.0 };

    let value_at = |curve: &LearningCurve, t: f64| -> f64 {
        let rows = curve.rows();
        match rows.iter().rev().find(|row| row.wall_clock_s <= t) {
            Some(row) => row.mean_reward,
            None => rows.first().expect("non-empty curve").mean_reward,
        }
    };

    let mut series = Vec::new();
    for algo in [Algo::Es, Algo::Dqn, Algo::EsThenDqn] {
        let smoothed: Vec<LearningCurve> = runs
            .iter()
            .filter(|r| r.algo == algo)
            .map(|r| smooth(&r.curve, smoothing_window))
            .collect();
        if smoothed.is_empty() {
            continue;
        }
        let mut points = Vec::with_capacity(samples);
        for i in 0..samples {
            let t = span * i as f64 / (samples - 1) as f64;
            let values: Vec<f64> = smoothed.iter().map(|c| value_at(c, t)).collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / values.len() as f64;
            points.push(BandPoint {
                t,
                mean,
                std: var.sqrt(),
            });
        }
        series.push((algo, points));
    }
    series
}

fn algo_color(algo: Algo) -> &'static str {
    match algo {
        Algo::Es => "#1f77b4",
        Algo::Dqn => "#d62728",
        Algo::EsThenDqn => "#2ca02c",
    }
}

fn fmt_tick(value: f64) -> String {
    let magnitude = value.abs();
    if magnitude >= 1000.0 {
        format!("{value:.0}")
    } else if magnitude >= 10.0 {
        format!("{value:.1}")
    } else {
        format!("{value:.2}")
    }
}

/// A self-contained SVG: axes, per-algorithm mean lines with ±1 std bands,
/// and a legend. No external references.
fn render_svg(series: &[(Algo, Vec<BandPoint>)]) -> String {
    const WIDTH: f64 = 900.0;
    const HEIGHT: f64 = 540.0;
    const LEFT: f64 = 72.0;
    const RIGHT: f64 = 24.0;
    const TOP: f64 = 42.0;
    const BOTTOM: f64 = 58.0;
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;

    let mut t_max = 0.0f64;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (_, points) in series {
        for p in points {
            t_max = t_max.max(p.t);
            y_min = y_min.min(p.mean - p.std);
            y_max = y_max.max(p.mean + p.std);
        }
    }
    if t_max <= 0.0 {
        t_max = 1.0;
    }
    if !y_min.is_finite() || !y_max.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_min -= 1.0;
        y_max += 1.0;
    }
    let pad = 0.05 * (y_max - y_min);
    y_min -= pad;
    y_max += pad;

    let x_of = |t: f64| LEFT + plot_w * (t / t_max);
    let y_of = |v: f64| TOP + plot_h * (1.0 - (v - y_min) / (y_max - y_min));

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = write!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = write!(
        svg,
        r#"<text x="{:.1}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">learning curves (mean &#177; std over seeds)</text>"#,
        LEFT + plot_w / 2.0
    );

    // Grid and ticks.
    for i in 0..=5 {
        let frac = i as f64 / 5.0;
        let t = t_max * frac;
        let x = x_of(t);
        let _ = write!(
            svg,
            r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#dddddd" stroke-width="1"/>"##,
            TOP,
            TOP + plot_h
        );
        let _ = write!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" font-family="monospace" font-size="12" text-anchor="middle">{}</text>"#,
            TOP + plot_h + 18.0,
            fmt_tick(t)
        );
        let v = y_min + (y_max - y_min) * frac;
        let y = y_of(v);
        let _ = write!(
            svg,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd" stroke-width="1"/>"##,
            LEFT,
            LEFT + plot_w
        );
        let _ = write!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="monospace" font-size="12" text-anchor="end">{}</text>"#,
            LEFT - 8.0,
            y + 4.0,
            fmt_tick(v)
        );
    }

    // Bands first, then mean lines on top.
    for (algo, points) in series {
        let color = algo_color(*algo);
        let mut path = String::from("M");
        for p in points {
            let _ = write!(path, " {:.2},{:.2}", x_of(p.t), y_of(p.mean + p.std));
        }
        for p in points.iter().rev() {
            let _ = write!(path, " L {:.2},{:.2}", x_of(p.t), y_of(p.mean - p.std));
        }
        path.push_str(" Z");
        let _ = write!(
            svg,
            r#"<path d="{path}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#
        );
    }
    for (algo, points) in series {
        let color = algo_color(*algo);
        let mut line = String::new();
        for p in points {
            let _ = write!(line, "{:.2},{:.2} ", x_of(p.t), y_of(p.mean));
        }
        let _ = write!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
            line.trim_end()
        );
    }

    // Axes.
    let _ = write!(
        svg,
        r#"<line x1="{LEFT:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black" stroke-width="1.2"/>"#,
        TOP + plot_h,
        LEFT + plot_w,
        TOP + plot_h
    );
    let _ = write!(
        svg,
        r#"<line x1="{LEFT:.1}" y1="{TOP:.1}" x2="{LEFT:.1}" y2="{:.1}" stroke="black" stroke-width="1.2"/>"#,
        TOP + plot_h
    );
    let _ = write!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle">cumulative training time (s)</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 14.0
    );
    let _ = write!(
        svg,
        r#"<text x="18" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.1})">mean reward</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    // Legend.
    for (i, (algo, _)) in series.iter().enumerate() {
        let y = TOP + 14.0 + 20.0 * i as f64;
        let color = algo_color(*algo);
        let _ = write!(
            svg,
            r#"<rect x="{:.1}" y="{:.1}" width="14" height="14" fill="{color}" fill-opacity="0.6"/>"#,
            LEFT + 10.0,
            y - 11.0
        );
        let _ = write!(
            svg,
            r#"<text x="{:.1}" y="{y:.1}" font-family="monospace" font-size="13">{}</text>"#,
            LEFT + 30.0,
            algo.label()
        );
    }

    svg.push_str("</svg>\n");
    svg
}
