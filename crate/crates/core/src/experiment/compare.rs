use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::RunConfig;
use super::runner::{read_metrics, MetricsRow, CONFIG_FILE, METRICS_FILE};

pub const SUMMARY_FILE: &str = "comparison.csv";
pub const ACCURACY_CSV: &str = "accuracy_vs_epoch.csv";
pub const PARAMS_CSV: &str = "params_vs_epoch.csv";
pub const ACCURACY_SVG: &str = "accuracy_vs_epoch.svg";
pub const PARAMS_SVG: &str = "params_vs_epoch.svg";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run: String,
    pub epochs: usize,
    pub final_test_acc: f64,
    pub final_pruned_pct: f64,
    pub final_unmasked_params: usize,
    pub total_executed_macs: u64,
    pub total_wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub run: String,
    pub epoch: usize,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub runs: Vec<(String, Vec<MetricsRow>)>,
    pub summary: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

fn run_name(dir: &Path) -> String {
    fs::read_to_string(dir.join(CONFIG_FILE))
        .ok()
        .and_then(|t| RunConfig::from_json(&t).ok())
        .map(|c| c.name)
        .unwrap_or_else(|| {
            dir.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| dir.display().to_string())
        })
}

/// Reads the run directories and writes the summary table, the plot-source
/// CSVs and the two SVG line plots into `out_dir`.
pub fn compare(run_dirs: &[PathBuf], out_dir: &Path) -> Result<Comparison> {
    if run_dirs.is_empty() {
        return Err(Error::InvalidArgument("compare needs at least one run directory".into()));
    }
    let mut runs: Vec<(String, Vec<MetricsRow>)> = Vec::new();
    for dir in run_dirs {
        let rows = read_metrics(&dir.join(METRICS_FILE))?;
        let mut name = run_name(dir);
        if runs.iter().any(|(n, _)| *n == name) {
            name = format!("{name}#{}", runs.len() + 1);
        }
        runs.push((name, rows));
    }

    let summary: Vec<SummaryRow> = runs
        .iter()
        .map(|(name, rows)| {
            let last = rows.last().expect("read_metrics rejects empty files");
            SummaryRow {
                run: name.clone(),
                epochs: rows.len(),
                final_test_acc: last.test_acc,
                final_pruned_pct: last.pruned_pct,
                final_unmasked_params: last.unmasked_params,
                total_executed_macs: rows.iter().map(|r| r.executed_macs).sum(),
                total_wall_seconds: rows.iter().map(|r| r.wall_seconds).sum(),
            }
        })
        .collect();

    fs::create_dir_all(out_dir)?;
    let mut files = vec![write_csv(&out_dir.join(SUMMARY_FILE), &summary)?];
    let acc = series(&runs, |r| r.test_acc);
    let params = series(&runs, |r| r.unmasked_params as f64);
    files.push(write_csv(&out_dir.join(ACCURACY_CSV), &acc)?);
    files.push(write_csv(&out_dir.join(PARAMS_CSV), &params)?);

    for (name, points, title, y_label) in [
        (ACCURACY_SVG, &acc, "Test accuracy", "accuracy (%)"),
        (PARAMS_SVG, &params, "Trainable parameters", "unmasked parameters"),
    ] {
        let lines: Vec<(String, Vec<(f64, f64)>)> = runs
            .iter()
            .map(|(run, _)| {
                let pts = points
                    .iter()
                    .filter(|p| p.run == *run)
                    .map(|p| (p.epoch as f64, p.value))
                    .collect();
                (run.clone(), pts)
            })
            .collect();
        let path = out_dir.join(name);
        fs::write(&path, line_plot_svg(title, "epoch", y_label, &lines))?;
        files.push(path);
    }

    Ok(Comparison { runs, summary, files })
}

fn series(runs: &[(String, Vec<MetricsRow>)], value: impl Fn(&MetricsRow) -> f64) -> Vec<SeriesPoint> {
    runs.iter()
        .flat_map(|(name, rows)| {
            rows.iter().map(|r| SeriesPoint {
                run: name.clone(),
                epoch: r.epoch,
                value: value(r),
            })
        })
        .collect()
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Round step for about five axis ticks over `span`.
fn tick_step(span: f64) -> f64 {
    if span <= 0.0 || !span.is_finite() {
        return 1.0;
    }
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1e4 {
        format!("{:.0}k", v / 1e3)
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// A standalone SVG with one polyline per series, axes, ticks and a legend.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (80.0, 170.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);

    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    y0 = y0.min(0.0);
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let ystep = tick_step(y1 - y0);
    y1 = (y1 / ystep).ceil() * ystep;
    let xs = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let ys = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );

    let mut y = y0;
    while y <= y1 + ystep * 1e-9 {
        let py = ys(y);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#e0e0e0"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
            left + pw,
            left - 6.0,
            py + 4.0,
            fmt_tick(y)
        );
        y += ystep;
    }
    let xstep = tick_step(x1 - x0).max(1.0);
    let mut x = (x0 / xstep).ceil() * xstep;
    while x <= x1 + 1e-9 {
        let px = xs(x);
        let _ = writeln!(
            s,
            r#"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/><text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            top + ph,
            top + ph + 5.0,
            top + ph + 18.0,
            fmt_tick(x)
        );
        x += xstep;
    }
    let _ = writeln!(
        s,
        r#"<polyline points="{left},{top} {left},{:.1} {:.1},{:.1}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw,
        top + ph
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );

    for (i, (name, points)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.1},{:.1}", xs(x), ys(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            path.join(" ")
        );
        let ly = top + 10.0 + 20.0 * i as f64;
        let lx = left + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}
