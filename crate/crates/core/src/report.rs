//! Report emission: CSV tables, JSON echoes and static SVG charts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::write_merge_log;
use crate::error::{NhacError, Result};
use crate::io::{model_to_string, write_atomic};
use crate::pipeline::{IterationRow, RunReport, SweepRow};

pub const REPORT_CSV: &str = "report.csv";
pub const MERGE_LOG_CSV: &str = "merge_log.csv";
pub const CONFIG_JSON: &str = "config.json";
pub const SUMMARY_JSON: &str = "summary.json";
pub const MODEL_FILE: &str = "model.txt";

pub fn rows_to_csv(rows: &[IterationRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| NhacError::io(REPORT_CSV, e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<IterationRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(NhacError::from)).collect()
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    label: &'a str,
    seed: u64,
    wall_clock_secs: f64,
    iterations_run: usize,
    final_clusters: usize,
    best_rank1: Option<f64>,
    best_map: Option<f64>,
    aborted: Option<&'a str>,
}

/// Writes `report.csv`, `merge_log.csv`, `config.json`, `summary.json`,
/// `model.txt` and the trajectory charts into `dir`. Only `summary.json`
/// carries timing, so the other files are reproducible byte for byte.
pub fn write_run_dir(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| NhacError::io(dir, e))?;
    write_atomic(&dir.join(REPORT_CSV), rows_to_csv(&report.rows)?.as_bytes())?;
    let mut log = Vec::new();
    write_merge_log(&report.merge_log, &mut log)?;
    write_atomic(&dir.join(MERGE_LOG_CSV), &log)?;
    write_atomic(&dir.join(CONFIG_JSON), serde_json::to_string_pretty(&report.config)?.as_bytes())?;
    let summary = Summary {
        label: &report.label,
        seed: report.config.seed,
        wall_clock_secs: report.wall_clock_secs,
        iterations_run: report.rows.len().saturating_sub(1),
        final_clusters: report.final_row().clusters,
        best_rank1: report.best_rank1(),
        best_map: report.best_map(),
        aborted: report.aborted.as_deref(),
    };
    write_atomic(&dir.join(SUMMARY_JSON), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    write_atomic(&dir.join(MODEL_FILE), model_to_string(&report.model).as_bytes())?;
    write_trajectory_plots(&report.rows, dir)
}

pub fn write_trajectory_plots(rows: &[IterationRow], dir: &Path) -> Result<()> {
    write_atomic(&dir.join("trajectory.svg"), trajectory_svg(rows).as_bytes())?;
    write_atomic(&dir.join("nodes.svg"), node_bars_svg(rows).as_bytes())
}

/// One line of a component or criterion comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub rank1: Option<f64>,
    pub rank5: Option<f64>,
    pub rank10: Option<f64>,
    pub map: Option<f64>,
    pub pair_f1: Option<f64>,
    pub clusters: usize,
    pub best_rank1: Option<f64>,
    pub best_map: Option<f64>,
}

impl From<&RunReport> for ComparisonRow {
    fn from(r: &RunReport) -> Self {
        let last = r.final_row();
        Self {
            method: r.label.clone(),
            rank1: last.rank1,
            rank5: last.rank5,
            rank10: last.rank10,
            map: last.map,
            pair_f1: last.pair_f1,
            clusters: last.clusters,
            best_rank1: r.best_rank1(),
            best_map: r.best_map(),
        }
    }
}

pub fn comparison_csv(reports: &[RunReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(ComparisonRow::from(r))?;
    }
    let bytes = w.into_inner().map_err(|e| NhacError::io("comparison", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCsvRow {
    pub delta: f64,
    pub best_rank1: Option<f64>,
    pub best_map: Option<f64>,
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(SweepCsvRow {
            delta: r.delta,
            best_rank1: r.best_rank1,
            best_map: r.best_map,
        })?;
    }
    let bytes = w.into_inner().map_err(|e| NhacError::io("sweep", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn sweep_from_csv(text: &str) -> Result<Vec<SweepCsvRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(NhacError::from)).collect()
}

const PALETTE: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn svg_frame(title: &str, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    s
}

/// Static multi-series line chart.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y1) = (0.0, 1.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = svg_frame(title, x_label, y_label);
    let _ = writeln!(
        s,
        r#"<path d="M{l} {t} L{l} {b} L{r} {b}" stroke="black" fill="none"/>"#,
        l = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    for i in 0..=4 {
        let yv = y0 + (y1 - y0) * i as f64 / 4.0;
        let xv = x0 + (x1 - x0) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, MARGIN - 4.0, sy(yv) + 4.0, yv);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{:.2}</text>"#, sx(xv), HEIGHT - MARGIN + 16.0, xv);
    }
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for &(x, y) in &ser.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
        }
        let ly = MARGIN + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="12" height="3" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            WIDTH - MARGIN - 110.0,
            ly - 4.0,
            WIDTH - MARGIN - 94.0,
            ly,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Grouped bar chart with one group per category.
pub fn bar_chart(title: &str, y_label: &str, categories: &[String], series: &[(String, Vec<f64>)]) -> String {
    let y1 = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .fold(0.0f64, f64::max)
        .max(1.0);
    let mut s = svg_frame(title, "", y_label);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let group_w = plot_w / categories.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    let sy = |y: f64| HEIGHT - MARGIN - y / y1 * (HEIGHT - 2.0 * MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M{l} {t} L{l} {b} L{r} {b}" stroke="black" fill="none"/>"#,
        l = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    for (g, cat) in categories.iter().enumerate() {
        let gx = MARGIN + group_w * g as f64 + group_w * 0.1;
        for (k, (_, values)) in series.iter().enumerate() {
            let v = values.get(g).copied().unwrap_or(0.0);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                gx + bar_w * k as f64,
                sy(v),
                bar_w,
                HEIGHT - MARGIN - sy(v),
                PALETTE[k % PALETTE.len()]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            gx + group_w * 0.4,
            HEIGHT - MARGIN + 16.0,
            escape(cat)
        );
    }
    for (k, (name, _)) in series.iter().enumerate() {
        let ly = MARGIN + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="12" height="8" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            WIDTH - MARGIN - 110.0,
            ly - 8.0,
            PALETTE[k % PALETTE.len()],
            WIDTH - MARGIN - 94.0,
            ly,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn series_of(rows: &[IterationRow], name: &str, key: impl Fn(&IterationRow) -> Option<f64>) -> Series {
    Series {
        name: name.to_string(),
        points: rows
            .iter()
            .filter_map(|r| key(r).map(|v| (r.iteration as f64, v)))
            .collect(),
    }
}

/// Rank-1, mAP and pairwise F1 over iterations.
pub fn trajectory_svg(rows: &[IterationRow]) -> String {
    line_chart(
        "Retrieval and clustering quality per iteration",
        "iteration",
        "score",
        &[
            series_of(rows, "Rank-1", |r| r.rank1),
            series_of(rows, "mAP", |r| r.map),
            series_of(rows, "pairwise F1", |r| r.pair_f1),
        ],
    )
}

/// Hard and noise node percentages per iteration.
pub fn node_bars_svg(rows: &[IterationRow]) -> String {
    let rows: Vec<&IterationRow> = rows.iter().filter(|r| r.hard_pct.is_some()).collect();
    let categories = rows.iter().map(|r| r.iteration.to_string()).collect::<Vec<_>>();
    bar_chart(
        "Hard and noise nodes (% of all nodes)",
        "percent",
        &categories,
        &[
            ("hard".to_string(), rows.iter().map(|r| r.hard_pct.unwrap_or(0.0)).collect()),
            ("noise".to_string(), rows.iter().map(|r| r.noise_pct.unwrap_or(0.0)).collect()),
        ],
    )
}

pub fn sweep_svg(rows: &[SweepCsvRow]) -> String {
    let s = |name: &str, key: fn(&SweepCsvRow) -> Option<f64>| Series {
        name: name.to_string(),
        points: rows.iter().filter_map(|r| key(r).map(|v| (r.delta, v))).collect(),
    };
    line_chart(
        "Best retrieval scores versus delta",
        "delta",
        "score",
        &[s("best Rank-1", |r| r.best_rank1), s("best mAP", |r| r.best_map)],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: usize) -> IterationRow {
        IterationRow {
            iteration: i,
            clusters: 10 - i,
            rank1: Some(0.5),
            rank5: Some(0.75),
            rank10: Some(1.0),
            map: Some(0.4),
            pair_precision: None,
            pair_recall: None,
            pair_f1: None,
            trim_precision: None,
            trim_recall: None,
            hard_pct: Some(30.0),
            noise_pct: Some(10.0),
            id_loss: 1.25,
            triplet_loss: 0.0,
        }
    }

    #[test]
    fn csv_round_trip_keeps_missing_cells() {
        let rows = vec![row(0), row(1)];
        let text = rows_to_csv(&rows).unwrap();
        assert!(text.starts_with("iteration,clusters,rank1"));
        assert_eq!(rows_from_csv(&text).unwrap(), rows);
    }

    #[test]
    fn charts_are_well_formed() {
        let svg = trajectory_svg(&[row(0), row(1), row(2)]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 3);
        let bars = node_bars_svg(&[row(1)]);
        assert_eq!(bars.matches("<rect x=").count(), 2 + 2);
    }
}
