//! Figures and tables: plain SVG line charts with a CSV twin.

use std::fmt::Write as _;

use crate::error::{param, Result};
use crate::io::MetricsRow;
use crate::ssp::DelayDeviation;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Metrics-file column that can be charted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    TrainLoss,
    HoldoutMae,
    HoldoutRmse,
    HoldoutR,
}

impl Column {
    pub fn name(self) -> &'static str {
        match self {
            Column::TrainLoss => "train_loss",
            Column::HoldoutMae => "holdout_mae",
            Column::HoldoutRmse => "holdout_rmse",
            Column::HoldoutR => "holdout_r",
        }
    }

    fn get(self, r: &MetricsRow) -> Option<f64> {
        match self {
            Column::TrainLoss => Some(r.train_loss),
            Column::HoldoutMae => r.holdout_mae,
            Column::HoldoutRmse => r.holdout_rmse,
            Column::HoldoutR => r.holdout_r,
        }
    }
}

impl std::str::FromStr for Column {
    type Err = crate::DohaError;

    fn from_str(s: &str) -> Result<Self> {
        [Column::TrainLoss, Column::HoldoutMae, Column::HoldoutRmse, Column::HoldoutR]
            .into_iter()
            .find(|c| c.name() == s)
            .map_or_else(|| param(format!("unknown metrics column {s:?}")), Ok)
    }
}

/// One column of a metrics file against epoch; `NA` cells are skipped.
pub fn metrics_series(label: &str, rows: &[MetricsRow], column: Column) -> Series {
    let points = rows.iter().filter_map(|r| column.get(r).map(|y| (r.epoch as f64, y))).collect();
    Series { label: label.to_string(), points }
}

pub fn delay_sweep_series(label: &str, rows: &[DelayDeviation]) -> Series {
    Series { label: label.to_string(), points: rows.iter().map(|r| (r.delay as f64, r.max_interior_dev)).collect() }
}

pub fn delay_sweep_csv(rows: &[DelayDeviation]) -> String {
    let mut out = String::from("delay,max_interior_dev\n");
    for r in rows {
        let _ = writeln!(out, "{},{}", r.delay, r.max_interior_dev);
    }
    out
}

/// Long-format table `series,<x>,<y>`.
pub fn series_csv(series: &[Series], x_name: &str, y_name: &str) -> String {
    let mut out = format!("series,{x_name},{y_name}\n");
    for s in series {
        let label = if s.label.contains([',', '"', '\n']) {
            format!("\"{}\"", s.label.replace('"', "\"\""))
        } else {
            s.label.clone()
        };
        for (x, y) in &s.points {
            let _ = writeln!(out, "{label},{x},{y}");
        }
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn span(lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo > 1e-12 * hi.abs().max(1.0) {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Renders one polyline per series with axes, ticks and a legend.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String> {
    if series.is_empty() {
        return param("a chart needs at least one series");
    }
    let pts = || series.iter().flat_map(|s| s.points.iter().copied()).filter(|(x, y)| x.is_finite() && y.is_finite());
    if pts().next().is_none() {
        return param("no finite points to plot");
    }
    let (x0, x1) = span(pts().map(|p| p.0).fold(f64::INFINITY, f64::min), pts().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max));
    let (y0, y1) = span(pts().map(|p| p.1).fold(f64::INFINITY, f64::min), pts().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max));
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(svg, r##"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="#ccc"/>"##, TOP, TOP + ph);
        let _ = writeln!(svg, r##"<line x1="{LEFT}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="#ccc"/>"##, LEFT + pw);
        let _ = writeln!(svg, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, TOP + ph + 16.0, tick(xv));
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, py + 4.0, tick(yv));
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        TOP + ph / 2.0,
        escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"><title>{}</title></polyline>"#,
            path.join(" "),
            escape(&s.label)
        );
        let ly = TOP + 10.0 + 20.0 * k as f64;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&s.label));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}
