use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, CliResult};

/// Column layout of a CSV report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schema {
    pub name: &'static str,
    pub columns: &'static [&'static str],
}

pub const BENCH_MEM: Schema = Schema {
    name: "bench_mem",
    columns: &["tokens", "mixer", "peak_bytes", "live_bytes", "param_count"],
};

pub const BENCH_TIME: Schema = Schema {
    name: "bench_time",
    columns: &["tokens", "mixer", "median_seconds"],
};

pub const GRADCHECK: Schema = Schema {
    name: "gradcheck",
    columns: &["parameter", "checked", "rel_error", "passed"],
};

pub const VERIFY_THEORY: Schema = Schema {
    name: "verify_theory",
    columns: &["n", "r", "r_prime", "pattern_exact", "rank", "passed"],
};

pub const FIT_KERNEL: Schema = Schema {
    name: "fit_kernel",
    columns: &["variant", "terminal_mse", "best_rank1_mse", "rank", "passed"],
};

pub const LOSS_TRACE: Schema = Schema {
    name: "loss_trace",
    columns: &["step", "series", "loss"],
};

pub const TRAIN_SUMMARY: Schema = Schema {
    name: "train_summary",
    columns: &[
        "samples",
        "steps",
        "final_loss",
        "train_loss",
        "train_accuracy",
        "seconds",
    ],
};

pub fn write_csv(path: &Path, schema: &Schema, rows: &[Vec<String>]) -> CliResult<()> {
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != schema.columns.len()) {
        return Err(CliError::Schema(format!(
            "{} row {i} has {} fields, expected {}",
            schema.name,
            row.len(),
            schema.columns.len()
        )));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(schema.columns)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 20.0, 40.0, 55.0);
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn axis_value(v: f64, log: bool) -> Option<f64> {
    match (log, v > 0.0) {
        (true, true) => Some(v.log10()),
        (true, false) => None,
        (false, _) => v.is_finite().then_some(v),
    }
}

fn tick_label(v: f64, log: bool) -> String {
    let raw = if log { 10f64.powf(v) } else { v };
    if raw != 0.0 && (raw.abs() >= 1e5 || raw.abs() < 1e-2) {
        format!("{raw:.1e}")
    } else {
        format!("{raw:.3}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

/// Line chart with one polyline per series and a legend. Points that cannot
/// be placed on a log axis are skipped.
pub fn render_svg(chart: &Chart) -> String {
    let placed: Vec<Vec<(f64, f64)>> = chart
        .series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter_map(|&(x, y)| Some((axis_value(x, chart.log_x)?, axis_value(y, chart.log_y)?)))
                .collect()
        })
        .collect();
    let all: Vec<(f64, f64)> = placed.iter().flatten().copied().collect();
    let bounds = |f: fn(&(f64, f64)) -> f64| {
        let lo = all.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = all.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        match (lo.is_finite(), hi > lo) {
            (false, _) => (0.0, 1.0),
            (true, true) => (lo, hi),
            (true, false) => (lo - 0.5, lo + 0.5),
        }
    };
    let (x0, x1) = bounds(|p| p.0);
    let (y0, y1) = bounds(|p| p.1);
    let (ml, mr, mt, mb) = MARGIN;
    let (pw, ph) = (WIDTH - ml - mr, HEIGHT - mt - mb);
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(&chart.title)
    );
    let _ = writeln!(
        svg,
        r#"<path d="M{ml} {mt} V{} H{}" fill="none" stroke="black"/>"#,
        mt + ph,
        ml + pw
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            mt + ph + 18.0,
            tick_label(xv, chart.log_x)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            ml - 6.0,
            sy(yv) + 4.0,
            tick_label(yv, chart.log_y)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        ml + pw / 2.0,
        HEIGHT - 12.0,
        escape(&chart.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        escape(&chart.y_label)
    );
    for (k, pts) in placed.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            coords.join(" ")
        );
    }
    let _ = writeln!(svg, r#"<g class="legend">"#);
    for (k, s) in chart.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let y = mt + 10.0 + 18.0 * k as f64;
        let x = ml + 12.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{x}" y="{}" width="14" height="4" fill="{color}"/>"#,
            y - 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">{}</text>"#,
            x + 20.0,
            y + 1.0,
            escape(&s.name)
        );
    }
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");
    svg
}

pub fn write_svg(path: &Path, chart: &Chart) -> CliResult<()> {
    std::fs::write(path, render_svg(chart)).map_err(|e| CliError::io(path, e))
}
