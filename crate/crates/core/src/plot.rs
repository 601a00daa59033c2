//! Deterministic SVG line plots of time series and Morris scatter plots.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sensitivity::{normalize, OutputReport};
use crate::simulation::SERIES_COLUMNS;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Columns of a series file by name.
#[derive(Debug, Clone)]
pub struct SeriesTable {
    pub label: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl SeriesTable {
    pub fn parse(text: &str, label: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Plot(format!("{label}: empty file")))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for (i, l) in lines.enumerate() {
            let row: Vec<f64> = l
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Plot(format!("{label}: line {}: {e}", i + 2)))?;
            if row.len() != header.len() {
                return Err(Error::Plot(format!(
                    "{label}: line {} has {} fields, header has {}",
                    i + 2,
                    row.len(),
                    header.len()
                )));
            }
            rows.push(row);
        }
        Ok(Self { label: label.to_string(), header, rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name).ok_or_else(|| {
            Error::Plot(format!("{}: no column `{name}` (available: {})", self.label, self.header.join(", ")))
        })?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// Rounded tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }

    fn axes(&self, s: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{title}</text>"#, W / 2.0);
        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        let _ = writeln!(s, r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y1 - y0);
        for t in ticks(self.x.0, self.x.1) {
            let x = self.px(t);
            let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{y1}" x2="{x:.2}" y2="{}" stroke="black"/>"#, y1 + 5.0);
            let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, y1 + 18.0, fmt_tick(t));
        }
        for t in ticks(self.y.0, self.y.1) {
            let y = self.py(t);
            let _ = writeln!(s, r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#, x0 - 5.0);
            let _ = writeln!(s, r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#dddddd"/>"##);
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 8.0, y + 4.0, fmt_tick(t));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, (x0 + x1) / 2.0, H - 15.0);
        let _ = writeln!(
            s,
            r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{ylabel}</text>"#,
            (y0 + y1) / 2.0
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line plot of `metric` against time in days, one line per table.
pub fn plot_series(tables: &[SeriesTable], metric: &str) -> Result<String> {
    if !SERIES_COLUMNS.contains(&metric) || metric == "time" {
        return Err(Error::Plot(format!(
            "unknown metric `{metric}` (known: {})",
            SERIES_COLUMNS.iter().filter(|c| **c != "time").copied().collect::<Vec<_>>().join(", ")
        )));
    }
    if tables.is_empty() {
        return Err(Error::Plot("no series given".into()));
    }
    let mut lines = Vec::new();
    for t in tables {
        let x: Vec<f64> = t.column("time")?.iter().map(|h| h / 24.0).collect();
        let y = t.column(metric)?;
        lines.push((t.label.clone(), x, y));
    }
    let frame = Frame {
        x: range(lines.iter().flat_map(|l| l.1.iter().copied())),
        y: range(lines.iter().flat_map(|l| l.2.iter().copied())),
    };
    let mut s = String::new();
    frame.axes(&mut s, &escape(metric), "time [d]", &escape(metric));
    for (k, (label, x, y)) in lines.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = x
            .iter()
            .zip(y)
            .filter(|(_, v)| v.is_finite())
            .map(|(a, b)| format!("{:.2},{:.2}", frame.px(*a), frame.py(*b)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        let ly = TOP + 16.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            LEFT + 10.0,
            LEFT + 30.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, LEFT + 36.0, ly + 4.0, escape(label));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// `ς` against `μ*`, both normalized per output, marker size growing with
/// the report time.
pub fn morris_scatter(reports: &[OutputReport]) -> Result<String> {
    let first = reports.first().ok_or_else(|| Error::Plot("no sensitivity results".into()))?;
    let all: Vec<_> = reports.iter().flat_map(|r| r.summaries.iter().cloned()).collect();
    let norm = normalize(&all);
    let t_max = reports.iter().map(|r| r.time).fold(0.0, f64::max);
    let frame = Frame { x: (0.0, 1.1), y: (0.0, 1.1) };
    let mut s = String::new();
    frame.axes(&mut s, &escape(&first.output), "normalized mu*", "normalized sigma");
    let mut idx = 0;
    for r in reports {
        let radius = 3.0 + 6.0 * if t_max > 0.0 { r.time / t_max } else { 1.0 };
        for (i, name) in r.inputs.iter().enumerate() {
            let (m, g) = norm[idx];
            idx += 1;
            let Some(g) = g else { continue };
            if !m.is_finite() {
                continue;
            }
            let color = COLORS[i % COLORS.len()];
            let (x, y) = (frame.px(m), frame.py(g));
            let _ = writeln!(
                s,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="{radius:.2}" fill="{color}" fill-opacity="0.6" stroke="{color}"/>"#
            );
            if r.time == t_max {
                let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, x + radius + 2.0, y - 2.0, escape(name));
            }
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}
