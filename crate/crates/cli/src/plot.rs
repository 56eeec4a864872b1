//! Deterministic SVG line and scatter plots, each with a CSV twin holding
//! exactly the plotted points.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{CliResult, Context};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const FONT: &str = "font-family=\"DejaVu Sans, Arial, sans-serif\"";
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Line,
    Points,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub mark: Mark,
}

impl Series {
    pub fn new(label: impl Into<String>, mark: Mark, points: impl IntoIterator<Item = (f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points: points.into_iter().collect(),
            mark,
        }
    }

    fn finite(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

/// Round tick values covering `[lo, hi]`, about `target` of them.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|i| i as f64 * step).collect()
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        let pad = if lo == 0.0 { 0.5 } else { 0.1 * lo.abs() };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn label_of(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    let s = format!("{v:.decimals$}");
    if s == "-0" || s.starts_with("-0.") && s.trim_start_matches("-0.").chars().all(|c| c == '0') {
        s[1..].to_string()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

impl Figure {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
        }
    }

    pub fn with(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }

    pub fn n_points(&self) -> usize {
        self.series.iter().map(|s| s.finite().count()).sum()
    }

    pub fn to_svg(&self) -> String {
        let (x0, x1) = range(self.series.iter().flat_map(|s| s.finite().map(|p| p.0)));
        let (y0, y1) = range(self.series.iter().flat_map(|s| s.finite().map(|p| p.1)));
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
        );
        let _ = writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"24\" {FONT} font-size=\"15\" text-anchor=\"middle\">{}</text>",
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>"
        );

        let xt = nice_ticks(x0, x1, 6);
        let xstep = if xt.len() > 1 { xt[1] - xt[0] } else { x1 - x0 };
        for &t in &xt {
            let x = sx(t);
            let _ = writeln!(
                s,
                "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
                TOP + ph,
                TOP + ph + 5.0
            );
            let _ = writeln!(
                s,
                "<text x=\"{x:.2}\" y=\"{:.2}\" {FONT} font-size=\"11\" text-anchor=\"middle\">{}</text>",
                TOP + ph + 18.0,
                label_of(t, xstep)
            );
        }
        let yt = nice_ticks(y0, y1, 5);
        let ystep = if yt.len() > 1 { yt[1] - yt[0] } else { y1 - y0 };
        for &t in &yt {
            let y = sy(t);
            let _ = writeln!(
                s,
                "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{LEFT:.2}\" y2=\"{y:.2}\" stroke=\"black\"/>",
                LEFT - 5.0
            );
            let _ = writeln!(
                s,
                "<line x1=\"{LEFT:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>",
                LEFT + pw
            );
            let _ = writeln!(
                s,
                "<text x=\"{:.2}\" y=\"{:.2}\" {FONT} font-size=\"11\" text-anchor=\"end\">{}</text>",
                LEFT - 8.0,
                y + 4.0,
                label_of(t, ystep)
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" {FONT} font-size=\"12\" text-anchor=\"middle\">{}</text>",
            LEFT + pw / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            "<text x=\"16\" y=\"{:.2}\" {FONT} font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{}</text>",
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<(f64, f64)> = series.finite().map(|(x, y)| (sx(x), sy(y))).collect();
            if series.mark == Mark::Line && pts.len() > 1 {
                let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                let _ = writeln!(
                    s,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
                    path.join(" ")
                );
            }
            for (x, y) in &pts {
                let _ = writeln!(s, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"{color}\"/>");
            }
            let ly = TOP + 10.0 + 18.0 * i as f64;
            let lx = WIDTH - RIGHT + 12.0;
            let _ = writeln!(
                s,
                "<rect x=\"{lx:.2}\" y=\"{:.2}\" width=\"12\" height=\"12\" fill=\"{color}\"/>",
                ly - 10.0
            );
            let _ = writeln!(
                s,
                "<text x=\"{:.2}\" y=\"{ly:.2}\" {FONT} font-size=\"11\">{}</text>",
                lx + 18.0,
                escape(&series.label)
            );
        }
        if self.n_points() == 0 {
            let _ = writeln!(
                s,
                "<text x=\"{:.2}\" y=\"{:.2}\" {FONT} font-size=\"12\" text-anchor=\"middle\">no data</text>",
                LEFT + pw / 2.0,
                TOP + ph / 2.0
            );
        }
        s.push_str("</svg>\n");
        s
    }

    /// One `series,x,y` row per plotted point.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("series,x,y\n");
        for series in &self.series {
            for (x, y) in series.finite() {
                let label = if series.label.contains([',', '"']) {
                    format!("\"{}\"", series.label.replace('"', "\"\""))
                } else {
                    series.label.clone()
                };
                let _ = writeln!(s, "{label},{x},{y}");
            }
        }
        s
    }

    /// Writes `<stem>.svg` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> CliResult<[PathBuf; 2]> {
        let svg = dir.join(format!("{stem}.svg"));
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&svg, self.to_svg()).at(&svg)?;
        std::fs::write(&csv, self.to_csv()).at(&csv)?;
        Ok([svg, csv])
    }
}
