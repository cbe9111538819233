//! Static SVG charts for experiment reports.
//!
//! Output depends only on the data: coordinates are printed with a fixed
//! number of decimals and nothing time- or environment-dependent is written,
//! so identical inputs give byte-identical files.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 70.0;
const PALETTE: [&str; 6] = ["#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    /// One value per category (bar chart) or per x position (line chart);
    /// NaN leaves a gap.
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Series {
            name: name.into(),
            values,
        }
    }
}

/// Grouped bars: one group per category, one bar per series.
#[derive(Debug, Clone, PartialEq)]
pub struct BarChart {
    pub title: String,
    pub y_label: String,
    pub categories: Vec<String>,
    pub series: Vec<Series>,
}

/// Polylines over shared numeric x positions.
#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x: Vec<f64>,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Tick step from {1, 2, 5} x 10^k giving about `n` intervals over `span`.
fn nice_step(span: f64, n: f64) -> f64 {
    let raw = (span / n).max(1e-12);
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

/// Axis range covering the finite values and zero, snapped to ticks.
fn value_range<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((0.0f64, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if hi - lo < 1e-12 { (lo, lo + 1.0) } else { (lo, hi) };
    let step = nice_step(hi - lo, 5.0);
    ((lo / step).floor() * step, (hi / step).ceil() * step, step)
}

struct Frame {
    svg: String,
    lo: f64,
    hi: f64,
}

impl Frame {
    fn new(title: &str, y_label: &str, lo: f64, hi: f64, step: f64) -> Self {
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            (LEFT + WIDTH - RIGHT) / 2.0,
            escape(title)
        );
        let mut f = Frame { svg, lo, hi };
        let n_ticks = ((hi - lo) / step).round() as i64;
        for i in 0..=n_ticks {
            let v = lo + i as f64 * step;
            let y = f.y(v);
            let _ = writeln!(
                f.svg,
                r##"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
                WIDTH - RIGHT
            );
            let _ = writeln!(
                f.svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                y + 4.0,
                tick_label(v, step)
            );
        }
        let _ = writeln!(
            f.svg,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            (TOP + HEIGHT - BOTTOM) / 2.0,
            (TOP + HEIGHT - BOTTOM) / 2.0,
            escape(y_label)
        );
        f
    }

    fn y(&self, v: f64) -> f64 {
        let plot_h = HEIGHT - TOP - BOTTOM;
        TOP + plot_h * (self.hi - v) / (self.hi - self.lo)
    }

    fn axes(&mut self) {
        let zero = self.y(0.0);
        let _ = writeln!(
            self.svg,
            r#"<line x1="{LEFT:.2}" y1="{zero:.2}" x2="{:.2}" y2="{zero:.2}" stroke="black"/>"#,
            WIDTH - RIGHT
        );
        let _ = writeln!(
            self.svg,
            r#"<line x1="{LEFT:.2}" y1="{TOP:.2}" x2="{LEFT:.2}" y2="{:.2}" stroke="black"/>"#,
            HEIGHT - BOTTOM
        );
    }

    fn legend(&mut self, names: &[&str]) {
        for (i, name) in names.iter().enumerate() {
            let y = TOP + 10.0 + 20.0 * i as f64;
            let x = WIDTH - RIGHT + 16.0;
            let _ = writeln!(
                self.svg,
                r#"<rect x="{x:.2}" y="{:.2}" width="12" height="12" fill="{}"/>"#,
                y - 10.0,
                PALETTE[i % PALETTE.len()]
            );
            let _ = writeln!(self.svg, r#"<text x="{:.2}" y="{y:.2}">{}</text>"#, x + 18.0, escape(name));
        }
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10()).ceil() as usize };
    let s = format!("{v:.decimals$}");
    // avoid "-0"
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

impl BarChart {
    pub fn to_svg(&self) -> String {
        let (lo, hi, step) = value_range(self.series.iter().flat_map(|s| s.values.iter()));
        let mut f = Frame::new(&self.title, &self.y_label, lo, hi, step);
        let plot_w = WIDTH - LEFT - RIGHT;
        let n_cat = self.categories.len().max(1) as f64;
        let group_w = plot_w / n_cat;
        let bar_w = group_w * 0.8 / self.series.len().max(1) as f64;
        let zero = f.y(0.0);
        for (c, cat) in self.categories.iter().enumerate() {
            let x0 = LEFT + group_w * c as f64 + group_w * 0.1;
            for (k, s) in self.series.iter().enumerate() {
                let Some(&v) = s.values.get(c).filter(|v| v.is_finite()) else {
                    continue;
                };
                let y = f.y(v);
                let _ = writeln!(
                    f.svg,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                    x0 + bar_w * k as f64,
                    y.min(zero),
                    bar_w,
                    (y - zero).abs(),
                    PALETTE[k % PALETTE.len()]
                );
            }
            let _ = writeln!(
                f.svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                x0 + group_w * 0.4,
                HEIGHT - BOTTOM + 18.0,
                escape(cat)
            );
        }
        f.axes();
        let names: Vec<&str> = self.series.iter().map(|s| s.name.as_str()).collect();
        f.legend(&names);
        f.finish()
    }
}

impl LineChart {
    pub fn to_svg(&self) -> String {
        let (lo, hi, step) = value_range(self.series.iter().flat_map(|s| s.values.iter()));
        let mut f = Frame::new(&self.title, &self.y_label, lo, hi, step);
        let (x_lo, x_hi) = self
            .x
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let x_span = if x_hi > x_lo { x_hi - x_lo } else { 1.0 };
        let plot_w = WIDTH - LEFT - RIGHT;
        let px = |v: f64| LEFT + 20.0 + (plot_w - 40.0) * (v - x_lo) / x_span;
        for &v in &self.x {
            let _ = writeln!(
                f.svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                px(v),
                HEIGHT - BOTTOM + 18.0,
                tick_label(v, 1.0)
            );
        }
        let _ = writeln!(
            f.svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + plot_w / 2.0,
            HEIGHT - BOTTOM + 44.0,
            escape(&self.x_label)
        );
        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let pts: Vec<String> = self
                .x
                .iter()
                .zip(&s.values)
                .filter(|(_, v)| v.is_finite())
                .map(|(&x, &v)| format!("{:.2},{:.2}", px(x), f.y(v)))
                .collect();
            let _ = writeln!(
                f.svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                pts.join(" ")
            );
            for p in &pts {
                let (x, y) = p.split_once(',').unwrap_or(("0", "0"));
                let _ = writeln!(f.svg, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
            }
        }
        f.axes();
        let names: Vec<&str> = self.series.iter().map(|s| s.name.as_str()).collect();
        f.legend(&names);
        f.finish()
    }
}
