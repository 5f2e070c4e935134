//! Just enough SVG for bar, scatter and line charts.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

const PALETTE: [&str; 8] = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f"];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Frame {
    out: String,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(title: &str, xlabel: &str, ylabel: &str, (x0, x1): (f64, f64), (y0, y1): (f64, f64)) -> Self {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
        let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
        let _ = writeln!(out, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 15.0, escape(xlabel));
        let _ = writeln!(
            out,
            r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(ylabel)
        );
        let (x1, y1) = (if x1 > x0 { x1 } else { x0 + 1.0 }, if y1 > y0 { y1 } else { y0 + 1.0 });
        let mut f = Self { out, x0, x1, y0, y1 };
        for i in 0..=4 {
            let v = y0 + (f.y1 - y0) * i as f64 / 4.0;
            let y = f.py(v);
            let _ = writeln!(f.out, r##"<line x1="{LEFT}" x2="{}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/>"##, W - RIGHT);
            let _ = writeln!(f.out, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, LEFT - 6.0, y + 4.0);
        }
        f
    }

    fn px(&self, v: f64) -> f64 {
        LEFT + (v - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        H - BOTTOM - (v - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }

    fn x_tick(&mut self, x: f64, label: &str) {
        let _ = writeln!(self.out, r#"<text x="{x:.1}" y="{}" text-anchor="middle" font-size="10">{}</text>"#, H - BOTTOM + 16.0, escape(label));
    }

    fn legend(&mut self, names: &[String]) {
        for (i, name) in names.iter().enumerate() {
            let y = TOP + 10.0 + 18.0 * i as f64;
            let x = W - RIGHT + 12.0;
            let _ = writeln!(self.out, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/>"#, y - 9.0, color(i));
            let _ = writeln!(self.out, r#"<text x="{}" y="{y}">{}</text>"#, x + 15.0, escape(name));
        }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

/// Grouped bars: `values[g][s]` is series `s` within group `g`.
pub fn grouped_bars(title: &str, ylabel: &str, groups: &[String], series: &[String], values: &[Vec<Option<f64>>]) -> String {
    let all = values.iter().flatten().flatten().copied();
    let lo = all.clone().fold(0.0f64, f64::min);
    let hi = all.fold(1.0f64, f64::max);
    let mut f = Frame::new(title, "", ylabel, (0.0, groups.len().max(1) as f64), (lo, hi));
    let slot = 1.0 / (series.len().max(1) as f64 + 1.0);
    for (g, name) in groups.iter().enumerate() {
        let center = f.px(g as f64 + 0.5);
        f.x_tick(center, name);
        for (s, v) in values[g].iter().enumerate() {
            let Some(v) = v else { continue };
            let left = f.px(g as f64 + slot * (s as f64 + 0.5));
            let width = f.px(slot) - f.px(0.0);
            let (top, base) = (f.py(v.max(0.0)), f.py(v.min(0.0)));
            let _ = writeln!(
                f.out,
                r#"<rect x="{left:.1}" y="{top:.1}" width="{width:.1}" height="{:.1}" fill="{}"><title>{}: {v:.4}</title></rect>"#,
                base - top,
                color(s),
                escape(&series[s])
            );
        }
    }
    f.legend(series);
    f.finish()
}

pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    pub area: f64,
    pub series: usize,
    pub label: String,
}

/// Scatter with marker area given in square pixels.
pub fn scatter(title: &str, xlabel: &str, ylabel: &str, series: &[String], points: &[ScatterPoint]) -> String {
    let range = |vals: Vec<f64>| {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() {
            let pad = ((hi - lo) * 0.1).max(0.05);
            (lo - pad, hi + pad)
        } else {
            (0.0, 1.0)
        }
    };
    let xr = range(points.iter().map(|p| p.x).collect());
    let yr = range(points.iter().map(|p| p.y).collect());
    let mut f = Frame::new(title, xlabel, ylabel, xr, yr);
    for i in 0..=4 {
        let v = f.x0 + (f.x1 - f.x0) * i as f64 / 4.0;
        let x = f.px(v);
        f.x_tick(x, &format!("{v:.2}"));
    }
    for p in points {
        let r = (p.area / std::f64::consts::PI).sqrt();
        let _ = writeln!(
            f.out,
            r#"<circle cx="{:.1}" cy="{:.1}" r="{r:.2}" fill="{}" fill-opacity="0.6" stroke="black"><title>{}</title></circle>"#,
            f.px(p.x),
            f.py(p.y),
            color(p.series),
            escape(&p.label)
        );
    }
    f.legend(series);
    f.finish()
}

/// Lines over a log-scaled integer x axis with a tick at every grid value.
pub fn log_lines(title: &str, xlabel: &str, ylabel: &str, grid: &[usize], lines: &[(String, Vec<(usize, f64)>)]) -> String {
    let max_x = lines.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.0)).chain(grid.iter().copied()).max().unwrap_or(1);
    let mut f = Frame::new(title, xlabel, ylabel, (0.0, (max_x.max(2) as f64).ln()), (0.0, 1.0));
    for &n in grid {
        let x = f.px((n as f64).ln());
        let _ = writeln!(f.out, r##"<line x1="{x:.1}" x2="{x:.1}" y1="{TOP}" y2="{}" stroke="#eee"/>"##, H - BOTTOM);
        if n <= 5 || n % 30 == 0 || n == 150 {
            f.x_tick(x, &n.to_string());
        }
    }
    for (i, (_, pts)) in lines.iter().enumerate() {
        let d: Vec<String> = pts.iter().map(|&(n, v)| format!("{:.1},{:.1}", f.px((n as f64).ln()), f.py(v))).collect();
        let _ = writeln!(f.out, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#, d.join(" "), color(i));
    }
    let names: Vec<String> = lines.iter().map(|(n, _)| n.clone()).collect();
    f.legend(&names);
    f.finish()
}
