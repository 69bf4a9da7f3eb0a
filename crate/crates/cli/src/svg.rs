//! Minimal hand-emitted SVG charts.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub struct BoxSummary {
    pub label: String,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub mean: f64,
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| {
            if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        Frame {
            x: widen(x),
            y: widen(y),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn open(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        HEIGHT / 2.0,
        escape(y_label)
    );
}

fn axes(out: &mut String, frame: &Frame) {
    let (left, right) = (MARGIN, WIDTH - MARGIN);
    let (top, bottom) = (MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        out,
        r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" stroke="black" fill="none"/>"#
    );
    for i in 0..=4 {
        let y = frame.y.0 + (frame.y.1 - frame.y.0) * i as f64 / 4.0;
        let py = frame.py(y);
        let _ = writeln!(
            out,
            r##"<line x1="{left}" y1="{py:.2}" x2="{right}" y2="{py:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            left - 6.0,
            py + 4.0,
            tick(y)
        );
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
}

/// Line chart with one polyline and legend entry per series; x ticks sit at
/// the distinct x values of the first series.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = bounds(all().map(|p| p.0));
    let (y0, y1) = bounds(all().map(|p| p.1));
    let frame = if x0.is_finite() {
        Frame::new((x0, x1), (y0.min(0.0), y1))
    } else {
        Frame::new((0.0, 1.0), (0.0, 1.0))
    };
    let mut out = String::new();
    open(&mut out, title, x_label, y_label);
    axes(&mut out, &frame);
    if let Some(first) = series.first() {
        for &(x, _) in &first.points {
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                frame.px(x),
                HEIGHT - MARGIN + 16.0,
                tick(x)
            );
        }
    }
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" stroke="{color}" stroke-width="2" fill="none"/>"#,
            pts.join(" ")
        );
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="12" height="3" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            WIDTH - MARGIN - 110.0,
            ly - 4.0,
            WIDTH - MARGIN - 94.0,
            ly,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Box chart from precomputed quartiles; the mean is drawn as a dot.
pub fn box_chart(title: &str, x_label: &str, y_label: &str, boxes: &[BoxSummary]) -> String {
    let (y0, y1) = bounds(boxes.iter().flat_map(|b| [b.q1, b.q3, b.mean, b.median]));
    let frame = if y0.is_finite() {
        Frame::new((0.0, boxes.len() as f64), (y0.min(0.0), y1))
    } else {
        Frame::new((0.0, 1.0), (0.0, 1.0))
    };
    let mut out = String::new();
    open(&mut out, title, x_label, y_label);
    axes(&mut out, &frame);
    let slot = (WIDTH - 2.0 * MARGIN) / boxes.len().max(1) as f64;
    for (i, b) in boxes.iter().enumerate() {
        if !(b.q1.is_finite() && b.q3.is_finite()) {
            continue;
        }
        let cx = frame.px(i as f64 + 0.5);
        let w = slot * 0.4;
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{w:.2}" height="{:.2}" fill="{color}" fill-opacity="0.3" stroke="{color}"/>"#,
            cx - w / 2.0,
            frame.py(b.q3),
            (frame.py(b.q1) - frame.py(b.q3)).max(1.0)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{my:.2}" x2="{:.2}" y2="{my:.2}" stroke="{color}" stroke-width="2"/>"#,
            cx - w / 2.0,
            cx + w / 2.0,
            my = frame.py(b.median)
        );
        let _ = writeln!(
            out,
            r#"<circle cx="{cx:.2}" cy="{:.2}" r="3" fill="black"/>"#,
            frame.py(b.mean)
        );
        let _ = writeln!(
            out,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            HEIGHT - MARGIN + 16.0,
            escape(&b.label)
        );
    }
    out.push_str("</svg>\n");
    out
}
