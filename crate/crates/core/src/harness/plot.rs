//! Error-versus-samples plots as standalone SVG.
//!
//! One curve per algorithm tag, averaged over agents and seeds, on a log-10
//! error axis. Output depends only on the input traces.

use std::fmt::Write as _;

use crate::harness::trace::ErrorTrace;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct PlotStyle {
    pub width: u32,
    pub height: u32,
    pub title: Option<String>,
}

impl Default for PlotStyle {
    fn default() -> Self {
        Self {
            width: 800,
            height: 500,
            title: None,
        }
    }
}

/// One plotted curve: `(samples, error)` points in buffer order.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Averages each algorithm tag over agents, then over seeds, per recorded
/// buffer. Curves keep the order in which tags first appear.
pub fn curves(traces: &[ErrorTrace]) -> Vec<Curve> {
    // (buffer, samples, error sum, count)
    type Points = Vec<(usize, usize, f64, usize)>;
    let mut acc: Vec<(String, Points)> = Vec::new();
    for t in traces {
        let idx = match acc.iter().position(|c| c.0 == t.algo) {
            Some(i) => i,
            None => {
                acc.push((t.algo.clone(), Vec::new()));
                acc.len() - 1
            }
        };
        let points = &mut acc[idx].1;
        for (buffer, samples, err) in t.agent_mean() {
            match points.iter_mut().find(|p| p.0 == buffer) {
                Some(p) => {
                    p.2 += err;
                    p.3 += 1;
                }
                None => points.push((buffer, samples, err, 1)),
            }
        }
    }
    acc.into_iter()
        .map(|(label, mut pts)| {
            pts.sort_by_key(|p| p.0);
            Curve {
                label,
                points: pts.into_iter().map(|(_, s, sum, n)| (s as f64, sum / n as f64)).collect(),
            }
        })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders `traces` as an SVG document. A curve with a single point is drawn
/// as a horizontal line across the plot.
pub fn emit_plot(traces: &[ErrorTrace], style: &PlotStyle) -> String {
    let curves = curves(traces);
    let (w, h) = (style.width as f64, style.height as f64);
    let (left, right, top, bottom) = (80.0, 200.0, 40.0, 60.0);
    let (pw, ph) = (w - left - right, h - top - bottom);

    let all = || curves.iter().flat_map(|c| c.points.iter());
    let x_min = all().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x_max = all().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let (x_min, x_max) = if x_min.is_finite() && x_max > x_min {
        (x_min.min(0.0), x_max)
    } else if x_max.is_finite() {
        (0.0, x_max.max(1.0))
    } else {
        (0.0, 1.0)
    };
    let logs: Vec<f64> = all().filter(|p| p.1 > 0.0).map(|p| p.1.log10()).collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (y_lo, y_hi) = if lo.is_finite() {
        let (a, b) = (lo.floor(), hi.ceil());
        if b > a {
            (a, b)
        } else {
            (a - 1.0, a + 1.0)
        }
    } else {
        (-1.0, 0.0)
    };
    let sx = |x: f64| left + (x - x_min) / (x_max - x_min) * pw;
    let sy = |v: f64| {
        let l = if v > 0.0 { v.log10().clamp(y_lo, y_hi) } else { y_lo };
        top + (y_hi - l) / (y_hi - y_lo) * ph
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif" font-size="12">"#,
        style.width, style.height, style.width, style.height
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if let Some(title) = &style.title {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
            left + pw / 2.0,
            escape(title)
        );
    }
    // Axes and grid.
    let _ = writeln!(
        svg,
        r#"<rect x="{left:.2}" y="{top:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    let mut decade = y_lo;
    while decade <= y_hi {
        let y = top + (y_hi - decade) / (y_hi - y_lo) * ph;
        let _ = writeln!(
            svg,
            r##"<line x1="{left:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
            left + pw
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{}</text>"#,
            left - 6.0,
            y + 4.0,
            decade as i64
        );
        decade += 1.0;
    }
    for i in 0..=4 {
        let x = x_min + (x_max - x_min) * i as f64 / 4.0;
        let px = sx(x);
        let _ = writeln!(
            svg,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            top + ph + 18.0,
            x.round() as i64
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">samples per agent</text>"#,
        left + pw / 2.0,
        h - 16.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">estimation error</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    // Curves and legend.
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = match c.points.as_slice() {
            [only] => vec![(x_min, only.1), (x_max, only.1)],
            pts => pts.to_vec(),
        };
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&c.label));
    }
    svg.push_str("</svg>\n");
    svg
}
