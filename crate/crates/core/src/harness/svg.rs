//! Hand-written SVG learning curves.

use std::fmt::Write as _;

pub const MOVING_AVERAGE_WINDOW: usize = 100;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 540.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 200.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// One labelled curve of `(step, value)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Trailing mean over the last `window` values (fewer at the start).
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Round step for about `target` ticks across `span`.
fn nice_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let r = raw / mag;
    let nice = if r < 1.5 {
        1.0
    } else if r < 3.5 {
        2.0
    } else if r < 7.5 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.0e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Overlay of every series as a raw polyline plus its trailing moving
/// average, with step on the x axis and return on the y axis.
pub fn learning_curve_svg(title: &str, series: &[Series], window: usize) -> String {
    let finite = || {
        series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|(x, y)| x.is_finite() && y.is_finite())
    };
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in finite() {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| MARGIN_TOP + (y1 - y) / (y1 - y0) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    let _ = writeln!(svg, r#"<g class="axes" stroke="black" stroke-width="1">"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}"/>"#,
        MARGIN_LEFT,
        MARGIN_TOP + plot_h,
        MARGIN_LEFT + plot_w
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}"/>"#,
        MARGIN_LEFT,
        MARGIN_TOP,
        MARGIN_TOP + plot_h
    );
    let _ = writeln!(svg, "</g>");

    let _ = writeln!(svg, r#"<g class="ticks" fill="black">"#);
    let step = nice_step(x1 - x0, 8.0);
    let mut t = (x0 / step).ceil() * step;
    while t <= x1 + 1e-9 * step {
        let x = sx(t);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{0:.2}" x2="{x:.2}" y2="{1:.2}" stroke="black"/>"#,
            MARGIN_TOP + plot_h,
            MARGIN_TOP + plot_h + 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            MARGIN_TOP + plot_h + 20.0,
            fmt_tick(t)
        );
        t += step;
    }
    let step = nice_step(y1 - y0, 6.0);
    let mut t = (y0 / step).ceil() * step;
    while t <= y1 + 1e-9 * step {
        let y = sy(t);
        let _ = writeln!(
            svg,
            r#"<line x1="{0:.2}" y1="{y:.2}" x2="{1:.2}" y2="{y:.2}" stroke="black"/>"#,
            MARGIN_LEFT - 5.0,
            MARGIN_LEFT
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 8.0,
            y + 4.0,
            fmt_tick(t)
        );
        t += step;
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">step</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{0:.2}" text-anchor="middle" transform="rotate(-90 20 {0:.2})">return</text>"#,
        MARGIN_TOP + plot_h / 2.0
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let label = escape(&s.label);
        let pts: Vec<(f64, f64)> = s
            .points
            .iter()
            .copied()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let avg = moving_average(&ys, window);
        let path = |values: &mut dyn Iterator<Item = (f64, f64)>| {
            values
                .map(|(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let raw = path(&mut pts.iter().copied());
        let smooth = path(&mut pts.iter().map(|p| p.0).zip(avg.iter().copied()));
        let _ = writeln!(svg, r#"<g class="series" data-label="{label}">"#);
        let _ = writeln!(
            svg,
            r#"<polyline class="raw" fill="none" stroke="{color}" stroke-opacity="0.3" stroke-width="1" points="{raw}"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<polyline class="moving-average" fill="none" stroke="{color}" stroke-width="2" points="{smooth}"/>"#
        );
        let _ = writeln!(svg, "</g>");
        let ly = MARGIN_TOP + 16.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{label}</text>"#, lx + 26.0, ly + 4.0);
    }
    svg.push_str("</svg>\n");
    svg
}
