//! Minimal SVG line plots and heatmaps.
//!
//! Output depends only on the input numbers: coordinates use a fixed
//! three-decimal format and colors come from a fixed palette.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    /// Non-finite `y` values break the polyline.
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
    /// Draw markers instead of a line.
    pub scatter: bool,
}

impl Series {
    pub fn line(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            points,
            dashed: false,
            scatter: false,
        }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }

    pub fn scatter(mut self) -> Self {
        self.scatter = true;
        self
    }
}

#[derive(Clone, Debug, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" { "0".into() } else { s.to_string() }
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.3}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

impl LinePlot {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        LinePlot {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
        }
    }

    pub fn push(&mut self, s: Series) {
        self.series.push(s);
    }

    pub fn render(&self) -> String {
        let all = || self.series.iter().flat_map(|s| s.points.iter()).filter(|p| p.1.is_finite());
        let (x0, x1) = bounds(all().map(|p| p.0));
        let (y0, y1) = bounds(all().map(|p| p.1));
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let py = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

        let mut out = String::new();
        header(&mut out, &self.title);
        let _ = writeln!(
            out,
            r##"<rect x="{LEFT:.3}" y="{TOP:.3}" width="{pw:.3}" height="{ph:.3}" fill="none" stroke="#333"/>"##
        );
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let xv = x0 + t * (x1 - x0);
            let yv = y0 + t * (y1 - y0);
            let _ = writeln!(
                out,
                r##"<line x1="{0:.3}" y1="{1:.3}" x2="{0:.3}" y2="{2:.3}" stroke="#ddd"/><text x="{0:.3}" y="{3:.3}" text-anchor="middle">{4}</text>"##,
                px(xv),
                TOP,
                TOP + ph,
                TOP + ph + 16.0,
                tick_label(xv)
            );
            let _ = writeln!(
                out,
                r##"<line x1="{0:.3}" y1="{1:.3}" x2="{2:.3}" y2="{1:.3}" stroke="#ddd"/><text x="{3:.3}" y="{4:.3}" text-anchor="end">{5}</text>"##,
                LEFT,
                py(yv),
                LEFT + pw,
                LEFT - 6.0,
                py(yv) + 4.0,
                tick_label(yv)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 16.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="18" y="{0:.3}" text-anchor="middle" transform="rotate(-90 18 {0:.3})">{1}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            if s.scatter {
                for &(x, y) in s.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
                    let _ = writeln!(out, r#"<circle cx="{:.3}" cy="{:.3}" r="2.5" fill="{color}"/>"#, px(x), py(y));
                }
            } else {
                let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
                let mut run: Vec<String> = Vec::new();
                let flush = |run: &mut Vec<String>, out: &mut String| {
                    if run.len() > 1 {
                        let _ = writeln!(
                            out,
                            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
                            run.join(" ")
                        );
                    }
                    run.clear();
                };
                for &(x, y) in &s.points {
                    if x.is_finite() && y.is_finite() {
                        run.push(format!("{:.3},{:.3}", px(x), py(y)));
                    } else {
                        flush(&mut run, &mut out);
                    }
                }
                flush(&mut run, &mut out);
            }
            let ly = TOP + 10.0 + 18.0 * i as f64;
            let lx = LEFT + pw + 12.0;
            let _ = writeln!(
                out,
                r#"<line x1="{:.3}" y1="{ly:.3}" x2="{:.3}" y2="{ly:.3}" stroke="{color}" stroke-width="2"/><text x="{:.3}" y="{:.3}">{}</text>"#,
                lx,
                lx + 20.0,
                lx + 26.0,
                ly + 4.0,
                escape(&s.label)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Linear ramp from a pale to a dark blue.
fn ramp(t: f64) -> String {
    let lo = [247.0, 251.0, 255.0];
    let hi = [8.0, 48.0, 107.0];
    let c: Vec<u8> = lo.iter().zip(hi).map(|(a, b)| (a + (b - a) * t).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Square `n x n` matrix, row-major, with `labels` on both axes.
pub fn heatmap(title: &str, labels: &[String], values: &[f64]) -> String {
    let n = labels.len();
    assert_eq!(values.len(), n * n, "heatmap needs n*n values");
    let (v0, v1) = bounds(values.iter().copied());
    let side = (HEIGHT - TOP - BOTTOM).min(WIDTH - LEFT - RIGHT);
    let cell = side / n.max(1) as f64;
    let mut out = String::new();
    header(&mut out, title);
    for i in 0..n {
        for j in 0..n {
            let v = values[i * n + j];
            let fill = if v.is_finite() { ramp((v - v0) / (v1 - v0)) } else { "#cccccc".into() };
            let _ = writeln!(
                out,
                r#"<rect x="{:.3}" y="{:.3}" width="{cell:.3}" height="{cell:.3}" fill="{fill}"/>"#,
                LEFT + j as f64 * cell,
                TOP + i as f64 * cell
            );
        }
    }
    let every = n.div_ceil(10).max(1);
    for (i, l) in labels.iter().enumerate().step_by(every) {
        let c = (i as f64 + 0.5) * cell;
        let l = escape(l);
        let _ = writeln!(
            out,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="end">{l}</text><text x="{:.3}" y="{:.3}" text-anchor="middle">{l}</text>"#,
            LEFT - 6.0,
            TOP + c + 4.0,
            LEFT + c,
            TOP + side + 16.0,
        );
    }
    let bx = LEFT + side + 30.0;
    for k in 0..=10 {
        let t = k as f64 / 10.0;
        let y = TOP + side - t * side;
        let _ = writeln!(
            out,
            r#"<rect x="{bx:.3}" y="{:.3}" width="16" height="{:.3}" fill="{}"/>"#,
            y - side / 11.0,
            side / 11.0,
            ramp(t)
        );
    }
    let _ = writeln!(out, r#"<text x="{:.3}" y="{:.3}">{}</text>"#, bx + 22.0, TOP + 10.0, tick_label(v1));
    let _ = writeln!(out, r#"<text x="{:.3}" y="{:.3}">{}</text>"#, bx + 22.0, TOP + side, tick_label(v0));
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_is_deterministic_and_breaks_on_nan() {
        let mut p = LinePlot::new("t <1>", "s", "loss");
        p.push(Series::line("a", vec![(0.0, 1.0), (1.0, 2.0), (2.0, f64::NAN), (3.0, 1.0), (4.0, 0.5)]));
        let a = p.render();
        assert_eq!(a, p.render());
        assert_eq!(a.matches("<polyline").count(), 2);
        assert!(a.contains("t &lt;1&gt;"));
        assert!(a.ends_with("</svg>\n"));
    }

    #[test]
    fn flat_and_empty_series_render() {
        let mut p = LinePlot::new("flat", "x", "y");
        p.push(Series::line("c", vec![(0.0, 3.0), (1.0, 3.0)]));
        p.push(Series::line("empty", vec![]));
        assert!(!p.render().contains("NaN"));
    }

    #[test]
    fn heatmap_single_cell() {
        let svg = heatmap("one", &["0".to_string()], &[0.0]);
        assert_eq!(svg.matches("<rect").count(), 1 + 1 + 11);
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn ticks() {
        assert_eq!(tick_label(0.5), "0.5");
        assert_eq!(tick_label(-0.0), "0");
        assert_eq!(tick_label(12345.0), "1.23e4");
    }
}
