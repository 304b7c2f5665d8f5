//! Hand-written SVG plots: line charts, bar charts and ternary maps.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 440.0;
const PAD: f64 = 60.0;
const TRI_SIDE: f64 = 400.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    s
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-300 {
        return (lo - 0.5, hi + 0.5);
    }
    let m = 0.05 * (hi - lo);
    (lo - m, hi + m)
}

struct Axes {
    x: (f64, f64),
    y: (f64, f64),
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * PAD)
    }

    fn draw(&self, s: &mut String, xlabel: &str, ylabel: &str) {
        let _ = writeln!(
            s,
            r##"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
            W - 2.0 * PAD,
            H - 2.0 * PAD
        );
        for k in 0..=4 {
            let fx = self.x.0 + (self.x.1 - self.x.0) * k as f64 / 4.0;
            let fy = self.y.0 + (self.y.1 - self.y.0) * k as f64 / 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                self.px(fx),
                H - PAD + 16.0,
                tick(fx)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                PAD - 6.0,
                self.py(fy) + 4.0,
                tick(fy)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            W / 2.0,
            H - 16.0,
            escape(xlabel)
        );
        let _ = writeln!(
            s,
            r#"<text x="12" y="{}" text-anchor="middle" transform="rotate(-90 12 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(ylabel)
        );
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        let t = format!("{v:.3}");
        t.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Line chart with markers; one polyline per series.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let axes = Axes {
        x: range(series.iter().flat_map(|s| s.1.iter().map(|p| p.0))),
        y: range(series.iter().flat_map(|s| s.1.iter().map(|p| p.1))),
    };
    let mut s = header(title);
    axes.draw(&mut s, xlabel, ylabel);
    for (k, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|p| format!("{:.2},{:.2}", axes.px(p.0), axes.py(p.1)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            path.join(" ")
        );
        for p in pts.iter().filter(|p| p.1.is_finite()) {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                axes.px(p.0),
                axes.py(p.1)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - PAD - 150.0,
            PAD + 16.0 + 14.0 * k as f64,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Bar chart of `(x, height)` pairs, with optional highlighted x-ranges.
pub fn bar_plot(title: &str, xlabel: &str, ylabel: &str, bars: &[(f64, f64)], highlight: &[(f64, f64)]) -> String {
    let axes = Axes {
        x: (0.0, 1.0),
        y: (0.0, range(bars.iter().map(|b| b.1)).1.max(1e-300)),
    };
    let mut s = header(title);
    for &(a, b) in highlight {
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{PAD}" width="{:.2}" height="{}" fill="#ffe9a8"/>"##,
            axes.px(a),
            (axes.px(b) - axes.px(a)).max(1.0),
            H - 2.0 * PAD
        );
    }
    axes.draw(&mut s, xlabel, ylabel);
    let width = if bars.len() > 1 {
        (W - 2.0 * PAD) / bars.len() as f64 * 0.8
    } else {
        8.0
    };
    for &(x, h) in bars {
        let top = axes.py(h);
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#1f77b4"/>"##,
            axes.px(x) - width / 2.0,
            top,
            width,
            axes.py(0.0) - top
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Planar position of a barycentric point in the display triangle.
pub fn ternary(x: &[f64]) -> (f64, f64) {
    let side = TRI_SIDE;
    let ox = (W - side) / 2.0;
    let oy = H - 40.0;
    let px = ox + side * (x[1] + 0.5 * x[2]);
    let py = oy - side * (3f64.sqrt() / 2.0) * x[2];
    (px, py)
}

fn triangle(s: &mut String) {
    let a = ternary(&[1.0, 0.0, 0.0]);
    let b = ternary(&[0.0, 1.0, 0.0]);
    let c = ternary(&[0.0, 0.0, 1.0]);
    let _ = writeln!(
        s,
        r##"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="none" stroke="#444"/>"##,
        a.0, a.1, b.0, b.1, c.0, c.1
    );
    for (p, label, dx) in [(a, "e1", -18.0), (b, "e2", 6.0), (c, "e3", -6.0)] {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{label}</text>"#, p.0 + dx, p.1 + 4.0);
    }
}

fn heat(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * (1.0 - 0.2 * t)) as u8;
    let g = (255.0 * (1.0 - 0.85 * t)) as u8;
    let b = (255.0 * (1.0 - t)) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Ternary heatmap of values at barycentric points.
pub fn ternary_heatmap(title: &str, points: &[(Vec<f64>, f64)], n: u32) -> String {
    let mut s = header(title);
    triangle(&mut s);
    let hi = points.iter().map(|p| p.1).fold(0.0, f64::max).max(1e-300);
    let radius = TRI_SIDE / n as f64 * 0.55;
    for (x, v) in points {
        let (px, py) = ternary(x);
        let _ = writeln!(
            s,
            r#"<circle cx="{px:.2}" cy="{py:.2}" r="{radius:.2}" fill="{}"/>"#,
            heat(v / hi)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Cell sets drawn in distinct colors (ternary for d = 3, a strip for d = 2).
pub fn class_map(title: &str, d: usize, m: u32, classes: &[Vec<Vec<f64>>], flags: &[bool]) -> String {
    let mut s = header(title);
    if d == 3 {
        triangle(&mut s);
    }
    let radius = if d == 3 {
        TRI_SIDE / m as f64 * 0.45
    } else {
        (W - 2.0 * PAD) / m as f64 * 0.45
    };
    let strip = Axes { x: (0.0, 1.0), y: (0.0, 1.0) };
    if d == 2 {
        strip.draw(&mut s, "x1", "class");
    }
    for (k, class) in classes.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        for x in class {
            let (px, py) = if d == 3 {
                ternary(x)
            } else {
                (strip.px(x[0]), strip.py(0.5))
            };
            let stroke = if flags.get(k).copied().unwrap_or(false) { "black" } else { "none" };
            let _ = writeln!(
                s,
                r#"<circle cx="{px:.2}" cy="{py:.2}" r="{radius:.2}" fill="{color}" stroke="{stroke}"/>"#
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{PAD}" y="{}">outlined: quasi-attractor</text>"#,
        H - 4.0
    );
    s.push_str("</svg>\n");
    s
}

/// Phase portrait: `F_1` against `x_1` for d = 2, arrows on the triangle for d = 3.
pub fn phase_portrait(title: &str, d: usize, samples: &[(Vec<f64>, Vec<f64>)], attractor: &[Vec<f64>]) -> String {
    if d == 2 {
        let pts: Vec<(f64, f64)> = samples.iter().map(|(x, f)| (x[0], f[0])).collect();
        let mut s = line_plot(title, "x1", "F1(x)", &[("mean field", pts)]);
        s.truncate(s.len() - "</svg>\n".len());
        let axes = Axes {
            x: range(samples.iter().map(|p| p.0[0])),
            y: range(samples.iter().map(|p| p.1[0])),
        };
        for a in attractor {
            let _ = writeln!(
                s,
                r##"<circle cx="{:.2}" cy="{:.2}" r="5" fill="none" stroke="#d62728" stroke-width="2"/>"##,
                axes.px(a[0]),
                axes.py(0.0)
            );
        }
        s.push_str("</svg>\n");
        return s;
    }
    let mut s = header(title);
    triangle(&mut s);
    let fmax = samples
        .iter()
        .map(|(_, f)| f.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
        .max(1e-300);
    for (x, f) in samples {
        let (px, py) = ternary(x);
        let tip: Vec<f64> = x.iter().zip(f).map(|(a, b)| a + 0.04 * b / fmax).collect();
        let (qx, qy) = ternary(&tip);
        let _ = writeln!(
            s,
            r##"<line x1="{px:.2}" y1="{py:.2}" x2="{qx:.2}" y2="{qy:.2}" stroke="#1f77b4"/>"##
        );
        let _ = writeln!(s, r##"<circle cx="{qx:.2}" cy="{qy:.2}" r="1.5" fill="#1f77b4"/>"##);
    }
    for a in attractor {
        let (px, py) = ternary(a);
        let _ = writeln!(s, r##"<circle cx="{px:.2}" cy="{py:.2}" r="4" fill="#d62728"/>"##);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plots_are_well_formed() {
        let svg = line_plot("t <1>", "N", "y", &[("a", vec![(1.0, 2.0), (2.0, 3.0)])]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("t &lt;1&gt;"));
        let t = ternary_heatmap("h", &[(vec![0.2, 0.3, 0.5], 1.0)], 10);
        assert_eq!(t.matches("<circle").count(), 1);
        let (x, y) = ternary(&[1.0, 0.0, 0.0]);
        let (x2, y2) = ternary(&[0.0, 1.0, 0.0]);
        assert!(x < x2 && (y - y2).abs() < 1e-12);
    }
}
