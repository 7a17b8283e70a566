//! Minimal SVG line plots.

use std::fmt::Write;

const PANEL: f64 = 420.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, Default)]
pub struct Series {
    pub label: String,
    pub points: Vec<[f64; 2]>,
    /// Draw markers instead of a line.
    pub markers: bool,
}

impl Series {
    pub fn line(label: &str, points: Vec<[f64; 2]>) -> Self {
        Self { label: label.into(), points, markers: false }
    }

    pub fn dots(label: &str, points: Vec<[f64; 2]>) -> Self {
        Self { label: label.into(), points, markers: true }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub equal_aspect: bool,
}

fn bounds(panel: &Panel) -> ([f64; 2], [f64; 2]) {
    let mut xr = [f64::INFINITY, f64::NEG_INFINITY];
    let mut yr = [f64::INFINITY, f64::NEG_INFINITY];
    for p in panel.series.iter().flat_map(|s| &s.points).filter(|p| p[0].is_finite() && p[1].is_finite()) {
        xr = [xr[0].min(p[0]), xr[1].max(p[0])];
        yr = [yr[0].min(p[1]), yr[1].max(p[1])];
    }
    if !xr[0].is_finite() {
        return ([0.0, 1.0], [0.0, 1.0]);
    }
    let pad = |r: [f64; 2]| {
        let w = (r[1] - r[0]).max(1e-12 * (1.0 + r[0].abs()));
        [r[0] - 0.05 * w, r[1] + 0.05 * w]
    };
    let (mut xr, mut yr) = (pad(xr), pad(yr));
    if panel.equal_aspect {
        let w = (xr[1] - xr[0]).max(yr[1] - yr[0]);
        let (cx, cy) = (0.5 * (xr[0] + xr[1]), 0.5 * (yr[0] + yr[1]));
        xr = [cx - 0.5 * w, cx + 0.5 * w];
        yr = [cy - 0.5 * w, cy + 0.5 * w];
    }
    (xr, yr)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn draw_panel(out: &mut String, panel: &Panel, x0: f64) {
    let (xr, yr) = bounds(panel);
    let size = PANEL - 2.0 * MARGIN;
    let sx = |x: f64| x0 + MARGIN + (x - xr[0]) / (xr[1] - xr[0]) * size;
    let sy = |y: f64| PANEL - MARGIN - (y - yr[0]) / (yr[1] - yr[0]) * size;
    let _ = writeln!(
        out,
        r##"<rect x="{:.1}" y="{MARGIN:.1}" width="{size:.1}" height="{size:.1}" fill="none" stroke="#444"/>"##,
        x0 + MARGIN
    );
    let _ = writeln!(out, r#"<text x="{:.1}" y="28" text-anchor="middle" font-size="14">{}</text>"#, x0 + PANEL / 2.0, esc(&panel.title));
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12">{}</text>"#,
        x0 + PANEL / 2.0,
        PANEL - 12.0,
        esc(&panel.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
        x0 + 14.0,
        PANEL / 2.0,
        x0 + 14.0,
        PANEL / 2.0,
        esc(&panel.y_label)
    );
    for (v, anchor, x, y) in [
        (xr[0], "start", sx(xr[0]), PANEL - MARGIN + 14.0),
        (xr[1], "end", sx(xr[1]), PANEL - MARGIN + 14.0),
    ] {
        let _ = writeln!(out, r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}" font-size="10">{v:.3e}</text>"#);
    }
    for (v, y) in [(yr[0], sy(yr[0])), (yr[1], sy(yr[1]) + 8.0)] {
        let _ = writeln!(out, r#"<text x="{:.1}" y="{y:.1}" text-anchor="end" font-size="10">{v:.3e}</text>"#, x0 + MARGIN - 3.0);
    }
    for (k, s) in panel.series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts = s.points.iter().filter(|p| p[0].is_finite() && p[1].is_finite());
        if s.markers {
            for p in pts {
                let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}"/>"#, sx(p[0]), sy(p[1]));
            }
        } else {
            let coords: Vec<String> = pts.map(|p| format!("{:.2},{:.2}", sx(p[0]), sy(p[1]))).collect();
            let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#, coords.join(" "));
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" fill="{color}">{}</text>"#,
            x0 + MARGIN + 6.0,
            MARGIN + 14.0 * (k as f64 + 1.0),
            esc(&s.label)
        );
    }
}

/// Panels laid out side by side.
pub fn render(panels: &[Panel]) -> String {
    let width = PANEL * panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{PANEL:.0}" viewBox="0 0 {width:.0} {PANEL:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, p) in panels.iter().enumerate() {
        draw_panel(&mut out, p, k as f64 * PANEL);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_well_formed_document() {
        let p = Panel {
            title: "a < b".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series::line("line", vec![[0.0, 0.0], [1.0, 2.0]]), Series::dots("pts", vec![[0.5, f64::NAN], [0.2, 0.1]])],
            equal_aspect: true,
        };
        let svg = render(&[p.clone(), p]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("a &lt; b"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn empty_panel_does_not_panic() {
        assert!(render(&[Panel::default()]).contains("</svg>"));
    }
}
