//! Minimal SVG line plotter for PR curves, training traces and sweep
//! reports: axes, ticks, labeled polylines. No drawing dependencies.

use std::fmt::Write as _;

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

impl LinePlot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        LinePlot {
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            series: Vec::new(),
        }
    }

    pub fn add_series(&mut self, label: &str, points: Vec<(f64, f64)>) {
        self.series.push(Series {
            label: label.to_string(),
            points,
        });
    }

    pub fn to_svg(&self, width: u32, height: u32) -> String {
        let (w, h) = (width as f64, height as f64);
        let margin = 56.0;
        let (px0, px1) = (margin, w - 24.0);
        let (py0, py1) = (h - margin, 36.0); // y grows upward on the plot

        let all: Vec<(f64, f64)> = self.series.iter().flat_map(|s| s.points.clone()).collect();
        let (mut xmin, mut xmax) = bounds(all.iter().map(|p| p.0));
        let (mut ymin, mut ymax) = bounds(all.iter().map(|p| p.1));
        if xmax <= xmin {
            xmax = xmin + 1.0;
        }
        if ymax <= ymin {
            ymax = ymin + 1.0;
        }
        xmin -= (xmax - xmin) * 0.02;
        xmax += (xmax - xmin) * 0.02;
        ymin -= (ymax - ymin) * 0.05;
        ymax += (ymax - ymin) * 0.05;

        let sx = |x: f64| px0 + (x - xmin) / (xmax - xmin) * (px1 - px0);
        let sy = |y: f64| py0 + (y - ymin) / (ymax - ymin) * (py1 - py0);

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
        );
        let _ = writeln!(
            svg,
            r#"<rect width="{width}" height="{height}" fill="white"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
            w / 2.0,
            escape(&self.title)
        );
        // axes
        let _ = writeln!(
            svg,
            r#"<line x1="{px0}" y1="{py0}" x2="{px1}" y2="{py0}" stroke="black"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{px0}" y1="{py0}" x2="{px0}" y2="{py1}" stroke="black"/>"#
        );
        for i in 0..=4 {
            let fx = xmin + (xmax - xmin) * i as f64 / 4.0;
            let fy = ymin + (ymax - ymin) * i as f64 / 4.0;
            let (tx, ty) = (sx(fx), sy(fy));
            let _ = writeln!(
                svg,
                r#"<line x1="{tx}" y1="{py0}" x2="{tx}" y2="{}" stroke="black"/>"#,
                py0 + 4.0
            );
            let _ = writeln!(
                svg,
                r#"<text x="{tx}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="10">{}</text>"#,
                py0 + 16.0,
                tick(fx)
            );
            let _ = writeln!(
                svg,
                r#"<line x1="{}" y1="{ty}" x2="{px0}" y2="{ty}" stroke="black"/>"#,
                px0 - 4.0
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="10">{}</text>"#,
                px0 - 7.0,
                ty + 3.0,
                tick(fy)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
            (px0 + px1) / 2.0,
            h - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
            (py0 + py1) / 2.0,
            (py0 + py1) / 2.0,
            escape(&self.y_label)
        );
        for (i, series) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            if !series.points.is_empty() {
                let path: Vec<String> = series
                    .points
                    .iter()
                    .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                    .collect();
                let _ = writeln!(
                    svg,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                    path.join(" ")
                );
            }
            let ly = py1 + 14.0 * i as f64;
            let _ = writeln!(
                svg,
                r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
                px1 - 110.0,
                px1 - 90.0
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10">{}</text>"#,
                px1 - 85.0,
                ly + 3.0,
                escape(&series.label)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for v in vals.filter(|v| v.is_finite()) {
        min = min.min(v);
        max = max.max(v);
    }
    if !min.is_finite() {
        (0.0, 1.0)
    } else {
        (min, max)
    }
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_axes_labels_and_series() {
        let mut plot = LinePlot::new("pr curve", "recall", "precision");
        plot.add_series("class 1", vec![(0.0, 1.0), (0.5, 0.8), (1.0, 0.6)]);
        let svg = plot.to_svg(480, 360);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("recall"));
        assert!(svg.contains("class 1"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn empty_plot_still_valid() {
        let plot = LinePlot::new("empty", "x", "y");
        let svg = plot.to_svg(320, 240);
        assert!(svg.contains("</svg>"));
    }
}
