//! Static SVG scatter plots of predictions against MOS.

use std::fmt::Write as _;

use crate::error::{Error, Result};

const WIDTH: f64 = 560.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// One labelled point cloud of `(mos, prediction)` pairs.
#[derive(Debug, Clone)]
pub struct ScatterSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Roughly five round tick values covering `[lo, hi]`, with the number of
/// decimals needed to print them.
fn ticks(lo: f64, hi: f64) -> (Vec<f64>, usize) {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    let decimals = (0..6).find(|&d| {
        let scaled = step * 10f64.powi(d);
        (scaled - scaled.round()).abs() < 1e-9
    });
    let values = (first..=last).map(|k| k as f64 * step).collect();
    (values, decimals.unwrap_or(6) as usize)
}

/// Predictions (y) against MOS (x) with a dashed `y = x` reference line.
/// Both axes share one range so the reference line is the diagonal.
pub fn scatter_svg(series: &[ScatterSeries], title: &str) -> Result<String> {
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    if all.is_empty() {
        return Err(Error::invalid("nothing to plot"));
    }
    if all.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::invalid("scatter points must be finite"));
    }
    let lo = all.iter().map(|p| p.0.min(p.1)).fold(f64::INFINITY, f64::min);
    let hi = all.iter().map(|p| p.0.max(p.1)).fold(f64::NEG_INFINITY, f64::max);
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
    let (lo, hi) = (lo - pad, hi + pad);
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |v: f64| MARGIN_L + (v - lo) / (hi - lo) * pw;
    let sy = |v: f64| MARGIN_T + ph - (v - lo) / (hi - lo) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (tick_values, decimals) = ticks(lo, hi);
    for t in tick_values {
        let (x, y) = (sx(t), sy(t));
        let t = format!("{t:.decimals$}");
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#e5e5e5"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{t}</text>"##,
            MARGIN_T,
            MARGIN_T + ph,
            MARGIN_T + ph + 16.0
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#e5e5e5"/><text x="{:.1}" y="{:.1}" text-anchor="end">{t}</text>"##,
            MARGIN_L,
            MARGIN_L + pw,
            MARGIN_L - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<line class="identity" x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="6 4"/>"#,
        sx(lo),
        sy(lo),
        sx(hi),
        sy(hi)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">MOS</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 14.0
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(18 {}) rotate(-90)" text-anchor="middle">Prediction</text>"#,
        MARGIN_T + ph / 2.0
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(svg, r#"<g class="series" fill="{color}" fill-opacity="0.6">"#);
        for &(m, p) in &s.points {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3"/>"#, sx(m), sy(p));
        }
        let _ = writeln!(svg, "</g>");
        let ly = MARGIN_T + 14.0 + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            MARGIN_L + 14.0,
            ly,
            MARGIN_L + 24.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_circle_per_point_and_identity_line() {
        let a = ScatterSeries {
            label: "joint".into(),
            points: vec![(1.0, 1.2), (2.0, 2.5), (4.0, 3.1)],
        };
        let b = ScatterSeries {
            label: "text <only>".into(),
            points: vec![(1.5, 3.0)],
        };
        let svg = scatter_svg(&[a, b], "Predictions vs MOS").unwrap();
        assert_eq!(svg.matches(r#"r="3""#).count(), 4);
        assert_eq!(svg.matches(r#"class="series""#).count(), 2);
        assert!(svg.contains(r#"class="identity""#));
        assert!(svg.contains("text &lt;only&gt;"));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(scatter_svg(&[], "x").is_err());
        let s = ScatterSeries {
            label: "a".into(),
            points: vec![(f64::NAN, 1.0)],
        };
        assert!(scatter_svg(&[s], "x").is_err());
    }

    #[test]
    fn tick_steps() {
        assert_eq!(ticks(0.0, 5.0), (vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0], 0));
        assert_eq!(ticks(0.0, 1.0).1, 1);
        assert_eq!(ticks(0.0, 0.12).1, 3);
        assert!(ticks(0.8, 5.2).0.len() >= 4);
    }
}
