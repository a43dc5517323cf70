//! Static SVG line charts with shaded 10-90 percentile bands.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::output::ResultRow;
use super::stats::Summary;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD_L: f64 = 60.0;
const PAD_R: f64 = 140.0;
const PAD_T: f64 = 40.0;
const PAD_B: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    /// `(x, summary)` sorted by x.
    pub points: Vec<(f64, Summary)>,
}

/// Groups `metric` rows by method and x, summarizing over runs.
pub fn series_from_rows(rows: &[ResultRow], metric: &str) -> Vec<Series> {
    let mut grouped: BTreeMap<&str, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.metric == metric) {
        grouped.entry(r.method.as_str()).or_default().entry(r.x).or_default().push(r.value);
    }
    grouped
        .into_iter()
        .map(|(name, by_x)| Series { name: name.to_string(), points: by_x.into_iter().map(|(x, v)| (x as f64, Summary::of(&v))).collect() })
        .collect()
}

fn fmt(v: f64) -> String {
    format!("{v:.1}")
}

pub fn line_band_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, s) in pts {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(s.p10.min(s.mean));
        y1 = y1.max(s.p90.max(s.mean));
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let pw = W - PAD_L - PAD_R;
    let ph = H - PAD_T - PAD_B;
    let sx = |x: f64| PAD_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| PAD_T + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<line x1="{PAD_L}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{PAD_L}" y1="{PAD_T}" x2="{PAD_L}" y2="{b}" stroke="black"/>"#,
        b = H - PAD_B,
        r = W - PAD_R
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, fmt(sx(fx)), H - PAD_B + 16.0, format_tick(fx));
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, PAD_L - 6.0, fmt(sy(fy) + 4.0), format_tick(fy));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, PAD_L + pw / 2.0, H - 10.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        PAD_T + ph / 2.0,
        PAD_T + ph / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        if s.points.is_empty() {
            continue;
        }
        let mut band: Vec<String> = s.points.iter().map(|(x, p)| format!("{},{}", fmt(sx(*x)), fmt(sy(p.p90)))).collect();
        band.extend(s.points.iter().rev().map(|(x, p)| format!("{},{}", fmt(sx(*x)), fmt(sy(p.p10)))));
        let _ = writeln!(out, r#"<polygon points="{}" fill="{c}" fill-opacity="0.15" stroke="none"/>"#, band.join(" "));
        let line: Vec<String> = s.points.iter().map(|(x, p)| format!("{},{}", fmt(sx(*x)), fmt(sy(p.mean)))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, line.join(" "));
        let ly = PAD_T + 18.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{a}" y1="{ly}" x2="{b}" y2="{ly}" stroke="{c}" stroke-width="3"/><text x="{t}" y="{ty}">{}</text>"#,
            escape(&s.name),
            a = W - PAD_R + 10.0,
            b = W - PAD_R + 30.0,
            t = W - PAD_R + 36.0,
            ty = ly + 4.0
        );
    }
    out.push_str("</svg>\n");
    out
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_deterministic_and_well_formed() {
        let rows = vec![
            ResultRow::new(0, 2, "imm", "accuracy", 70.0),
            ResultRow::new(1, 2, "imm", "accuracy", 72.0),
            ResultRow::new(0, 5, "imm", "accuracy", 80.0),
            ResultRow::new(0, 2, "baseline", "accuracy", 60.0),
        ];
        let s = series_from_rows(&rows, "accuracy");
        assert_eq!(s.len(), 2);
        let a = line_band_chart("t <1>", "n", "acc", &s);
        assert_eq!(a, line_band_chart("t <1>", "n", "acc", &s));
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert!(a.contains("t &lt;1&gt;"));
    }
}
