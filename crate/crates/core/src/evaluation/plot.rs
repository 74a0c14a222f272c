//! Minimal hand-written SVG charts.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const M: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn span(lo: f64, hi: f64) -> (f64, f64) {
    if (hi - lo).abs() < 1e-12 { (lo - 0.5, hi + 0.5) } else { (lo, hi) }
}

fn axes(s: &mut String, (x0, x1): (f64, f64), (y0, y1): (f64, f64), xl: &str, yl: &str) {
    let _ = writeln!(s, r#"<line x1="{M}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - M, W - M, H - M);
    let _ = writeln!(s, r#"<line x1="{M}" y1="{M}" x2="{M}" y2="{}" stroke="black"/>"#, H - M);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (px, py) = (M + f * (W - 2.0 * M), H - M - f * (H - 2.0 * M));
        let _ = writeln!(s, r#"<text x="{px}" y="{}" text-anchor="middle">{:.3}</text>"#, H - M + 16.0, x0 + f * (x1 - x0));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, M - 4.0, py + 4.0, y0 + f * (y1 - y0));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(xl));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(yl)
    );
}

/// Line chart with one polyline per named series.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        (x0, x1, y0, y1) = (x0.min(x), x1.max(x), y0.min(y), y1.max(y));
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let (xs, ys) = (span(x0, x1), span(y0, y1));
    let map = |x: f64, y: f64| {
        (M + (x - xs.0) / (xs.1 - xs.0) * (W - 2.0 * M), H - M - (y - ys.0) / (ys.1 - ys.0) * (H - 2.0 * M))
    };
    let mut s = header(title);
    axes(&mut s, xs, ys, x_label, y_label);
    for (i, (name, p)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = p.iter().map(|&(x, y)| map(x, y)).map(|(a, b)| format!("{a:.1},{b:.1}")).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" "));
        for &(x, y) in p {
            let (a, b) = map(x, y);
            let _ = writeln!(s, r#"<circle cx="{a:.1}" cy="{b:.1}" r="3" fill="{color}"/>"#);
        }
        let ly = M + 16.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#, W - M - 90.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

/// Overlaid histograms over shared bin edges in `[lo, hi]`.
pub fn histogram_chart(title: &str, x_label: &str, lo: f64, hi: f64, series: &[(String, Vec<usize>)]) -> String {
    let bins = series.first().map_or(0, |(_, c)| c.len()).max(1);
    let freq: Vec<Vec<f64>> = series
        .iter()
        .map(|(_, c)| {
            let n = c.iter().sum::<usize>().max(1) as f64;
            c.iter().map(|&v| v as f64 / n).collect()
        })
        .collect();
    let top = freq.iter().flatten().cloned().fold(0.0, f64::max).max(1e-9);
    let mut s = header(title);
    axes(&mut s, (lo, hi), (0.0, top), x_label, "fraction of samples");
    let bw = (W - 2.0 * M) / bins as f64;
    for (i, ((name, _), f)) in series.iter().zip(&freq).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for (b, &v) in f.iter().enumerate() {
            let h = v / top * (H - 2.0 * M);
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{color}" fill-opacity="0.45"/>"#,
                M + b as f64 * bw,
                H - M - h,
                bw
            );
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{}</text>"#, W - M - 120.0, M + 16.0 * i as f64, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

/// Heat map of `values[row][col]` with a white-to-blue ramp and printed cell values.
pub fn heatmap(title: &str, row_label: &str, col_label: &str, rows: &[String], cols: &[String], values: &[Vec<f64>]) -> String {
    let flat: Vec<f64> = values.iter().flatten().cloned().filter(|v| v.is_finite()).collect();
    let lo = flat.iter().cloned().fold(f64::MAX, f64::min);
    let hi = flat.iter().cloned().fold(f64::MIN, f64::max);
    let (lo, hi) = if flat.is_empty() { (0.0, 1.0) } else { span(lo, hi) };
    let mut s = header(title);
    let (cw, ch) = ((W - 2.0 * M) / cols.len().max(1) as f64, (H - 2.0 * M) / rows.len().max(1) as f64);
    for (r, row) in values.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
            let shade = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
            let fill = format!("#{:02x}{:02x}{:02x}", shade(255.0, 31.0), shade(255.0, 119.0), shade(255.0, 180.0));
            let (x, y) = (M + c as f64 * cw, M + r as f64 * ch);
            let _ = writeln!(s, r#"<rect x="{x:.1}" y="{y:.1}" width="{cw:.1}" height="{ch:.1}" fill="{fill}" stroke="white"/>"#);
            let ink = if t > 0.6 { "white" } else { "black" };
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" fill="{ink}">{v:.3}</text>"#,
                x + cw / 2.0,
                y + ch / 2.0 + 4.0
            );
        }
    }
    for (c, name) in cols.iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, M + (c as f64 + 0.5) * cw, H - M + 16.0, escape(name));
    }
    for (r, name) in rows.iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, M - 4.0, M + (r as f64 + 0.5) * ch + 4.0, escape(name));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(col_label));
    let _ = writeln!(s, r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#, H / 2.0, H / 2.0, escape(row_label));
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_closed_svg() {
        let l = line_chart("t", "x", "y", &[("a".into(), vec![(0.0, 1.0), (1.0, 0.5)])]);
        let h = histogram_chart("t", "x", 0.0, 1.0, &[("a".into(), vec![1, 2, 3])]);
        let m = heatmap("t", "r", "c", &["1".into()], &["a".into(), "b".into()], &[vec![0.2, 0.4]]);
        for s in [l, h, m] {
            assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        }
    }
}
