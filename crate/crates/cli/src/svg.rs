//! Minimal standalone SVG plots.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn axis_labels(s: &mut String, x: (f64, f64), y: (f64, f64), x_name: &str, y_name: &str) {
    let _ = writeln!(s, r#"<text x="{PAD}" y="{}" text-anchor="middle">{:.3}</text>"#, H - PAD + 16.0, x.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{:.3}</text>"#, W - PAD, H - PAD + 16.0, x.1);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(x_name));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3e}</text>"#, PAD - 4.0, H - PAD, y.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3e}</text>"#, PAD - 4.0, PAD + 4.0, y.1);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_name)
    );
}

/// Line plot with a log10 y axis; non-positive values are skipped.
pub fn log_lines(title: &str, x_name: &str, y_name: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let mut s = header(title);
    let xr = range(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let yr = range(series.iter().flat_map(|(_, p)| p.iter().filter(|q| q.1 > 0.0).map(|q| q.1.log10())));
    let px = |x: f64| PAD + (x - xr.0) / (xr.1 - xr.0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - yr.0) / (yr.1 - yr.0) * (H - 2.0 * PAD);
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .filter(|q| q.1 > 0.0)
            .map(|q| format!("{:.2},{:.2}", px(q.0), py(q.1.log10())))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - PAD - 120.0,
            PAD + 16.0 * (k + 1) as f64,
            escape(name)
        );
    }
    axis_labels(&mut s, xr, (10f64.powf(yr.0), 10f64.powf(yr.1)), x_name, y_name);
    s.push_str("</svg>\n");
    s
}

/// Histogram of `values` with `bins` equal-width bins.
pub fn histogram(title: &str, x_name: &str, values: &[f64], bins: usize) -> String {
    let mut s = header(title);
    let bins = bins.max(1);
    let xr = range(values.iter().copied());
    let mut counts = vec![0usize; bins];
    for &v in values.iter().filter(|v| v.is_finite()) {
        let b = (((v - xr.0) / (xr.1 - xr.0)) * bins as f64) as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bw = (W - 2.0 * PAD) / bins as f64;
    for (b, &c) in counts.iter().enumerate() {
        let h = c as f64 / top * (H - 2.0 * PAD);
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="#1f77b4" stroke="white"/>"##,
            PAD + b as f64 * bw,
            H - PAD - h,
            bw
        );
    }
    if xr.0 < 0.0 && xr.1 > 0.0 {
        let x0 = PAD + (-xr.0) / (xr.1 - xr.0) * (W - 2.0 * PAD);
        let _ = writeln!(s, r#"<line x1="{x0:.2}" y1="{PAD}" x2="{x0:.2}" y2="{}" stroke="black" stroke-dasharray="4"/>"#, H - PAD);
    }
    axis_labels(&mut s, xr, (0.0, top), x_name, "count");
    s.push_str("</svg>\n");
    s
}
