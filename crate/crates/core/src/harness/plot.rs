//! Minimal SVG plotter for CSV-backed figures. The CSVs are authoritative;
//! these are for eyeballing.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds<'a>(vals: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in vals.filter(|v| v.is_finite()) {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 1.0, hi + 1.0);
    }
    (lo, hi)
}

fn frame(out: &mut String, title: &str, xl: &str, yl: &str, x: (f64, f64), y: (f64, f64)) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>
<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>
"#,
        W / 2.0,
        esc(title),
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD,
        W / 2.0,
        H - 12.0,
        esc(xl),
        H / 2.0,
        H / 2.0,
        esc(yl)
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let px = PAD + f * (W - 2.0 * PAD);
        let py = H - PAD - f * (H - 2.0 * PAD);
        let _ = writeln!(
            out,
            r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{:.4}</text>"#,
            H - PAD + 14.0,
            x.0 + f * (x.1 - x.0)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.4}</text>"#,
            PAD - 4.0,
            py + 4.0,
            y.0 + f * (y.1 - y.0)
        );
    }
}

fn map(v: f64, (lo, hi): (f64, f64), a: f64, b: f64) -> f64 {
    a + (v - lo) / (hi - lo) * (b - a)
}

/// Line chart of named (x, y) series.
pub fn line_chart(title: &str, xl: &str, yl: &str, series: &[(&str, &[f64], &[f64])]) -> String {
    let xb = bounds(series.iter().flat_map(|s| s.1.iter()));
    let yb = bounds(series.iter().flat_map(|s| s.2.iter()));
    let yb = (yb.0.min(0.0), yb.1);
    let mut out = String::new();
    frame(&mut out, title, xl, yl, xb, yb);
    for (i, (name, xs, ys)) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let pts: Vec<String> = xs
            .iter()
            .zip(ys.iter())
            .map(|(x, y)| {
                format!(
                    "{:.1},{:.1}",
                    map(*x, xb, PAD, W - PAD),
                    map(*y, yb, H - PAD, PAD)
                )
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{c}" stroke-width="1.2" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" fill="{c}">{}</text>"#,
            W - PAD - 90.0,
            PAD + 14.0 * i as f64,
            esc(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Grouped bar chart: one group per label, one bar per series.
pub fn bar_chart(title: &str, yl: &str, labels: &[String], series: &[(&str, &[f64])]) -> String {
    let yb = (0.0, bounds(series.iter().flat_map(|s| s.1.iter())).1.max(1e-9));
    let mut out = String::new();
    frame(&mut out, title, "", yl, (0.0, labels.len() as f64), yb);
    let group = (W - 2.0 * PAD) / labels.len().max(1) as f64;
    let bw = group * 0.8 / series.len().max(1) as f64;
    for (g, label) in labels.iter().enumerate() {
        let gx = PAD + g as f64 * group + group * 0.1;
        for (i, (_, vals)) in series.iter().enumerate() {
            let v = vals.get(g).copied().unwrap_or(0.0);
            let top = map(v, yb, H - PAD, PAD);
            let _ = writeln!(
                out,
                r#"<rect x="{:.1}" y="{top:.1}" width="{bw:.1}" height="{:.1}" fill="{}"/>"#,
                gx + i as f64 * bw,
                H - PAD - top,
                COLORS[i % COLORS.len()]
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            gx + group * 0.4,
            H - PAD + 28.0,
            esc(label)
        );
    }
    for (i, (name, _)) in series.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" fill="{}">{}</text>"#,
            W - PAD - 90.0,
            PAD + 14.0 * i as f64,
            COLORS[i % COLORS.len()],
            esc(name)
        );
    }
    out.push_str("</svg>\n");
    out
}
