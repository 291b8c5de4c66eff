//! Minimal standalone SVG charts: line plots for training curves and grouped
//! bars for length-bucket tables.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 48.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(title: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        escape(title)
    );
    out
}

/// Rounded axis range with a little headroom; degenerate ranges are widened.
fn range(lo: f64, hi: f64) -> (f64, f64) {
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn axes(out: &mut String, x: (f64, f64), y: (f64, f64), xlabel: &str, ylabel: &str, x_ticks: bool) {
    let (x0, x1) = (MARGIN_L, WIDTH - MARGIN_R);
    let (y0, y1) = (HEIGHT - MARGIN_B, MARGIN_T);
    let _ = writeln!(
        out,
        r##"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" stroke="#333" fill="none"/>"##
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let py = y0 + (y1 - y0) * f;
        let v = y.0 + (y.1 - y.0) * f;
        let _ = writeln!(
            out,
            r##"<line x1="{x0}" y1="{py:.1}" x2="{x1}" y2="{py:.1}" stroke="#eee"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
            x0 - 4.0,
            py + 4.0,
            tick(v)
        );
        if x_ticks {
            let px = x0 + (x1 - x0) * f;
            let v = x.0 + (x.1 - x.0) * f;
            let _ = writeln!(
                out,
                r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                y0 + 14.0,
                tick(v)
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 10.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate(16,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = MARGIN_T + 8.0 + 16.0 * i as f64;
        let x = WIDTH - MARGIN_R + 12.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{}" y="{:.1}">{}</text>"#,
            y - 9.0,
            PALETTE[i % PALETTE.len()],
            x + 14.0,
            y,
            escape(name)
        );
    }
}

/// Named `(x, y)` series drawn as polylines. Non-finite points are skipped.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let pts = series.iter().flat_map(|(_, s)| s.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut xl, mut xh, mut yl, mut yh) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        xl = xl.min(x);
        xh = xh.max(x);
        yl = yl.min(y);
        yh = yh.max(y);
    }
    let (xr, yr) = (range(xl, xh), range(yl, yh));
    let mut out = header(title);
    axes(&mut out, xr, yr, xlabel, ylabel, true);
    let sx = |x: f64| MARGIN_L + (x - xr.0) / (xr.1 - xr.0) * (WIDTH - MARGIN_R - MARGIN_L);
    let sy = |y: f64| HEIGHT - MARGIN_B - (y - yr.0) / (yr.1 - yr.0) * (HEIGHT - MARGIN_B - MARGIN_T);
    for (i, (_, s)) in series.iter().enumerate() {
        let coords: Vec<String> = s
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        if coords.is_empty() {
            continue;
        }
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            coords.join(" "),
            PALETTE[i % PALETTE.len()]
        );
    }
    let names: Vec<&str> = series.iter().map(|(n, _)| n.as_str()).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

/// Grouped bars: one group per category, one bar per series. `values[s][c]`
/// is `None` where the series has no value for that category.
pub fn bar_plot(title: &str, ylabel: &str, categories: &[String], series: &[(String, Vec<Option<f64>>)]) -> String {
    let vals = series.iter().flat_map(|(_, v)| v.iter().flatten()).copied();
    let (lo, hi) = vals.fold((0.0f64, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    let yr = range(lo, if hi.is_finite() { hi } else { 1.0 });
    let mut out = header(title);
    axes(&mut out, (0.0, 1.0), yr, "source length (chars)", ylabel, false);
    let plot_w = WIDTH - MARGIN_R - MARGIN_L;
    let group_w = plot_w / categories.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    let sy = |y: f64| HEIGHT - MARGIN_B - (y - yr.0) / (yr.1 - yr.0) * (HEIGHT - MARGIN_B - MARGIN_T);
    for (c, cat) in categories.iter().enumerate() {
        let gx = MARGIN_L + group_w * c as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            gx + group_w / 2.0,
            HEIGHT - MARGIN_B + 14.0,
            escape(cat)
        );
        for (s, (_, v)) in series.iter().enumerate() {
            if let Some(Some(v)) = v.get(c) {
                let (top, bottom) = (sy(v.max(0.0)), sy(v.min(0.0)));
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.1}" y="{top:.1}" width="{bar_w:.1}" height="{:.1}" fill="{}"/>"#,
                    gx + group_w * 0.1 + bar_w * s as f64,
                    (bottom - top).max(0.5),
                    PALETTE[s % PALETTE.len()]
                );
            }
        }
    }
    let names: Vec<&str> = series.iter().map(|(n, _)| n.as_str()).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_is_well_formed() {
        let svg = line_plot("t <1>", "x", "y", &[("a".into(), vec![(0.0, 1.0), (1.0, f64::NAN), (2.0, 3.0)])]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("t &lt;1&gt;"));
        assert_eq!(svg.matches("<polyline").count(), 1);
    }

    #[test]
    fn bars_skip_missing_values() {
        let cats = vec!["[0,100)".to_string(), "[100,250)".to_string()];
        let svg = bar_plot("b", "q", &cats, &[("s".into(), vec![Some(2.0), None])]);
        assert_eq!(svg.matches("<rect x=").count(), 1 + 1); // one bar + one legend swatch
    }

    #[test]
    fn empty_series_still_renders() {
        let svg = line_plot("e", "x", "y", &[]);
        assert!(svg.contains("</svg>"));
    }
}
