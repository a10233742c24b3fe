//! Hand-rolled SVG polyline charts; no plotting dependency.

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 52.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        // Degenerate span; pad so the line sits mid-chart.
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// One polyline per series over shared axes, with ticks and a legend.
/// Returns the full SVG document.
pub fn polyline_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x_lo, x_hi) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y_lo, y_hi) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let sx = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * (WIDTH - MARGIN_L - MARGIN_R);
    let sy = |y: f64| HEIGHT - MARGIN_B - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    out.push_str(&format!("<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    ));

    // Axes.
    let x0 = sx(x_lo);
    let x1 = sx(x_hi);
    let y0 = sy(y_lo);
    let y1 = sy(y_hi);
    out.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    ));
    for i in 0..=4 {
        let fx = x_lo + (x_hi - x_lo) * i as f64 / 4.0;
        let fy = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        out.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{y0}\" x2=\"{0}\" y2=\"{1}\" stroke=\"black\"/>\n\
             <text x=\"{0}\" y=\"{2}\" text-anchor=\"middle\">{3}</text>\n",
            sx(fx),
            y0 + 5.0,
            y0 + 20.0,
            tick(fx)
        ));
        out.push_str(&format!(
            "<line x1=\"{1}\" y1=\"{0}\" x2=\"{x0}\" y2=\"{0}\" stroke=\"black\"/>\n\
             <text x=\"{2}\" y=\"{3}\" text-anchor=\"end\">{4}</text>\n",
            sy(fy),
            x0 - 5.0,
            x0 - 8.0,
            sy(fy) + 4.0,
            tick(fy)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    ));

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if s.points.len() == 1 {
            let (x, y) = s.points[0];
            out.push_str(&format!("<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>\n", sx(x), sy(y)));
        } else if !s.points.is_empty() {
            let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            out.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                pts.join(" ")
            ));
        }
        if series.len() > 1 {
            let ly = MARGIN_T + 14.0 * i as f64;
            out.push_str(&format!(
                "<line x1=\"{0}\" y1=\"{ly}\" x2=\"{1}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
                 <text x=\"{2}\" y=\"{3}\">{4}</text>\n",
                WIDTH - 150.0,
                WIDTH - 130.0,
                WIDTH - 124.0,
                ly + 4.0,
                escape(s.label)
            ));
        }
    }
    out.push_str("</svg>\n");
    out
}

fn tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 0.01 && v.abs() < 10_000.0) {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_contains_points_and_labels() {
        let s = Series { label: "auroc", points: vec![(1.0, 0.5), (2.0, 0.75), (3.0, 0.9)] };
        let svg = polyline_chart("per-horizon AUROC", "dt", "AUROC", &[s]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("per-horizon AUROC"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn degenerate_inputs_do_not_produce_nans() {
        let flat = Series { label: "flat", points: vec![(1.0, 0.5), (2.0, 0.5)] };
        let svg = polyline_chart("t", "x", "y", &[flat]);
        assert!(!svg.contains("NaN"));
        let empty = Series { label: "none", points: vec![] };
        let svg = polyline_chart("t", "x", "y", &[empty]);
        assert!(!svg.contains("NaN"));
    }
}
