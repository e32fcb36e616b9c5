//! Minimal SVG emitter for log-log scatter plots with a fitted line.
//!
//! Output is a standalone SVG document built from shapes and text only, so
//! the plot renders anywhere without scripts or external assets. All
//! coordinates are formatted with two decimals, which keeps re-runs
//! byte-identical.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 55.0;

struct LogAxis {
    lo: f64,
    hi: f64,
    offset: f64,
    span: f64,
    flip: bool,
}

impl LogAxis {
    fn new(values: &[f64], offset: f64, span: f64, flip: bool) -> Self {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in values {
            let l = v.ln();
            lo = lo.min(l);
            hi = hi.max(l);
        }
        let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
        Self {
            lo: lo - pad,
            hi: hi + pad,
            offset,
            span,
            flip,
        }
    }

    fn place(&self, value_ln: f64) -> f64 {
        let t = (value_ln - self.lo) / (self.hi - self.lo);
        let t = if self.flip { 1.0 - t } else { t };
        self.offset + t * self.span
    }

    /// Base-10 exponents of the decade ticks inside the axis range.
    fn decade_ticks(&self) -> Vec<i32> {
        let ln10 = std::f64::consts::LN_10;
        let first = (self.lo / ln10).ceil() as i32;
        let last = (self.hi / ln10).floor() as i32;
        (first..=last).collect()
    }
}

fn line_through(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Renders a log-log scatter of `points` with decade ticks, axis labels,
/// and (when two or more points exist) a least-squares line through the
/// log-transformed points. Points with a nonpositive coordinate are
/// dropped; an empty plot states so instead of rendering axes.
pub fn log_log_plot(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"13\">"
    );
    let _ = writeln!(
        out,
        "  <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        out,
        "  <text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );

    let usable: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(x, y)| x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite())
        .collect();
    if usable.is_empty() {
        let _ = writeln!(
            out,
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">no positive data to plot</text>",
            WIDTH / 2.0,
            HEIGHT / 2.0
        );
        out.push_str("</svg>\n");
        return out;
    }

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let xs: Vec<f64> = usable.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = usable.iter().map(|p| p.1).collect();
    let x_axis = LogAxis::new(&xs, MARGIN_LEFT, plot_w, false);
    let y_axis = LogAxis::new(&ys, MARGIN_TOP, plot_h, true);

    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    let _ = writeln!(
        out,
        "  <line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y0:.2}\" stroke=\"#333333\"/>"
    );
    let _ = writeln!(
        out,
        "  <line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x0:.2}\" y2=\"{y1:.2}\" stroke=\"#333333\"/>"
    );

    let ln10 = std::f64::consts::LN_10;
    for e in x_axis.decade_ticks() {
        let px = x_axis.place(e as f64 * ln10);
        let _ = writeln!(
            out,
            "  <line x1=\"{px:.2}\" y1=\"{y0:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"#333333\"/>",
            y0 + 5.0
        );
        let _ = writeln!(
            out,
            "  <text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">1e{e}</text>",
            y0 + 20.0
        );
    }
    for e in y_axis.decade_ticks() {
        let py = y_axis.place(e as f64 * ln10);
        let _ = writeln!(
            out,
            "  <line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{x0:.2}\" y2=\"{py:.2}\" stroke=\"#333333\"/>",
            x0 - 5.0
        );
        let _ = writeln!(
            out,
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">1e{e}</text>",
            x0 - 8.0,
            py + 4.0
        );
    }

    let _ = writeln!(
        out,
        "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "  <text x=\"18\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.2})\">{}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );

    let log_points: Vec<(f64, f64)> = usable.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    if let Some((slope, intercept)) = line_through(&log_points) {
        let lx0 = x_axis.lo;
        let lx1 = x_axis.hi;
        let p0 = (x_axis.place(lx0), y_axis.place(slope * lx0 + intercept));
        let p1 = (x_axis.place(lx1), y_axis.place(slope * lx1 + intercept));
        let _ = writeln!(
            out,
            "  <polyline points=\"{:.2},{:.2} {:.2},{:.2}\" fill=\"none\" stroke=\"#d62728\" \
             stroke-width=\"1.5\"/>",
            p0.0, p0.1, p1.0, p1.1
        );
        let _ = writeln!(
            out,
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" fill=\"#d62728\">slope {:.3}</text>",
            x1 - 6.0,
            y1 + 16.0,
            slope
        );
    }
    for &(x, y) in &usable {
        let _ = writeln!(
            out,
            "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"#1f77b4\"/>",
            x_axis.place(x.ln()),
            y_axis.place(y.ln())
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
