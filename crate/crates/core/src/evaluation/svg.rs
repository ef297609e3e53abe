//! Self-contained SVG rendering of error-versus-sample-size figures:
//! scatter marks sized by mean log duration, the selection-statistic curve,
//! the global-model benchmark line, and a dashed kernel smooth. Inline
//! styles only, no scripts.

use std::fmt::Write;

use super::{CurvePoint, FamilyFigure};

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 640.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 45.0;
const MARGIN_BOTTOM: f64 = 60.0;

struct Scales {
    ln_min: f64,
    ln_max: f64,
    y_max: f64,
}

impl Scales {
    fn x(&self, n: f64) -> f64 {
        let t = if self.ln_max > self.ln_min {
            (n.ln() - self.ln_min) / (self.ln_max - self.ln_min)
        } else {
            0.5
        };
        MARGIN_LEFT + t * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        let t = (v / self.y_max).clamp(0.0, 1.0);
        HEIGHT - MARGIN_BOTTOM - t * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn path_data(curve: &[CurvePoint], scales: &Scales) -> String {
    let mut d = String::new();
    for (i, p) in curve.iter().enumerate() {
        let cmd = if i == 0 { 'M' } else { 'L' };
        let _ = write!(d, "{cmd}{:.2} {:.2} ", scales.x(p.n), scales.y(p.value));
    }
    d.trim_end().to_string()
}

pub(super) fn render_figure(figure: &FamilyFigure) -> String {
    let n_values: Vec<f64> = figure
        .points
        .iter()
        .map(|p| p.n)
        .chain(figure.cp_curve.iter().map(|c| c.n))
        .chain(figure.smooth.iter().map(|c| c.n))
        .filter(|n| *n > 0.0)
        .collect();
    let ln_min = n_values.iter().map(|n| n.ln()).fold(f64::INFINITY, f64::min);
    let ln_max = n_values
        .iter()
        .map(|n| n.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let y_max = figure
        .points
        .iter()
        .map(|p| p.rmse_pct)
        .chain(figure.cp_curve.iter().map(|c| c.value))
        .chain(figure.smooth.iter().map(|c| c.value))
        .chain(std::iter::once(figure.global_rmse_pct))
        .fold(0.0f64, f64::max)
        .max(1e-9)
        * 1.15;
    let scales = Scales {
        ln_min: if ln_min.is_finite() { ln_min } else { 0.0 },
        ln_max: if ln_max.is_finite() { ln_max } else { 1.0 },
        y_max,
    };

    let (m_lo, m_hi) = figure
        .points
        .iter()
        .map(|p| p.mean_log_duration)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| {
            (lo.min(m), hi.max(m))
        });
    let radius = |m: f64| -> f64 {
        if m_hi > m_lo {
            3.0 + 6.0 * (m - m_lo) / (m_hi - m_lo)
        } else {
            5.0
        }
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 960 640\" \
         font-family=\"sans-serif\" font-size=\"14\">\n"
    );
    let _ = writeln!(
        svg,
        "<text x=\"480\" y=\"24\" text-anchor=\"middle\" font-size=\"18\">{} prediction error ({}) vs task sample size</text>",
        figure.method, figure.split
    );

    // Axes.
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    let _ = writeln!(
        svg,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"#333\" stroke-width=\"1\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"#333\" stroke-width=\"1\"/>"
    );

    // Log-scale x ticks at powers-of-ten multiples of (1, 2, 5).
    let n_lo = scales.ln_min.exp();
    let n_hi = scales.ln_max.exp();
    for exp in 0..=6 {
        for mult in [1.0, 2.0, 5.0] {
            let tick = mult * 10f64.powi(exp);
            if tick >= n_lo * 0.999 && tick <= n_hi * 1.001 {
                let x = scales.x(tick);
                let _ = writeln!(
                    svg,
                    "<line x1=\"{x:.2}\" y1=\"{y0}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"#333\" stroke-width=\"1\"/>\n\
                     <text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\">{tick}</text>",
                    y0 + 6.0,
                    y0 + 22.0
                );
            }
        }
    }
    // y ticks.
    let step = (y_max / 5.0).max(1e-9);
    for i in 0..=5 {
        let v = step * i as f64;
        let y = scales.y(v);
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{y:.2}\" x2=\"{x0}\" y2=\"{y:.2}\" stroke=\"#333\" stroke-width=\"1\"/>\n\
             <text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{v:.1}</text>",
            x0 - 6.0,
            x0 - 10.0,
            y + 5.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.0}\" y=\"{:.0}\" text-anchor=\"middle\">task sample size (log scale)</text>",
        (x0 + x1) / 2.0,
        HEIGHT - 14.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"18\" y=\"{:.0}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.0})\">RMSE (%)</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );

    // Scatter: one circle per task, radius from the mean log duration.
    for p in &figure.points {
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\" fill=\"#1f77b4\" fill-opacity=\"0.55\" stroke=\"#1f77b4\"/>",
            scales.x(p.n),
            scales.y(p.rmse_pct),
            radius(p.mean_log_duration)
        );
    }

    // Exactly three curve paths: statistic, global benchmark, smooth.
    let _ = writeln!(
        svg,
        "<path d=\"{}\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\"/>",
        path_data(&figure.cp_curve, &scales)
    );
    let gy = scales.y(figure.global_rmse_pct);
    let _ = writeln!(
        svg,
        "<path d=\"M{x0:.2} {gy:.2} L{x1:.2} {gy:.2}\" fill=\"none\" stroke=\"#2ca02c\" stroke-width=\"2\"/>"
    );
    let _ = writeln!(
        svg,
        "<path d=\"{}\" fill=\"none\" stroke=\"#111\" stroke-width=\"2\" stroke-dasharray=\"7 5\"/>",
        path_data(&figure.smooth, &scales)
    );

    // Legend.
    let lx = x1 - 250.0;
    let _ = writeln!(
        svg,
        "<line x1=\"{lx}\" y1=\"{y1}\" x2=\"{}\" y2=\"{y1}\" stroke=\"#d62728\" stroke-width=\"2\"/>\
         <text x=\"{}\" y=\"{}\">average-error statistic</text>",
        lx + 28.0,
        lx + 34.0,
        y1 + 5.0
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{lx}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#2ca02c\" stroke-width=\"2\"/>\
         <text x=\"{}\" y=\"{}\">global model</text>",
        y1 + 20.0,
        lx + 28.0,
        y1 + 20.0,
        lx + 34.0,
        y1 + 25.0
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{lx}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#111\" stroke-width=\"2\" stroke-dasharray=\"7 5\"/>\
         <text x=\"{}\" y=\"{}\">kernel smooth</text>",
        y1 + 40.0,
        lx + 28.0,
        y1 + 40.0,
        lx + 34.0,
        y1 + 45.0
    );

    svg.push_str("</svg>\n");
    svg
}
