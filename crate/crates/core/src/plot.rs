//! Minimal deterministic SVG line plots.

use std::fmt::Write as _;
use std::time::Duration;

use crate::phase::TransitionCurve;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Drawn dashed in grey with class `reference`.
    pub reference: bool,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points,
            reference: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    /// Fixed axis ranges; computed from the data when absent.
    pub x_range: Option<(f64, f64)>,
    pub y_range: Option<(f64, f64)>,
    pub series: Vec<Series>,
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool, fixed: Option<(f64, f64)>) -> Self {
        let (mut lo, mut hi) = fixed.unwrap_or_else(|| {
            values
                .filter(|v| v.is_finite() && (!log || *v > 0.0))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
        });
        if !lo.is_finite() || !hi.is_finite() {
            (lo, hi) = if log { (1.0, 10.0) } else { (0.0, 1.0) };
        }
        if log {
            lo = 10f64.powf(lo.log10().floor());
            hi = 10f64.powf(hi.log10().ceil());
        }
        if hi <= lo {
            hi = if log { lo * 10.0 } else { lo + 1.0 };
        }
        Self { lo, hi, log }
    }

    fn unit(&self, v: f64) -> f64 {
        if self.log {
            (v.log10() - self.lo.log10()) / (self.hi.log10() - self.lo.log10())
        } else {
            (v - self.lo) / (self.hi - self.lo)
        }
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.log10().round() as i32, self.hi.log10().round() as i32);
            (a..=b).map(|e| 10f64.powi(e)).collect()
        } else {
            (0..=5)
                .map(|i| self.lo + (self.hi - self.lo) * i as f64 / 5.0)
                .collect()
        }
    }
}

fn tick_label(v: f64, log: bool) -> String {
    if log {
        format!("1e{}", v.log10().round() as i32)
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

impl LinePlot {
    pub fn render(&self) -> String {
        let xa = Axis::fit(
            self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)),
            self.log_x,
            self.x_range,
        );
        let ya = Axis::fit(
            self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)),
            self.log_y,
            self.y_range,
        );
        let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let px = |v: f64| MARGIN_LEFT + xa.unit(v) * pw;
        let py = |v: f64| MARGIN_TOP + (1.0 - ya.unit(v)) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            MARGIN_LEFT + pw / 2.0,
            escape(&self.title)
        );

        // Axes and ticks.
        let _ = writeln!(
            s,
            r#"<rect class="frame" x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for t in xa.ticks() {
            let x = px(t);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                MARGIN_TOP + ph,
                MARGIN_TOP + ph + 5.0,
                MARGIN_TOP + ph + 20.0,
                tick_label(t, xa.log)
            );
        }
        for t in ya.ticks() {
            let y = py(t);
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{MARGIN_LEFT}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                MARGIN_LEFT - 5.0,
                MARGIN_LEFT - 8.0,
                y + 4.0,
                tick_label(t, ya.log)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            MARGIN_LEFT + pw / 2.0,
            HEIGHT - 15.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            MARGIN_TOP + ph / 2.0,
            MARGIN_TOP + ph / 2.0,
            escape(&self.y_label)
        );

        let mut color_idx = 0;
        let mut legend = Vec::new();
        for series in &self.series {
            let (class, stroke, dash) = if series.reference {
                ("reference", "#555555", r#" stroke-dasharray="6 4""#)
            } else {
                let c = PALETTE[color_idx % PALETTE.len()];
                color_idx += 1;
                ("series", c, "")
            };
            let pts: Vec<String> = series
                .points
                .iter()
                .filter(|(x, y)| {
                    x.is_finite() && y.is_finite() && (!xa.log || *x > 0.0) && (!ya.log || *y > 0.0)
                })
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline class="{class}" fill="none" stroke="{stroke}" stroke-width="2"{dash} points="{}"/>"#,
                pts.join(" ")
            );
            legend.push((series.label.as_str(), stroke, dash));
        }

        let _ = writeln!(s, r#"<g class="legend">"#);
        let lx = WIDTH - MARGIN_RIGHT + 15.0;
        for (i, (label, stroke, dash)) in legend.iter().enumerate() {
            let ly = MARGIN_TOP + 10.0 + 20.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{stroke}" stroke-width="2"{dash}/><text x="{:.2}" y="{:.2}">{}</text>"#,
                lx + 25.0,
                lx + 32.0,
                ly + 4.0,
                escape(label)
            );
        }
        let _ = writeln!(s, "</g>");
        s.push_str("</svg>\n");
        s
    }
}

/// ρ*(δ) for each labelled curve on the unit square, with an optional
/// reference polyline.
pub fn transition_plot(
    curves: &[(String, TransitionCurve)],
    reference: Option<&[(f64, f64)]>,
) -> LinePlot {
    let mut series: Vec<Series> = curves
        .iter()
        .map(|(label, c)| {
            Series::new(
                label.clone(),
                c.points.iter().map(|p| (p.delta, p.rho_star)).collect(),
            )
        })
        .collect();
    if let Some(r) = reference {
        series.push(Series {
            label: "reference".into(),
            points: r.to_vec(),
            reference: true,
        });
    }
    LinePlot {
        title: "Phase transition".into(),
        x_label: "δ = n/N".into(),
        y_label: "ρ = k/n".into(),
        log_x: false,
        log_y: false,
        x_range: Some((0.0, 1.0)),
        y_range: Some((0.0, 1.0)),
        series,
    }
}

fn secs<X: Copy>(points: &[(X, Duration)], f: impl Fn(X) -> f64) -> Vec<(f64, f64)> {
    points.iter().map(|&(x, t)| (f(x), t.as_secs_f64())).collect()
}

/// Mean reconstruction time against δ, log time axis.
pub fn time_vs_delta_plot(series: &[(String, Vec<(f64, Duration)>)]) -> LinePlot {
    LinePlot {
        title: "Reconstruction time".into(),
        x_label: "δ = n/N".into(),
        y_label: "time [s]".into(),
        log_x: false,
        log_y: true,
        x_range: Some((0.0, 1.0)),
        y_range: None,
        series: series
            .iter()
            .map(|(l, pts)| Series::new(l.clone(), secs(pts, |d| d)))
            .collect(),
    }
}

/// Mean reconstruction time against N on log-log axes.
pub fn time_vs_n_plot(series: &[(String, Vec<(usize, Duration)>)]) -> LinePlot {
    LinePlot {
        title: "Reconstruction time".into(),
        x_label: "N".into(),
        y_label: "time [s]".into(),
        log_x: true,
        log_y: true,
        x_range: None,
        y_range: None,
        series: series
            .iter()
            .map(|(l, pts)| Series::new(l.clone(), secs(pts, |n| n as f64)))
            .collect(),
    }
}
