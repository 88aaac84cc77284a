use std::f64::consts::{PI, TAU};
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::OrbitTrace;
use crate::sections::ReturnGrid;

/// What to draw over the annulus (or over the base, for an orbit).
#[derive(Debug, Clone, Copy)]
pub enum PlotInput<'a> {
    /// Grid points, with an arrow to each image that moved.
    ReturnGrid(&'a ReturnGrid),
    /// Section iterates, one colour per orbit.
    Iterates(&'a [Vec<[f64; 2]>]),
    /// Reduced base curve of an orbit.
    Orbit(&'a OrbitTrace),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotStyle {
    pub width: f64,
    pub height: f64,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_range: Option<[f64; 2]>,
    pub y_range: Option<[f64; 2]>,
    pub point_radius: f64,
    /// Grid images closer than this to their point get no arrow.
    pub arrow_tol: f64,
}

impl Default for PlotStyle {
    fn default() -> Self {
        PlotStyle {
            width: 640.0,
            height: 480.0,
            title: String::new(),
            x_label: "s".into(),
            y_label: "u".into(),
            x_range: None,
            y_range: None,
            point_radius: 1.5,
            arrow_tol: 1e-6,
        }
    }
}

const PALETTE: [&str; 8] = [
    "#1b6ca8", "#d1495b", "#2e933c", "#edae49", "#6a4c93", "#00798c", "#8d6a9f", "#3d3b30",
];
const MARGIN: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn data_range(values: impl Iterator<Item = f64>) -> [f64; 2] {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if !lo.is_finite() {
        return [0.0, 1.0];
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
    [lo - pad, hi + pad]
}

struct Frame {
    x: [f64; 2],
    y: [f64; 2],
    w: f64,
    h: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x[0]) / (self.x[1] - self.x[0]) * (self.w - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        self.h - MARGIN - (y - self.y[0]) / (self.y[1] - self.y[0]) * (self.h - 2.0 * MARGIN)
    }
}

/// Deterministic SVG scatter/line plot: fixed element order, three decimals.
pub fn render_section_plot(input: &PlotInput<'_>, style: &PlotStyle) -> Result<String> {
    let empty = match input {
        PlotInput::ReturnGrid(g) => g.rows.is_empty(),
        PlotInput::Iterates(o) => o.iter().all(|v| v.is_empty()),
        PlotInput::Orbit(t) => t.states.is_empty(),
    };
    if empty {
        return Err(Error::EmptyInput);
    }
    let (dx, dy) = match input {
        PlotInput::ReturnGrid(g) => ([0.0, g.s_period], [0.0, PI]),
        PlotInput::Iterates(o) => (
            data_range(o.iter().flatten().map(|p| p[0])),
            data_range(o.iter().flatten().map(|p| p[1])),
        ),
        PlotInput::Orbit(t) => (
            [0.0, t.periods[0]],
            if t.periods[1].is_finite() {
                [-0.5 * t.periods[1], 0.5 * t.periods[1]]
            } else {
                data_range(t.states.iter().map(|s| s.x2))
            },
        ),
    };
    let f = Frame {
        x: style.x_range.unwrap_or(dx),
        y: style.y_range.unwrap_or(dy),
        w: style.width,
        h: style.height,
    };
    let mut out = String::new();
    let (w, h) = (style.width, style.height);
    // writing to a String cannot fail
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">"
    );
    let _ = writeln!(
        out,
        "<defs><marker id=\"head\" markerWidth=\"6\" markerHeight=\"6\" refX=\"5\" refY=\"3\" orient=\"auto\"><path d=\"M0,0 L6,3 L0,6 z\" fill=\"#444\"/></marker></defs>"
    );
    let _ = writeln!(
        out,
        "<rect x=\"0\" y=\"0\" width=\"{w:.0}\" height=\"{h:.0}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        out,
        "<rect x=\"{m:.3}\" y=\"{m:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"none\" stroke=\"black\"/>",
        w - 2.0 * MARGIN,
        h - 2.0 * MARGIN,
        m = MARGIN
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.3}\" y=\"{:.3}\" font-size=\"14\" text-anchor=\"middle\">{}</text>",
        0.5 * w,
        0.6 * MARGIN,
        escape(&style.title)
    );
    for (v, anchor, x, y) in [
        (f.x[0], "start", MARGIN, h - 0.5 * MARGIN),
        (f.x[1], "end", w - MARGIN, h - 0.5 * MARGIN),
        (f.y[0], "end", 0.9 * MARGIN, h - MARGIN),
        (f.y[1], "end", 0.9 * MARGIN, MARGIN + 10.0),
    ] {
        let _ = writeln!(
            out,
            "<text x=\"{x:.3}\" y=\"{y:.3}\" font-size=\"10\" text-anchor=\"{anchor}\">{v:.3}</text>"
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.3}\" y=\"{:.3}\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
        0.5 * w,
        h - 0.2 * MARGIN,
        escape(&style.x_label)
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.3}\" y=\"{:.3}\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
        0.3 * MARGIN,
        0.5 * h,
        escape(&style.y_label)
    );
    let r = style.point_radius;
    match input {
        PlotInput::ReturnGrid(g) => {
            let p = g.s_period;
            for row in &g.rows {
                let (x, y) = (f.px(row.s), f.py(row.u));
                match &row.outcome {
                    Ok(s) => {
                        let _ = writeln!(
                            out,
                            "<circle cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"{r:.3}\" fill=\"{}\"/>",
                            PALETTE[0]
                        );
                        let ds = (s.image[0] - row.s).rem_euclid(p);
                        let moved = ds.min(p - ds).hypot(s.image[1] - row.u);
                        if moved > style.arrow_tol {
                            let _ = writeln!(
                                out,
                                "<line x1=\"{x:.3}\" y1=\"{y:.3}\" x2=\"{:.3}\" y2=\"{:.3}\" stroke=\"#444\" marker-end=\"url(#head)\"/>",
                                f.px(s.image[0]),
                                f.py(s.image[1])
                            );
                        }
                    }
                    Err(_) => {
                        let _ = writeln!(out, "<circle cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"{r:.3}\" fill=\"none\" stroke=\"{}\"/>", PALETTE[1]);
                    }
                }
            }
        }
        PlotInput::Iterates(orbits) => {
            for (k, o) in orbits.iter().enumerate() {
                let c = PALETTE[k % PALETTE.len()];
                let _ = writeln!(out, "<g fill=\"{c}\">");
                for q in o {
                    let _ = writeln!(
                        out,
                        "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"{r:.3}\"/>",
                        f.px(q[0]),
                        f.py(q[1])
                    );
                }
                let _ = writeln!(out, "</g>");
            }
        }
        PlotInput::Orbit(t) => {
            // break the polyline where the reduced curve wraps
            let mut runs: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
            let mut prev: Option<(f64, f64)> = None;
            for s in &t.states {
                let cur = (s.x1.rem_euclid(TAU), s.x2);
                if let Some(p) = prev {
                    let jump_x = (cur.0 - p.0).abs() > 0.5 * t.periods[0];
                    let jump_y =
                        t.periods[1].is_finite() && (cur.1 - p.1).abs() > 0.5 * t.periods[1];
                    if jump_x || jump_y {
                        runs.push(Vec::new());
                    }
                }
                runs.last_mut().expect("nonempty").push(cur);
                prev = Some(cur);
            }
            for run in runs.iter().filter(|r| r.len() > 1) {
                let pts: Vec<String> = run
                    .iter()
                    .map(|&(x, y)| format!("{:.3},{:.3}", f.px(x), f.py(y)))
                    .collect();
                let _ = writeln!(
                    out,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"0.8\"/>",
                    pts.join(" "),
                    PALETTE[0]
                );
            }
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}
