//! SVG line charts of metric reports and top-view prediction plots.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::report::{Metric, MetricReport};
use crate::generator::Fusion;
use crate::synth::Validation;

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 240.0;
const MARGIN: f64 = 48.0;
const GAZE_COLOR: &str = "#d62728";
const NO_GAZE_COLOR: &str = "#2ca02c";
const FLOOR_COLOR: &str = "#7f7f7f";

/// Which sweep a chart shows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sweep {
    /// Error against input frames, noise-free cells.
    Frames,
    /// Error against noise level, at the noise sweep's input length.
    Noise,
}

impl Sweep {
    pub fn name(self) -> &'static str {
        match self {
            Sweep::Frames => "frames",
            Sweep::Noise => "noise",
        }
    }
}

struct Series {
    label: String,
    color: &'static str,
    dashed: bool,
    points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        return None;
    }
    if hi - lo < 1e-12 {
        let pad = lo.abs().max(1.0) * 0.05;
        return Some((lo - pad, hi + pad));
    }
    Some((lo, hi))
}

fn panel(svg: &mut String, x0: f64, title: &str, x_label: &str, y_label: &str, series: &[Series]) {
    let all = series.iter().flat_map(|s| s.points.iter());
    let Some((xmin, xmax)) = bounds(all.clone().map(|p| p.0)) else { return };
    let Some((_, ymax)) = bounds(all.map(|p| p.1)) else { return };
    let (ymin, ymax) = (0.0, ymax * 1.1);
    let w = PANEL_W - 2.0 * MARGIN;
    let h = PANEL_H - 2.0 * MARGIN;
    let sx = |x: f64| x0 + MARGIN + (x - xmin) / (xmax - xmin).max(1e-12) * w;
    let sy = |y: f64| MARGIN + h - (y - ymin) / (ymax - ymin).max(1e-12) * h;
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="14">{}</text>"#,
        x0 + PANEL_W / 2.0,
        MARGIN / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        x0 + MARGIN,
        MARGIN,
        w,
        h
    );
    for i in 0..=4 {
        let fy = ymin + (ymax - ymin) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="9">{:.3}</text>"#,
            x0 + MARGIN - 4.0,
            sy(fy) + 3.0,
            fy
        );
        let fx = xmin + (xmax - xmin) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="9">{}</text>"#,
            sx(fx),
            MARGIN + h + 12.0,
            (fx * 100.0).round() / 100.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11">{}</text>"#,
        x0 + MARGIN + w / 2.0,
        PANEL_H - 8.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" transform="rotate(-90 {:.1} {:.1})" text-anchor="middle">{}</text>"#,
        x0 + 12.0,
        MARGIN + h / 2.0,
        x0 + 12.0,
        MARGIN + h / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let dash = if s.dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<polyline class="series" data-label="{}" points="{}" fill="none" stroke="{}" stroke-width="1.5"{}/>"#,
            escape(&s.label),
            pts.join(" "),
            s.color,
            dash
        );
        let ly = MARGIN + 10.0 + 12.0 * i as f64;
        let lx = x0 + PANEL_W - MARGIN - 90.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{}"{}/><text x="{:.1}" y="{:.1}" font-size="9">{}</text>"#,
            lx,
            ly,
            lx + 14.0,
            ly,
            s.color,
            dash,
            lx + 18.0,
            ly + 3.0,
            escape(&s.label)
        );
    }
}

/// One chart per (metric, sweep): a panel per validation mode with a red gaze
/// and a green no-gaze series per fusion, and the dashed reconstruction floor.
/// Values are fold means. Returns `None` when the report has no such rows.
pub fn plot_sweep(report: &MetricReport, metric: Metric, sweep: Sweep) -> Option<String> {
    let noise_frames = report
        .rows
        .iter()
        .filter(|r| r.noise_e > 0.0)
        .map(|r| r.input_frames)
        .min();
    let keep = |frames: usize, e: f64| match sweep {
        Sweep::Frames => e == 0.0,
        Sweep::Noise => Some(frames) == noise_frames && e > 0.0,
    };
    let floor = metric.floor();
    type Key = (Validation, Option<(Fusion, bool)>);
    let mut sums: BTreeMap<Key, BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    for r in report.summary() {
        if !keep(r.input_frames, r.noise_e) {
            continue;
        }
        let series = if r.metric == metric {
            Some((r.fusion, r.gaze))
        } else if Some(r.metric) == floor {
            None
        } else {
            continue;
        };
        let x = match sweep {
            Sweep::Frames => r.input_frames as f64,
            Sweep::Noise => r.noise_e,
        };
        let e = sums.entry((r.validation, series)).or_default().entry(x.to_bits()).or_insert((0.0, 0));
        e.0 += r.value;
        e.1 += 1;
    }
    if sums.keys().all(|k| k.1.is_none()) {
        return None;
    }
    let validations: Vec<Validation> = Validation::ALL
        .into_iter()
        .filter(|v| sums.keys().any(|k| k.0 == *v))
        .collect();
    let width = PANEL_W * validations.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.0} {:.0}">"#,
        width, PANEL_H, width, PANEL_H
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let fusions: Vec<Fusion> = {
        let mut f: Vec<Fusion> = sums.keys().filter_map(|k| k.1.map(|s| s.0)).collect();
        f.sort();
        f.dedup();
        f
    };
    for (pi, v) in validations.iter().enumerate() {
        let mut series = Vec::new();
        for (key, pts) in sums.iter().filter(|(k, _)| k.0 == *v) {
            let points: Vec<(f64, f64)> = pts
                .iter()
                .map(|(x, (s, n))| (f64::from_bits(*x), s / *n as f64))
                .collect();
            let (label, color, dashed) = match key.1 {
                None => ("VQ-VAE floor".to_string(), FLOOR_COLOR, true),
                Some((fusion, gaze)) => {
                    let base = if gaze { "gaze" } else { "no gaze" };
                    let label = if fusions.len() > 1 {
                        format!("{} {}", fusion, base)
                    } else {
                        base.to_string()
                    };
                    (label, if gaze { GAZE_COLOR } else { NO_GAZE_COLOR }, false)
                }
            };
            series.push(Series {
                label,
                color,
                dashed,
                points,
            });
        }
        let x_label = match sweep {
            Sweep::Frames => "input frames".to_string(),
            Sweep::Noise => "noise e (m)".to_string(),
        };
        let y_label = format!("{} ({})", metric.name(), report_units(report, metric));
        panel(&mut svg, PANEL_W * pi as f64, v.code(), &x_label, &y_label, &series);
    }
    svg.push_str("</svg>\n");
    Some(svg)
}

fn report_units(report: &MetricReport, metric: Metric) -> String {
    report
        .rows
        .iter()
        .find(|r| r.metric == metric)
        .map(|r| r.units.clone())
        .unwrap_or_else(|| metric.units().to_string())
}

/// All charts for a report as `(file name, svg)` pairs.
pub fn plot_report(report: &MetricReport) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for sweep in [Sweep::Frames, Sweep::Noise] {
        for metric in [Metric::EndPose, Metric::AvgPosition, Metric::KeyPoseAngle] {
            if let Some(svg) = plot_sweep(report, metric, sweep) {
                out.push((format!("{}_{}.svg", sweep.name(), metric.name()), svg));
            }
        }
    }
    out
}

/// Top view (x, y) of a prediction: start point, ground-truth path, the chain
/// of successive predicted end positions with arrows, and the target star with
/// a dashed circle of `target_radius` meters.
pub fn plot_top_view(
    truth_path: &[[f64; 3]],
    predicted_ends: &[[f64; 3]],
    target_radius: f64,
) -> String {
    let start = truth_path.first().copied().unwrap_or([0.0; 3]);
    let target = truth_path.last().copied().unwrap_or(start);
    let pts = truth_path.iter().chain(predicted_ends).map(|p| (p[0], p[1]));
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    xmin = xmin.min(target[0] - target_radius) - 0.05;
    xmax = xmax.max(target[0] + target_radius) + 0.05;
    ymin = ymin.min(target[1] - target_radius) - 0.05;
    ymax = ymax.max(target[1] + target_radius) + 0.05;
    let size = 480.0;
    let span = (xmax - xmin).max(ymax - ymin).max(1e-6);
    let scale = (size - 2.0 * MARGIN) / span;
    let sx = |x: f64| MARGIN + (x - xmin) * scale;
    let sy = |y: f64| size - MARGIN - (y - ymin) * scale;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{0:.0}" height="{0:.0}" viewBox="0 0 {0:.0} {0:.0}">"#,
        size
    );
    let _ = writeln!(
        svg,
        r#"<defs><marker id="arrow" viewBox="0 0 10 10" refX="9" refY="5" markerWidth="6" markerHeight="6" orient="auto"><path d="M0,0 L10,5 L0,10 z" fill="{}"/></marker></defs>"#,
        GAZE_COLOR
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let path: Vec<String> = truth_path.iter().map(|p| format!("{:.2},{:.2}", sx(p[0]), sy(p[1]))).collect();
    let _ = writeln!(
        svg,
        r#"<polyline class="truth" points="{}" fill="none" stroke="{}" stroke-width="1"/>"#,
        path.join(" "),
        FLOOR_COLOR
    );
    let _ = writeln!(
        svg,
        r#"<circle class="target-zone" cx="{:.2}" cy="{:.2}" r="{:.2}" fill="none" stroke="black" stroke-dasharray="5,4"/>"#,
        sx(target[0]),
        sy(target[1]),
        target_radius * scale
    );
    let mut prev = start;
    for p in predicted_ends {
        let _ = writeln!(
            svg,
            r#"<line class="prediction" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="1.5" marker-end="url(#arrow)"/>"#,
            sx(prev[0]),
            sy(prev[1]),
            sx(p[0]),
            sy(p[1]),
            GAZE_COLOR
        );
        prev = *p;
    }
    let _ = writeln!(
        svg,
        r#"<circle class="start" cx="{:.2}" cy="{:.2}" r="5" fill="black"/>"#,
        sx(start[0]),
        sy(start[1])
    );
    let (cx, cy) = (sx(target[0]), sy(target[1]));
    let star: Vec<String> = (0..10)
        .map(|i| {
            let r = if i % 2 == 0 { 9.0 } else { 4.0 };
            let a = std::f64::consts::PI * (i as f64 / 5.0 - 0.5);
            format!("{:.2},{:.2}", cx + r * a.cos(), cy + r * a.sin())
        })
        .collect();
    let _ = writeln!(
        svg,
        r##"<polygon class="target" points="{}" fill="#ffbf00" stroke="black"/>"##,
        star.join(" ")
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="11">top view (x, y) in m, {} partial predictions</text>"#,
        MARGIN,
        MARGIN / 2.0,
        predicted_ends.len()
    );
    svg.push_str("</svg>\n");
    svg
}
