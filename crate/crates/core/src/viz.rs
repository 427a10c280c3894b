//! Ternary projection of label distributions and standalone SVG figures.
//!
//! Corners: Entailment bottom-left (0,0), Neutral bottom-right (1,0), Contradiction top
//! (0.5, √3/2). Output is plain text with fixed numeric precision, so identical inputs give
//! byte-identical files.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::JudgmentDistribution;

const SQRT3_2: f64 = 0.866_025_403_784_438_6;

#[derive(Debug, Error, PartialEq)]
pub enum VizError {
    #[error("zoom scale must be a positive finite number, got {0}")]
    InvalidScale(f64),
    #[error("negative distance {distance} for pair {id}")]
    NegativeDistance { id: String, distance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TernaryPoint {
    pub x: f64,
    pub y: f64,
}

pub fn ternary_coords(d: &JudgmentDistribution) -> TernaryPoint {
    let [_, n, c] = d.probs();
    TernaryPoint {
        x: n + 0.5 * c,
        y: SQRT3_2 * c,
    }
}

/// Scales `d` away from (or toward) the centroid by `scale`. Components pushed below zero are
/// clipped and the result renormalized; the flag reports whether that happened.
pub fn zoom(d: &JudgmentDistribution, scale: f64) -> Result<(JudgmentDistribution, bool), VizError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(VizError::InvalidScale(scale));
    }
    if scale == 1.0 {
        return Ok((*d, false));
    }
    const C: f64 = 1.0 / 3.0;
    let z = d.probs().map(|p| C + scale * (p - C));
    if z.iter().all(|v| *v >= 0.0) {
        return Ok((JudgmentDistribution::from_weights(z).expect("zoom keeps total mass"), false));
    }
    let clipped = z.map(|v| v.max(0.0));
    Ok((JudgmentDistribution::from_weights(clipped).expect("at least one component stays positive"), true))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub title: String,
    pub point_radius: f64,
    pub zoom: f64,
    /// Triangle side in pixels.
    pub side: f64,
    /// Error-line shade range, 0 = lightest, 1 = darkest.
    pub shade_min: f64,
    pub shade_max: f64,
}

impl Default for PlotSpec {
    fn default() -> Self {
        Self {
            title: String::new(),
            point_radius: 3.0,
            zoom: 1.0,
            side: 500.0,
            shade_min: 0.15,
            shade_max: 1.0,
        }
    }
}

/// One labelled set of points (a dataset) in a scatter figure.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(String, JudgmentDistribution)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorPair {
    pub id: String,
    pub reference: JudgmentDistribution,
    pub candidate: JudgmentDistribution,
    pub distance: f64,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"];
const MARGIN: f64 = 50.0;

struct Canvas {
    side: f64,
    out: String,
}

impl Canvas {
    fn new(spec: &PlotSpec, extra_height: f64) -> Self {
        let w = spec.side + 2.0 * MARGIN;
        let h = spec.side * SQRT3_2 + 2.0 * MARGIN + extra_height;
        let mut out = String::new();
        writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
        writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
        )
        .unwrap();
        writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
        if !spec.title.is_empty() {
            writeln!(
                out,
                r#"<text x="{:.2}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
                w / 2.0,
                escape(&spec.title)
            )
            .unwrap();
        }
        let mut c = Self { side: spec.side, out };
        c.frame();
        c
    }

    fn px(&self, p: TernaryPoint) -> (f64, f64) {
        (MARGIN + p.x * self.side, MARGIN + (SQRT3_2 - p.y) * self.side)
    }

    fn frame(&mut self) {
        let corners = [
            (TernaryPoint { x: 0.0, y: 0.0 }, "E", "end", 0.0, 18.0),
            (TernaryPoint { x: 1.0, y: 0.0 }, "N", "start", 0.0, 18.0),
            (TernaryPoint { x: 0.5, y: SQRT3_2 }, "C", "middle", 0.0, -8.0),
        ];
        let pts: Vec<String> = corners
            .iter()
            .map(|(p, ..)| {
                let (x, y) = self.px(*p);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        writeln!(
            self.out,
            r#"<polygon class="frame" points="{}" fill="none" stroke="black" stroke-width="1"/>"#,
            pts.join(" ")
        )
        .unwrap();
        for (p, label, anchor, dx, dy) in corners {
            let (x, y) = self.px(p);
            writeln!(
                self.out,
                r#"<text class="corner" x="{:.3}" y="{:.3}" text-anchor="{anchor}" font-family="sans-serif" font-size="14">{label}</text>"#,
                x + dx,
                y + dy
            )
            .unwrap();
        }
    }

    fn circle(&mut self, id: &str, series: usize, p: TernaryPoint, r: f64, clipped: bool) {
        let (x, y) = self.px(p);
        let clip = if clipped { r#" data-clipped="true""# } else { "" };
        writeln!(
            self.out,
            r#"<circle class="point s{series}" data-id="{}"{clip} cx="{x:.3}" cy="{y:.3}" r="{r:.2}" fill="{}" fill-opacity="0.7"/>"#,
            escape(id),
            PALETTE[series % PALETTE.len()]
        )
        .unwrap();
    }

    fn legend(&mut self, labels: &[&str]) {
        let top = MARGIN + self.side * SQRT3_2 + 30.0;
        for (i, label) in labels.iter().enumerate() {
            let y = top + 18.0 * i as f64;
            writeln!(
                self.out,
                r#"<rect class="legend" x="{MARGIN:.0}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.0}" y="{:.1}" font-family="sans-serif" font-size="12">{}</text>"#,
                y - 9.0,
                PALETTE[i % PALETTE.len()],
                MARGIN + 16.0,
                y,
                escape(label)
            )
            .unwrap();
        }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Scatter figure: one `<circle class="point">` per input point, coloured by series.
pub fn render_scatter(series: &[Series], spec: &PlotSpec) -> Result<String, VizError> {
    let mut canvas = Canvas::new(spec, 18.0 * series.len() as f64 + 10.0);
    for (si, s) in series.iter().enumerate() {
        for (id, d) in &s.points {
            let (z, clipped) = zoom(d, spec.zoom)?;
            canvas.circle(id, si, ternary_coords(&z), spec.point_radius, clipped);
        }
    }
    let labels: Vec<&str> = series.iter().map(|s| s.label.as_str()).collect();
    canvas.legend(&labels);
    Ok(canvas.finish())
}

/// Linear shade in `[spec.shade_min, spec.shade_max]`; the largest distance gets the darkest.
pub fn error_shade(distance: f64, max_distance: f64, spec: &PlotSpec) -> f64 {
    let t = if max_distance > 0.0 {
        (distance / max_distance).clamp(0.0, 1.0)
    } else {
        0.0
    };
    spec.shade_min + t * (spec.shade_max - spec.shade_min)
}

/// Green ramp: shade 0 is pale, 1 is dark.
fn shade_color(shade: f64) -> String {
    let lerp = |a: f64, b: f64| (a + (b - a) * shade).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(220.0, 0.0), lerp(245.0, 90.0), lerp(220.0, 0.0))
}

/// Error figure: both point sets plus one `<line class="error">` per pair, shaded by distance.
pub fn render_error_plot(pairs: &[ErrorPair], labels: [&str; 2], spec: &PlotSpec) -> Result<String, VizError> {
    if let Some(p) = pairs.iter().find(|p| !(p.distance >= 0.0)) {
        return Err(VizError::NegativeDistance {
            id: p.id.clone(),
            distance: p.distance,
        });
    }
    let max = pairs.iter().map(|p| p.distance).fold(0.0, f64::max);
    let mut canvas = Canvas::new(spec, 46.0);
    let mut zoomed = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (a, ca) = zoom(&p.reference, spec.zoom)?;
        let (b, cb) = zoom(&p.candidate, spec.zoom)?;
        let shade = error_shade(p.distance, max, spec);
        let (x1, y1) = canvas.px(ternary_coords(&a));
        let (x2, y2) = canvas.px(ternary_coords(&b));
        writeln!(
            canvas.out,
            r#"<line class="error" data-id="{}" data-shade="{shade:.4}" x1="{x1:.3}" y1="{y1:.3}" x2="{x2:.3}" y2="{y2:.3}" stroke="{}" stroke-width="1.2"/>"#,
            escape(&p.id),
            shade_color(shade)
        )
        .unwrap();
        zoomed.push((a, ca, b, cb));
    }
    for (p, (a, ca, _, _)) in pairs.iter().zip(&zoomed) {
        canvas.circle(&p.id, 0, ternary_coords(a), spec.point_radius, *ca);
    }
    for (p, (_, _, b, cb)) in pairs.iter().zip(&zoomed) {
        canvas.circle(&p.id, 1, ternary_coords(b), spec.point_radius, *cb);
    }
    canvas.legend(&labels);
    Ok(canvas.finish())
}

/// `id,x,y,dataset,clipped` rows for external plotting tools.
pub fn csv_sidecar(series: &[Series], spec: &PlotSpec) -> Result<String, VizError> {
    let mut out = String::from("id,x,y,dataset,clipped\n");
    for s in series {
        for (id, d) in &s.points {
            let (z, clipped) = zoom(d, spec.zoom)?;
            let p = ternary_coords(&z);
            writeln!(out, "{},{:.6},{:.6},{},{}", csv_field(id), p.x, p.y, csv_field(&s.label), clipped).unwrap();
        }
    }
    Ok(out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
