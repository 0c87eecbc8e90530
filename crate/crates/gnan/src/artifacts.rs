//! File emission for explanation artifacts: CSV tables and standalone SVG
//! figures.
//!
//! Every numeric cell is written with the shortest representation that
//! parses back to the identical f64, so re-reading a CSV reproduces the
//! emitted values bit for bit. Unreachable distances print as "inf".

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{GnanError, Result};
use crate::explain::{CurveBands, CurveTarget, HeatmapMatrix, LocalGraphLayout, ShapeCurve};
use crate::graph::GraphInstance;

/// Pixel dimensions for SVG figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SvgSize {
    pub width: u32,
    pub height: u32,
}

impl Default for SvgSize {
    fn default() -> Self {
        SvgSize { width: 640, height: 480 }
    }
}

/// Shortest round-trippable decimal form; infinities print as "inf".
fn cell(v: f64) -> String {
    format!("{v}")
}

fn curve_label(curves: &[ShapeCurve], target: CurveTarget) -> String {
    match target {
        CurveTarget::Feature(k) => k.to_string(),
        CurveTarget::Distance(r) => {
            let nets = curves
                .iter()
                .filter(|c| matches!(c.target, CurveTarget::Distance(_)))
                .count();
            if nets <= 1 {
                "distance".into()
            } else {
                format!("distance_{r}")
            }
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| GnanError::io(path, e))
}

/// Writes all curves as `feature,input,class,value[,lower,upper]`. When a
/// recentered curve is present its bias term is appended as pseudo-feature
/// "bias" rows (input 0) so the table stays self-contained.
pub fn write_curves_csv(
    path: &Path,
    curves: &[ShapeCurve],
    bands: Option<&[CurveBands]>,
) -> Result<()> {
    if let Some(bands) = bands {
        if bands.len() != curves.len() {
            return Err(GnanError::Contract(format!(
                "{} band sets for {} curves",
                bands.len(),
                curves.len()
            )));
        }
    }
    let mut out = String::new();
    out.push_str(if bands.is_some() {
        "feature,input,class,value,lower,upper\n"
    } else {
        "feature,input,class,value\n"
    });
    for (idx, curve) in curves.iter().enumerate() {
        let label = curve_label(curves, curve.target);
        for (row, &input) in curve.grid.iter().enumerate() {
            for class in 0..curve.values.ncols() {
                let _ = write!(
                    out,
                    "{label},{},{class},{}",
                    cell(input),
                    cell(curve.values[[row, class]])
                );
                if let Some(bands) = bands {
                    let _ = write!(
                        out,
                        ",{},{}",
                        cell(bands[idx].lower[[row, class]]),
                        cell(bands[idx].upper[[row, class]])
                    );
                }
                out.push('\n');
            }
        }
    }
    let bias = curves.iter().find_map(|c| c.bias_term.as_ref());
    if let Some(bias) = bias {
        for (class, &b) in bias.iter().enumerate() {
            let _ = write!(out, "bias,0,{class},{}", cell(b));
            if bands.is_some() {
                let _ = write!(out, ",{},{}", cell(b), cell(b));
            }
            out.push('\n');
        }
    }
    write_text(path, &out)
}

/// Writes one heatmap as `feature,distance,input,class,value`; the
/// unreachable row's distance prints as "inf".
pub fn write_heatmap_csv(path: &Path, hm: &HeatmapMatrix) -> Result<()> {
    let mut out = String::from("feature,distance,input,class,value\n");
    for (l, &dist) in hm.distances.iter().enumerate() {
        for (v, &input) in hm.inputs.iter().enumerate() {
            for class in 0..hm.cells.shape()[2] {
                let _ = writeln!(
                    out,
                    "{},{},{},{class},{}",
                    hm.feature,
                    cell(dist),
                    cell(input),
                    cell(hm.cells[[l, v, class]])
                );
            }
        }
    }
    write_text(path, &out)
}

/// Writes `node,class,contribution` rows; `contributions` rows align with
/// `node_ids`.
pub fn write_contributions_csv(
    path: &Path,
    node_ids: &[usize],
    contributions: &Array2<f64>,
) -> Result<()> {
    if node_ids.len() != contributions.nrows() {
        return Err(GnanError::Contract(format!(
            "{} node ids for {} contribution rows",
            node_ids.len(),
            contributions.nrows()
        )));
    }
    let mut out = String::from("node,class,contribution\n");
    for (row, &node) in node_ids.iter().enumerate() {
        for class in 0..contributions.ncols() {
            let _ = writeln!(out, "{node},{class},{}", cell(contributions[[row, class]]));
        }
    }
    write_text(path, &out)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const POSITIVE: (u8, u8, u8) = (42, 157, 72);
const NEGATIVE: (u8, u8, u8) = (214, 39, 40);

fn lerp_to_white(base: (u8, u8, u8), t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let mix = |c: u8| (255.0 + (c as f64 - 255.0) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(base.0), mix(base.1), mix(base.2))
}

fn svg_open(out: &mut String, size: SvgSize) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        size.width, size.height, size.width, size.height
    );
    let _ = writeln!(
        out,
        r#"<rect width="{}" height="{}" fill="white"/>"#,
        size.width, size.height
    );
}

fn axis_label(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else if v == v.trunc() && v.abs() < 1e6 {
        format!("{v}")
    } else {
        format!("{v:.3}")
    }
}

/// One curve as a standalone line chart, one polyline per class, with an
/// optional translucent confidence band behind each line. Grid points are
/// spaced uniformly, which matches the uniform grids the explain module
/// produces and keeps the unreachable point plottable.
pub fn curve_svg(curve: &ShapeCurve, bands: Option<&CurveBands>, size: SvgSize) -> String {
    let margin = 42.0;
    let w = size.width as f64;
    let h = size.height as f64;
    let plot_w = (w - 2.0 * margin).max(1.0);
    let plot_h = (h - 2.0 * margin).max(1.0);
    let points = curve.grid.len();
    let classes = curve.values.ncols();

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in curve.values.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if let Some(b) = bands {
        for &v in b.lower.iter().chain(b.upper.iter()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if lo == hi {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;

    let x = |idx: usize| {
        if points == 1 {
            margin + plot_w / 2.0
        } else {
            margin + plot_w * idx as f64 / (points - 1) as f64
        }
    };
    let y = |v: f64| margin + plot_h * (1.0 - (v - lo) / (hi - lo));

    let mut out = String::new();
    svg_open(&mut out, size);
    let title = match curve.target {
        CurveTarget::Feature(k) => format!("feature {k}"),
        CurveTarget::Distance(r) => format!("distance network {r}"),
    };
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>"#,
        w / 2.0
    );

    for class in 0..classes {
        let color = PALETTE[class % PALETTE.len()];
        if let Some(b) = bands {
            let mut path = String::new();
            for idx in 0..points {
                let _ = write!(
                    path,
                    "{}{:.2},{:.2} ",
                    if idx == 0 { "M" } else { "L" },
                    x(idx),
                    y(b.upper[[idx, class]])
                );
            }
            for idx in (0..points).rev() {
                let _ = write!(path, "L{:.2},{:.2} ", x(idx), y(b.lower[[idx, class]]));
            }
            path.push('Z');
            let _ = writeln!(out, r#"<path d="{path}" fill="{color}" fill-opacity="0.2"/>"#);
        }
        let mut line = String::new();
        for idx in 0..points {
            let _ = write!(line, "{:.2},{:.2} ", x(idx), y(curve.values[[idx, class]]));
        }
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            line.trim_end()
        );
    }

    // Axes with end labels.
    let _ = writeln!(
        out,
        r##"<line x1="{margin}" y1="{}" x2="{}" y2="{}" stroke="#333"/>"##,
        h - margin,
        w - margin,
        h - margin
    );
    let _ = writeln!(
        out,
        r##"<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{}" stroke="#333"/>"##,
        h - margin
    );
    let _ = writeln!(
        out,
        r#"<text x="{margin}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
        h - margin + 16.0,
        axis_label(curve.grid[0])
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
        w - margin,
        h - margin + 16.0,
        axis_label(curve.grid[points - 1])
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
        margin - 4.0,
        h - margin,
        axis_label(lo + pad)
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
        margin - 4.0,
        margin + 10.0,
        axis_label(hi - pad)
    );
    out.push_str("</svg>\n");
    out
}

/// One heatmap class slice as colored cells: positive values shade toward
/// green, negative toward red, zero stays white.
pub fn heatmap_svg(hm: &HeatmapMatrix, class: usize, size: SvgSize) -> Result<String> {
    let classes = hm.cells.shape()[2];
    if class >= classes {
        return Err(GnanError::Validation(format!(
            "class {class} out of range for {classes} classes"
        )));
    }
    let margin = 56.0;
    let w = size.width as f64;
    let h = size.height as f64;
    let rows = hm.distances.len();
    let cols = hm.inputs.len();
    let cell_w = (w - 2.0 * margin) / cols as f64;
    let cell_h = (h - 2.0 * margin) / rows as f64;

    let max_abs = hm
        .cells
        .iter()
        .fold(0.0_f64, |m, &v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);

    let mut out = String::new();
    svg_open(&mut out, size);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">feature {} / class {class}</text>"#,
        w / 2.0,
        hm.feature
    );
    for l in 0..rows {
        for v in 0..cols {
            let value = hm.cells[[l, v, class]];
            let base = if value >= 0.0 { POSITIVE } else { NEGATIVE };
            let fill = lerp_to_white(base, value.abs() / max_abs);
            let _ = writeln!(
                out,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}" stroke="#ddd"/>"##,
                margin + v as f64 * cell_w,
                margin + l as f64 * cell_h,
                cell_w,
                cell_h
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
            margin - 6.0,
            margin + (l as f64 + 0.5) * cell_h + 4.0,
            axis_label(hm.distances[l])
        );
    }
    for v in 0..cols {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            margin + (v as f64 + 0.5) * cell_w,
            h - margin + 16.0,
            axis_label(hm.inputs[v])
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// The explained graph: edges, then one circle per node whose area tracks
/// |contribution| and whose fill encodes the sign (green supporting, red
/// opposing, gray neutral).
pub fn local_graph_svg(g: &GraphInstance, layout: &LocalGraphLayout, size: SvgSize) -> String {
    let margin = 36.0;
    let w = size.width as f64;
    let h = size.height as f64;
    let n = g.node_count;

    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &layout.positions {
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_y = min_y.min(y);
        max_y = max_y.max(y);
    }
    if min_x == max_x {
        min_x -= 1.0;
        max_x += 1.0;
    }
    if min_y == max_y {
        min_y -= 1.0;
        max_y += 1.0;
    }
    let sx = |x: f64| margin + (x - min_x) / (max_x - min_x) * (w - 2.0 * margin);
    let sy = |y: f64| margin + (y - min_y) / (max_y - min_y) * (h - 2.0 * margin);
    let max_r = (w.min(h) / 12.0).max(4.0);

    let mut out = String::new();
    svg_open(&mut out, size);
    for &(u, v) in &g.edges {
        let (ux, uy) = layout.positions[u as usize];
        let (vx, vy) = layout.positions[v as usize];
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-width="1"/>"##,
            sx(ux),
            sy(uy),
            sx(vx),
            sy(vy)
        );
    }
    for i in 0..n {
        let (x, y) = layout.positions[i];
        let fill = match layout.signs[i] {
            1 => "#2a9d48",
            -1 => "#d62728",
            _ => "#b0b0b0",
        };
        let _ = writeln!(
            out,
            r##"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="{fill}" fill-opacity="0.85" stroke="#333"/>"##,
            sx(x),
            sy(y),
            (layout.radii[i] * max_r).max(1.0)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="10">{i}</text>"#,
            sx(x),
            sy(y) + 3.5
        );
    }
    out.push_str("</svg>\n");
    out
}
