//! SVG rendering of a scene and, optionally, an inference result.
//!
//! Geometry is drawn inside a group flipped to a y-up frame, so circle centres
//! and outline vertices are written in scene coordinates unchanged.

use std::fmt::Write;

use crate::bench::SceneResult;
use crate::model::Scene;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];
const UNASSIGNED: &str = "#7f7f7f";

fn colour(object: usize) -> &'static str {
    PALETTE[object % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn finite_or_zero(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

/// Renders `scene`, colouring points by the object `result` assigns them to
/// and outlining each reconstructed template. `names[k]` labels template `k`.
pub fn render_svg(scene: &Scene, result: Option<&SceneResult>, names: &[String]) -> String {
    let pts: Vec<[f64; 2]> = (0..scene.len())
        .map(|m| {
            let p = scene.xy(m);
            [finite_or_zero(p[0]), finite_or_zero(p[1])]
        })
        .collect();
    let outlines: Vec<(usize, Vec<[f64; 2]>)> = result
        .map(|r| {
            r.reconstructions
                .iter()
                .enumerate()
                .filter_map(|(k, o)| o.as_ref().map(|v| (k, v.clone())))
                .filter(|(_, v)| v.iter().flatten().all(|c| c.is_finite()))
                .collect()
        })
        .unwrap_or_default();

    let (mut lo, mut hi) = ([-1.0f64, -1.0], [1.0f64, 1.0]);
    for p in pts.iter().chain(outlines.iter().flat_map(|(_, v)| v)) {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let pad = 0.08 * extent;
    let (x0, y0) = (lo[0] - pad, -hi[1] - pad);
    let w = hi[0] - lo[0] + 2.0 * pad;
    let legend_rows = result.map_or(0, |r| r.poses.iter().flatten().count()).max(1) as f64;
    let line = 0.045 * extent;
    let h = hi[1] - lo[1] + 2.0 * pad + line * (legend_rows + 1.0);
    let radius = 0.015 * extent;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{x0} {y0} {w} {h}" width="600" height="{}">"#,
        (600.0 * h / w).round()
    );
    let _ = writeln!(svg, r#"<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<g transform="scale(1,-1)">"#);
    for (k, v) in &outlines {
        let coords: Vec<String> = v.iter().map(|p| format!("{},{}", p[0], p[1])).collect();
        let _ = writeln!(
            svg,
            r#"<polygon class="reconstruction" data-object="{k}" points="{}" fill="none" stroke="{}" stroke-width="{}" stroke-dasharray="{} {}"/>"#,
            coords.join(" "),
            colour(*k),
            radius * 0.4,
            radius,
            radius * 0.6
        );
    }
    let labels = result.map(|r| r.partition.labels());
    for (m, p) in pts.iter().enumerate() {
        let fill = match labels.and_then(|l| l.get(m)) {
            Some(&l) if l > 0 => colour(l - 1),
            _ => UNASSIGNED,
        };
        let _ = writeln!(
            svg,
            r#"<circle class="point" cx="{}" cy="{}" r="{radius}" fill="{fill}"/>"#,
            p[0], p[1]
        );
    }
    let _ = writeln!(svg, "</g>");

    let mut y = -lo[1] + pad + line;
    let font = 0.7 * line;
    if let Some(r) = result {
        for (k, pose) in r.poses.iter().enumerate() {
            let Some(pose) = pose else { continue };
            let name = names.get(k).cloned().unwrap_or_else(|| format!("object {k}"));
            let text = format!(
                "{}: t = ({:.3}, {:.3}), s = {:.3}, θ = {:.1}°",
                name,
                pose.tx,
                pose.ty,
                pose.scale(),
                pose.angle().to_degrees()
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{y}" font-size="{font}" font-family="sans-serif" fill="{}">{}</text>"#,
                lo[0],
                colour(k),
                escape(&text)
            );
            y += line;
        }
    } else {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{y}" font-size="{font}" font-family="sans-serif" fill="{UNASSIGNED}">{} points</text>"#,
            lo[0],
            scene.len()
        );
    }
    svg.push_str("</svg>\n");
    svg
}
