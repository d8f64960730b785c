//! SVG 1.1 rendering of portrait and Jordan results. Coordinates are
//! printed with fixed precision so output bytes depend only on the input.

use std::fmt::Write as _;
use std::path::Path;

use eigsal::geometry::{Point2, Rect};
use eigsal::jordan::JordanAnalysis;
use eigsal::portrait::{PortraitAnalysis, TreeChild};

const PLOT: f64 = 600.0;
const PAD: f64 = 20.0;
const TREE_W: f64 = 300.0;

/// Maps a rectangle of the complex plane onto a square panel, y up.
struct Frame {
    bounds: Rect,
    scale: f64,
    x0: f64,
    y0: f64,
}

impl Frame {
    fn new(bounds: Rect, x0: f64, y0: f64) -> Self {
        let w = (bounds.x_max - bounds.x_min).max(f64::MIN_POSITIVE);
        let h = (bounds.y_max - bounds.y_min).max(f64::MIN_POSITIVE);
        Self { bounds, scale: PLOT / w.max(h), x0, y0 }
    }

    fn map(&self, p: &Point2) -> (f64, f64) {
        (
            self.x0 + (p.x - self.bounds.x_min) * self.scale,
            self.y0 + PLOT - (p.y - self.bounds.y_min) * self.scale,
        )
    }
}

/// Distinct stroke per level: hues spread over the colour wheel.
fn level_colour(index: usize, count: usize) -> String {
    let h = 300.0 * index as f64 / count.max(2).saturating_sub(1) as f64;
    let x = 1.0 - ((h / 60.0) % 2.0 - 1.0).abs();
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    let c = |v: f64| (v * 200.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(r), c(g), c(b))
}

fn open(width: f64, height: f64) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

pub fn portrait_svg(run: &PortraitAnalysis, levels: &[f64]) -> String {
    let width = PLOT + 3.0 * PAD + TREE_W;
    let mut out = open(width, PLOT + 2.0 * PAD);
    let frame = Frame::new(run.bounds, PAD, PAD);
    let _ = writeln!(out, "<g class=\"contours\" fill=\"none\" stroke-width=\"1\">");
    for c in &run.curves {
        let pts: Vec<String> = c
            .polyline
            .iter()
            .map(|p| {
                let (x, y) = frame.map(p);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        let tag = if c.closed { "polygon" } else { "polyline" };
        let _ = writeln!(
            out,
            "<{tag} class=\"level-{}\" stroke=\"{}\" points=\"{}\"/>",
            c.level_index,
            level_colour(c.level_index, levels.len()),
            pts.join(" ")
        );
    }
    let _ = writeln!(out, "</g>\n<g class=\"eigenvalues\" fill=\"black\">");
    for p in &run.tree.leaves {
        let (x, y) = frame.map(p);
        let _ = writeln!(out, "<circle cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"3\"/>");
    }
    let _ = writeln!(out, "</g>");
    tree_panel(&mut out, run, levels.len(), PLOT + 2.0 * PAD);
    out.push_str("</svg>\n");
    out
}

/// Dendrogram: leaves along the bottom in index order, each merge drawn at
/// the height of its level (deeper levels lower).
fn tree_panel(out: &mut String, run: &PortraitAnalysis, level_count: usize, x0: f64) {
    let leaves = run.tree.leaves.len();
    if leaves == 0 {
        return;
    }
    let bottom = PAD + PLOT;
    let step = PLOT / (level_count + 1) as f64;
    let leaf_x = |i: usize| x0 + TREE_W * (i as f64 + 0.5) / leaves as f64;
    let mut node_pos: Vec<(f64, f64)> = Vec::with_capacity(run.tree.nodes.len());
    let _ = writeln!(out, "<g class=\"merge-tree\" stroke=\"black\" fill=\"none\">");
    for n in &run.tree.nodes {
        let y = bottom - (level_count - n.level_index) as f64 * step;
        let kids: Vec<(f64, f64)> = n
            .children
            .iter()
            .map(|c| match *c {
                TreeChild::Leaf(i) => (leaf_x(i), bottom),
                TreeChild::Node(k) => node_pos[k],
            })
            .collect();
        let x = kids.iter().map(|k| k.0).sum::<f64>() / kids.len().max(1) as f64;
        for (kx, ky) in &kids {
            let _ = writeln!(out, "<path d=\"M{kx:.3},{ky:.3} V{y:.3} H{x:.3}\"/>");
        }
        node_pos.push((x, y));
    }
    let _ = writeln!(out, "</g>\n<g class=\"leaf-labels\" font-size=\"10\" text-anchor=\"middle\">");
    for i in 0..leaves {
        let _ = writeln!(out, "<text x=\"{:.3}\" y=\"{:.3}\">{i}</text>", leaf_x(i), bottom + 12.0);
    }
    let _ = writeln!(out, "</g>");
}

pub fn jordan_svg(run: &JordanAnalysis) -> String {
    let mut out = open(PLOT + 2.0 * PAD, PLOT + 2.0 * PAD);
    let m = &run.best_model;
    let level = run.clusters[run.winner]
        .members
        .iter()
        .map(|&i| &run.models[i])
        .find(|s| s.model == *m)
        .map(|s| s.level);
    let cloud = run.clouds.iter().find(|c| Some(c.delta_index) == level).or(run.clouds.first());
    let points: &[Point2] = cloud.map_or(&[], |c| &c.points);
    let rotated: Vec<Point2> = points.iter().map(|p| m.rotate(p, m.theta)).collect();
    let all: Vec<Point2> = points.iter().chain(&rotated).copied().chain([m.centre()]).collect();
    let bounds = Rect::bounding(&all).unwrap_or(Rect::new(-1.0, 1.0, -1.0, 1.0));
    let w = (bounds.x_max - bounds.x_min).max(bounds.y_max - bounds.y_min).max(f64::MIN_POSITIVE);
    let frame = Frame::new(bounds.expanded(0.05 * w), PAD, PAD);
    let _ = writeln!(out, "<g class=\"original\" fill=\"red\">");
    for p in points {
        let (x, y) = frame.map(p);
        let _ = writeln!(out, "<circle cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"3\"/>");
    }
    let _ = writeln!(out, "</g>\n<g class=\"rotated\" fill=\"none\" stroke=\"green\">");
    for p in &rotated {
        let (x, y) = frame.map(p);
        let _ = writeln!(out, "<circle cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"5\"/>");
    }
    let (cx, cy) = frame.map(&m.centre());
    let _ = writeln!(
        out,
        "</g>\n<g class=\"centre\" stroke=\"black\"><path d=\"M{:.3},{cy:.3} H{:.3} M{cx:.3},{:.3} V{:.3}\"/></g>",
        cx - 6.0,
        cx + 6.0,
        cy - 6.0,
        cy + 6.0
    );
    out.push_str("</svg>\n");
    out
}

pub fn emit_svg(svg: &str, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, svg)
}
