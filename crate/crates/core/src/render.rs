//! SVG and CSV output for heatmaps, trajectories and forests.
//!
//! Colour conventions: start blue, true goal green, decoy orange. Heatmap
//! values are mapped linearly from the smallest to the largest finite value
//! onto a white-to-dark-purple ramp; non-finite values are drawn grey.

use std::fmt::Write as _;

use crate::envs::{ForestWorld, GridWorld};
use crate::geometry::Point;
use crate::graph::{NodeId, WeightedGraph};

pub const START_COLOR: &str = "#1f4fe0";
pub const GOAL_COLOR: &str = "#1a9a3a";
pub const DECOY_COLOR: &str = "#f08c00";
const WALL_COLOR: &str = "#333333";
const CELL: f64 = 24.0;

/// Start, true goal and decoy markers.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Markers<T> {
    pub start: Option<T>,
    pub goal: Option<T>,
    pub decoy: Option<T>,
}

impl<T: Copy> Markers<T> {
    fn iter(&self) -> impl Iterator<Item = (T, &'static str)> {
        [(self.start, START_COLOR), (self.goal, GOAL_COLOR), (self.decoy, DECOY_COLOR)]
            .into_iter()
            .filter_map(|(p, c)| p.map(|p| (p, c)))
    }
}

/// `node,x,y,value` rows; coordinates default to zero when absent.
pub fn node_values_csv(graph: &WeightedGraph, values: &[f64]) -> String {
    let mut out = String::from("node,x,y,value\n");
    for (node, &v) in values.iter().enumerate() {
        let [x, y] = graph.coord(node).unwrap_or([0.0, 0.0]);
        let _ = writeln!(out, "{node},{x},{y},{v}");
    }
    out
}

/// Colour for `value` on the ramp spanning `[lo, hi]`.
pub fn ramp_color(value: f64, lo: f64, hi: f64) -> String {
    if !value.is_finite() {
        return "#9e9e9e".into();
    }
    let t = if hi > lo { ((value - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 1.0 };
    let mix = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(255.0, 63.0), mix(255.0, 0.0), mix(255.0, 125.0))
}

fn finite_range(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn svg_open(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    )
}

fn grid_center(grid: &GridWorld, node: NodeId) -> (f64, f64) {
    let (r, c) = grid.cell_of(node);
    ((c as f64 + 0.5) * CELL, (r as f64 + 0.5) * CELL)
}

fn grid_base(grid: &GridWorld, fill: impl Fn(NodeId) -> String) -> String {
    let (w, h) = (grid.width() as f64 * CELL, grid.height() as f64 * CELL);
    let mut svg = svg_open(w, h);
    for r in 0..grid.height() {
        for c in 0..grid.width() {
            let color = match grid.node_at(r, c) {
                Some(node) => fill(node),
                None => WALL_COLOR.to_string(),
            };
            let _ = writeln!(
                svg,
                "<rect x=\"{}\" y=\"{}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"{color}\" stroke=\"#cccccc\" stroke-width=\"0.5\"/>",
                c as f64 * CELL,
                r as f64 * CELL
            );
        }
    }
    svg
}

fn grid_markers(svg: &mut String, grid: &GridWorld, markers: &Markers<NodeId>) {
    for (node, color) in markers.iter() {
        let (x, y) = grid_center(grid, node);
        let _ = writeln!(
            svg,
            "<circle cx=\"{x}\" cy=\"{y}\" r=\"{}\" fill=\"{color}\" stroke=\"black\" stroke-width=\"1\"/>",
            CELL * 0.3
        );
    }
}

/// Per-cell heatmap of one value per node.
pub fn grid_heatmap_svg(grid: &GridWorld, values: &[f64], markers: &Markers<NodeId>) -> String {
    let (lo, hi) = finite_range(values);
    let mut svg = grid_base(grid, |n| ramp_color(values.get(n).copied().unwrap_or(f64::NAN), lo, hi));
    grid_markers(&mut svg, grid, markers);
    svg.push_str("</svg>\n");
    svg
}

/// Visit counts per node over a set of walks.
pub fn visit_counts(node_count: usize, walks: &[Vec<NodeId>]) -> Vec<f64> {
    let mut counts = vec![0.0; node_count];
    for walk in walks {
        for &v in walk {
            if let Some(c) = counts.get_mut(v) {
                *c += 1.0;
            }
        }
    }
    counts
}

/// Visit-count heatmap with every walk drawn on top.
pub fn grid_trajectories_svg(grid: &GridWorld, walks: &[Vec<NodeId>], markers: &Markers<NodeId>) -> String {
    let counts = visit_counts(grid.graph().node_count(), walks);
    let (_, hi) = finite_range(&counts);
    let mut svg = grid_base(grid, |n| ramp_color(counts[n], 0.0, hi.max(1.0)));
    for walk in walks {
        let points: Vec<String> = walk
            .iter()
            .map(|&v| {
                let (x, y) = grid_center(grid, v);
                format!("{x},{y}")
            })
            .collect();
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#d62728\" stroke-opacity=\"0.5\" stroke-width=\"2\"/>",
            points.join(" ")
        );
    }
    grid_markers(&mut svg, grid, markers);
    svg.push_str("</svg>\n");
    svg
}

/// Trees, optional graph edges and the travelled paths of a forest run.
pub fn forest_svg(world: &ForestWorld, paths: &[Vec<Point>], edges: Option<&WeightedGraph>) -> String {
    let scale = 30.0;
    let b = world.bounds;
    let (w, h) = (b.width() * scale, b.height() * scale);
    let to_svg = |p: Point| ((p[0] - b.min[0]) * scale, (b.max[1] - p[1]) * scale);
    let mut svg = svg_open(w, h);
    let _ = writeln!(svg, "<rect width=\"{w}\" height=\"{h}\" fill=\"#f7f7f2\"/>");
    if let Some(graph) = edges {
        if let Some(coords) = graph.coords() {
            for (u, v, _) in graph.edges() {
                let (x1, y1) = to_svg(coords[u]);
                let (x2, y2) = to_svg(coords[v]);
                let _ = writeln!(
                    svg,
                    "<line x1=\"{x1}\" y1=\"{y1}\" x2=\"{x2}\" y2=\"{y2}\" stroke=\"#b0b0b0\" stroke-width=\"1\"/>"
                );
            }
        }
    }
    for &t in &world.trees {
        let (x, y) = to_svg(t);
        let _ = writeln!(svg, "<circle cx=\"{x}\" cy=\"{y}\" r=\"{}\" fill=\"#2f6b2f\"/>", 0.25 * scale);
    }
    for path in paths {
        let points: Vec<String> = path
            .iter()
            .map(|&p| {
                let (x, y) = to_svg(p);
                format!("{x},{y}")
            })
            .collect();
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\"/>",
            points.join(" ")
        );
    }
    let markers = Markers { start: Some(world.start), goal: Some(world.goal), decoy: Some(world.decoy) };
    for (p, color) in markers.iter() {
        let (x, y) = to_svg(p);
        let _ = writeln!(
            svg,
            "<circle cx=\"{x}\" cy=\"{y}\" r=\"{}\" fill=\"{color}\" stroke=\"black\" stroke-width=\"1\"/>",
            0.3 * scale
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp_color(0.0, 0.0, 1.0), "#ffffff");
        assert_eq!(ramp_color(1.0, 0.0, 1.0), "#3f007d");
        assert_eq!(ramp_color(f64::NAN, 0.0, 1.0), "#9e9e9e");
        assert_eq!(ramp_color(5.0, 2.0, 2.0), "#3f007d");
    }

    #[test]
    fn heatmap_has_one_rect_per_cell() {
        let grid = GridWorld::parse("..#\n...\n").unwrap();
        let values: Vec<f64> = (0..5).map(|v| v as f64).collect();
        let svg = grid_heatmap_svg(&grid, &values, &Markers { start: Some(0), goal: Some(4), decoy: None });
        assert_eq!(svg.matches("<rect").count(), 6);
        assert_eq!(svg.matches(WALL_COLOR).count(), 1);
        assert!(svg.contains(START_COLOR) && svg.contains(GOAL_COLOR) && !svg.contains(DECOY_COLOR));
        let csv = node_values_csv(grid.graph(), &values);
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.contains("\n4,2,1,4\n"));
    }

    #[test]
    fn visit_counts_add_up() {
        let counts = visit_counts(4, &[vec![0, 1, 2], vec![0, 1, 1]]);
        assert_eq!(counts, vec![2.0, 3.0, 1.0, 0.0]);
        let grid = GridWorld::open(2, 2);
        let svg = grid_trajectories_svg(&grid, &[vec![0, 1, 3]], &Markers::default());
        assert_eq!(svg.matches("<polyline").count(), 1);
    }
}
