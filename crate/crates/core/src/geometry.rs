//! Planar Delaunay triangulation (Bowyer-Watson) and the dual Voronoi graph.

use serde::{Deserialize, Serialize};

use crate::graph::{NodeId, WeightedGraph};
use crate::{Error, Result};

pub type Point = [f64; 2];

pub fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Twice the signed area of `abc`; positive when counter-clockwise.
pub fn orientation(a: Point, b: Point, c: Point) -> f64 {
    cross(sub(b, a), sub(c, a))
}

/// Centre of the circle through three points, `None` if they are collinear.
pub fn circumcenter(a: Point, b: Point, c: Point) -> Option<Point> {
    let (bx, by) = (b[0] - a[0], b[1] - a[1]);
    let (cx, cy) = (c[0] - a[0], c[1] - a[1]);
    let d = 2.0 * (bx * cy - by * cx);
    if d == 0.0 {
        return None;
    }
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    Some([a[0] + (cy * b2 - by * c2) / d, a[1] + (bx * c2 - cx * b2) / d])
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Point,
    pub max: Point,
}

impl Bounds {
    pub fn new(min: Point, max: Point) -> Result<Self> {
        if !(min[0] < max[0] && min[1] < max[1]) || !min.iter().chain(&max).all(|v| v.is_finite()) {
            return Err(Error::Geometry(format!("invalid bounds {min:?} .. {max:?}")));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }
}

/// Region that infinite or long ridges are cut to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClipRegion {
    Rect(Bounds),
    Disk { center: Point, radius: f64 },
}

impl ClipRegion {
    fn contains(&self, p: Point) -> bool {
        match *self {
            Self::Rect(b) => b.contains(p),
            Self::Disk { center, radius } => distance(p, center) <= radius,
        }
    }

    /// Parameter interval of `origin + t * dir`, `t` in `[0, t_end]`, that lies
    /// inside the region.
    fn clip(&self, origin: Point, dir: Point, t_end: f64) -> Option<(f64, f64)> {
        let (mut lo, mut hi) = (0.0f64, t_end);
        match *self {
            Self::Rect(b) => {
                for axis in 0..2 {
                    let (o, d) = (origin[axis], dir[axis]);
                    if d == 0.0 {
                        if o < b.min[axis] || o > b.max[axis] {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (b.min[axis] - o) / d;
                    let t2 = (b.max[axis] - o) / d;
                    lo = lo.max(t1.min(t2));
                    hi = hi.min(t1.max(t2));
                }
            }
            Self::Disk { center, radius } => {
                let f = sub(origin, center);
                let a = dir[0] * dir[0] + dir[1] * dir[1];
                let bq = 2.0 * (f[0] * dir[0] + f[1] * dir[1]);
                let c = f[0] * f[0] + f[1] * f[1] - radius * radius;
                let disc = bq * bq - 4.0 * a * c;
                if a == 0.0 || disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                lo = lo.max((-bq - s) / (2.0 * a));
                hi = hi.min((-bq + s) / (2.0 * a));
            }
        }
        (lo <= hi).then_some((lo, hi))
    }
}

/// Delaunay triangles as counter-clockwise index triples into `points`.
pub fn delaunay(points: &[Point]) -> Result<Vec<[usize; 3]>> {
    let n = points.len();
    if n < 3 {
        return Err(Error::Geometry(format!("need at least 3 points, got {n}")));
    }
    if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::Geometry("non-finite point".into()));
    }
    for i in 0..n {
        for j in 0..i {
            if points[i] == points[j] {
                return Err(Error::Geometry(format!("points {j} and {i} coincide")));
            }
        }
    }
    let far = (1..n)
        .map(|i| (i, orientation(points[0], points[1], points[i]).abs()))
        .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    let scale = points.iter().map(|p| distance(*p, points[0])).fold(0.0, f64::max);
    if far.1 <= 1e-12 * scale * scale {
        return Err(Error::Geometry("all points are collinear".into()));
    }
    let hull = convex_hull(points);
    let mut factor = 1e3;
    loop {
        let tris = bowyer_watson(points, factor);
        if covers_hull(&tris, &hull) || factor > 1e8 {
            return Ok(tris);
        }
        factor *= 10.0;
    }
}

fn bowyer_watson(points: &[Point], factor: f64) -> Vec<[usize; 3]> {
    let n = points.len();
    let (mut lo, mut hi) = (points[0], points[0]);
    for p in points {
        lo = [lo[0].min(p[0]), lo[1].min(p[1])];
        hi = [hi[0].max(p[0]), hi[1].max(p[1])];
    }
    let d = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
    let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let mut pts = points.to_vec();
    pts.push([mid[0] - factor * d, mid[1] - factor * d]);
    pts.push([mid[0] + factor * d, mid[1] - factor * d]);
    pts.push([mid[0], mid[1] + factor * d]);

    struct Tri {
        v: [usize; 3],
        center: Point,
        r2: f64,
    }
    let make = |pts: &[Point], mut v: [usize; 3]| -> Option<Tri> {
        if orientation(pts[v[0]], pts[v[1]], pts[v[2]]) < 0.0 {
            v.swap(1, 2);
        }
        let c = circumcenter(pts[v[0]], pts[v[1]], pts[v[2]])?;
        let r2 = (c[0] - pts[v[0]][0]).powi(2) + (c[1] - pts[v[0]][1]).powi(2);
        Some(Tri { v, center: c, r2 })
    };
    let mut tris = vec![make(&pts, [n, n + 1, n + 2]).expect("super triangle is proper")];
    for (i, &p) in points.iter().enumerate() {
        let mut bad = Vec::new();
        let mut keep = Vec::with_capacity(tris.len());
        for t in tris.drain(..) {
            let d2 = (p[0] - t.center[0]).powi(2) + (p[1] - t.center[1]).powi(2);
            if d2 < t.r2 {
                bad.push(t.v);
            } else {
                keep.push(t);
            }
        }
        tris = keep;
        if bad.is_empty() {
            // rounding put p on every circle; fall back to its containing triangle
            if let Some(pos) = tris.iter().position(|t| {
                (0..3).all(|k| orientation(pts[t.v[k]], pts[t.v[(k + 1) % 3]], p) >= 0.0)
            }) {
                bad.push(tris.swap_remove(pos).v);
            }
        }
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for v in &bad {
            for k in 0..3 {
                let e = (v[k], v[(k + 1) % 3]);
                if let Some(pos) = edges.iter().position(|&(a, b)| (a, b) == (e.1, e.0)) {
                    edges.swap_remove(pos);
                } else {
                    edges.push(e);
                }
            }
        }
        for (a, b) in edges {
            if let Some(t) = make(&pts, [a, b, i]) {
                tris.push(t);
            }
        }
    }
    let mut out: Vec<[usize; 3]> = tris
        .into_iter()
        .filter(|t| t.v.iter().all(|&v| v < n))
        .map(|t| t.v)
        .collect();
    out.sort_unstable();
    out
}

/// Counter-clockwise convex hull (Andrew's monotone chain), collinear points dropped.
pub fn convex_hull(points: &[Point]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        points[a][0]
            .total_cmp(&points[b][0])
            .then(points[a][1].total_cmp(&points[b][1]))
    });
    let mut hull: Vec<usize> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &usize>> =
            if pass == 0 { Box::new(idx.iter()) } else { Box::new(idx.iter().rev()) };
        for &i in iter {
            while hull.len() >= start + 2
                && orientation(points[hull[hull.len() - 2]], points[hull[hull.len() - 1]], points[i]) <= 0.0
            {
                hull.pop();
            }
            hull.push(i);
        }
        hull.pop();
    }
    hull
}

fn covers_hull(tris: &[[usize; 3]], hull: &[usize]) -> bool {
    (0..hull.len()).all(|k| {
        let (a, b) = (hull[k], hull[(k + 1) % hull.len()]);
        tris.iter().any(|t| (0..3).any(|j| (t[j], t[(j + 1) % 3]) == (a, b)))
    })
}

/// End of a Voronoi ridge before clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RidgeEnd {
    Vertex(usize),
    /// Unbounded in this direction.
    Infinite(Point),
}

/// Boundary between the cells of two generators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ridge {
    pub generators: (usize, usize),
    pub from: usize,
    pub to: RidgeEnd,
}

#[derive(Debug, Clone)]
pub struct VoronoiDiagram {
    /// Circumcentres of the Delaunay triangles.
    pub vertices: Vec<Point>,
    pub ridges: Vec<Ridge>,
}

pub fn voronoi_diagram(sites: &[Point]) -> Result<VoronoiDiagram> {
    let tris = delaunay(sites)?;
    let vertices = tris
        .iter()
        .map(|t| {
            circumcenter(sites[t[0]], sites[t[1]], sites[t[2]])
                .ok_or_else(|| Error::Geometry("degenerate Delaunay triangle".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut by_edge: std::collections::BTreeMap<(usize, usize), Vec<(usize, usize)>> = Default::default();
    for (ti, t) in tris.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            by_edge.entry((a.min(b), a.max(b))).or_default().push((ti, t[(k + 2) % 3]));
        }
    }
    let mut ridges = Vec::new();
    for (&(a, b), owners) in &by_edge {
        match owners.as_slice() {
            [(t1, _), (t2, _)] => ridges.push(Ridge { generators: (a, b), from: *t1, to: RidgeEnd::Vertex(*t2) }),
            [(t, opposite)] => {
                let e = sub(sites[b], sites[a]);
                let mut normal = [e[1], -e[0]];
                let to_opposite = sub(sites[*opposite], sites[a]);
                if normal[0] * to_opposite[0] + normal[1] * to_opposite[1] > 0.0 {
                    normal = [-normal[0], -normal[1]];
                }
                let len = normal[0].hypot(normal[1]);
                ridges.push(Ridge {
                    generators: (a, b),
                    from: *t,
                    to: RidgeEnd::Infinite([normal[0] / len, normal[1] / len]),
                });
            }
            _ => return Err(Error::Geometry("non-manifold triangulation".into())),
        }
    }
    Ok(VoronoiDiagram { vertices, ridges })
}

/// One graph edge with the two trees it runs between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoronoiEdge {
    pub u: NodeId,
    pub v: NodeId,
    pub generators: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct VoronoiGraph {
    pub graph: WeightedGraph,
    pub edges: Vec<VoronoiEdge>,
    /// Whether each node came from a clipped boundary crossing.
    pub on_boundary: Vec<bool>,
}

impl VoronoiGraph {
    pub fn position(&self, node: NodeId) -> Point {
        self.graph.coord(node).expect("voronoi graphs carry coordinates")
    }
}

/// Voronoi graph of `sites`. With `clip`, ridges are cut to `region` and
/// boundary crossings become nodes; without it only finite ridges are kept.
pub fn voronoi_graph_in(sites: &[Point], region: Option<ClipRegion>) -> Result<VoronoiGraph> {
    let diagram = voronoi_diagram(sites)?;
    let scale = sites.iter().flat_map(|p| p.iter()).fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * scale;
    let mut nodes: Vec<Point> = Vec::new();
    let mut boundary: Vec<bool> = Vec::new();
    let mut node_of = |p: Point, is_boundary: bool, nodes: &mut Vec<Point>| -> usize {
        if let Some(i) = nodes.iter().position(|q| distance(*q, p) <= tol) {
            boundary[i] &= is_boundary;
            return i;
        }
        nodes.push(p);
        boundary.push(is_boundary);
        nodes.len() - 1
    };
    let mut raw_edges: Vec<(usize, usize, (usize, usize))> = Vec::new();
    for ridge in &diagram.ridges {
        let a = diagram.vertices[ridge.from];
        let (dir, t_end) = match ridge.to {
            RidgeEnd::Vertex(j) => (sub(diagram.vertices[j], a), 1.0),
            RidgeEnd::Infinite(d) => (d, f64::INFINITY),
        };
        let (p, q, p_inner, q_inner) = match region {
            None => match ridge.to {
                RidgeEnd::Vertex(j) => (a, diagram.vertices[j], true, true),
                RidgeEnd::Infinite(_) => continue,
            },
            Some(r) => {
                let Some((t0, t1)) = r.clip(a, dir, t_end) else { continue };
                let at = |t: f64| [a[0] + t * dir[0], a[1] + t * dir[1]];
                let start_inside = t0 == 0.0 && r.contains(a);
                let end_inside = t1 == t_end && t_end.is_finite();
                (at(t0), if end_inside { at(t_end) } else { at(t1) }, start_inside, end_inside)
            }
        };
        let u = node_of(p, !p_inner, &mut nodes);
        let v = node_of(q, !q_inner, &mut nodes);
        if u != v {
            raw_edges.push((u.min(v), u.max(v), ridge.generators));
        }
    }
    raw_edges.sort_by_key(|e| (e.0, e.1));
    raw_edges.dedup_by_key(|e| (e.0, e.1));
    let weighted: Vec<_> = raw_edges
        .iter()
        .map(|&(u, v, _)| (u, v, distance(nodes[u], nodes[v])))
        .filter(|e| e.2 > 0.0)
        .collect();
    let graph = WeightedGraph::from_edges(nodes.len(), &weighted)?.with_coords(nodes)?;
    let edges = raw_edges
        .iter()
        .map(|&(u, v, generators)| VoronoiEdge { u, v, generators })
        .collect();
    Ok(VoronoiGraph { graph, edges, on_boundary: boundary })
}

pub fn voronoi_graph(trees: &[Point], bounds: &Bounds, clip: bool) -> Result<VoronoiGraph> {
    voronoi_graph_in(trees, clip.then_some(ClipRegion::Rect(*bounds)))
}
