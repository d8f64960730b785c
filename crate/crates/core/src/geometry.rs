//! Planar geometry: Delaunay triangulation, convex hull, lattice adjacency
//! and the neighborhood-graph container shared by every aggregation level.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use robust::{incircle, orient2d, Coord};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("edge ({0}, {1}) references an unknown node")]
    UnknownNode(usize, usize),
}

/// A location in the complex plane (`x = Re z`, `y = Im z`).
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn dist2(&self, other: &Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    fn coord(&self) -> Coord<f64> {
        Coord { x: self.x, y: self.y }
    }
}

/// Positive when `c` lies left of the directed line `a -> b` (exact sign).
pub fn orient(a: &Point2, b: &Point2, c: &Point2) -> f64 {
    orient2d(a.coord(), b.coord(), c.coord())
}

/// Unordered node pair, stored with the smaller identity first.
pub type Edge = (usize, usize);

fn edge_key(a: usize, b: usize) -> Edge {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Undirected graph over external object identities.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodGraph {
    nodes: BTreeSet<usize>,
    edges: BTreeMap<Edge, Option<f64>>,
}

impl NeighborhoodGraph {
    pub fn new(nodes: impl IntoIterator<Item = usize>) -> Self {
        Self {
            nodes: nodes.into_iter().collect(),
            edges: BTreeMap::new(),
        }
    }

    pub fn add_edge(&mut self, a: usize, b: usize) -> Result<bool, GeometryError> {
        self.insert(a, b, None)
    }

    pub fn add_labeled_edge(&mut self, a: usize, b: usize, label: f64) -> Result<bool, GeometryError> {
        self.insert(a, b, Some(label))
    }

    fn insert(&mut self, a: usize, b: usize, label: Option<f64>) -> Result<bool, GeometryError> {
        if a == b {
            return Err(GeometryError::SelfLoop(a));
        }
        if !self.nodes.contains(&a) || !self.nodes.contains(&b) {
            return Err(GeometryError::UnknownNode(a, b));
        }
        Ok(self.edges.insert(edge_key(a, b), label).is_none())
    }

    pub fn remove_edge(&mut self, a: usize, b: usize) -> bool {
        self.edges.remove(&edge_key(a, b)).is_some()
    }

    pub fn contains_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains_key(&edge_key(a, b))
    }

    pub fn label(&self, a: usize, b: usize) -> Option<f64> {
        self.edges.get(&edge_key(a, b)).copied().flatten()
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().copied()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.edges.keys().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Adjacency lists keyed by node.
    pub fn adjacency(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut adj: BTreeMap<usize, Vec<usize>> = self.nodes.iter().map(|&n| (n, Vec::new())).collect();
        for &(a, b) in self.edges.keys() {
            adj.entry(a).or_default().push(b);
            adj.entry(b).or_default().push(a);
        }
        adj
    }
}

/// Triangles over the input point indices, counterclockwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Triangulation {
    pub triangles: Vec<[usize; 3]>,
    /// For each input point, the point that represents it in `triangles`
    /// (itself unless it duplicates an earlier point).
    pub representative: Vec<usize>,
}

impl Triangulation {
    /// Edge graph over all input points; duplicates inherit the edges of
    /// their representative.
    pub fn edge_graph(&self) -> NeighborhoodGraph {
        let n = self.representative.len();
        let mut g = NeighborhoodGraph::new(0..n);
        let mut members: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, &r) in self.representative.iter().enumerate() {
            members.entry(r).or_default().push(i);
        }
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                for &u in &members[&a] {
                    for &v in &members[&b] {
                        if u != v {
                            let _ = g.add_edge(u, v);
                        }
                    }
                }
            }
        }
        g
    }
}

/// Delaunay triangulation of a planar point set.
///
/// Exact duplicates collapse onto their first occurrence. Co-circular ties
/// are resolved so that each ambiguous quadrilateral is split by the
/// diagonal touching its lowest-index vertex.
pub fn triangulate(points: &[Point2]) -> Result<Triangulation, GeometryError> {
    if let Some(i) = points.iter().position(|p| !p.is_finite()) {
        return Err(GeometryError::NonFinite(i));
    }
    let mut representative = Vec::with_capacity(points.len());
    let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
    let mut unique: Vec<usize> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        // +0.0 so that -0.0 and 0.0 hash alike.
        let key = ((p.x + 0.0).to_bits(), (p.y + 0.0).to_bits());
        let r = *seen.entry(key).or_insert_with(|| {
            unique.push(i);
            i
        });
        representative.push(r);
    }
    if unique.len() < 3 {
        return Err(GeometryError::Degenerate(format!(
            "need at least 3 distinct points, got {}",
            unique.len()
        )));
    }
    let a = points[unique[0]];
    let b = points[unique[1]];
    if unique.iter().all(|&i| orient(&a, &b, &points[i]) == 0.0) {
        return Err(GeometryError::Degenerate("all points are collinear".into()));
    }

    let dl: Vec<delaunator::Point> = unique
        .iter()
        .map(|&i| delaunator::Point {
            x: points[i].x,
            y: points[i].y,
        })
        .collect();
    let result = delaunator::triangulate(&dl);
    if result.triangles.is_empty() {
        return Err(GeometryError::Degenerate("triangulation is empty".into()));
    }
    let mut triangles: Vec<[usize; 3]> = result
        .triangles
        .chunks_exact(3)
        .map(|t| {
            let (i, j, k) = (unique[t[0]], unique[t[1]], unique[t[2]]);
            if orient(&points[i], &points[j], &points[k]) > 0.0 {
                [i, j, k]
            } else {
                [i, k, j]
            }
        })
        .collect();
    legalize(points, &mut triangles);

    // Near-duplicates dropped by the backend attach to the closest used point.
    let mut used = vec![false; points.len()];
    for t in &triangles {
        for &v in t {
            used[v] = true;
        }
    }
    for i in 0..points.len() {
        let r = representative[i];
        if !used[r] {
            let nearest = (0..points.len())
                .filter(|&j| used[j])
                .min_by(|&u, &v| points[u].dist2(&points[r]).total_cmp(&points[v].dist2(&points[r])))
                .expect("triangulation uses at least three points");
            representative[i] = nearest;
        }
    }
    Ok(Triangulation {
        triangles,
        representative,
    })
}

/// Lawson flips: repairs any locally non-Delaunay edge and normalizes exact
/// co-circular ties to the diagonal through the lowest-index vertex.
fn legalize(points: &[Point2], triangles: &mut [[usize; 3]]) {
    let mut owner: HashMap<(usize, usize), usize> = HashMap::with_capacity(triangles.len() * 3);
    for (ti, t) in triangles.iter().enumerate() {
        for k in 0..3 {
            owner.insert((t[k], t[(k + 1) % 3]), ti);
        }
    }
    let mut stack: Vec<(usize, usize)> = owner.keys().copied().filter(|&(a, b)| a < b).collect();
    stack.sort_unstable();
    let mut budget = 20 * triangles.len() + 1000;

    while let Some((a, b)) = stack.pop() {
        if budget == 0 {
            break;
        }
        let (Some(&t1), Some(&t2)) = (owner.get(&(a, b)), owner.get(&(b, a))) else {
            continue;
        };
        let c = third(&triangles[t1], a, b);
        let d = third(&triangles[t2], b, a);
        let (pa, pb, pc, pd) = (points[a], points[b], points[c], points[d]);
        let inc = incircle(pa.coord(), pb.coord(), pc.coord(), pd.coord());
        let flip = if inc > 0.0 {
            true
        } else if inc == 0.0 {
            let lowest = a.min(b).min(c).min(d);
            (lowest == c || lowest == d) && orient(&pc, &pd, &pa) != 0.0 && orient(&pc, &pd, &pb) != 0.0
        } else {
            false
        };
        if !flip {
            continue;
        }
        // Quad a, d, b, c (counterclockwise); new diagonal c-d.
        if orient(&pc, &pa, &pd) <= 0.0 || orient(&pd, &pb, &pc) <= 0.0 {
            continue;
        }
        budget -= 1;
        for t in [t1, t2] {
            let tri = triangles[t];
            for k in 0..3 {
                owner.remove(&(tri[k], tri[(k + 1) % 3]));
            }
        }
        triangles[t1] = [c, a, d];
        triangles[t2] = [d, b, c];
        for t in [t1, t2] {
            let tri = triangles[t];
            for k in 0..3 {
                owner.insert((tri[k], tri[(k + 1) % 3]), t);
            }
        }
        for (u, v) in [(a, d), (d, b), (b, c), (c, a)] {
            stack.push(edge_key(u, v));
        }
    }
}

fn third(t: &[usize; 3], a: usize, b: usize) -> usize {
    for k in 0..3 {
        if t[k] == a && t[(k + 1) % 3] == b {
            return t[(k + 2) % 3];
        }
    }
    unreachable!("directed edge ({a}, {b}) not in triangle {t:?}")
}

/// Delaunay edge graph over point indices.
pub fn delaunay(points: &[Point2]) -> Result<NeighborhoodGraph, GeometryError> {
    Ok(triangulate(points)?.edge_graph())
}

/// Counterclockwise convex hull vertices, starting from the lowest-x
/// (then lowest-y) point. Collinear boundary points and duplicates are
/// excluded.
pub fn convex_hull(points: &[Point2]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&i, &j| {
        points[i]
            .x
            .total_cmp(&points[j].x)
            .then(points[i].y.total_cmp(&points[j].y))
            .then(i.cmp(&j))
    });
    idx.dedup_by(|a, b| points[*a] == points[*b]);
    if idx.len() <= 2 {
        return idx;
    }
    let mut lower: Vec<usize> = Vec::new();
    for &i in &idx {
        while lower.len() >= 2 && orient(&points[lower[lower.len() - 2]], &points[lower[lower.len() - 1]], &points[i]) <= 0.0 {
            lower.pop();
        }
        lower.push(i);
    }
    let mut upper: Vec<usize> = Vec::new();
    for &i in idx.iter().rev() {
        while upper.len() >= 2 && orient(&points[upper[upper.len() - 2]], &points[upper[upper.len() - 1]], &points[i]) <= 0.0 {
            upper.pop();
        }
        upper.push(i);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() == 2 && points[lower[0]] == points[lower[1]] {
        lower.pop();
    }
    lower
}

/// 4-connected lattice over `nx * ny` nodes numbered row by row
/// (`id = iy * nx + ix`).
pub fn grid_neighbors(nx: usize, ny: usize) -> NeighborhoodGraph {
    let mut g = NeighborhoodGraph::new(0..nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let id = iy * nx + ix;
            if ix + 1 < nx {
                g.edges.insert((id, id + 1), None);
            }
            if iy + 1 < ny {
                g.edges.insert((id, id + nx), None);
            }
        }
    }
    g
}

/// Twice the signed area of a polygon.
pub fn signed_area2(polygon: &[Point2]) -> f64 {
    let n = polygon.len();
    (0..n)
        .map(|i| {
            let (p, q) = (polygon[i], polygon[(i + 1) % n]);
            p.x * q.y - q.x * p.y
        })
        .sum()
}

fn on_segment(p: &Point2, a: &Point2, b: &Point2) -> bool {
    orient(a, b, p) == 0.0
        && p.x >= a.x.min(b.x)
        && p.x <= a.x.max(b.x)
        && p.y >= a.y.min(b.y)
        && p.y <= a.y.max(b.y)
}

/// Winding-number containment test; points on the boundary count as inside.
pub fn point_in_polygon(p: &Point2, polygon: &[Point2]) -> Result<bool, GeometryError> {
    if polygon.len() < 3 {
        return Err(GeometryError::Degenerate(format!(
            "polygon needs at least 3 vertices, got {}",
            polygon.len()
        )));
    }
    if signed_area2(polygon) == 0.0 {
        return Err(GeometryError::Degenerate("polygon has zero area".into()));
    }
    let n = polygon.len();
    let mut winding = 0i32;
    for i in 0..n {
        let (a, b) = (&polygon[i], &polygon[(i + 1) % n]);
        if on_segment(p, a, b) {
            return Ok(true);
        }
        if a.y <= p.y {
            if b.y > p.y && orient(a, b, p) > 0.0 {
                winding += 1;
            }
        } else if b.y <= p.y && orient(a, b, p) < 0.0 {
            winding -= 1;
        }
    }
    Ok(winding != 0)
}

/// Axis-aligned rectangle in the complex plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    pub fn bounding(points: &[Point2]) -> Option<Self> {
        let first = points.first()?;
        let mut r = Rect::new(first.x, first.x, first.y, first.y);
        for p in &points[1..] {
            r.x_min = r.x_min.min(p.x);
            r.x_max = r.x_max.max(p.x);
            r.y_min = r.y_min.min(p.y);
            r.y_max = r.y_max.max(p.y);
        }
        Some(r)
    }

    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn expanded(&self, by: f64) -> Self {
        Rect::new(self.x_min - by, self.x_max + by, self.y_min - by, self.y_max + by)
    }

    pub fn union(&self, other: &Rect) -> Self {
        Rect::new(
            self.x_min.min(other.x_min),
            self.x_max.max(other.x_max),
            self.y_min.min(other.y_min),
            self.y_max.max(other.y_max),
        )
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite())
            && self.x_min <= self.x_max
            && self.y_min <= self.y_max
    }
}

/// Uniform bucket grid for nearest-point queries.
#[derive(Clone, Debug)]
pub struct PointIndex {
    points: Vec<Point2>,
    origin: Point2,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl PointIndex {
    pub fn new(points: &[Point2]) -> Self {
        let bounds = Rect::bounding(points).unwrap_or(Rect::new(0.0, 0.0, 0.0, 0.0));
        let (w, h) = (bounds.x_max - bounds.x_min, bounds.y_max - bounds.y_min);
        let n = points.len().max(1) as f64;
        let mut cell = ((w * h) / n).sqrt();
        if !(cell > 0.0) {
            cell = (w.max(h) / n).max(f64::MIN_POSITIVE);
        }
        if !(cell > 0.0 && cell.is_finite()) {
            cell = 1.0;
        }
        let nx = ((w / cell) as usize + 1).min(4096);
        let ny = ((h / cell) as usize + 1).min(4096);
        let cell = cell.max(w / nx as f64).max(h / ny as f64);
        let origin = Point2::new(bounds.x_min, bounds.y_min);
        let mut buckets = vec![Vec::new(); nx * ny];
        let mut idx = Self {
            points: points.to_vec(),
            origin,
            cell,
            nx,
            ny,
            buckets: Vec::new(),
        };
        for (i, p) in points.iter().enumerate() {
            let (cx, cy) = idx.cell_of(p);
            buckets[cy * nx + cx].push(i);
        }
        idx.buckets = buckets;
        idx
    }

    fn cell_of(&self, p: &Point2) -> (usize, usize) {
        let cx = ((p.x - self.origin.x) / self.cell).floor().clamp(0.0, (self.nx - 1) as f64) as usize;
        let cy = ((p.y - self.origin.y) / self.cell).floor().clamp(0.0, (self.ny - 1) as f64) as usize;
        (cx, cy)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and distance of the nearest stored point accepted by `keep`.
    pub fn nearest_where(&self, q: &Point2, keep: impl Fn(usize) -> bool) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let (cx, cy) = self.cell_of(q);
        // Distance from q to the clamped cell grid is a lower bound for
        // points outside the searched rings.
        let dx_out = (self.origin.x - q.x).max(q.x - (self.origin.x + self.nx as f64 * self.cell)).max(0.0);
        let dy_out = (self.origin.y - q.y).max(q.y - (self.origin.y + self.ny as f64 * self.cell)).max(0.0);
        let outside = dx_out.hypot(dy_out);
        let mut best: Option<(usize, f64)> = None;
        let max_ring = self.nx.max(self.ny);
        for ring in 0..=max_ring {
            if let Some((_, d)) = best {
                if d < outside.hypot((ring as f64 - 1.0).max(0.0) * self.cell) {
                    break;
                }
            }
            let (x0, x1) = (cx.saturating_sub(ring), (cx + ring).min(self.nx - 1));
            let (y0, y1) = (cy.saturating_sub(ring), (cy + ring).min(self.ny - 1));
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if x.abs_diff(cx) != ring && y.abs_diff(cy) != ring {
                        continue;
                    }
                    for &i in &self.buckets[y * self.nx + x] {
                        if !keep(i) {
                            continue;
                        }
                        let d = q.dist(&self.points[i]);
                        if best.is_none_or(|(bi, bd)| d < bd || (d == bd && i < bi)) {
                            best = Some((i, d));
                        }
                    }
                }
            }
        }
        best
    }

    pub fn nearest(&self, q: &Point2) -> Option<(usize, f64)> {
        self.nearest_where(q, |_| true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(raw: &[(f64, f64)]) -> Vec<Point2> {
        raw.iter().map(|&(x, y)| Point2::new(x, y)).collect()
    }

    /// Brute force: a triple is a Delaunay triangle iff no other point lies
    /// strictly inside its circumcircle.
    fn brute_force_delaunay_edges(points: &[Point2]) -> BTreeSet<Edge> {
        let n = points.len();
        let mut edges = BTreeSet::new();
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let (a, b, c) = (points[i], points[j], points[k]);
                    let o = orient(&a, &b, &c);
                    if o == 0.0 {
                        continue;
                    }
                    let empty = (0..n).filter(|&m| m != i && m != j && m != k).all(|m| {
                        let s = incircle(a.coord(), b.coord(), c.coord(), points[m].coord());
                        s * o <= 0.0
                    });
                    if empty {
                        edges.extend([(i, j), (i, k), (j, k)]);
                    }
                }
            }
        }
        edges
    }

    #[test]
    fn single_triangle() {
        let g = delaunay(&pts(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)])).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn unit_square_has_one_diagonal() {
        let p = pts(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]);
        let g = delaunay(&p).unwrap();
        assert_eq!(g.edge_count(), 5);
        // Lowest-index tie rule picks the diagonal through point 0.
        assert!(g.contains_edge(0, 2));
        // The oracle accepts both diagonals for co-circular corners.
        let oracle = brute_force_delaunay_edges(&p);
        assert!(g.edges().all(|e| oracle.contains(&e)));
    }

    #[test]
    fn collinear_and_tiny_inputs_are_degenerate() {
        assert!(matches!(
            delaunay(&pts(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)])),
            Err(GeometryError::Degenerate(_))
        ));
        assert!(delaunay(&pts(&[(0.0, 0.0), (1.0, 1.0)])).is_err());
        assert!(delaunay(&pts(&[(0.0, 0.0), (0.0, 0.0), (0.0, 0.0), (1.0, 0.0)])).is_err());
    }

    #[test]
    fn duplicates_share_edges() {
        let p = pts(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 0.0)]);
        let g = delaunay(&p).unwrap();
        assert!(g.contains_edge(0, 3));
        assert!(g.contains_edge(2, 3));
        assert!(!g.contains_edge(1, 3));
    }

    #[test]
    fn lattice_triangulation_is_canonical() {
        let mut p = Vec::new();
        for iy in 0..6 {
            for ix in 0..7 {
                p.push(Point2::new(ix as f64 * 0.5, iy as f64 * 0.5));
            }
        }
        let t = triangulate(&p).unwrap();
        assert_eq!(t.triangles.len(), 2 * 6 * 5);
        let g = t.edge_graph();
        // Every cell is split along the diagonal through its lowest corner.
        for iy in 0..5 {
            for ix in 0..6 {
                let id = iy * 7 + ix;
                assert!(g.contains_edge(id, id + 8), "cell ({ix},{iy})");
            }
        }
    }

    #[test]
    fn random_sets_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.random_range(3..=12);
            let p: Vec<Point2> = (0..n)
                .map(|_| Point2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let g = delaunay(&p).unwrap();
            let oracle = brute_force_delaunay_edges(&p);
            assert_eq!(g.edges().collect::<BTreeSet<_>>(), oracle);
        }
    }

    #[test]
    fn hull_examples() {
        let p = pts(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.5, 0.5)]);
        assert_eq!(convex_hull(&p), vec![0, 1, 2, 3]);
        assert_eq!(convex_hull(&pts(&[(3.0, 4.0)])), vec![0]);
        assert_eq!(convex_hull(&pts(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)])), vec![0, 2]);
        assert_eq!(convex_hull(&pts(&[(1.0, 1.0), (1.0, 1.0)])), vec![0]);
    }

    #[test]
    fn hull_passes_half_plane_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p: Vec<Point2> = (0..10)
                .map(|_| {
                    let r = rng.random_range(0.0f64..1.0).sqrt();
                    let t = rng.random_range(0.0..std::f64::consts::TAU);
                    Point2::new(r * t.cos(), r * t.sin())
                })
                .collect();
            let hull = convex_hull(&p);
            for k in 0..hull.len() {
                let (a, b) = (p[hull[k]], p[hull[(k + 1) % hull.len()]]);
                for q in &p {
                    assert!(orient(&a, &b, q) >= 0.0);
                }
            }
            // Every point excluded from the hull is strictly inside some hull triangle fan.
            let polygon: Vec<Point2> = hull.iter().map(|&i| p[i]).collect();
            for q in &p {
                assert!(point_in_polygon(q, &polygon).unwrap());
            }
        }
    }

    #[test]
    fn grid_counts() {
        assert_eq!(grid_neighbors(2, 2).edge_count(), 4);
        assert_eq!(grid_neighbors(1, 5).edge_count(), 4);
        assert_eq!(grid_neighbors(3, 3).edge_count(), 12);
        for nx in 1..6 {
            for ny in 1..6 {
                assert_eq!(grid_neighbors(nx, ny).edge_count(), 2 * nx * ny - nx - ny);
            }
        }
    }

    #[test]
    fn polygon_containment() {
        let sq = pts(&[(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]);
        assert!(point_in_polygon(&Point2::new(0.0, 0.0), &sq).unwrap());
        assert!(!point_in_polygon(&Point2::new(5.0, 5.0), &sq).unwrap());
        assert!(point_in_polygon(&Point2::new(1.0, 0.3), &sq).unwrap());
        assert!(point_in_polygon(&Point2::new(-1.0, -1.0), &sq).unwrap());
        let flat = pts(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        assert!(point_in_polygon(&Point2::new(0.5, 0.0), &flat).is_err());
        assert!(point_in_polygon(&Point2::new(0.5, 0.0), &sq[..2]).is_err());
    }

    #[test]
    fn point_index_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1usize, 2, 7, 50, 300] {
            let mut p: Vec<Point2> = (0..n)
                .map(|_| Point2::new(rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0)))
                .collect();
            if n == 7 {
                // Collinear and duplicated points.
                p = (0..n).map(|i| Point2::new((i / 2) as f64, 0.0)).collect();
            }
            let idx = PointIndex::new(&p);
            for _ in 0..100 {
                let q = Point2::new(rng.random_range(-6.0..6.0), rng.random_range(-4.0..4.0));
                let (i, d) = idx.nearest(&q).unwrap();
                let best = p.iter().map(|x| x.dist(&q)).fold(f64::INFINITY, f64::min);
                assert_eq!(d, best);
                assert_eq!(p[i].dist(&q), best);
                let odd = idx.nearest_where(&q, |j| j % 2 == 1);
                let best_odd = p.iter().enumerate().filter(|(j, _)| j % 2 == 1).map(|(_, x)| x.dist(&q)).fold(f64::INFINITY, f64::min);
                assert_eq!(odd.map(|o| o.1).unwrap_or(f64::INFINITY), best_odd);
            }
        }
        assert!(PointIndex::new(&[]).nearest(&Point2::new(0.0, 0.0)).is_none());
    }

    #[test]
    fn graph_rejects_bad_edges() {
        let mut g = NeighborhoodGraph::new(0..3);
        assert!(g.add_edge(0, 1).unwrap());
        assert!(!g.add_edge(1, 0).unwrap());
        assert!(matches!(g.add_edge(2, 2), Err(GeometryError::SelfLoop(2))));
        assert!(g.add_edge(0, 7).is_err());
        assert!(g.add_labeled_edge(1, 2, 0.5).unwrap());
        assert_eq!(g.label(2, 1), Some(0.5));
    }
}
