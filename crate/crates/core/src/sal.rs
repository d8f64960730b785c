//! Spatial aggregation operators: aggregate, interpolate, classify,
//! redescribe, plus the analogize/correspond pair that relates neighboring
//! higher-level objects through their constituents.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{delaunay, GeometryError, NeighborhoodGraph, Point2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SalError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("field samples {0} and {1} share a location")]
    DuplicateLocation(usize, usize),
    #[error("grid rule expects {expected} objects, got {got}")]
    GridShape { expected: usize, got: usize },
    #[error("empty object list")]
    Empty,
    #[error("abstraction failed for class {class:?}: {reason}")]
    Abstraction { class: Vec<usize>, reason: String },
    #[error("higher-level object {0} is not in the object store")]
    UnknownObject(usize),
    #[error("correspondence payload failed for pair ({h1}, {h2}): {reason}")]
    Payload { h1: usize, h2: usize, reason: String },
}

/// Sampled scalar data. Values may be `+inf` (singular samples).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Field {
    samples: Vec<(Point2, f64)>,
}

impl Field {
    pub fn new(samples: Vec<(Point2, f64)>) -> Result<Self, SalError> {
        let mut seen: HashMap<(u64, u64), usize> = HashMap::with_capacity(samples.len());
        for (i, (p, _)) in samples.iter().enumerate() {
            if !p.is_finite() {
                return Err(GeometryError::NonFinite(i).into());
            }
            if let Some(j) = seen.insert(((p.x + 0.0).to_bits(), (p.y + 0.0).to_bits()), i) {
                return Err(SalError::DuplicateLocation(j, i));
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(Point2, f64)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn location(&self, i: usize) -> Point2 {
        self.samples[i].0
    }

    pub fn value(&self, i: usize) -> f64 {
        self.samples[i].1
    }

    pub fn locations(&self) -> Vec<Point2> {
        self.samples.iter().map(|s| s.0).collect()
    }
}

/// How `aggregate` decides which objects are neighbors.
pub enum NeighborRule<'a> {
    Delaunay,
    /// Objects laid out row by row on an `nx * ny` lattice.
    Grid { nx: usize, ny: usize },
    /// Every pair within Euclidean distance `r`.
    Radius(f64),
    Custom(&'a dyn Fn(usize, usize) -> bool),
}

pub fn aggregate(points: &[Point2], rule: &NeighborRule<'_>) -> Result<NeighborhoodGraph, SalError> {
    if points.is_empty() {
        return Err(SalError::Empty);
    }
    let n = points.len();
    match rule {
        NeighborRule::Delaunay => Ok(delaunay(points)?),
        NeighborRule::Grid { nx, ny } => {
            if nx * ny != n {
                return Err(SalError::GridShape {
                    expected: nx * ny,
                    got: n,
                });
            }
            Ok(crate::geometry::grid_neighbors(*nx, *ny))
        }
        NeighborRule::Radius(r) => {
            let r2 = r * r;
            let mut g = NeighborhoodGraph::new(0..n);
            for i in 0..n {
                for j in i + 1..n {
                    if points[i].dist2(&points[j]) <= r2 {
                        g.add_edge(i, j)?;
                    }
                }
            }
            Ok(g)
        }
        NeighborRule::Custom(pred) => {
            let mut g = NeighborhoodGraph::new(0..n);
            for i in 0..n {
                for j in i + 1..n {
                    if pred(i, j) {
                        g.add_edge(i, j)?;
                    }
                }
            }
            Ok(g)
        }
    }
}

/// A level crossing on a graph edge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub point: Point2,
    pub level: f64,
    pub level_index: usize,
    /// Source edge `(a, b)` with `a < b`.
    pub edge: (usize, usize),
    /// Position along the edge measured from `a`.
    pub t: f64,
}

/// Linear interpolation of level crossings along graph edges.
///
/// Edges whose endpoint values strictly straddle `v` emit the interpolated
/// point. A sample whose value equals `v` is emitted once, as itself, from
/// the first edge that reaches it. Edges with a non-finite endpoint emit no
/// interpolated crossing.
pub fn interpolate(field: &Field, graph: &NeighborhoodGraph, levels: &[f64]) -> Vec<Crossing> {
    let mut out = Vec::new();
    let mut on_level: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (a, b) in graph.edges() {
        let (pa, fa) = field.samples[a];
        let (pb, fb) = field.samples[b];
        for (k, &v) in levels.iter().enumerate() {
            let mut push = |point, t| {
                out.push(Crossing {
                    point,
                    level: v,
                    level_index: k,
                    edge: (a, b),
                    t,
                })
            };
            if fa == v && on_level.insert((a, k)) {
                push(pa, 0.0);
            }
            if fb == v && on_level.insert((b, k)) {
                push(pb, 1.0);
            }
            if fa.is_finite() && fb.is_finite() && fa.min(fb) < v && v < fa.max(fb) {
                let t = (v - fa) / (fb - fa);
                push(Point2::new(pa.x + t * (pb.x - pa.x), pa.y + t * (pb.y - pa.y)), t);
            }
        }
    }
    out
}

/// Fractional position of the `v` crossing between values `fa` and `fb`
/// under the half-open rule: the edge crosses when exactly one endpoint is
/// below `v`. Every triangle then has zero or two crossing edges.
pub fn crossing_parameter(fa: f64, fb: f64, v: f64) -> Option<f64> {
    if (fa < v) == (fb < v) {
        return None;
    }
    Some(((v - fa) / (fb - fa)).clamp(0.0, 1.0))
}

/// Connected components of the subgraph keeping edges whose endpoints
/// satisfy `equivalent`. Classes are sorted, and ordered by first member.
pub fn classify<T>(
    objects: &[T],
    graph: &NeighborhoodGraph,
    equivalent: impl Fn(&T, &T) -> bool,
) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(objects.len());
    for (a, b) in graph.edges() {
        if equivalent(&objects[a], &objects[b]) {
            uf.union(a, b);
        }
    }
    uf.classes()
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }

    pub(crate) fn classes(&mut self) -> Vec<Vec<usize>> {
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..self.parent.len() {
            let r = self.find(i);
            by_root.entry(r).or_default().push(i);
        }
        let mut classes: Vec<Vec<usize>> = by_root.into_values().collect();
        classes.sort_by_key(|c| c[0]);
        classes
    }
}

/// An equivalence class redescribed as a single object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HigherObject<A> {
    pub id: usize,
    pub constituents: Vec<usize>,
    pub abstraction: A,
}

pub fn redescribe<A>(
    id: usize,
    class: &[usize],
    abstraction: impl FnOnce(&[usize]) -> Result<A, String>,
) -> Result<HigherObject<A>, SalError> {
    if class.is_empty() {
        return Err(SalError::Abstraction {
            class: Vec::new(),
            reason: "empty class".into(),
        });
    }
    let abstraction = abstraction(class).map_err(|reason| SalError::Abstraction {
        class: class.to_vec(),
        reason,
    })?;
    Ok(HigherObject {
        id,
        constituents: class.to_vec(),
        abstraction,
    })
}

/// Ordered point sequence; `order` holds the object identities visited.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub order: Vec<usize>,
    pub points: Vec<Point2>,
    pub closed: bool,
}

/// Orders class members into a polyline. `adjacency` links members that
/// share a source cell; when it does not describe a simple path or cycle,
/// members are chained by nearest neighbor instead.
pub fn order_polyline(
    class: &[usize],
    location: impl Fn(usize) -> Point2,
    adjacency: &BTreeMap<usize, Vec<usize>>,
) -> Result<Polyline, String> {
    if class.is_empty() {
        return Err("cannot order an empty class".into());
    }
    let members: BTreeSet<usize> = class.iter().copied().collect();
    let neighbors = |u: usize| -> Vec<usize> {
        let mut v: Vec<usize> = adjacency
            .get(&u)
            .map(|n| n.iter().copied().filter(|w| members.contains(w) && *w != u).collect())
            .unwrap_or_default();
        v.sort_unstable();
        v.dedup();
        v
    };
    let order = walk_adjacency(&members, &neighbors);
    let (order, closed) = match order {
        Some(found) => found,
        None => (nearest_neighbor_chain(&members, &location), false),
    };
    let points = order.iter().map(|&i| location(i)).collect();
    Ok(Polyline { order, points, closed })
}

fn walk_adjacency(members: &BTreeSet<usize>, neighbors: &dyn Fn(usize) -> Vec<usize>) -> Option<(Vec<usize>, bool)> {
    if members.len() == 1 {
        return Some((members.iter().copied().collect(), false));
    }
    let degree: BTreeMap<usize, Vec<usize>> = members.iter().map(|&u| (u, neighbors(u))).collect();
    if degree.values().any(|n| n.is_empty() || n.len() > 2) {
        return None;
    }
    let ends: Vec<usize> = degree.iter().filter(|(_, n)| n.len() == 1).map(|(&u, _)| u).collect();
    let closed = match ends.len() {
        0 => true,
        2 => false,
        _ => return None,
    };
    let start = if closed { *members.iter().next().unwrap() } else { ends[0] };
    let mut order = vec![start];
    let mut prev = usize::MAX;
    let mut cur = start;
    loop {
        let next = degree[&cur].iter().copied().find(|&w| w != prev && !(order.len() > 1 && w == order[order.len() - 2]));
        let Some(next) = next else { break };
        if next == start {
            break;
        }
        order.push(next);
        prev = cur;
        cur = next;
        if order.len() > members.len() {
            return None;
        }
    }
    (order.len() == members.len()).then_some((order, closed))
}

fn nearest_neighbor_chain(members: &BTreeSet<usize>, location: &dyn Fn(usize) -> Point2) -> Vec<usize> {
    let ids: Vec<usize> = members.iter().copied().collect();
    let pts: Vec<Point2> = ids.iter().map(|&i| location(i)).collect();
    let n = ids.len() as f64;
    let centroid = Point2::new(
        pts.iter().map(|p| p.x).sum::<f64>() / n,
        pts.iter().map(|p| p.y).sum::<f64>() / n,
    );
    let mut start = 0;
    for k in 1..pts.len() {
        if pts[k].dist2(&centroid) > pts[start].dist2(&centroid) {
            start = k;
        }
    }
    let mut used = vec![false; ids.len()];
    let mut order = vec![ids[start]];
    used[start] = true;
    let mut cur = start;
    for _ in 1..ids.len() {
        let next = (0..ids.len())
            .filter(|&k| !used[k])
            .min_by(|&a, &b| pts[a].dist2(&pts[cur]).total_cmp(&pts[b].dist2(&pts[cur])))
            .unwrap();
        used[next] = true;
        order.push(ids[next]);
        cur = next;
    }
    order
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalogyEdge {
    pub l1: usize,
    pub l2: usize,
    pub confidence: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalogyGraph {
    pub edges: Vec<AnalogyEdge>,
}

impl AnalogyGraph {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Edges with both endpoints in `nodes`.
    pub fn induced(&self, nodes: &BTreeSet<usize>) -> AnalogyGraph {
        AnalogyGraph {
            edges: self
                .edges
                .iter()
                .filter(|e| nodes.contains(&e.l1) && nodes.contains(&e.l2))
                .copied()
                .collect(),
        }
    }

    /// Lower-level objects touched by at least one edge.
    pub fn matched(&self) -> BTreeSet<usize> {
        self.edges.iter().flat_map(|e| [e.l1, e.l2]).collect()
    }
}

fn index_objects<A>(objects: &[HigherObject<A>]) -> HashMap<usize, &HigherObject<A>> {
    objects.iter().map(|h| (h.id, h)).collect()
}

/// Relates constituents of every pair of neighboring higher-level objects.
/// Confidences are clamped to `[0, 1]` and zero-confidence pairs dropped.
pub fn analogize<A>(
    g_h: &NeighborhoodGraph,
    objects: &[HigherObject<A>],
    predicate: impl Fn(usize, usize) -> f64,
) -> Result<AnalogyGraph, SalError> {
    let by_id = index_objects(objects);
    let mut edges = Vec::new();
    for (a, b) in g_h.edges() {
        let h1 = by_id.get(&a).ok_or(SalError::UnknownObject(a))?;
        let h2 = by_id.get(&b).ok_or(SalError::UnknownObject(b))?;
        for &l1 in &h1.constituents {
            for &l2 in &h2.constituents {
                let c = predicate(l1, l2);
                let c = if c.is_nan() { 0.0 } else { c.clamp(0.0, 1.0) };
                if c > 0.0 {
                    edges.push(AnalogyEdge { l1, l2, confidence: c });
                }
            }
        }
    }
    Ok(AnalogyGraph { edges })
}

/// Like [`analogize`], but only evaluates `predicate` on pairs listed in
/// `candidates` (an adjacency over constituents). Equivalent to
/// [`analogize`] whenever the predicate is zero off the candidate graph;
/// edges come out in the same order.
pub fn analogize_sparse<A>(
    g_h: &NeighborhoodGraph,
    objects: &[HigherObject<A>],
    candidates: &BTreeMap<usize, Vec<usize>>,
    predicate: impl Fn(usize, usize) -> f64,
) -> Result<AnalogyGraph, SalError> {
    let by_id = index_objects(objects);
    let mut edges = Vec::new();
    for (a, b) in g_h.edges() {
        let h1 = by_id.get(&a).ok_or(SalError::UnknownObject(a))?;
        let h2 = by_id.get(&b).ok_or(SalError::UnknownObject(b))?;
        let rank: HashMap<usize, usize> = h2.constituents.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        for &l1 in &h1.constituents {
            let mut hits: Vec<(usize, usize)> = candidates
                .get(&l1)
                .into_iter()
                .flatten()
                .filter_map(|l2| rank.get(l2).map(|&r| (r, *l2)))
                .collect();
            hits.sort_unstable();
            hits.dedup();
            for (_, l2) in hits {
                let c = predicate(l1, l2);
                let c = if c.is_nan() { 0.0 } else { c.clamp(0.0, 1.0) };
                if c > 0.0 {
                    edges.push(AnalogyEdge { l1, l2, confidence: c });
                }
            }
        }
    }
    Ok(AnalogyGraph { edges })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceGraph<S> {
    pub edges: Vec<(usize, usize, S)>,
}

/// Abstracts the analogy between each neighboring pair into one payload.
pub fn correspond<A, S>(
    g_h: &NeighborhoodGraph,
    objects: &[HigherObject<A>],
    g_l: &AnalogyGraph,
    payload: impl Fn(&HigherObject<A>, &HigherObject<A>, &AnalogyGraph) -> Result<S, String>,
) -> Result<CorrespondenceGraph<S>, SalError> {
    let by_id = index_objects(objects);
    let mut edges = Vec::with_capacity(g_h.edge_count());
    for (a, b) in g_h.edges() {
        let h1 = by_id.get(&a).ok_or(SalError::UnknownObject(a))?;
        let h2 = by_id.get(&b).ok_or(SalError::UnknownObject(b))?;
        let nodes: BTreeSet<usize> = h1.constituents.iter().chain(&h2.constituents).copied().collect();
        let sub = g_l.induced(&nodes);
        let so = payload(h1, h2, &sub).map_err(|reason| SalError::Payload { h1: a, h2: b, reason })?;
        edges.push((a, b, so));
    }
    Ok(CorrespondenceGraph { edges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line_field(values: &[f64]) -> Field {
        Field::new(
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| (Point2::new(i as f64, 0.0), v))
                .collect(),
        )
        .unwrap()
    }

    fn path(n: usize) -> NeighborhoodGraph {
        let mut g = NeighborhoodGraph::new(0..n);
        for i in 1..n {
            g.add_edge(i - 1, i).unwrap();
        }
        g
    }

    #[test]
    fn aggregate_rules() {
        let line = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(2.0, 0.0)];
        let g = aggregate(&line, &NeighborRule::Radius(1.5)).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);

        let sq = [
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
            Point2::new(1.0, 1.0),
        ];
        assert_eq!(aggregate(&sq, &NeighborRule::Grid { nx: 2, ny: 2 }).unwrap().edge_count(), 4);
        assert_eq!(aggregate(&sq, &NeighborRule::Delaunay).unwrap().edge_count(), 5);
        assert!(aggregate(&line, &NeighborRule::Delaunay).is_err());
        assert!(aggregate(&sq, &NeighborRule::Grid { nx: 3, ny: 2 }).is_err());
        let even = |a: usize, b: usize| (a + b) % 2 == 0;
        assert_eq!(aggregate(&sq, &NeighborRule::Custom(&even)).unwrap().edge_count(), 2);
    }

    #[test]
    fn field_rejects_shared_locations() {
        let p = Point2::new(1.0, 2.0);
        assert_eq!(Field::new(vec![(p, 0.0), (p, 1.0)]), Err(SalError::DuplicateLocation(0, 1)));
    }

    #[test]
    fn interpolate_examples() {
        let f = line_field(&[1.0, 2.0]);
        let g = path(2);
        let c = interpolate(&f, &g, &[1.5]);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].point, Point2::new(0.5, 0.0));
        assert!(interpolate(&f, &g, &[3.0]).is_empty());
        assert!(interpolate(&f, &g, &[]).is_empty());

        let c = interpolate(&line_field(&[0.0, 4.0]), &g, &[1.0]);
        assert_eq!(c[0].point.x, 0.25);

        let c = interpolate(&line_field(&[1.0, 2.0]), &g, &[1.0]);
        assert_eq!(c[0].point, Point2::new(0.0, 0.0));

        assert!(interpolate(&line_field(&[1.0, f64::INFINITY]), &g, &[1.5, 5.0]).is_empty());
    }

    #[test]
    fn classify_examples() {
        let g = path(3);
        assert_eq!(classify(&[1, 1, 2], &g, |a, b| a == b), vec![vec![0, 1], vec![2]]);
        let empty = NeighborhoodGraph::new(0..3);
        assert_eq!(classify(&[1, 1, 1], &empty, |a, b| a == b), vec![vec![0], vec![1], vec![2]]);
        assert_eq!(classify(&[4, 4, 4], &g, |a, b| a == b), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn redescribe_orders_collinear_points() {
        let xs = [3.0, 0.0, 4.0, 1.0, 2.0];
        let loc = |i: usize| Point2::new(xs[i], 0.0);
        let class = [0, 1, 2, 3, 4];
        let h = redescribe(9, &class, |c| order_polyline(c, loc, &BTreeMap::new())).unwrap();
        assert_eq!(h.constituents, class);
        let visited: Vec<f64> = h.abstraction.points.iter().map(|p| p.x).collect();
        assert!(visited == [0.0, 1.0, 2.0, 3.0, 4.0] || visited == [4.0, 3.0, 2.0, 1.0, 0.0]);
        assert!(!h.abstraction.closed);
    }

    #[test]
    fn redescribe_closed_contour_by_adjacency() {
        let n = 8;
        let loc = |i: usize| {
            let t = std::f64::consts::TAU * i as f64 / n as f64;
            Point2::new(t.cos(), t.sin())
        };
        let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            adj.entry(i).or_default().push((i + 1) % n);
            adj.entry((i + 1) % n).or_default().push(i);
        }
        let class: Vec<usize> = (0..n).rev().collect();
        let poly = order_polyline(&class, loc, &adj).unwrap();
        assert!(poly.closed);
        assert_eq!(poly.order.len(), n);
        for k in 0..n {
            let (a, b) = (poly.order[k], poly.order[(k + 1) % n]);
            assert!(adj[&a].contains(&b));
        }
    }

    #[test]
    fn redescribe_singleton_and_empty() {
        let h = redescribe(0, &[5], |c| order_polyline(c, |_| Point2::new(1.0, 1.0), &BTreeMap::new())).unwrap();
        assert_eq!(h.abstraction.points, vec![Point2::new(1.0, 1.0)]);
        assert!(redescribe(0, &[], |_| Ok(())).is_err());
        let err = redescribe(0, &[1, 2], |_| Err::<(), _>("nope".into())).unwrap_err();
        assert!(matches!(err, SalError::Abstraction { class, .. } if class == vec![1, 2]));
    }

    fn two_objects() -> (NeighborhoodGraph, Vec<HigherObject<()>>, [Point2; 4]) {
        let mut g = NeighborhoodGraph::new([0, 1]);
        g.add_edge(0, 1).unwrap();
        let objs = vec![
            HigherObject { id: 0, constituents: vec![0, 1], abstraction: () },
            HigherObject { id: 1, constituents: vec![2, 3], abstraction: () },
        ];
        let pts = [
            Point2::new(0.0, 0.0),
            Point2::new(0.0, 1.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
        ];
        (g, objs, pts)
    }

    #[test]
    fn analogize_examples() {
        let (g, objs, pts) = two_objects();
        let empty = NeighborhoodGraph::new(0..0);
        assert!(analogize(&empty, &objs, |_, _| 1.0).unwrap().is_empty());

        let nearest = |l1: usize, l2: usize| {
            let best = [2, 3]
                .into_iter()
                .min_by(|&a, &b| pts[l1].dist(&pts[a]).total_cmp(&pts[l1].dist(&pts[b])))
                .unwrap();
            if best == l2 {
                1.0
            } else {
                0.0
            }
        };
        let a = analogize(&g, &objs, nearest).unwrap();
        assert_eq!(
            a.edges,
            vec![
                AnalogyEdge { l1: 0, l2: 2, confidence: 1.0 },
                AnalogyEdge { l1: 1, l2: 3, confidence: 1.0 }
            ]
        );

        let decay = |l1: usize, l2: usize| (-pts[l1].dist(&pts[l2])).exp();
        let a = analogize(&g, &objs, decay).unwrap();
        assert_eq!(a.len(), 4);
        for e in &a.edges {
            assert!((e.confidence - decay(e.l1, e.l2)).abs() < 1e-15);
        }
    }

    #[test]
    fn correspond_examples() {
        let (g, objs, _) = two_objects();
        let frac = |h1: &HigherObject<()>, _: &HigherObject<()>, sub: &AnalogyGraph| {
            let m = sub.matched();
            Ok(h1.constituents.iter().filter(|l| m.contains(l)).count() as f64 / h1.constituents.len() as f64)
        };
        let full = analogize(&g, &objs, |a, b| if b == a + 2 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(correspond(&g, &objs, &full, frac).unwrap().edges, vec![(0, 1, 1.0)]);
        assert_eq!(
            correspond(&g, &objs, &AnalogyGraph::default(), frac).unwrap().edges,
            vec![(0, 1, 0.0)]
        );

        let mut g4 = NeighborhoodGraph::new([0, 1]);
        g4.add_edge(0, 1).unwrap();
        let objs4 = vec![
            HigherObject { id: 0, constituents: vec![0, 1, 2, 3], abstraction: () },
            HigherObject { id: 1, constituents: vec![4, 5, 6, 7], abstraction: () },
        ];
        let partial = analogize(&g4, &objs4, |a, b| if b == a + 4 && a < 3 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(correspond(&g4, &objs4, &partial, frac).unwrap().edges, vec![(0, 1, 0.75)]);

        let err = correspond(&g, &objs, &full, |_, _, _| Err::<(), _>("bad".into())).unwrap_err();
        assert!(matches!(err, SalError::Payload { h1: 0, h2: 1, .. }));
    }

    fn arb_graph(max_n: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (1..=max_n).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 0..3 * n)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn classify_partitions((n, raw) in arb_graph(20), labels in prop::collection::vec(0u8..3, 20)) {
            let mut g = NeighborhoodGraph::new(0..n);
            for (a, b) in raw {
                if a != b {
                    g.add_edge(a, b).unwrap();
                }
            }
            let classes = classify(&labels[..n], &g, |a, b| a == b);
            let mut all: Vec<usize> = classes.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            for c in &classes {
                prop_assert!(c.iter().all(|&i| labels[i] == labels[c[0]]));
            }
        }

        #[test]
        fn analogize_matches_brute_force(
            sizes in prop::collection::vec(1usize..=6, 2..5),
            raw_edges in prop::collection::vec((0usize..4, 0usize..4), 0..6),
            seed in 0u64..1000,
        ) {
            let mut next = 0;
            let objs: Vec<HigherObject<()>> = sizes
                .iter()
                .enumerate()
                .map(|(id, &s)| {
                    let constituents = (next..next + s).collect();
                    next += s;
                    HigherObject { id, constituents, abstraction: () }
                })
                .collect();
            let mut g = NeighborhoodGraph::new(0..objs.len());
            for (a, b) in raw_edges {
                if a != b && a < objs.len() && b < objs.len() {
                    g.add_edge(a, b).unwrap();
                }
            }
            let conf = |l1: usize, l2: usize| {
                let h = (l1 as u64 * 31 + l2 as u64 * 17 + seed) % 7;
                h as f64 / 5.0 - 0.2
            };
            let a = analogize(&g, &objs, conf).unwrap();
            let mut expected = 0;
            for (h1, h2) in g.edges() {
                for &l1 in &objs[h1].constituents {
                    for &l2 in &objs[h2].constituents {
                        if conf(l1, l2) > 0.0 {
                            expected += 1;
                        }
                    }
                }
            }
            prop_assert_eq!(a.len(), expected);
            prop_assert!(a.edges.iter().all(|e| e.confidence > 0.0 && e.confidence <= 1.0));

            // Sparse evaluation over a candidate graph agrees with the dense
            // scan of a predicate that vanishes off that graph.
            let mut cand = NeighborhoodGraph::new(0..next);
            for l1 in 0..next {
                for l2 in l1 + 1..next {
                    if (l1 * 7 + l2 * 3 + seed as usize) % 3 == 0 {
                        cand.add_edge(l1, l2).unwrap();
                    }
                }
            }
            let masked = |l1: usize, l2: usize| if cand.contains_edge(l1, l2) { conf(l1, l2) } else { 0.0 };
            prop_assert_eq!(
                analogize_sparse(&g, &objs, &cand.adjacency(), masked).unwrap(),
                analogize(&g, &objs, masked).unwrap()
            );

            let c = correspond(&g, &objs, &a, |_, _, sub| Ok(sub.len())).unwrap();
            prop_assert_eq!(c.edges.len(), g.edge_count());
            let first = g.edges().next();
            if let Some((h1, h2)) = first {
                let mut dropped = g.clone();
                dropped.remove_edge(h1, h2);
                let c2 = correspond(&dropped, &objs, &a, |_, _, sub| Ok(sub.len())).unwrap();
                let rest: Vec<_> = c.edges.iter().filter(|e| (e.0, e.1) != (h1, h2)).cloned().collect();
                prop_assert_eq!(c2.edges, rest);
            }
        }

        #[test]
        fn redescribe_preserves_constituents(labels in prop::collection::vec(0u8..4, 1..30)) {
            let g = path(labels.len());
            let classes = classify(&labels, &g, |a, b| a == b);
            let loc = |i: usize| Point2::new(i as f64, 0.0);
            let objs: Vec<_> = classes
                .iter()
                .enumerate()
                .map(|(id, c)| redescribe(id, c, |c| order_polyline(c, loc, &g.adjacency())).unwrap())
                .collect();
            let mut flat: Vec<usize> = objs.iter().flat_map(|h| h.constituents.clone()).collect();
            flat.sort_unstable();
            prop_assert_eq!(flat, (0..labels.len()).collect::<Vec<_>>());
        }

        #[test]
        fn interpolated_points_lie_on_edges(
            coords in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -5.0f64..5.0), 2..12),
            levels in prop::collection::vec(-5.0f64..5.0, 1..5),
        ) {
            let mut samples: Vec<(Point2, f64)> = Vec::new();
            for (x, y, v) in coords {
                let p = Point2::new(x, y);
                if samples.iter().all(|s| s.0 != p) {
                    samples.push((p, v));
                }
            }
            let n = samples.len();
            let field = Field::new(samples).unwrap();
            let mut g = NeighborhoodGraph::new(0..n);
            for i in 0..n {
                for j in i + 1..n {
                    g.add_edge(i, j).unwrap();
                }
            }
            for c in interpolate(&field, &g, &levels) {
                let (a, b) = c.edge;
                let (pa, fa) = field.samples()[a];
                let (pb, fb) = field.samples()[b];
                prop_assert!((0.0..=1.0).contains(&c.t));
                let cross = (pb.x - pa.x) * (c.point.y - pa.y) - (pb.y - pa.y) * (c.point.x - pa.x);
                prop_assert!(cross.abs() <= 1e-9 * (1.0 + pa.dist2(&pb)));
                let model = fa + c.t * (fb - fa);
                prop_assert!((model - c.level).abs() <= 1e-12 * (1.0 + c.level.abs()));
            }
        }
    }
}
