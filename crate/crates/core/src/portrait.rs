//! Merge analysis of spectral portraits.
//!
//! The portrait is sampled on a lattice anchored at the origin, contoured at
//! the thresholds `-log10(v)` for each perturbation level `v`, and the
//! resulting level curves are tracked outward from the eigenvalues to build
//! a merge tree. Weak correspondences between consecutive levels drive local
//! subsampling; unresolved pairs drive grid expansion.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{point_in_polygon, signed_area2, triangulate, GeometryError, NeighborhoodGraph, Point2, PointIndex, Rect};
use crate::numkernel::{eigenvalues, DenseMatrix, NumError, PortraitMap};
use crate::sal::{self, crossing_parameter, Field, HigherObject, SalError};

/// Finest subsampling depth: the lattice unit is `spacing / 2^MAX_DEPTH`.
const MAX_DEPTH: u32 = 10;
/// Polishing stops once a crossing re-evaluates this close to its threshold.
const POLISH_TOL: f64 = 0.01;
const POLISH_MAX_ITER: usize = 40;
/// Smallest rise in a link's match fraction that counts as progress after
/// subsampling.
const MATCH_GAIN: f64 = 0.01;

#[derive(Debug, Error)]
pub enum PortraitError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sal(#[from] SalError),
    #[error("invalid portrait configuration: {0}")]
    Config(String),
    #[error("portrait evaluation failed at z = {z}: {source}")]
    Sample { z: Complex64, source: NumError },
    #[error("curves do not share an enclosed eigenvalue")]
    NoSharedEigenvalue,
    #[error("refinement budget of {budget} exhausted with {unresolved} unresolved pairs and {weak} weak links")]
    BudgetExceeded { budget: usize, unresolved: usize, weak: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortraitConfig {
    /// Perturbation levels, strictly decreasing in (0, 1).
    pub levels: Vec<f64>,
    /// Base grid spacing; `None` picks half the smallest eigenvalue gap,
    /// capped at 0.5.
    pub initial_resolution: Option<f64>,
    pub margin: f64,
    pub theta_max: f64,
    pub match_min: f64,
    pub max_refinements: usize,
}

impl PortraitConfig {
    /// Decade levels `10^-first ..= 10^-last`.
    pub fn decades(first: u32, last: u32) -> Self {
        Self {
            levels: (first..=last).map(|k| 10f64.powi(-(k as i32))).collect(),
            initial_resolution: None,
            margin: 1.0,
            theta_max: PI / 4.0,
            match_min: 0.8,
            max_refinements: 8,
        }
    }

    pub fn validate(&self) -> Result<(), PortraitError> {
        let bad = |m: &str| Err(PortraitError::Config(m.to_string()));
        if self.levels.is_empty() {
            return bad("levels must be nonempty");
        }
        if self.levels.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            return bad("levels must lie in (0, 1)");
        }
        if self.levels.windows(2).any(|w| w[1] >= w[0]) {
            return bad("levels must be strictly decreasing");
        }
        if let Some(h) = self.initial_resolution {
            if !(h > 0.0 && h.is_finite()) {
                return bad("initial resolution must be positive");
            }
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin must be positive");
        }
        if !(self.theta_max > 0.0 && self.theta_max < PI) {
            return bad("theta_max must lie in (0, pi)");
        }
        if !(self.match_min > 0.0 && self.match_min <= 1.0) {
            return bad("match_min must lie in (0, 1]");
        }
        if self.max_refinements == 0 {
            return bad("max_refinements must be positive");
        }
        Ok(())
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.levels.iter().map(|v| -v.log10()).collect()
    }
}

impl Default for PortraitConfig {
    fn default() -> Self {
        Self::decades(1, 8)
    }
}

/// Regular lattice description for `sample_grid`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bounds: Rect,
    pub spacing: f64,
}

impl GridSpec {
    pub fn shape(&self) -> (usize, usize) {
        let n = |lo: f64, hi: f64| ((hi - lo) / self.spacing + 1e-9).floor() as usize + 1;
        (n(self.bounds.x_min, self.bounds.x_max), n(self.bounds.y_min, self.bounds.y_max))
    }

    /// Lattice points in row-major order (`id = iy * nx + ix`).
    pub fn points(&self) -> Vec<Point2> {
        let (nx, ny) = self.shape();
        let mut out = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                out.push(Point2::new(
                    self.bounds.x_min + ix as f64 * self.spacing,
                    self.bounds.y_min + iy as f64 * self.spacing,
                ));
            }
        }
        out
    }
}

/// Portrait values at every lattice point of `spec`.
pub fn sample_grid(a: &DenseMatrix, spec: &GridSpec) -> Result<Field, PortraitError> {
    if !(spec.spacing > 0.0 && spec.spacing.is_finite()) || !spec.bounds.is_valid() {
        return Err(PortraitError::Config("grid needs finite bounds and positive spacing".into()));
    }
    let map = PortraitMap::new(a)?;
    let pts = spec.points();
    let values = evaluate_all(&map, &pts)?;
    Ok(Field::new(pts.into_iter().zip(values).collect())?)
}

fn evaluate_all(map: &PortraitMap, pts: &[Point2]) -> Result<Vec<f64>, PortraitError> {
    pts.par_iter()
        .map(|p| {
            let z = Complex64::new(p.x, p.y);
            map.value(z).map_err(|source| PortraitError::Sample { z, source })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCurve {
    pub level: f64,
    pub level_index: usize,
    pub threshold: f64,
    pub polyline: Vec<Point2>,
    pub closed: bool,
    pub enclosed_eigenvalues: Vec<usize>,
    /// Full boundary polygon, including any stretch that runs outside the
    /// sampled region when the curve is clipped.
    #[serde(skip)]
    pub polygon: Vec<Point2>,
}

impl LevelCurve {
    fn centre(&self, leaves: &[Point2]) -> Point2 {
        centroid(self.enclosed_eigenvalues.iter().map(|&i| leaves[i]))
    }
}

fn centroid(points: impl Iterator<Item = Point2>) -> Point2 {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for p in points {
        sx += p.x;
        sy += p.y;
        n += 1;
    }
    Point2::new(sx / n as f64, sy / n as f64)
}

/// Level curves plus the aggregated interpolated-point graph.
#[derive(Clone, Debug, Default)]
pub struct CurveSet {
    pub curves: Vec<LevelCurve>,
    /// Classes discarded as degenerate (fewer than three points, or closed
    /// without enclosing an eigenvalue).
    pub dropped: usize,
    /// Delaunay graph over all polyline points; node ids follow
    /// `point_ranges`.
    pub g_i: NeighborhoodGraph,
    pub point_ranges: Vec<std::ops::Range<usize>>,
}

impl CurveSet {
    pub fn point(&self, id: usize) -> Point2 {
        let c = self.point_ranges.partition_point(|r| r.end <= id);
        self.curves[c].polyline[id - self.point_ranges[c].start]
    }
}

/// One contouring vertex.
#[derive(Clone, Copy, Debug)]
struct ContourSample {
    p: Point2,
    value: f64,
    key: Option<SampleKey>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum SampleKey {
    Lattice(i64, i64),
    Leaf(usize),
}

/// Contours `samples` at each threshold with marching triangles.
///
/// `place(a, b, level)` returns the crossing position along the edge from
/// sample `a` to sample `b`; it is only called for edges between two real
/// samples. Samples without a key are the virtual ring around the domain.
fn contour(
    samples: &[ContourSample],
    levels: &[f64],
    thresholds: &[f64],
    leaves: &[Point2],
    place: &(dyn Fn(usize, usize, usize) -> Result<f64, PortraitError> + Sync),
) -> Result<CurveSet, PortraitError> {
    let pts: Vec<Point2> = samples.iter().map(|s| s.p).collect();
    let tri = triangulate(&pts)?;

    // Crossing ids per (edge, level), and the segment graph per level.
    let mut crossing_ids: HashMap<(usize, usize, usize), usize> = HashMap::new();
    let mut crossings: Vec<(usize, usize, usize)> = Vec::new();
    let mut segments: Vec<(usize, usize)> = Vec::new();
    for t in &tri.triangles {
        for (k, &thr) in thresholds.iter().enumerate() {
            let mut ends = [0usize; 2];
            let mut m = 0;
            for e in 0..3 {
                let (a, b) = (t[e].min(t[(e + 1) % 3]), t[e].max(t[(e + 1) % 3]));
                if crossing_parameter(samples[a].value, samples[b].value, thr).is_some() {
                    let id = *crossing_ids.entry((a, b, k)).or_insert_with(|| {
                        crossings.push((a, b, k));
                        crossings.len() - 1
                    });
                    ends[m] = id;
                    m += 1;
                }
            }
            debug_assert!(m == 0 || m == 2);
            if m == 2 {
                segments.push((ends[0], ends[1]));
            }
        }
    }

    let positions: Vec<(Point2, bool)> = crossings
        .par_iter()
        .map(|&(a, b, k)| {
            let (sa, sb) = (&samples[a], &samples[b]);
            if sa.key.is_none() || sb.key.is_none() {
                let t = crossing_parameter(sa.value, sb.value, thresholds[k]).unwrap();
                return Ok((lerp(sa.p, sb.p, t), true));
            }
            let t = place(a, b, k)?;
            Ok((lerp(sa.p, sb.p, t), false))
        })
        .collect::<Result<_, PortraitError>>()?;

    let mut seg_graph = NeighborhoodGraph::new(0..crossings.len());
    for &(u, v) in &segments {
        if u != v {
            seg_graph.add_edge(u, v)?;
        }
    }
    let levels_of: Vec<usize> = crossings.iter().map(|c| c.2).collect();
    let classes = sal::classify(&levels_of, &seg_graph, |a, b| a == b);
    let adjacency = seg_graph.adjacency();

    let mut curves = Vec::new();
    let mut dropped = 0;
    for (id, class) in classes.iter().enumerate() {
        let h = sal::redescribe(id, class, |c| sal::order_polyline(c, |i| positions[i].0, &adjacency))?;
        let poly = h.abstraction;
        let k = levels_of[class[0]];
        let polygon = poly.points.clone();
        let polyline: Vec<Point2> = poly.order.iter().filter(|&&i| !positions[i].1).map(|&i| positions[i].0).collect();
        let clipped = poly.order.iter().any(|&i| positions[i].1);
        if polygon.len() < 3 || signed_area2(&polygon) == 0.0 {
            dropped += 1;
            continue;
        }
        let enclosed: Vec<usize> = (0..leaves.len())
            .filter(|&i| point_in_polygon(&leaves[i], &polygon).unwrap_or(false))
            .collect();
        if enclosed.is_empty() {
            dropped += 1;
            continue;
        }
        curves.push(LevelCurve {
            level: levels[k],
            level_index: k,
            threshold: thresholds[k],
            polyline,
            closed: !clipped && poly.closed,
            enclosed_eigenvalues: enclosed,
            polygon,
        });
    }
    curves.sort_by(|a, b| {
        b.level_index
            .cmp(&a.level_index)
            .then(a.enclosed_eigenvalues.cmp(&b.enclosed_eigenvalues))
            .then(a.polyline.len().cmp(&b.polyline.len()))
    });

    let mut point_ranges = Vec::with_capacity(curves.len());
    let mut all_points = Vec::new();
    for c in &curves {
        point_ranges.push(all_points.len()..all_points.len() + c.polyline.len());
        all_points.extend_from_slice(&c.polyline);
    }
    let g_i = match triangulate(&all_points) {
        Ok(t) => t.edge_graph(),
        Err(_) => {
            let mut g = NeighborhoodGraph::new(0..all_points.len());
            for i in 1..all_points.len() {
                g.add_edge(i - 1, i)?;
            }
            g
        }
    };
    Ok(CurveSet {
        curves,
        dropped,
        g_i,
        point_ranges,
    })
}

fn lerp(a: Point2, b: Point2, t: f64) -> Point2 {
    if t == 0.0 {
        return a;
    }
    if t == 1.0 {
        return b;
    }
    Point2::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
}

/// Ring of virtual samples one `step` outside `bounds`.
fn ring(bounds: &Rect, step: f64, value: f64) -> Vec<ContourSample> {
    let r = bounds.expanded(step);
    let nx = ((r.x_max - r.x_min) / step).round().max(1.0) as usize;
    let ny = ((r.y_max - r.y_min) / step).round().max(1.0) as usize;
    let mut out = Vec::with_capacity(2 * (nx + ny));
    let mut push = |x: f64, y: f64| out.push(ContourSample {
        p: Point2::new(x, y),
        value,
        key: None,
    });
    for i in 0..nx {
        push(r.x_min + (r.x_max - r.x_min) * i as f64 / nx as f64, r.y_min);
    }
    for i in 0..ny {
        push(r.x_max, r.y_min + (r.y_max - r.y_min) * i as f64 / ny as f64);
    }
    for i in 0..nx {
        push(r.x_max - (r.x_max - r.x_min) * i as f64 / nx as f64, r.y_max);
    }
    for i in 0..ny {
        push(r.x_min, r.y_max - (r.y_max - r.y_min) * i as f64 / ny as f64);
    }
    out
}

fn clamp_values(samples: &mut [ContourSample], thresholds: &[f64]) {
    let finite = samples.iter().filter(|s| s.key.is_some() && s.value.is_finite()).map(|s| s.value);
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let t_lo = thresholds.iter().copied().fold(f64::INFINITY, f64::min);
    let t_hi = thresholds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ceiling = hi.max(t_hi) + 1.0;
    let floor = lo.min(t_lo) - 1.0;
    for s in samples.iter_mut() {
        if s.key.is_none() {
            s.value = floor;
        } else if s.value == f64::INFINITY {
            s.value = ceiling;
        }
    }
}

/// Level curves of an arbitrary scalar field by linear interpolation.
///
/// The field is triangulated and surrounded by a virtual ring below every
/// threshold, so regions that reach the sampled boundary still produce
/// closed boundary polygons (reported with `closed = false`). `leaves` are
/// the singular points used for `enclosed_eigenvalues`.
pub fn extract_curves(field: &Field, levels: &[f64], leaves: &[Point2]) -> Result<CurveSet, PortraitError> {
    let thresholds: Vec<f64> = levels.iter().map(|v| -v.log10()).collect();
    let locs = field.locations();
    let bounds = Rect::bounding(&locs).ok_or(SalError::Empty)?;
    let step = median_nn_distance(&locs).max(1e-12);
    let mut samples: Vec<ContourSample> = field
        .samples()
        .iter()
        .enumerate()
        .map(|(i, &(p, value))| ContourSample {
            p,
            value,
            key: Some(SampleKey::Leaf(i)),
        })
        .collect();
    samples.extend(ring(&bounds, step, 0.0));
    clamp_values(&mut samples, &thresholds);
    let values: Vec<f64> = samples.iter().map(|s| s.value).collect();
    let place = |a: usize, b: usize, k: usize| Ok(crossing_parameter(values[a], values[b], thresholds[k]).unwrap());
    contour(&samples, levels, &thresholds, leaves, &place)
}

pub(crate) fn median_nn_distance(points: &[Point2]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let mut d: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, q)| j != i && q != p)
                .map(|(_, q)| p.dist(q))
                .fold(f64::INFINITY, f64::min)
        })
        .filter(|d| d.is_finite())
        .collect();
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

/// Curves are adjacent when some pair of their points is a `g_i` edge.
pub fn curve_adjacency(curves: &CurveSet) -> NeighborhoodGraph {
    let mut g = NeighborhoodGraph::new(0..curves.curves.len());
    let owner = owners(&curves.point_ranges);
    for (a, b) in curves.g_i.edges() {
        let (ca, cb) = (owner[a], owner[b]);
        if ca != cb {
            let _ = g.add_edge(ca, cb);
        }
    }
    g
}

fn owners(ranges: &[std::ops::Range<usize>]) -> Vec<usize> {
    let mut owner = Vec::new();
    for (c, r) in ranges.iter().enumerate() {
        owner.extend(std::iter::repeat(c).take(r.len()));
    }
    owner
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveCorrespondence {
    /// Fraction of the inner curves' points with a cross-curve neighbor.
    pub m_k: f64,
    /// Fraction of the outer curves' points with a cross-curve neighbor.
    pub m_l: f64,
    pub theta_kl: f64,
}

impl CurveCorrespondence {
    pub fn score(&self, theta_max: f64) -> f64 {
        self.m_k.min(self.m_l) * (1.0 - self.theta_kl / theta_max).max(0.0)
    }

    pub fn is_weak(&self, config: &PortraitConfig) -> bool {
        self.theta_kl > config.theta_max || self.m_k.min(self.m_l) < config.match_min
    }
}

/// Correspondence between inner curves (smaller perturbation) and outer
/// curves (the next level out).
///
/// Matching uses cross-curve `g_i` neighbors. The angular gap is measured
/// about the centre of each inner curve's enclosed eigenvalues, over raw
/// samples whose values lie strictly between the two thresholds and which
/// lie inside an outer curve; each such sample counts toward the nearest
/// inner centre.
pub fn curve_correspondence(
    set: &CurveSet,
    inner: &[usize],
    outer: &[usize],
    raw_samples: &Field,
    leaves: &[Point2],
) -> Result<CurveCorrespondence, PortraitError> {
    let enclosed_outer: BTreeSet<usize> = outer
        .iter()
        .flat_map(|&c| set.curves[c].enclosed_eigenvalues.iter().copied())
        .collect();
    if inner.is_empty()
        || outer.is_empty()
        || inner
            .iter()
            .any(|&c| set.curves[c].enclosed_eigenvalues.iter().all(|e| !enclosed_outer.contains(e)))
    {
        return Err(PortraitError::NoSharedEigenvalue);
    }

    // One object per inner curve plus the pooled outer curves. Inner curves
    // are linked to the outer object and to each other: where two inner
    // curves face each other across a saddle, their points match one
    // another rather than the outer curve.
    let outer_id = inner.len();
    let mut objects: Vec<HigherObject<()>> = inner
        .iter()
        .enumerate()
        .map(|(id, &c)| HigherObject {
            id,
            constituents: set.point_ranges[c].clone().collect(),
            abstraction: (),
        })
        .collect();
    objects.push(HigherObject {
        id: outer_id,
        constituents: outer.iter().flat_map(|&c| set.point_ranges[c].clone()).collect(),
        abstraction: (),
    });
    let mut g_h = NeighborhoodGraph::new(0..=outer_id);
    for i in 0..outer_id {
        for j in i + 1..=outer_id {
            g_h.add_edge(i, j)?;
        }
    }
    let analogy = sal::analogize_sparse(&g_h, &objects, &set.g_i.adjacency(), |l1, l2| {
        if set.g_i.contains_edge(l1, l2) { 1.0 } else { 0.0 }
    })?;
    let matched = analogy.matched();
    let fraction = |h: &HigherObject<()>| {
        if h.constituents.is_empty() {
            0.0
        } else {
            h.constituents.iter().filter(|l| matched.contains(l)).count() as f64 / h.constituents.len() as f64
        }
    };
    let m_k = objects[..outer_id].iter().map(fraction).fold(1.0, f64::min);
    // Outer constituents only pair with inner curves in `g_h`.
    let m_l = fraction(&objects[outer_id]);

    let t_inner = inner.iter().map(|&c| set.curves[c].threshold).fold(f64::INFINITY, f64::min);
    let t_outer = outer.iter().map(|&c| set.curves[c].threshold).fold(f64::NEG_INFINITY, f64::max);
    let centres: Vec<Point2> = inner.iter().map(|&c| set.curves[c].centre(leaves)).collect();
    let mut vertex_owner = Vec::new();
    let mut vertices = Vec::new();
    for (slot, &c) in inner.iter().enumerate() {
        vertices.extend_from_slice(&set.curves[c].polygon);
        vertex_owner.extend(std::iter::repeat(slot).take(set.curves[c].polygon.len()));
    }
    let index = PointIndex::new(&vertices);
    let outer_boxes: Vec<Rect> = outer.iter().map(|&c| curves_region(set, &[c])).collect();
    let mut angles: Vec<Vec<f64>> = vec![Vec::new(); inner.len()];
    for &(p, v) in raw_samples.samples() {
        if !(v > t_outer && v < t_inner) {
            continue;
        }
        let inside = outer
            .iter()
            .zip(&outer_boxes)
            .any(|(&c, b)| b.contains(&p) && point_in_polygon(&p, &set.curves[c].polygon).unwrap_or(false));
        if !inside {
            continue;
        }
        // Each separating sample counts toward the inner curve it is closest to.
        let slot = match index.nearest(&p) {
            Some((i, _)) => vertex_owner[i],
            None => 0,
        };
        let c = centres[slot];
        if p != c {
            angles[slot].push((p.y - c.y).atan2(p.x - c.x));
        }
    }
    let theta_kl = angles.iter_mut().map(|a| max_angular_gap(a)).fold(0.0, f64::max);
    Ok(CurveCorrespondence { m_k, m_l, theta_kl })
}

/// Largest cyclic gap between sorted angles; `2*pi` when there are none.
fn max_angular_gap(angles: &mut [f64]) -> f64 {
    if angles.is_empty() {
        return TAU;
    }
    angles.sort_by(f64::total_cmp);
    let mut gap = angles[0] + TAU - angles[angles.len() - 1];
    for w in angles.windows(2) {
        gap = gap.max(w[1] - w[0]);
    }
    gap
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum TreeChild {
    Leaf(usize),
    Node(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeNode {
    pub members: Vec<usize>,
    pub level: f64,
    pub level_index: usize,
    pub children: Vec<TreeChild>,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergePair {
    pub i: usize,
    pub j: usize,
    pub level: f64,
    pub level_index: usize,
    pub confidence: f64,
}

/// Eigenvalue leaves at the bottom, merge events above, ordered by level.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MergeTree {
    pub leaves: Vec<Point2>,
    pub nodes: Vec<MergeNode>,
}

impl MergeTree {
    /// Merge level of every pair that merges, read off at the lowest
    /// common ancestor.
    pub fn pairs(&self) -> Vec<MergePair> {
        let mut out = Vec::new();
        for i in 0..self.leaves.len() {
            for j in i + 1..self.leaves.len() {
                if let Some(n) = self.lca(i, j) {
                    out.push(MergePair {
                        i,
                        j,
                        level: n.level,
                        level_index: n.level_index,
                        confidence: n.confidence,
                    });
                }
            }
        }
        out
    }

    pub fn lca(&self, i: usize, j: usize) -> Option<&MergeNode> {
        // Nodes are created in order of increasing perturbation.
        self.nodes
            .iter()
            .find(|n| n.members.binary_search(&i).is_ok() && n.members.binary_search(&j).is_ok())
    }

    pub fn confidence(&self) -> f64 {
        self.nodes.iter().map(|n| n.confidence).fold(1.0, f64::min)
    }
}

/// A correspondence between a merge curve and the curves it absorbed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub level_index: usize,
    pub members: Vec<usize>,
    pub correspondence: Option<CurveCorrespondence>,
    pub score: f64,
    pub weak: bool,
    /// Some involved curve runs into the sampled boundary.
    pub clipped: bool,
    /// Bounding box of the curves involved.
    pub region: Rect,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    pub links: Vec<LinkReport>,
    pub unresolved: Vec<(usize, usize)>,
}

impl TrackReport {
    pub fn weak_links(&self) -> impl Iterator<Item = &LinkReport> {
        self.links.iter().filter(|l| l.weak)
    }
}

/// Curves grouped by level; each group is a maximal enclosed leaf set.
struct Group {
    leaves: Vec<usize>,
    curves: Vec<usize>,
    clipped: bool,
}

fn level_groups(set: &CurveSet, level_index: usize) -> Vec<Group> {
    let mine: Vec<usize> = (0..set.curves.len()).filter(|&c| set.curves[c].level_index == level_index).collect();
    let sets: Vec<&Vec<usize>> = mine.iter().map(|&c| &set.curves[c].enclosed_eigenvalues).collect();
    let mut groups: Vec<Group> = Vec::new();
    for (ci, &c) in mine.iter().enumerate() {
        let s = sets[ci];
        let dominated = sets.iter().any(|t| t.len() > s.len() && s.iter().all(|x| t.binary_search(x).is_ok()));
        if dominated {
            continue;
        }
        let clipped = !set.curves[c].closed;
        match groups.iter_mut().find(|g| &g.leaves == s) {
            Some(g) => {
                g.curves.push(c);
                g.clipped |= clipped;
            }
            None => groups.push(Group {
                leaves: s.clone(),
                curves: vec![c],
                clipped,
            }),
        }
    }
    groups
}

fn curves_region(set: &CurveSet, curves: &[usize]) -> Rect {
    let pts: Vec<Point2> = curves.iter().flat_map(|&c| set.curves[c].polygon.iter().copied()).collect();
    Rect::bounding(&pts).unwrap_or(Rect::new(0.0, 0.0, 0.0, 0.0))
}

/// Builds the merge tree by walking levels from the smallest perturbation
/// outward. Leaves `i` and `j` merge at the first level with a curve
/// enclosing both; each merge is scored against the curves it absorbed one
/// level earlier.
pub fn track_merges(
    set: &CurveSet,
    raw_samples: &Field,
    leaves: &[Point2],
    config: &PortraitConfig,
) -> Result<(MergeTree, TrackReport), PortraitError> {
    let n = leaves.len();
    let n_levels = config.levels.len();
    let mut tree = MergeTree {
        leaves: leaves.to_vec(),
        nodes: Vec::new(),
    };
    let mut report = TrackReport::default();
    // Current root of each leaf.
    let mut root: Vec<TreeChild> = (0..n).map(TreeChild::Leaf).collect();
    let mut prev_groups: Option<Vec<Group>> = None;
    // Pairs whose separation was only observed between two clipped regions.
    let mut clipped_apart: BTreeSet<(usize, usize)> = BTreeSet::new();

    let members = |tree: &MergeTree, r: TreeChild| -> Vec<usize> {
        match r {
            TreeChild::Leaf(i) => vec![i],
            TreeChild::Node(k) => tree.nodes[k].members.clone(),
        }
    };
    let confidence = |tree: &MergeTree, r: TreeChild| match r {
        TreeChild::Leaf(_) => 1.0,
        TreeChild::Node(k) => tree.nodes[k].confidence,
    };

    for level_index in (0..n_levels).rev() {
        let groups = level_groups(set, level_index);

        // Partition of current roots induced by this level's groups.
        let roots: Vec<TreeChild> = {
            let mut r: Vec<TreeChild> = root.clone();
            r.sort_by_key(|c| match c {
                TreeChild::Leaf(i) => (0, *i),
                TreeChild::Node(k) => (1, *k),
            });
            r.dedup();
            r
        };
        let root_pos = |r: TreeChild| roots.iter().position(|&x| x == r).unwrap();
        let mut uf = sal::UnionFind::new(roots.len());
        let mut root_groups: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); roots.len()];
        for (gi, g) in groups.iter().enumerate() {
            for w in g.leaves.windows(2) {
                uf.union(root_pos(root[w[0]]), root_pos(root[w[1]]));
            }
            for &l in &g.leaves {
                root_groups[root_pos(root[l])].insert(gi);
            }
        }
        for (gi, g) in groups.iter().enumerate() {
            for h in groups.iter().skip(gi + 1).filter(|h| g.clipped && h.clipped) {
                for &a in &g.leaves {
                    for &b in &h.leaves {
                        clipped_apart.insert((a.min(b), a.max(b)));
                    }
                }
            }
        }

        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for r in 0..roots.len() {
            by_class.entry(uf.find(r)).or_default().push(r);
        }
        for class in by_class.values() {
            let class_groups: BTreeSet<usize> = class.iter().flat_map(|&r| root_groups[r].iter().copied()).collect();
            // A root whose leaves are split or partly unseen breaks nesting.
            let inconsistent = class.iter().any(|&r| {
                let m = members(&tree, roots[r]);
                root_groups[r].len() > 1
                    || m.iter().any(|l| !class_groups.iter().any(|&g| groups[g].leaves.binary_search(l).is_ok()))
            }) && !class_groups.is_empty();
            if class.len() < 2 && !inconsistent {
                continue;
            }
            let outer_curves: Vec<usize> = class_groups.iter().flat_map(|&g| groups[g].curves.iter().copied()).collect();
            let mut merged: Vec<usize> = class.iter().flat_map(|&r| members(&tree, roots[r])).collect();
            merged.sort_unstable();

            // Curves of each absorbed root one level earlier.
            let mut inner_curves = Vec::new();
            let mut missing = inconsistent;
            if level_index + 1 < n_levels {
                let prev = prev_groups.as_ref().unwrap();
                for &r in class {
                    let m = members(&tree, roots[r]);
                    match prev.iter().find(|g| g.leaves == m) {
                        Some(g) => inner_curves.extend(g.curves.iter().copied()),
                        None => missing = true,
                    }
                }
            }
            let (corr, score) = if level_index + 1 == n_levels && !inconsistent {
                (None, 1.0)
            } else if missing || outer_curves.is_empty() {
                (None, 0.0)
            } else {
                let c = curve_correspondence(set, &inner_curves, &outer_curves, raw_samples, leaves)?;
                (Some(c), c.score(config.theta_max))
            };
            let weak = match corr {
                Some(c) => c.is_weak(config),
                None => score == 0.0,
            };
            let mut involved = outer_curves.clone();
            involved.extend(&inner_curves);
            report.links.push(LinkReport {
                level_index,
                members: merged.clone(),
                correspondence: corr,
                score,
                weak,
                clipped: involved.iter().any(|&c| !set.curves[c].closed),
                region: curves_region(set, &involved),
            });
            if class.len() < 2 {
                continue;
            }
            let node_conf = class.iter().map(|&r| confidence(&tree, roots[r])).fold(score, f64::min);
            tree.nodes.push(MergeNode {
                members: merged.clone(),
                level: config.levels[level_index],
                level_index,
                children: class.iter().map(|&r| roots[r]).collect(),
                confidence: node_conf,
            });
            let id = TreeChild::Node(tree.nodes.len() - 1);
            for &l in &merged {
                root[l] = id;
            }
        }
        prev_groups = Some(groups);
    }

    for i in 0..n {
        for j in i + 1..n {
            if root[i] != root[j] || clipped_apart.contains(&(i, j)) {
                report.unresolved.push((i, j));
            }
        }
    }
    Ok((tree, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsampleRegion {
    pub region: Rect,
    pub spacing: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum SamplingAction {
    ExpandGrid { bounds: Rect },
    Subsample { regions: Vec<SubsampleRegion> },
    Done,
}

/// Everything `refine` needs about the current round.
#[derive(Clone, Debug)]
pub struct RoundState {
    pub bounds: Rect,
    pub base_spacing: f64,
    pub patches: Vec<SubsampleRegion>,
    pub report: TrackReport,
    pub refinements_used: usize,
    /// Links (level index, members) whose match fraction did not improve
    /// when their region was last subsampled. Their match deficit no
    /// longer triggers refinement; an angular gap still does.
    pub settled: Vec<(usize, Vec<usize>)>,
}

impl RoundState {
    fn local_spacing(&self, r: &Rect) -> f64 {
        self.patches
            .iter()
            .filter(|p| intersects(&p.region, r))
            .map(|p| p.spacing)
            .fold(self.base_spacing, f64::min)
    }
}

fn intersects(a: &Rect, b: &Rect) -> bool {
    a.x_min <= b.x_max && b.x_min <= a.x_max && a.y_min <= b.y_max && b.y_min <= a.y_max
}

impl LinkReport {
    fn key(&self) -> (usize, Vec<usize>) {
        (self.level_index, self.members.clone())
    }

    fn min_match(&self) -> Option<f64> {
        self.correspondence.map(|c| c.m_k.min(c.m_l))
    }
}

/// Chooses the next sampling action: expand while any pair is unresolved
/// or a weak correspondence runs into the boundary, otherwise subsample
/// around every weak correspondence that sampling can still improve.
pub fn refine(state: &RoundState, config: &PortraitConfig) -> Result<SamplingAction, PortraitError> {
    let weak: Vec<&LinkReport> = state
        .report
        .weak_links()
        .filter(|l| match l.correspondence {
            Some(c) => c.theta_kl > config.theta_max || !state.settled.contains(&l.key()),
            None => true,
        })
        .collect();
    let action = if !state.report.unresolved.is_empty() || weak.iter().any(|l| l.clipped) {
        SamplingAction::ExpandGrid {
            bounds: state.bounds.expanded(config.margin),
        }
    } else if !weak.is_empty() {
        let min_spacing = state.base_spacing / f64::from(1u32 << MAX_DEPTH);
        let mut regions: Vec<SubsampleRegion> = Vec::new();
        for link in weak {
            let local = state.local_spacing(&link.region);
            let spacing = local / 2.0;
            if spacing < min_spacing {
                continue;
            }
            let region = clip(&link.region.expanded(local), &state.bounds);
            if !regions.iter().any(|r| r.spacing == spacing && contains_rect(&r.region, &region)) {
                regions.push(SubsampleRegion { region, spacing });
            }
        }
        if regions.is_empty() {
            return Err(PortraitError::BudgetExceeded {
                budget: config.max_refinements,
                unresolved: 0,
                weak: state.report.weak_links().count(),
            });
        }
        SamplingAction::Subsample { regions }
    } else {
        return Ok(SamplingAction::Done);
    };
    if state.refinements_used >= config.max_refinements {
        return Err(PortraitError::BudgetExceeded {
            budget: config.max_refinements,
            unresolved: state.report.unresolved.len(),
            weak: state.report.weak_links().count(),
        });
    }
    Ok(action)
}

fn clip(r: &Rect, bounds: &Rect) -> Rect {
    Rect::new(
        r.x_min.max(bounds.x_min),
        r.x_max.min(bounds.x_max),
        r.y_min.max(bounds.y_min),
        r.y_max.min(bounds.y_max),
    )
}

fn contains_rect(outer: &Rect, inner: &Rect) -> bool {
    outer.x_min <= inner.x_min && outer.x_max >= inner.x_max && outer.y_min <= inner.y_min && outer.y_max >= inner.y_max
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub round: usize,
    pub action: SamplingAction,
    pub samples_added: usize,
    pub samples_total: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortraitStatus {
    Confident,
    BudgetExhausted,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PortraitAnalysis {
    pub eigenvalues: Vec<Complex64>,
    /// Computed eigenvalue indices grouped into each leaf.
    pub leaf_members: Vec<Vec<usize>>,
    pub tree: MergeTree,
    pub curves: Vec<LevelCurve>,
    pub report: TrackReport,
    pub audit: Vec<AuditEntry>,
    pub initial_samples: usize,
    pub samples_used: usize,
    pub bounds: Rect,
    pub base_spacing: f64,
    pub expansions: usize,
    pub subsamples: usize,
    pub dropped_classes: usize,
    pub status: PortraitStatus,
}

/// Clusters computed eigenvalues that agree to within `tol`, ordered by
/// real then imaginary part of the centroid.
pub fn eigenvalue_leaves(values: &[Complex64], tol: f64) -> (Vec<Point2>, Vec<Vec<usize>>) {
    let pts: Vec<Point2> = values.iter().map(|z| Point2::new(z.re, z.im)).collect();
    let mut uf = sal::UnionFind::new(pts.len());
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            if pts[i].dist(&pts[j]) <= tol {
                uf.union(i, j);
            }
        }
    }
    let mut clusters: Vec<(Point2, Vec<usize>)> = uf
        .classes()
        .into_iter()
        .map(|c| (centroid(c.iter().map(|&i| pts[i])), c))
        .collect();
    clusters.sort_by(|a, b| a.0.x.total_cmp(&b.0.x).then(a.0.y.total_cmp(&b.0.y)));
    clusters.into_iter().unzip()
}

/// Lattice sample store shared across rounds.
struct Sampler<'a> {
    map: &'a PortraitMap,
    unit: f64,
    base_step: i64,
    bounds: Rect,
    patches: Vec<SubsampleRegion>,
    values: BTreeMap<(i64, i64), f64>,
    leaves: Vec<Point2>,
    leaf_values: Vec<f64>,
    polish_cache: std::sync::Mutex<HashMap<(SampleKey, SampleKey, usize), f64>>,
}

impl<'a> Sampler<'a> {
    fn lattice_keys(&self, r: &Rect, step: i64) -> Vec<(i64, i64)> {
        let s = step as f64 * self.unit;
        let (x0, x1) = ((r.x_min / s - 1e-9).ceil() as i64, (r.x_max / s + 1e-9).floor() as i64);
        let (y0, y1) = ((r.y_min / s - 1e-9).ceil() as i64, (r.y_max / s + 1e-9).floor() as i64);
        let mut keys = Vec::new();
        for iy in y0..=y1 {
            for ix in x0..=x1 {
                keys.push((ix * step, iy * step));
            }
        }
        keys
    }

    fn point(&self, key: (i64, i64)) -> Point2 {
        Point2::new(key.0 as f64 * self.unit, key.1 as f64 * self.unit)
    }

    /// Evaluates every lattice point required by the bounds and patches.
    fn fill(&mut self) -> Result<usize, PortraitError> {
        let mut wanted: BTreeSet<(i64, i64)> = self.lattice_keys(&self.bounds, self.base_step).into_iter().collect();
        for p in &self.patches {
            let step = (p.spacing / self.unit).round() as i64;
            wanted.extend(self.lattice_keys(&p.region, step.max(1)));
        }
        let missing: Vec<(i64, i64)> = wanted.into_iter().filter(|k| !self.values.contains_key(k)).collect();
        let pts: Vec<Point2> = missing.iter().map(|&k| self.point(k)).collect();
        let vals = evaluate_all(self.map, &pts)?;
        for (k, v) in missing.iter().zip(vals) {
            self.values.insert(*k, v);
        }
        Ok(missing.len())
    }

    fn field(&self) -> Result<Field, PortraitError> {
        let samples = self.values.iter().map(|(&k, &v)| (self.point(k), v)).collect();
        Ok(Field::new(samples)?)
    }

    fn contour_samples(&self, thresholds: &[f64]) -> Vec<ContourSample> {
        let mut samples: Vec<ContourSample> = self
            .values
            .iter()
            .map(|(&k, &value)| ContourSample {
                p: self.point(k),
                value,
                key: Some(SampleKey::Lattice(k.0, k.1)),
            })
            .collect();
        for (i, (&p, &value)) in self.leaves.iter().zip(&self.leaf_values).enumerate() {
            let on_lattice = {
                let kx = (p.x / self.unit).round() as i64;
                let ky = (p.y / self.unit).round() as i64;
                self.values.contains_key(&(kx, ky)) && self.point((kx, ky)) == p
            };
            if !on_lattice && self.bounds.contains(&p) {
                samples.push(ContourSample {
                    p,
                    value,
                    key: Some(SampleKey::Leaf(i)),
                });
            }
        }
        samples.extend(ring(&self.bounds, self.base_step as f64 * self.unit, 0.0));
        clamp_values(&mut samples, thresholds);
        samples
    }

    /// Root of `P - threshold` along the edge, by Illinois regula falsi
    /// (bisection while an endpoint is singular).
    fn polish(&self, a: &ContourSample, b: &ContourSample, threshold: f64, level: usize) -> Result<f64, PortraitError> {
        let (ka, kb) = (a.key.unwrap(), b.key.unwrap());
        let (first, second, flip) = if ka <= kb { (a, b, false) } else { (b, a, true) };
        let cache_key = (first.key.unwrap(), second.key.unwrap(), level);
        if let Some(&t) = self.polish_cache.lock().unwrap().get(&cache_key) {
            return Ok(if flip { 1.0 - t } else { t });
        }
        let true_value = |s: &ContourSample| match s.key.unwrap() {
            SampleKey::Lattice(x, y) => self.values[&(x, y)],
            SampleKey::Leaf(i) => self.leaf_values[i],
        };
        let (pa, pb) = (first.p, second.p);
        let eval = |t: f64| -> Result<f64, PortraitError> {
            let p = lerp(pa, pb, t);
            let z = Complex64::new(p.x, p.y);
            Ok(self.map.value(z).map_err(|source| PortraitError::Sample { z, source })? - threshold)
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        let (mut flo, mut fhi) = (true_value(first) - threshold, true_value(second) - threshold);
        let mut t = crossing_parameter(first.value, second.value, threshold).unwrap_or(0.5);
        let mut side = 0i8;
        for _ in 0..POLISH_MAX_ITER {
            let candidate = if flo.is_finite() && fhi.is_finite() && fhi != flo {
                (lo * fhi - hi * flo) / (fhi - flo)
            } else {
                0.5 * (lo + hi)
            };
            t = if candidate > lo && candidate < hi { candidate } else { 0.5 * (lo + hi) };
            let f = eval(t)?;
            if f.abs() <= POLISH_TOL || hi - lo < 1e-13 {
                break;
            }
            // Keep the bracket with opposite signs; halve the stale end.
            if (f < 0.0) == (flo < 0.0) {
                lo = t;
                flo = f;
                if side == -1 {
                    fhi *= 0.5;
                }
                side = -1;
            } else {
                hi = t;
                fhi = f;
                if side == 1 {
                    flo *= 0.5;
                }
                side = 1;
            }
        }
        self.polish_cache.lock().unwrap().insert(cache_key, t);
        Ok(if flip { 1.0 - t } else { t })
    }
}

/// Full ambiguity-directed merge analysis of a matrix portrait.
pub fn analyze_portrait(a: &DenseMatrix, config: &PortraitConfig) -> Result<PortraitAnalysis, PortraitError> {
    config.validate()?;
    let spectrum = eigenvalues(a)?;
    let scale = spectrum.values.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let (leaves, leaf_members) = eigenvalue_leaves(&spectrum.values, 1e-3 * scale);
    let map = PortraitMap::new(a)?;

    let min_gap = (0..leaves.len())
        .flat_map(|i| (i + 1..leaves.len()).map(move |j| (i, j)))
        .map(|(i, j)| leaves[i].dist(&leaves[j]))
        .fold(f64::INFINITY, f64::min);
    let h0 = config.initial_resolution.unwrap_or_else(|| (0.5 * round_sig(min_gap, 3)).min(0.5));
    let leaf_box = Rect::bounding(&leaves).expect("a square matrix has eigenvalues");
    let bounds = snap_out(&leaf_box.expanded(config.margin), h0);
    let unit = h0 / f64::from(1u32 << MAX_DEPTH);
    let leaf_values = leaves
        .iter()
        .map(|p| {
            let z = Complex64::new(p.x, p.y);
            map.value(z).map_err(|source| PortraitError::Sample { z, source })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut sampler = Sampler {
        map: &map,
        unit,
        base_step: 1 << MAX_DEPTH,
        bounds,
        patches: Vec::new(),
        values: BTreeMap::new(),
        leaves: leaves.clone(),
        leaf_values,
        polish_cache: Default::default(),
    };
    let initial_samples = sampler.fill()?;
    let thresholds = config.thresholds();
    let mut audit: Vec<AuditEntry> = Vec::new();
    let (mut expansions, mut subsamples) = (0, 0);
    let mut stalled = false;
    let mut settled: Vec<(usize, Vec<usize>)> = Vec::new();
    // Minimum match fraction of each match-deficient link at the last subsample.
    let mut pending: Vec<((usize, Vec<usize>), f64)> = Vec::new();

    loop {
        let samples = sampler.contour_samples(&thresholds);
        let place = |i: usize, j: usize, k: usize| sampler.polish(&samples[i], &samples[j], thresholds[k], k);
        let set = contour(&samples, &config.levels, &thresholds, &leaves, &place)?;
        let (tree, report) = track_merges(&set, &sampler.field()?, &leaves, config)?;
        for (key, before) in pending.drain(..) {
            let after = report.links.iter().find(|l| l.key() == key).and_then(LinkReport::min_match);
            if after.is_some_and(|m| m < before + MATCH_GAIN) {
                settled.push(key);
            }
        }
        let state = RoundState {
            bounds: sampler.bounds,
            base_spacing: h0,
            patches: sampler.patches.clone(),
            report,
            refinements_used: audit.len(),
            settled: settled.clone(),
        };
        let next = if stalled {
            Err(PortraitStatus::BudgetExhausted)
        } else {
            match refine(&state, config) {
                Ok(SamplingAction::Done) => Err(PortraitStatus::Confident),
                Ok(action) => Ok(action),
                Err(PortraitError::BudgetExceeded { .. }) => Err(PortraitStatus::BudgetExhausted),
                Err(e) => return Err(e),
            }
        };
        let action = match next {
            Ok(action) => action,
            Err(status) => {
                return Ok(PortraitAnalysis {
                    eigenvalues: spectrum.values,
                    leaf_members,
                    tree,
                    curves: set.curves,
                    report: state.report,
                    audit,
                    initial_samples,
                    samples_used: sampler.values.len(),
                    bounds: sampler.bounds,
                    base_spacing: h0,
                    expansions,
                    subsamples,
                    dropped_classes: set.dropped,
                    status,
                })
            }
        };
        match &action {
            SamplingAction::ExpandGrid { bounds } => {
                sampler.bounds = snap_out(bounds, h0);
                expansions += 1;
            }
            SamplingAction::Subsample { regions } => {
                sampler.patches.extend(regions.iter().cloned());
                subsamples += 1;
                pending = state
                    .report
                    .weak_links()
                    .filter(|l| !settled.contains(&l.key()))
                    .filter_map(|l| l.min_match().filter(|&m| m < config.match_min).map(|m| (l.key(), m)))
                    .collect();
            }
            SamplingAction::Done => unreachable!(),
        }
        let added = sampler.fill()?;
        stalled = added == 0;
        audit.push(AuditEntry {
            round: audit.len() + 1,
            action,
            samples_added: added,
            samples_total: sampler.values.len(),
        });
    }
}

/// Smallest lattice-aligned rectangle covering `r`, ignoring overshoot
/// below one part in a million of a spacing.
fn snap_out(r: &Rect, h: f64) -> Rect {
    const SLACK: f64 = 1e-6;
    Rect::new(
        (r.x_min / h + SLACK).floor() * h,
        (r.x_max / h - SLACK).ceil() * h,
        (r.y_min / h + SLACK).floor() * h,
        (r.y_max / h - SLACK).ceil() * h,
    )
}

/// `x` rounded to `digits` significant digits.
fn round_sig(x: f64, digits: i32) -> f64 {
    if !(x.is_finite() && x > 0.0) {
        return x;
    }
    let scale = 10f64.powi(digits - 1 - x.log10().floor() as i32);
    (x * scale).round() / scale
}
