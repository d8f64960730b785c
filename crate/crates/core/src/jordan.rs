//! Jordan block detection from superimposed perturbed spectra.
//!
//! Computed eigenvalues of a randomly perturbed matrix scatter around a
//! defective eigenvalue on the vertices of a regular `2ρ`-gon. Each
//! perturbation level yields a cloud; congruent triangles in the cloud
//! propose rotations, rotations are scored against the cloud, and models
//! from all levels are clustered into one `(λ, ρ)` estimate.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{convex_hull, orient, point_in_polygon, Point2, PointIndex, Rect};
use crate::numkernel::{eigenvalues, inf_norm, DenseMatrix, NumError};

/// Most triangles kept per cloud.
pub const MAX_TRIANGLES: usize = 5000;
/// Qualifying triples are listed exhaustively up to this count and drawn
/// by rejection beyond it.
const ENUMERATE_LIMIT: usize = 200_000;
/// Most congruent pairs kept per call to [`congruent_pairs`].
pub const MAX_PAIRS: usize = 4000;
/// Rotations below this angle (radians) are treated as identity.
pub const ANGLE_FLOOR: f64 = 0.05;
/// Allowed distance of `π/θ` from an integer.
pub const RHO_GATE: f64 = 0.15;
/// Clusters with equal `ρ` whose centres lie within this many clustering
/// scales give the same answer.
pub const ANSWER_RADIUS: f64 = 10.0;
/// Spatial clustering scale as a fraction of the cloud's RMS radius.
pub const SPREAD_FRACTION: f64 = 0.1;
/// Clustering scale on the angle axis (radians).
pub const THETA_SCALE: f64 = 0.1;
/// Entropy (bits) of the cluster scores above which the evidence is
/// ambiguous.
pub const ENTROPY_LIMIT: f64 = 0.9;
/// A coarser symmetry is folded into a finer one at the same centre when
/// the finer cluster scores at least this fraction of it.
pub const SUBSUME_RATIO: f64 = 0.05;

#[derive(Debug, Error)]
pub enum JordanError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot perturb a zero matrix")]
    ZeroMatrix,
    #[error("round size {0} outside [6, 8]")]
    RoundSize(usize),
    #[error("only {ok} of {count} trials succeeded")]
    Trials { ok: usize, count: usize },
    #[error("empty sample cloud")]
    EmptyCloud,
    #[error("rotation angle {0} below the identity floor")]
    DegenerateRotation(f64),
    #[error("no structure detected")]
    NoStructure,
    #[error("region contains no eigenvalue of the matrix")]
    EmptyRegion,
}

/// Where the next round is collected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    SameLevel,
    HigherLevel,
    SameUnlessHallucinating,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JordanConfig {
    /// Perturbation magnitude at level `i` is `2^(1 - δ_i) ||A||_inf`.
    pub delta_exponents: Vec<u32>,
    pub region: Rect,
    pub round_size: usize,
    pub tolerance: f64,
    pub rho_max: usize,
    pub policy: Policy,
    pub max_rounds: usize,
    pub rng_seed: u64,
}

impl JordanConfig {
    pub fn new(region: Rect, delta_exponents: Vec<u32>, rng_seed: u64) -> Self {
        Self {
            delta_exponents,
            region,
            round_size: 6,
            tolerance: 0.1,
            rho_max: 8,
            policy: Policy::SameLevel,
            max_rounds: 10,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<(), JordanError> {
        let bad = |m: &str| Err(JordanError::Config(m.to_string()));
        if self.delta_exponents.is_empty() {
            return bad("delta_exponents must be nonempty");
        }
        if self.delta_exponents.iter().collect::<BTreeSet<_>>().len() != self.delta_exponents.len() {
            return bad("delta_exponents must be distinct");
        }
        if !(6..=8).contains(&self.round_size) {
            return Err(JordanError::RoundSize(self.round_size));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return bad("tolerance must lie in (0, 1)");
        }
        if self.rho_max == 0 || self.max_rounds == 0 {
            return bad("rho_max and max_rounds must be positive");
        }
        if !self.region.is_valid() {
            return bad("region must be a finite, nonempty rectangle");
        }
        Ok(())
    }

    /// Level the first round is collected at: the median exponent.
    pub fn start_level(&self) -> usize {
        let mut order: Vec<usize> = (0..self.delta_exponents.len()).collect();
        order.sort_by_key(|&i| self.delta_exponents[i]);
        order[order.len() / 2]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleCloud {
    pub delta_index: usize,
    pub points: Vec<Point2>,
}

/// Adds `±2^(1 - δ) ||a||_inf` to every entry, each sign drawn
/// independently.
pub fn perturb(a: &DenseMatrix, delta_exp: u32, rng: &mut impl Rng) -> Result<DenseMatrix, JordanError> {
    let norm = inf_norm(a);
    if norm == 0.0 {
        return Err(JordanError::ZeroMatrix);
    }
    let s = (1.0 - f64::from(delta_exp)).exp2() * norm;
    let entries = a
        .entries()
        .iter()
        .map(|&z| if rng.random::<bool>() { z + s } else { z - s })
        .collect();
    Ok(DenseMatrix::new(a.rows(), a.cols(), entries)?)
}

/// Points gathered by one round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundSample {
    pub points: Vec<Point2>,
    pub trials: usize,
    pub failed: usize,
}

/// Runs `count` perturb-and-solve trials and keeps eigenvalues inside
/// `region`. Each trial draws its own stream seed from `rng` up front, so
/// the result does not depend on scheduling.
pub fn collect_round(
    a: &DenseMatrix,
    delta_exp: u32,
    count: usize,
    region: &Rect,
    rng: &mut impl Rng,
) -> Result<RoundSample, JordanError> {
    if !(6..=8).contains(&count) {
        return Err(JordanError::RoundSize(count));
    }
    if inf_norm(a) == 0.0 {
        return Err(JordanError::ZeroMatrix);
    }
    let seeds: Vec<u64> = (0..count).map(|_| rng.random()).collect();
    let trials: Vec<Option<Vec<Point2>>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut trial_rng = ChaCha8Rng::seed_from_u64(seed);
            let p = perturb(a, delta_exp, &mut trial_rng).ok()?;
            let spectrum = eigenvalues(&p).ok()?;
            Some(
                spectrum
                    .values
                    .iter()
                    .map(|z| Point2::new(z.re, z.im))
                    .filter(|q| region.contains(q))
                    .collect(),
            )
        })
        .collect();
    let failed = trials.iter().filter(|t| t.is_none()).count();
    // One failed solve is tolerated per round.
    if failed > 1 {
        return Err(JordanError::Trials { ok: count - failed, count });
    }
    Ok(RoundSample {
        points: trials.into_iter().flatten().flatten().collect(),
        trials: count,
        failed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Triangle {
    /// Cloud indices, counterclockwise (input order if collinear).
    pub vertices: [usize; 3],
    /// Length of the side opposite each vertex.
    pub opposite: [f64; 3],
    pub sorted_sides: [f64; 3],
}

impl Triangle {
    fn new(points: &[Point2], v: [usize; 3]) -> Self {
        let [a, b, c] = v;
        let v = if orient(&points[a], &points[b], &points[c]) < 0.0 { [a, c, b] } else { v };
        let p = |i: usize| points[v[i]];
        let opposite = [p(1).dist(&p(2)), p(2).dist(&p(0)), p(0).dist(&p(1))];
        let mut sorted_sides = opposite;
        sorted_sides.sort_by(f64::total_cmp);
        Self {
            vertices: v,
            opposite,
            sorted_sides,
        }
    }

    fn is_collinear(&self, points: &[Point2]) -> bool {
        let [a, b, c] = self.vertices;
        orient(&points[a], &points[b], &points[c]) == 0.0
    }
}

/// Indices on the hull boundary: hull vertices plus points lying on a hull
/// edge. A collinear cloud is all boundary.
fn hull_boundary(points: &[Point2]) -> Vec<bool> {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return vec![true; points.len()];
    }
    points
        .iter()
        .map(|p| {
            (0..hull.len()).any(|i| {
                let a = points[hull[i]];
                let b = points[hull[(i + 1) % hull.len()]];
                orient(&a, &b, p) == 0.0
                    && p.x >= a.x.min(b.x)
                    && p.x <= a.x.max(b.x)
                    && p.y >= a.y.min(b.y)
                    && p.y <= a.y.max(b.y)
            })
        })
        .collect()
}

/// Triples with at least two vertices on the hull boundary, capped at
/// [`MAX_TRIANGLES`] by a seeded uniform draw. Triples with a zero-length
/// side are skipped.
pub fn triangles_for(cloud: &SampleCloud, seed: u64) -> Vec<Triangle> {
    let pts = &cloud.points;
    if pts.len() < 3 {
        return Vec::new();
    }
    let on_hull = hull_boundary(pts);
    let hull: Vec<usize> = (0..pts.len()).filter(|&i| on_hull[i]).collect();
    let degenerate = |t: &[usize; 3]| pts[t[0]] == pts[t[1]] || pts[t[1]] == pts[t[2]] || pts[t[0]] == pts[t[2]];
    let (h, n) = (hull.len(), pts.len());
    let total = h * h.saturating_sub(1) / 2 * (n - h) + h * h.saturating_sub(1) * h.saturating_sub(2) / 6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples: Vec<[usize; 3]> = Vec::new();
    if total <= ENUMERATE_LIMIT {
        for (x, &a) in hull.iter().enumerate() {
            for &b in &hull[x + 1..] {
                // All-hull triples are counted once, with c after b.
                triples.extend((0..n).filter(|&c| if on_hull[c] { c > b } else { true }).map(|c| [a, b, c]));
            }
        }
        triples.retain(|t| !degenerate(t));
        if triples.len() > MAX_TRIANGLES {
            let mut keep = sample(&mut rng, triples.len(), MAX_TRIANGLES).into_vec();
            keep.sort_unstable();
            triples = keep.into_iter().map(|i| triples[i]).collect();
        }
    } else {
        // Too many to list: draw qualifying triples uniformly by rejection.
        let mut chosen: BTreeSet<[usize; 3]> = BTreeSet::new();
        while chosen.len() < MAX_TRIANGLES {
            let mut t = sample(&mut rng, n, 3).into_vec();
            t.sort_unstable();
            let t = [t[0], t[1], t[2]];
            if t.iter().filter(|&&i| on_hull[i]).count() >= 2 && !degenerate(&t) {
                chosen.insert(t);
            }
        }
        triples = chosen.into_iter().collect();
    }
    triples.into_iter().map(|t| Triangle::new(pts, t)).collect()
}

/// Two congruent triangles and the vertex analogy between them: vertex
/// `vertices[i]` of `t_j` corresponds to `analogy[i]` in the cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrianglePair {
    pub j: usize,
    pub k: usize,
    pub from: [usize; 3],
    pub to: [usize; 3],
}

/// Difference relative to the smaller length.
fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.min(b)
    }
}

/// Best orientation-preserving vertex map from `s` onto `t`, if every
/// side matches within `tol`. Collinear triangles also admit the reversed
/// maps, since a half-turn reverses them.
fn align(s: &Triangle, t: &Triangle, tol: f64, allow_reverse: bool) -> Option<[usize; 3]> {
    let mut best: Option<(f64, [usize; 3])> = None;
    let mut maps: Vec<[usize; 3]> = (0..3).map(|k| [k, (k + 1) % 3, (k + 2) % 3]).collect();
    if allow_reverse {
        maps.extend((0..3).map(|k| [k, (k + 2) % 3, (k + 1) % 3]));
    }
    for m in maps {
        let worst = (0..3).map(|i| rel_diff(s.opposite[i], t.opposite[m[i]])).fold(0.0, f64::max);
        if worst <= tol && best.is_none_or(|(b, _)| worst < b) {
            best = Some((worst, m));
        }
    }
    best.map(|(_, m)| m)
}

/// Congruent triangle pairs by geometric hashing on log side lengths.
///
/// Cells have width `ln(1 + tol)`, so any two triples whose sorted sides
/// agree within `tol` relative fall in neighbouring cells. Pairs sharing
/// two or more vertices are skipped. More than [`MAX_PAIRS`] matches are
/// thinned by a fixed stride.
pub fn congruent_pairs(triangles: &[Triangle], points: &[Point2], tol: f64) -> Vec<TrianglePair> {
    let width = tol.ln_1p();
    let key = |t: &Triangle| t.sorted_sides.map(|s| (s.ln() / width).floor() as i64);
    let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, t) in triangles.iter().enumerate() {
        cells.entry(key(t)).or_default().push(i);
    }
    let collinear: Vec<bool> = triangles.iter().map(|t| t.is_collinear(points)).collect();
    let mut pairs = Vec::new();
    for (j, tj) in triangles.iter().enumerate() {
        let kj = key(tj);
        let mut candidates: Vec<usize> = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(c) = cells.get(&[kj[0] + dx, kj[1] + dy, kj[2] + dz]) {
                        candidates.extend(c.iter().copied().filter(|&k| k > j));
                    }
                }
            }
        }
        candidates.sort_unstable();
        for k in candidates {
            let tk = &triangles[k];
            if (0..3).any(|i| rel_diff(tj.sorted_sides[i], tk.sorted_sides[i]) > tol) {
                continue;
            }
            let shared = tj.vertices.iter().filter(|v| tk.vertices.contains(v)).count();
            if shared >= 2 {
                continue;
            }
            if let Some(m) = align(tj, tk, tol, collinear[j] || collinear[k]) {
                pairs.push(TrianglePair {
                    j,
                    k,
                    from: tj.vertices,
                    to: m.map(|i| tk.vertices[i]),
                });
            }
        }
    }
    if pairs.len() > MAX_PAIRS {
        let stride = pairs.len().div_ceil(MAX_PAIRS);
        pairs = pairs.into_iter().step_by(stride).collect();
    }
    pairs
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationModel {
    pub x: f64,
    pub y: f64,
    /// Rotation angle folded into `(0, π]`.
    pub theta: f64,
    /// RMSD between the cloud and its rotated image.
    pub d: f64,
    /// Largest orbit regularity defect.
    pub r: f64,
    pub support: usize,
}

impl RotationModel {
    pub fn centre(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    /// Rotates `p` by `angle` about the model centre.
    pub fn rotate(&self, p: &Point2, angle: f64) -> Point2 {
        let (s, c) = angle.sin_cos();
        let (dx, dy) = (p.x - self.x, p.y - self.y);
        Point2::new(self.x + c * dx - s * dy, self.y + s * dx + c * dy)
    }

    pub fn rho(&self) -> usize {
        (PI / self.theta).round() as usize
    }
}

/// Least-squares rotation taking `from` onto `to`: centre and signed angle.
pub(crate) fn kabsch(from: &[Point2; 3], to: &[Point2; 3]) -> (Point2, f64) {
    let mean = |ps: &[Point2; 3]| Point2::new(ps.iter().map(|p| p.x).sum::<f64>() / 3.0, ps.iter().map(|p| p.y).sum::<f64>() / 3.0);
    let (cp, cq) = (mean(from), mean(to));
    let (mut dot, mut cross) = (0.0, 0.0);
    for (p, q) in from.iter().zip(to) {
        let (px, py, qx, qy) = (p.x - cp.x, p.y - cp.y, q.x - cq.x, q.y - cq.y);
        dot += px * qx + py * qy;
        cross += px * qy - py * qx;
    }
    let phi = cross.atan2(dot);
    let (s, c) = phi.sin_cos();
    // Centre solves (I - R) c = cq - R cp.
    let tx = cq.x - (c * cp.x - s * cp.y);
    let ty = cq.y - (s * cp.x + c * cp.y);
    let det = (1.0 - c) * (1.0 - c) + s * s;
    let centre = Point2::new(((1.0 - c) * tx - s * ty) / det, (s * tx + (1.0 - c) * ty) / det);
    (centre, phi)
}

/// Fits the rotation behind a congruent pair and measures it against the
/// cloud.
pub fn fit_rotation(pair: &TrianglePair, cloud: &SampleCloud) -> Result<RotationModel, JordanError> {
    if cloud.points.is_empty() {
        return Err(JordanError::EmptyCloud);
    }
    fit_with_index(pair, &cloud.points, &PointIndex::new(&cloud.points))
}

fn fit_with_index(pair: &TrianglePair, points: &[Point2], index: &PointIndex) -> Result<RotationModel, JordanError> {
    let (mut model, phi) = bare_rotation(pair, points)?;
    measure(&mut model, phi, pair, points, index);
    Ok(model)
}

/// Centre and folded angle only; `d` and `r` are left at zero.
fn bare_rotation(pair: &TrianglePair, points: &[Point2]) -> Result<(RotationModel, f64), JordanError> {
    let from = pair.from.map(|i| points[i]);
    let to = pair.to.map(|i| points[i]);
    let (centre, phi) = kabsch(&from, &to);
    if phi.abs() < ANGLE_FLOOR {
        return Err(JordanError::DegenerateRotation(phi.abs()));
    }
    let model = RotationModel {
        x: centre.x,
        y: centre.y,
        theta: phi.abs(),
        d: 0.0,
        r: 0.0,
        support: 1,
    };
    Ok((model, phi))
}

fn measure(model: &mut RotationModel, phi: f64, pair: &TrianglePair, points: &[Point2], index: &PointIndex) {
    let from = pair.from.map(|i| points[i]);
    let nearest = |p: &Point2| index.nearest(p).expect("cloud is nonempty");
    let sq: f64 = points.iter().map(|p| nearest(&model.rotate(p, phi)).1.powi(2)).sum();
    model.d = (sq / points.len() as f64).sqrt();
    model.r = from
        .iter()
        .map(|pa| {
            let pb = points[nearest(&model.rotate(pa, phi)).0];
            let pc = points[nearest(&model.rotate(&pb, phi)).0];
            (pa.dist(&pb) - pb.dist(&pc)).abs()
        })
        .fold(0.0, f64::max);
}

/// Median nearest-neighbour distance over points with a distinct
/// neighbour; zero if there is none.
pub fn cloud_scale(points: &[Point2]) -> f64 {
    let index = PointIndex::new(points);
    let mut d: Vec<f64> = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| index.nearest_where(p, |j| j != i && points[j] != *p).map(|(_, d)| d))
        .collect();
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

/// Spatial clustering scale of a cloud: [`SPREAD_FRACTION`] of its RMS
/// radius about the centroid.
pub fn cloud_spread(points: &[Point2]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let n = points.len() as f64;
    let c = Point2::new(points.iter().map(|p| p.x).sum::<f64>() / n, points.iter().map(|p| p.y).sum::<f64>() / n);
    SPREAD_FRACTION * (points.iter().map(|p| p.dist2(&c)).sum::<f64>() / n).sqrt()
}

/// Cached hull and scales of one cloud.
pub(crate) struct Scorer {
    hull: Vec<Point2>,
    scale: f64,
    spread: f64,
    rho_max: usize,
}

impl Scorer {
    pub(crate) fn new(points: &[Point2], rho_max: usize) -> Result<Self, JordanError> {
        if points.is_empty() {
            return Err(JordanError::EmptyCloud);
        }
        Ok(Self {
            hull: convex_hull(points).into_iter().map(|i| points[i]).collect(),
            scale: cloud_scale(points),
            spread: cloud_spread(points),
            rho_max,
        })
    }

    fn in_hull(&self, p: &Point2) -> bool {
        match self.hull.len() {
            1 => *p == self.hull[0],
            2 => {
                let (a, b) = (self.hull[0], self.hull[1]);
                let len = a.dist(&b);
                let t = ((p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y)) / (len * len);
                let foot = Point2::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
                (0.0..=1.0).contains(&t) && p.dist(&foot) <= 1e-9 * len
            }
            _ => point_in_polygon(p, &self.hull).unwrap_or(false),
        }
    }

    fn priors(&self, m: &RotationModel) -> bool {
        angle_prior(m.theta, self.rho_max) && self.in_hull(&m.centre())
    }

    fn score(&self, m: &RotationModel) -> f64 {
        if !self.priors(m) {
            return 0.0;
        }
        decay(m.d, self.scale) * decay(m.r, self.scale)
    }
}

fn decay(x: f64, scale: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if scale == 0.0 {
        0.0
    } else {
        (-x / scale).exp()
    }
}

fn angle_prior(theta: f64, rho_max: usize) -> bool {
    let ratio = PI / theta;
    let rho = ratio.round();
    (ratio - rho).abs() <= RHO_GATE && rho >= 1.0 && rho <= rho_max as f64
}

/// Confidence of a rotation model against its cloud: hull prior, angle
/// prior, and exponential penalties on `d` and `r` in units of the median
/// nearest-neighbour distance.
pub fn score_model(model: &RotationModel, cloud: &SampleCloud, config: &JordanConfig) -> Result<f64, JordanError> {
    Ok(Scorer::new(&cloud.points, config.rho_max)?.score(model))
}

/// A scored model tagged with the level it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredModel {
    pub level: usize,
    pub model: RotationModel,
    pub confidence: f64,
    /// Spatial clustering scale of the model's cloud.
    pub scale: f64,
}

/// Level-two output for one cloud: every congruent pair fitted and scored,
/// keeping models with positive confidence. Identical models (same centre
/// and angle) are merged into one with summed support.
pub fn level_models(cloud: &SampleCloud, config: &JordanConfig, seed: u64) -> Result<Vec<ScoredModel>, JordanError> {
    let triangles = triangles_for(cloud, seed);
    let pairs = congruent_pairs(&triangles, &cloud.points, config.tolerance);
    score_pairs(&pairs, cloud, config)
}

fn score_pairs(pairs: &[TrianglePair], cloud: &SampleCloud, config: &JordanConfig) -> Result<Vec<ScoredModel>, JordanError> {
    if cloud.points.is_empty() {
        return Ok(Vec::new());
    }
    let scorer = Scorer::new(&cloud.points, config.rho_max)?;
    let index = PointIndex::new(&cloud.points);
    let fitted: Vec<Option<ScoredModel>> = pairs
        .par_iter()
        .map(|pair| {
            // The priors need only the centre and angle; skip the cloud
            // comparison when they already rule the model out.
            let (mut model, phi) = bare_rotation(pair, &cloud.points).ok()?;
            if !scorer.priors(&model) {
                return None;
            }
            measure(&mut model, phi, pair, &cloud.points, &index);
            let confidence = scorer.score(&model);
            (confidence > 0.0).then_some(ScoredModel {
                level: cloud.delta_index,
                model,
                confidence,
                scale: scorer.spread,
            })
        })
        .collect();
    let mut merged: Vec<ScoredModel> = Vec::new();
    let mut seen: HashMap<[u64; 3], usize> = HashMap::new();
    for m in fitted.into_iter().flatten() {
        let key = [m.model.x.to_bits(), m.model.y.to_bits(), m.model.theta.to_bits()];
        match seen.get(&key) {
            Some(&i) => merged[i].model.support += 1,
            None => {
                seen.insert(key, merged.len());
                merged.push(m);
            }
        }
    }
    Ok(merged)
}

/// One cluster of models in `(x, y, θ)` space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCluster {
    pub members: Vec<usize>,
    pub levels: Vec<usize>,
    pub lambda: Point2,
    pub theta: f64,
    pub rho: usize,
    /// Product over contributing levels of the best confidence there.
    pub joint: f64,
    /// `joint^(1/levels)`.
    pub score: f64,
    pub support: usize,
    /// Index of the finer cluster this one was folded into.
    pub subsumed_by: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JordanEstimate {
    pub lambda: Point2,
    pub rho: usize,
    pub confidence: f64,
    pub joint: f64,
    pub rounds_used: usize,
    pub support: usize,
    pub entropy_bits: f64,
    pub high_entropy: bool,
    /// Set when the estimate was returned without meeting the stopping rule.
    pub low_confidence: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub estimate: JordanEstimate,
    pub winner: usize,
    pub clusters: Vec<ModelCluster>,
}

/// Single-linkage clustering of scored models, then model selection.
///
/// Two models link when their scaled distance
/// `sqrt((|Δc| / s)^2 + (Δθ / THETA_SCALE)^2)` is at most 1, with `s` the
/// larger of their cloud scales. Clusters whose `ρ` divides a finer
/// cluster's at the same centre are folded into it when the finer one
/// scores at least [`SUBSUME_RATIO`] of theirs. The winner has the highest
/// score; the entropy is taken over the distinct answers among the
/// remaining clusters.
pub fn cluster_estimates(models: &[ScoredModel]) -> Result<Clustering, JordanError> {
    if models.is_empty() {
        return Err(JordanError::NoStructure);
    }
    let parent = link_models(models);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for i in 0..models.len() {
        let root = find(&parent, i);
        let g = *slot.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }

    let mut clusters: Vec<ModelCluster> = groups
        .into_iter()
        .map(|members| {
            let avg = |set: &[usize], f: &dyn Fn(&ScoredModel) -> f64| {
                let w: f64 = set.iter().map(|&i| models[i].confidence).sum();
                set.iter().map(|&i| models[i].confidence * f(&models[i])).sum::<f64>() / w
            };
            let theta = avg(&members, &|m| m.model.theta);
            let levels: BTreeSet<usize> = members.iter().map(|&i| models[i].level).collect();
            let best: Vec<f64> = levels
                .iter()
                .map(|&l| members.iter().filter(|&&i| models[i].level == l).map(|&i| models[i].confidence).fold(0.0, f64::max))
                .collect();
            let joint: f64 = best.iter().product();
            // The centre comes from each level's best models only, so weaker
            // neighbours linked into the cluster do not pull it.
            let leaders: Vec<usize> = members
                .iter()
                .copied()
                .filter(|&i| levels.iter().zip(&best).any(|(&l, &b)| models[i].level == l && models[i].confidence == b))
                .collect();
            let lambda = Point2::new(avg(&leaders, &|m| m.model.x), avg(&leaders, &|m| m.model.y));
            let rho = ((PI / theta).round() as usize).max(1);
            let consistent = ((PI / theta) - rho as f64).abs() <= RHO_GATE;
            ModelCluster {
                support: members.iter().map(|&i| models[i].model.support).sum(),
                levels: levels.iter().copied().collect(),
                lambda,
                theta,
                rho,
                joint,
                score: if consistent { joint.powf(1.0 / levels.len() as f64) } else { 0.0 },
                members,
                subsumed_by: None,
            }
        })
        .collect();

    let reach = models.iter().map(|m| m.scale).fold(0.0, f64::max);
    let mut by_rho: Vec<usize> = (0..clusters.len()).collect();
    by_rho.sort_by(|&a, &b| clusters[b].rho.cmp(&clusters[a].rho).then(clusters[b].score.total_cmp(&clusters[a].score)).then(a.cmp(&b)));
    for (pos, &coarse) in by_rho.iter().enumerate() {
        let fine = by_rho[..pos].iter().copied().find(|&f| {
            let (cf, cc) = (&clusters[f], &clusters[coarse]);
            cf.subsumed_by.is_none()
                && cf.rho > cc.rho
                && cf.rho % cc.rho == 0
                && cf.lambda.dist(&cc.lambda) <= ANSWER_RADIUS * reach
                && cc.score > 0.0
                && cf.score >= SUBSUME_RATIO * cc.score
        });
        clusters[coarse].subsumed_by = fine;
    }

    let live: Vec<usize> = (0..clusters.len()).filter(|&c| clusters[c].subsumed_by.is_none() && clusters[c].score > 0.0).collect();
    let winner = *live
        .iter()
        .max_by(|&&a, &&b| {
            let (ca, cb) = (&clusters[a], &clusters[b]);
            ca.score
                .total_cmp(&cb.score)
                .then(ca.levels.len().cmp(&cb.levels.len()))
                .then(ca.support.cmp(&cb.support))
                .then(b.cmp(&a))
        })
        .ok_or(JordanError::NoStructure)?;
    // Clusters giving the same answer (equal ρ, nearby λ) count once, at
    // their best score.
    let mut answers: Vec<(usize, Point2, f64)> = Vec::new();
    let mut order = live.clone();
    order.sort_by(|&a, &b| clusters[b].score.total_cmp(&clusters[a].score).then(a.cmp(&b)));
    for c in order {
        let cl = &clusters[c];
        if !answers.iter().any(|&(rho, at, _)| rho == cl.rho && at.dist(&cl.lambda) <= ANSWER_RADIUS * reach) {
            answers.push((cl.rho, cl.lambda, cl.score));
        }
    }
    let total: f64 = answers.iter().map(|a| a.2).sum();
    let entropy_bits = -answers
        .iter()
        .map(|a| a.2 / total)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.log2())
        .sum::<f64>();
    let w = &clusters[winner];
    Ok(Clustering {
        estimate: JordanEstimate {
            lambda: w.lambda,
            rho: w.rho,
            confidence: w.score,
            joint: w.joint,
            rounds_used: 0,
            support: w.support,
            entropy_bits,
            high_entropy: entropy_bits > ENTROPY_LIMIT,
            low_confidence: false,
        },
        winner,
        clusters,
    })
}

fn find(parent: &[usize], mut i: usize) -> usize {
    while parent[i] != i {
        i = parent[i];
    }
    i
}

/// Union-find parents after linking every close pair, found through a
/// bucket grid in scaled `(x, y, θ)` space.
fn link_models(models: &[ScoredModel]) -> Vec<usize> {
    let reach = models.iter().map(|m| m.scale).fold(0.0, f64::max);
    let cell = |m: &ScoredModel| -> [i64; 3] {
        let s = if reach > 0.0 { reach } else { 1.0 };
        [(m.model.x / s).floor() as i64, (m.model.y / s).floor() as i64, (m.model.theta / THETA_SCALE).floor() as i64]
    };
    let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, m) in models.iter().enumerate() {
        buckets.entry(cell(m)).or_default().push(i);
    }
    let close = |a: &ScoredModel, b: &ScoredModel| {
        let s = a.scale.max(b.scale);
        let dc = a.model.centre().dist(&b.model.centre());
        let dt = (a.model.theta - b.model.theta) / THETA_SCALE;
        let dc = if s > 0.0 { dc / s } else if dc == 0.0 { 0.0 } else { f64::INFINITY };
        dc.hypot(dt) <= 1.0
    };
    let mut parent: Vec<usize> = (0..models.len()).collect();
    for (i, m) in models.iter().enumerate() {
        let c = cell(m);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(b) = buckets.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                        continue;
                    };
                    for &j in b.iter().filter(|&&j| j > i) {
                        if close(m, &models[j]) {
                            let (ri, rj) = (find(&parent, i), find(&parent, j));
                            if ri != rj {
                                parent[ri.max(rj)] = ri.min(rj);
                            }
                        }
                    }
                }
            }
        }
    }
    parent
}

/// Summary of one completed round, as seen by the policies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub delta_index: usize,
    pub delta_exponent: u32,
    pub trials: usize,
    pub failed_trials: usize,
    pub points_added: usize,
    pub cloud_size: usize,
    /// Models with positive confidence at this level after the round.
    pub models_posited: usize,
    pub estimate: Option<(Point2, usize, f64)>,
    pub entropy_bits: Option<f64>,
    pub decision: Option<Decision>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub next_level: usize,
    pub reason: DecisionReason,
    /// The policy asked to move but no level was left.
    pub flagged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionReason {
    Policy,
    Hallucination,
    OutlierLevel,
    NewLevel,
}

/// Level with the next larger perturbation (smaller exponent) than `from`.
fn larger_perturbation(config: &JordanConfig, from: usize) -> Option<usize> {
    let cur = config.delta_exponents[from];
    (0..config.delta_exponents.len())
        .filter(|&i| config.delta_exponents[i] < cur)
        .max_by_key(|&i| config.delta_exponents[i])
}

/// Picks the level of the next round from the policy.
pub fn next_action(history: &[RoundRecord], config: &JordanConfig) -> Result<Decision, JordanError> {
    let last = history
        .last()
        .ok_or_else(|| JordanError::Config("next_action needs a completed round".into()))?;
    let stay = Decision {
        next_level: last.delta_index,
        reason: DecisionReason::Policy,
        flagged: false,
    };
    let advance = |reason| match larger_perturbation(config, last.delta_index) {
        Some(next_level) => Decision {
            next_level,
            reason,
            flagged: false,
        },
        None => Decision {
            next_level: last.delta_index,
            reason,
            flagged: true,
        },
    };
    Ok(match config.policy {
        Policy::SameLevel => stay,
        Policy::HigherLevel => advance(DecisionReason::Policy),
        Policy::SameUnlessHallucinating => {
            let grew = history.len() >= 2 && last.models_posited > history[history.len() - 2].models_posited;
            if grew {
                advance(DecisionReason::Hallucination)
            } else {
                stay
            }
        }
    })
}

/// Everything an analysis run produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JordanAnalysis {
    pub estimate: JordanEstimate,
    pub audit: Vec<RoundRecord>,
    pub clouds: Vec<SampleCloud>,
    pub models: Vec<ScoredModel>,
    pub clusters: Vec<ModelCluster>,
    pub winner: usize,
    /// Best model of the winning cluster, for drawing its orbit.
    pub best_model: RotationModel,
}

/// Per-level state: the cloud and every congruent pair seen so far.
struct Level {
    cloud: SampleCloud,
    pairs: Vec<TrianglePair>,
    seen: BTreeSet<([usize; 3], [usize; 3])>,
    models: Vec<ScoredModel>,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b);
    rng.random()
}

/// Round loop: collect at the current level, rebuild that level's models,
/// cluster across levels, and stop once the clustering is unambiguous.
///
/// Pairs found at a level are kept across rounds and rescored against the
/// growing cloud, so added data never removes earlier evidence. High
/// entropy with two or more populated levels sends the next round to the
/// level whose best model lies farthest from the winner, or under
/// [`Policy::HigherLevel`] to the next larger perturbation while one is
/// left; otherwise the policy decides.
pub fn analyze_jordan(a: &DenseMatrix, config: &JordanConfig) -> Result<JordanAnalysis, JordanError> {
    config.validate()?;
    let spectrum = eigenvalues(a)?;
    if !spectrum.values.iter().any(|z: &Complex64| config.region.contains(&Point2::new(z.re, z.im))) {
        return Err(JordanError::EmptyRegion);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut levels: Vec<Level> = (0..config.delta_exponents.len())
        .map(|i| Level {
            cloud: SampleCloud {
                delta_index: i,
                points: Vec::new(),
            },
            pairs: Vec::new(),
            seen: BTreeSet::new(),
            models: Vec::new(),
        })
        .collect();
    let mut audit: Vec<RoundRecord> = Vec::new();
    let mut current = config.start_level();
    let mut result: Option<Clustering> = None;
    let mut confident = false;

    for round in 1..=config.max_rounds {
        let delta = config.delta_exponents[current];
        let got = collect_round(a, delta, config.round_size, &config.region, &mut rng)?;
        let level = &mut levels[current];
        level.cloud.points.extend_from_slice(&got.points);
        let triangles = triangles_for(&level.cloud, mix(config.rng_seed, current as u64, round as u64));
        for pair in congruent_pairs(&triangles, &level.cloud.points, config.tolerance) {
            if level.seen.insert((pair.from, pair.to)) {
                level.pairs.push(pair);
            }
        }
        level.models = score_pairs(&level.pairs, &level.cloud, config)?;
        let models_posited = level.models.len();

        let all: Vec<ScoredModel> = levels.iter().flat_map(|l| l.models.iter().cloned()).collect();
        result = cluster_estimates(&all).ok();
        let mut record = RoundRecord {
            round,
            delta_index: current,
            delta_exponent: delta,
            trials: got.trials,
            failed_trials: got.failed,
            points_added: got.points.len(),
            cloud_size: levels[current].cloud.points.len(),
            models_posited,
            estimate: result.as_ref().map(|c| (c.estimate.lambda, c.estimate.rho, c.estimate.confidence)),
            entropy_bits: result.as_ref().map(|c| c.estimate.entropy_bits),
            decision: None,
        };
        if result.as_ref().is_some_and(|c| !c.estimate.high_entropy) {
            confident = true;
            audit.push(record);
            break;
        }
        if round == config.max_rounds {
            audit.push(record);
            break;
        }
        let populated: Vec<usize> = (0..levels.len()).filter(|&i| !levels[i].cloud.points.is_empty()).collect();
        let fresh = larger_perturbation(config, current).filter(|_| config.policy == Policy::HigherLevel);
        let decision = match (&result, fresh) {
            // Policy 2 resolves ambiguity by opening the next level.
            (Some(_), Some(next_level)) if populated.len() >= 2 => Decision {
                next_level,
                reason: DecisionReason::NewLevel,
                flagged: false,
            },
            (Some(c), _) if populated.len() >= 2 && config.policy != Policy::HigherLevel => {
                let w = &c.clusters[c.winner];
                let outlier = populated.iter().copied().max_by(|&p, &q| {
                    let dev = |l: usize| {
                        levels[l]
                            .models
                            .iter()
                            .max_by(|a, b| a.confidence.total_cmp(&b.confidence))
                            .map_or(f64::INFINITY, |m| m.model.centre().dist(&w.lambda) / m.scale.max(f64::MIN_POSITIVE) + (m.model.theta - w.theta).abs() / THETA_SCALE)
                    };
                    dev(p).total_cmp(&dev(q)).then(q.cmp(&p))
                });
                Decision {
                    next_level: outlier.unwrap_or(current),
                    reason: DecisionReason::OutlierLevel,
                    flagged: false,
                }
            }
            _ => {
                audit.push(record.clone());
                let d = next_action(&audit, config)?;
                audit.pop();
                d
            }
        };
        current = decision.next_level;
        record.decision = Some(decision);
        audit.push(record);
    }

    let clustering = result.ok_or(JordanError::NoStructure)?;
    let models: Vec<ScoredModel> = levels.iter().flat_map(|l| l.models.iter().cloned()).collect();
    let w = &clustering.clusters[clustering.winner];
    let best_model = w
        .members
        .iter()
        .map(|&i| &models[i])
        .max_by(|a, b| a.confidence.total_cmp(&b.confidence).then(a.model.support.cmp(&b.model.support)))
        .expect("clusters are nonempty")
        .model;
    let mut estimate = clustering.estimate;
    estimate.rounds_used = audit.len();
    estimate.low_confidence = !confident;
    Ok(JordanAnalysis {
        estimate,
        audit,
        clouds: levels.into_iter().map(|l| l.cloud).filter(|c| !c.points.is_empty()).collect(),
        models,
        clusters: clustering.clusters,
        winner: clustering.winner,
        best_model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::{synth_jordan, JordanBlockSpec};
    use proptest::prelude::*;
    use rand::Rng;

    fn polygon(n: usize, centre: Point2, radius: f64, phase: f64) -> Vec<Point2> {
        (0..n)
            .map(|k| {
                let a = phase + 2.0 * PI * k as f64 / n as f64;
                Point2::new(centre.x + radius * a.cos(), centre.y + radius * a.sin())
            })
            .collect()
    }

    /// Concentric regular `2ρ`-gons with a common phase, one per ring.
    fn rings(rho: usize, centre: Point2, count: usize) -> SampleCloud {
        let points = (1..=count).flat_map(|r| polygon(2 * rho, centre, r as f64, 0.3)).collect();
        SampleCloud { delta_index: 0, points }
    }

    fn cloud(points: Vec<Point2>) -> SampleCloud {
        SampleCloud { delta_index: 0, points }
    }

    fn config() -> JordanConfig {
        JordanConfig::new(Rect::new(-100.0, 100.0, -100.0, 100.0), vec![40, 45, 50], 1)
    }

    fn brunet(seed: u64) -> DenseMatrix {
        let blocks = [-1.0, -2.0, 7.0, 7.0].map(|l| JordanBlockSpec::real(l, if l > 0.0 { 3 } else { 1 }));
        synth_jordan(&blocks, seed, 10.0).unwrap()
    }

    fn block7() -> DenseMatrix {
        synth_jordan(&[JordanBlockSpec::real(7.0, 3)], 3, 1.0001).unwrap()
    }

    #[test]
    fn perturb_shifts_every_entry_by_the_level_magnitude() {
        let a = DenseMatrix::from_real_rows(&[&[1.0, 0.0, 0.0], &[0.0, 0.5, 0.0], &[0.25, 0.0, 0.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = perturb(&a, 50, &mut rng).unwrap();
        let s = 2f64.powi(-49);
        for (x, y) in a.entries().iter().zip(p.entries()) {
            assert_eq!((y - x).re.abs(), s);
            assert_eq!((y - x).im, 0.0);
        }
        let diff = DenseMatrix::new(3, 3, a.entries().iter().zip(p.entries()).map(|(x, y)| y - x).collect()).unwrap();
        assert_eq!(inf_norm(&diff), 3.0 * s);
    }

    #[test]
    fn perturb_is_deterministic_and_rejects_zero() {
        let a = block7();
        let p = perturb(&a, 45, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let q = perturb(&a, 45, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(p, q);
        let z = DenseMatrix::zeros(2, 2).unwrap();
        assert!(matches!(perturb(&z, 45, &mut ChaCha8Rng::seed_from_u64(9)), Err(JordanError::ZeroMatrix)));
    }

    #[test]
    fn collect_round_counts_trials_and_filters_by_region() {
        let a = block7();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let near = collect_round(&a, 45, 6, &Rect::new(6.0, 8.0, -1.0, 1.0), &mut rng).unwrap();
        assert_eq!(near.trials, 6);
        assert_eq!(near.failed, 0);
        assert_eq!(near.points.len(), 18);
        assert!(near.points.iter().all(|p| p.dist(&Point2::new(7.0, 0.0)) < 1e-3));
        let far = collect_round(&a, 45, 6, &Rect::new(100.0, 101.0, -1.0, 1.0), &mut rng).unwrap();
        assert!(far.points.is_empty());
        assert!(matches!(collect_round(&a, 45, 5, &near_region(), &mut rng), Err(JordanError::RoundSize(5))));
    }

    fn near_region() -> Rect {
        Rect::new(6.0, 8.0, -1.0, 1.0)
    }

    #[test]
    fn triangle_enumeration_counts() {
        let tri = cloud(vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)]);
        assert_eq!(triangles_for(&tri, 0).len(), 1);
        let mut square = cloud(polygon(4, Point2::new(0.0, 0.0), 1.0, 0.0));
        assert_eq!(triangles_for(&square, 0).len(), 4);
        square.points.push(Point2::new(0.0, 0.0));
        assert_eq!(triangles_for(&square, 0).len(), 10);
        assert!(triangles_for(&cloud(vec![Point2::new(0.0, 0.0); 2]), 0).is_empty());
    }

    #[test]
    fn triangles_are_counterclockwise_with_sorted_sides() {
        let c = rings(3, Point2::new(1.0, 2.0), 3);
        for t in triangles_for(&c, 4) {
            let [a, b, d] = t.vertices;
            assert!(orient(&c.points[a], &c.points[b], &c.points[d]) >= 0.0);
            assert!(t.sorted_sides[0] <= t.sorted_sides[1] && t.sorted_sides[1] <= t.sorted_sides[2]);
        }
    }

    #[test]
    fn triangle_cap_applies_to_large_clouds() {
        let c = rings(8, Point2::new(0.0, 0.0), 12);
        let t = triangles_for(&c, 1);
        assert_eq!(t.len(), MAX_TRIANGLES);
        assert_eq!(t, triangles_for(&c, 1));
    }

    fn two_triangles(p: [Point2; 3], q: [Point2; 3]) -> (Vec<Point2>, Vec<Triangle>) {
        let points: Vec<Point2> = p.into_iter().chain(q).collect();
        let triangles = vec![Triangle::new(&points, [0, 1, 2]), Triangle::new(&points, [3, 4, 5])];
        (points, triangles)
    }

    #[test]
    fn translated_triangles_match_with_rigid_analogy() {
        let p = [Point2::new(0.0, 0.0), Point2::new(3.0, 0.0), Point2::new(0.5, 2.0)];
        let q = p.map(|v| Point2::new(v.x + 10.0, v.y - 4.0));
        let (points, triangles) = two_triangles(p, q);
        let pairs = congruent_pairs(&triangles, &points, 0.1);
        assert_eq!(pairs.len(), 1);
        for (f, t) in pairs[0].from.iter().zip(pairs[0].to) {
            assert!((points[t].x - points[*f].x - 10.0).abs() < 1e-12);
            assert!((points[t].y - points[*f].y + 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scaled_triangles_do_not_match() {
        let p = [Point2::new(0.0, 0.0), Point2::new(3.0, 0.0), Point2::new(0.5, 2.0)];
        let q = p.map(|v| Point2::new(2.0 * v.x + 20.0, 2.0 * v.y));
        let (points, triangles) = two_triangles(p, q);
        for tol in [0.1, 0.3, 0.5] {
            assert!(congruent_pairs(&triangles, &points, tol).is_empty());
        }
    }

    #[test]
    fn rotated_equilateral_matches() {
        let p = polygon(3, Point2::new(0.0, 0.0), 1.0, 0.0);
        let m = RotationModel { x: 10.0, y: 0.0, theta: 0.0, d: 0.0, r: 0.0, support: 1 };
        let q: Vec<Point2> = p.iter().map(|v| m.rotate(v, 10f64.to_radians())).collect();
        let (points, triangles) = two_triangles([p[0], p[1], p[2]], [q[0], q[1], q[2]]);
        let pairs = congruent_pairs(&triangles, &points, 0.1);
        assert_eq!(pairs.len(), 1);
        let fit = fit_rotation(&pairs[0], &cloud(points)).unwrap();
        // An equilateral triangle maps onto its image three ways; one of
        // them is the generating rotation.
        assert!(fit.theta > 0.0 && fit.theta <= PI);
    }

    #[test]
    fn pairs_sharing_two_vertices_are_skipped() {
        let points = polygon(4, Point2::new(0.0, 0.0), 1.0, 0.0);
        let triangles = vec![Triangle::new(&points, [0, 1, 2]), Triangle::new(&points, [1, 2, 3])];
        assert!(congruent_pairs(&triangles, &points, 0.1).is_empty());
    }

    #[test]
    fn exact_polygons_recover_centre_and_angle() {
        let centre = Point2::new(7.0, -1.5);
        for rho in 1..=8 {
            let c = rings(rho, centre, 3);
            let n = 2 * rho;
            let pair = TrianglePair { j: 0, k: 1, from: [0, 1, n], to: [1, 2 % n, n + 1] };
            let m = fit_rotation(&pair, &c).unwrap();
            assert!((m.x - centre.x).abs() < 1e-9 && (m.y - centre.y).abs() < 1e-9, "rho {rho}: {m:?}");
            assert!((m.theta - PI / rho as f64).abs() < 1e-9, "rho {rho}: {}", m.theta);
            assert!(m.d < 1e-12 && m.r < 1e-12, "rho {rho}: {m:?}");
            assert_eq!(m.rho(), rho);
        }
    }

    #[test]
    fn square_fit() {
        let c = cloud(polygon(4, Point2::new(0.0, 0.0), 1.0, 0.0));
        let m = fit_rotation(&TrianglePair { j: 0, k: 1, from: [0, 1, 2], to: [1, 2, 3] }, &c).unwrap();
        assert!(m.x.abs() < 1e-12 && m.y.abs() < 1e-12);
        assert!((m.theta - PI / 2.0).abs() < 1e-12);
        assert!(m.d < 1e-12 && m.r < 1e-12);
    }

    #[test]
    fn hexagon_fit_implies_block_of_three() {
        let c = cloud(polygon(6, Point2::new(7.0, 0.0), 0.01, 0.2));
        let m = fit_rotation(&TrianglePair { j: 0, k: 1, from: [0, 1, 3], to: [1, 2, 4] }, &c).unwrap();
        assert!((m.x - 7.0).abs() < 1e-9 && m.y.abs() < 1e-9);
        assert!((m.theta - PI / 3.0).abs() < 1e-9);
        assert_eq!(m.rho(), 3);
    }

    #[test]
    fn displaced_vertex_bounds_d_and_r() {
        let eps = 1e-3;
        let mut points = polygon(6, Point2::new(0.0, 0.0), 1.0, 0.0);
        points[4].x += eps;
        let m = fit_rotation(&TrianglePair { j: 0, k: 1, from: [0, 1, 2], to: [1, 2, 3] }, &cloud(points)).unwrap();
        assert!(m.d > 0.0 && m.d <= eps, "d = {}", m.d);
        assert!(m.r <= 2.0 * eps, "r = {}", m.r);
    }

    #[test]
    fn identity_rotation_is_rejected() {
        let points = polygon(3, Point2::new(0.0, 0.0), 1.0, 0.0);
        let pair = TrianglePair { j: 0, k: 1, from: [0, 1, 2], to: [0, 1, 2] };
        assert!(matches!(fit_rotation(&pair, &cloud(points)), Err(JordanError::DegenerateRotation(_))));
    }

    #[test]
    fn score_model_priors() {
        let c = cloud(polygon(6, Point2::new(7.0, 0.0), 0.5, 0.0));
        let cfg = config();
        let exact = RotationModel { x: 7.0, y: 0.0, theta: PI / 3.0, d: 0.0, r: 0.0, support: 1 };
        assert_eq!(score_model(&exact, &c, &cfg).unwrap(), 1.0);
        assert_eq!(score_model(&RotationModel { x: 20.0, ..exact }, &c, &cfg).unwrap(), 0.0);
        assert_eq!(score_model(&RotationModel { theta: PI / 7.3, ..exact }, &c, &cfg).unwrap(), 0.0);
        assert_eq!(score_model(&RotationModel { theta: PI / 9.0, ..exact }, &c, &cfg).unwrap(), 0.0);
        let noisy = score_model(&RotationModel { d: 0.1, r: 0.05, ..exact }, &c, &cfg).unwrap();
        let scale = cloud_scale(&c.points);
        assert!((noisy - (-0.1 / scale).exp() * (-0.05 / scale).exp()).abs() < 1e-15);
        assert!(matches!(score_model(&exact, &cloud(Vec::new()), &cfg), Err(JordanError::EmptyCloud)));
    }

    fn record(delta_index: usize, models_posited: usize) -> RoundRecord {
        RoundRecord {
            round: 1,
            delta_index,
            delta_exponent: 0,
            trials: 6,
            failed_trials: 0,
            points_added: 0,
            cloud_size: 0,
            models_posited,
            estimate: None,
            entropy_bits: None,
            decision: None,
        }
    }

    #[test]
    fn policies_pick_the_next_level() {
        let mut cfg = config();
        cfg.delta_exponents = vec![50, 40, 45];
        let hist = [record(2, 3), record(2, 3)];
        assert_eq!(next_action(&hist, &cfg).unwrap().next_level, 2);
        cfg.policy = Policy::HigherLevel;
        let d = next_action(&hist, &cfg).unwrap();
        assert_eq!((d.next_level, d.flagged), (1, false));
        let d = next_action(&[record(1, 3)], &cfg).unwrap();
        assert_eq!((d.next_level, d.flagged), (1, true));
        cfg.policy = Policy::SameUnlessHallucinating;
        assert_eq!(next_action(&hist, &cfg).unwrap().next_level, 2);
        let d = next_action(&[record(2, 2), record(2, 4)], &cfg).unwrap();
        assert_eq!((d.next_level, d.reason), (1, DecisionReason::Hallucination));
        assert_eq!(next_action(&[record(2, 4), record(2, 2)], &cfg).unwrap().next_level, 2);
        assert!(next_action(&[], &cfg).is_err());
    }

    #[test]
    fn start_level_is_the_median_exponent() {
        let mut cfg = config();
        cfg.delta_exponents = vec![50, 40, 45, 41, 48];
        assert_eq!(cfg.delta_exponents[cfg.start_level()], 45);
        assert!(cfg.validate().is_ok());
        cfg.round_size = 9;
        assert!(matches!(cfg.validate(), Err(JordanError::RoundSize(9))));
    }

    fn scored(level: usize, x: f64, theta: f64, confidence: f64) -> ScoredModel {
        ScoredModel {
            level,
            model: RotationModel { x, y: 0.0, theta, d: 0.0, r: 0.0, support: 1 },
            confidence,
            scale: 0.1,
        }
    }

    #[test]
    fn joint_confidence_is_the_product_over_levels() {
        let c = cluster_estimates(&[scored(0, 7.0, PI / 3.0, 0.8), scored(1, 7.0, PI / 3.0, 0.5)]).unwrap();
        assert_eq!(c.estimate.rho, 3);
        assert!(c.estimate.lambda.dist(&Point2::new(7.0, 0.0)) < 1e-12);
        assert!((c.estimate.joint - 0.4).abs() < 1e-15);
        assert!((c.estimate.confidence - 0.4f64.sqrt()).abs() < 1e-15);
        assert!(!c.estimate.high_entropy);
        assert!(matches!(cluster_estimates(&[]), Err(JordanError::NoStructure)));
    }

    #[test]
    fn disagreeing_clusters_raise_entropy() {
        let c = cluster_estimates(&[scored(0, 7.0, PI / 3.0, 0.6), scored(0, 10.0, PI / 2.0, 0.6)]).unwrap();
        assert!((c.estimate.entropy_bits - 1.0).abs() < 1e-12);
        assert!(c.estimate.high_entropy);
    }

    #[test]
    fn coarse_symmetry_folds_into_finer_one() {
        let c = cluster_estimates(&[scored(0, 7.0, PI / 2.0, 0.9), scored(0, 7.0, PI / 4.0, 0.3), scored(0, 7.0, PI, 0.9)]).unwrap();
        assert_eq!(c.estimate.rho, 4);
        assert_eq!(c.estimate.entropy_bits, 0.0);
        let c = cluster_estimates(&[scored(0, 7.0, PI / 2.0, 0.9), scored(0, 7.0, PI / 4.0, 0.01)]).unwrap();
        assert_eq!(c.estimate.rho, 2);
    }

    #[test]
    fn exact_polygons_through_the_pipeline() {
        let centre = Point2::new(-2.0, 3.0);
        for rho in 1..=8 {
            let c = rings(rho, centre, 6);
            let models = level_models(&c, &config(), 11).unwrap();
            let est = cluster_estimates(&models).unwrap().estimate;
            assert_eq!(est.rho, rho);
            assert!(est.lambda.dist(&centre) < 1e-9, "rho {rho}: {:?}", est.lambda);
            assert!((1.0 - est.confidence).abs() < 1e-9, "rho {rho}: {}", est.confidence);
        }
    }

    #[test]
    fn analysis_is_deterministic() {
        let a = synth_jordan(&[JordanBlockSpec::real(7.0, 3), JordanBlockSpec::real(-1.0, 1)], 4, 10.0).unwrap();
        let cfg = JordanConfig::new(near_region(), (40..=50).collect(), 21);
        let first = analyze_jordan(&a, &cfg).unwrap();
        assert_eq!(first, analyze_jordan(&a, &cfg).unwrap());
        assert_eq!(first.estimate.rho, 3);
        assert_eq!(first.estimate.rounds_used, first.audit.len());
        let rho = first.estimate.rho as f64;
        assert!((PI / first.clusters[first.winner].theta - rho).abs() <= RHO_GATE);
    }

    #[test]
    fn higher_level_policy_strictly_advances() {
        let mut longest = 0;
        for seed in [2, 9] {
            let a = brunet(seed);
            let mut cfg = JordanConfig::new(near_region(), (40..=50).collect(), seed);
            cfg.policy = Policy::HigherLevel;
            let run = analyze_jordan(&a, &cfg).unwrap();
            longest = longest.max(run.audit.len());
            for w in run.audit.windows(2) {
                let flagged = w[0].decision.as_ref().is_some_and(|d| d.flagged);
                assert!(w[1].delta_exponent < w[0].delta_exponent || flagged, "seed {seed}: {:?}", run.audit);
            }
        }
        assert!(longest > 1);
    }

    #[test]
    fn region_without_eigenvalues_is_rejected() {
        let cfg = JordanConfig::new(Rect::new(100.0, 101.0, 0.0, 1.0), vec![45], 1);
        assert!(matches!(analyze_jordan(&block7(), &cfg), Err(JordanError::EmptyRegion)));
    }

    #[test]
    fn rounds_at_one_level_never_lose_winning_support() {
        let a = synth_jordan(&[JordanBlockSpec::real(7.0, 3), JordanBlockSpec::real(7.0, 2)], 8, 10.0).unwrap();
        let cfg = JordanConfig::new(near_region(), vec![45], 3);
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut level = cloud(Vec::new());
            let mut pairs: Vec<TrianglePair> = Vec::new();
            let mut seen = BTreeSet::new();
            let mut previous: Option<(Vec<[u64; 3]>, usize)> = None;
            for round in 0..4u64 {
                level.points.extend(collect_round(&a, 45, 6, &cfg.region, &mut rng).unwrap().points);
                for p in congruent_pairs(&triangles_for(&level, round), &level.points, cfg.tolerance) {
                    if seen.insert((p.from, p.to)) {
                        pairs.push(p);
                    }
                }
                let models = score_pairs(&pairs, &level, &cfg).unwrap();
                let Ok(c) = cluster_estimates(&models) else { continue };
                let key = |m: &ScoredModel| [m.model.x.to_bits(), m.model.y.to_bits(), m.model.theta.to_bits()];
                if let Some((keys, support)) = &previous {
                    let holding: BTreeSet<usize> = c
                        .clusters
                        .iter()
                        .enumerate()
                        .filter(|(_, cl)| cl.members.iter().any(|&i| keys.contains(&key(&models[i]))))
                        .map(|(i, _)| i)
                        .collect();
                    let now: usize = holding.iter().map(|&i| c.clusters[i].support).sum();
                    assert!(now >= *support, "seed {seed} round {round}: {now} < {support}");
                }
                let w = &c.clusters[c.winner];
                previous = Some((w.members.iter().map(|&i| key(&models[i])).collect(), w.support));
            }
        }
    }

    #[test]
    fn looser_tolerance_posits_more_models_on_noise() {
        let counts = |tol: f64| {
            let mut n: Vec<usize> = (0..20u64)
                .map(|seed| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let points = (0..30).map(|_| Point2::new(rng.random(), rng.random())).collect();
                    let mut cfg = config();
                    cfg.tolerance = tol;
                    level_models(&cloud(points), &cfg, seed).unwrap().len()
                })
                .collect();
            n.sort_unstable();
            n[n.len() / 2]
        };
        assert!(counts(0.5) >= counts(0.1));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn fitted_rotation_is_a_proper_isometry(
            coords in prop::array::uniform6(-5.0f64..5.0),
            cx in -5.0f64..5.0,
            cy in -5.0f64..5.0,
            angle in ANGLE_FLOOR * 2.0..PI,
            sign in prop::bool::ANY,
            noise in prop::array::uniform6(-1.0f64..1.0),
        ) {
            let p = [0, 1, 2].map(|i| Point2::new(coords[2 * i], coords[2 * i + 1]));
            let longest = (0..3).map(|i| p[i].dist(&p[(i + 1) % 3])).fold(0.0, f64::max);
            prop_assume!(longest > 0.1 && orient(&p[0], &p[1], &p[2]).abs() > 0.01);
            let phi = if sign { angle } else { -angle };
            let rot = RotationModel { x: cx, y: cy, theta: angle, d: 0.0, r: 0.0, support: 1 };
            let amp = 1e-3 * longest;
            let q: [Point2; 3] = [0, 1, 2].map(|i| {
                let v = rot.rotate(&p[i], phi);
                Point2::new(v.x + amp * noise[2 * i], v.y + amp * noise[2 * i + 1])
            });
            let (centre, fitted) = kabsch(&p, &q);
            let model = RotationModel { x: centre.x, y: centre.y, ..rot };
            let sq: f64 = p.iter().zip(&q).map(|(a, b)| model.rotate(a, fitted).dist2(b)).sum();
            prop_assert!((sq / 3.0).sqrt() <= 0.1 * longest);
            let points: Vec<Point2> = p.iter().chain(&q).copied().collect();
            let m = fit_rotation(&TrianglePair { j: 0, k: 1, from: [0, 1, 2], to: [3, 4, 5] }, &cloud(points)).unwrap();
            prop_assert!(m.theta > 0.0 && m.theta <= PI);
            prop_assert_eq!(m.theta, fitted.abs());
            prop_assert!(m.d >= 0.0 && m.r >= 0.0);
        }
    }
}
