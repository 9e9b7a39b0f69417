//! Shortest paths on an exact-landing lattice.
//!
//! Nodes sit at `x_a = i_a h` on first-layer axes and `x_q = k_q h²/2` on
//! second-layer axes. A move is right multiplication by `exp(s)` with `s`
//! on the same lattice, so with integer structure constants every move
//! lands exactly on another node. Edge lengths are measured along the
//! one-parameter subgroup `t ↦ p·exp(t s)`, whose frame components are
//! constant and equal to `s`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::algebra::GradedNilpotentAlgebra;
use crate::metric::{MetricError, RescaledCoefficients};

/// Upper bound on lattice nodes for one run.
pub const MAX_NODES: usize = 8_000_000;

#[derive(Debug, Error)]
pub enum DistanceError {
    #[error("the ball of radius {radius} reaches the box boundary")]
    BallTouchesBoundary { radius: f64 },
    #[error("lattice would need {nodes} nodes (limit {MAX_NODES})")]
    TooLarge { nodes: usize },
    #[error("unsupported algebra: {0}")]
    UnsupportedAlgebra(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Norm on the first layer.
#[derive(Debug, Clone, PartialEq)]
pub enum HorizontalNorm {
    /// `|v| = sqrt(vᵀ A v)`, row-major `A`.
    Quadratic { a: Vec<f64>, dim: usize },
    /// Gauge of a convex polygon (first layer of dimension two).
    Polygon(Polygon),
}

impl HorizontalNorm {
    pub fn quadratic(a: &DMatrix<f64>) -> Result<Self, DistanceError> {
        if a.nrows() != a.ncols() {
            return Err(DistanceError::Argument("norm matrix must be square".into()));
        }
        let dim = a.nrows();
        match a.clone().cholesky() {
            Some(_) if (a - a.transpose()).abs().max() <= 1e-12 * a.abs().max() => {}
            _ => return Err(DistanceError::Argument("norm matrix must be symmetric positive definite".into())),
        }
        let a = (0..dim * dim).map(|k| a[(k / dim, k % dim)]).collect();
        Ok(HorizontalNorm::Quadratic { a, dim })
    }

    pub fn dim(&self) -> usize {
        match self {
            HorizontalNorm::Quadratic { dim, .. } => *dim,
            HorizontalNorm::Polygon(_) => 2,
        }
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        match self {
            HorizontalNorm::Quadratic { a, dim } => quad_length(a, *dim, v),
            HorizontalNorm::Polygon(p) => p.gauge([v[0], v[1]]),
        }
    }

    /// The quadratic form scaled by `t²`, so lengths scale by `t`.
    pub fn scaled(&self, t: f64) -> Self {
        match self {
            HorizontalNorm::Quadratic { a, dim } => {
                HorizontalNorm::Quadratic { a: a.iter().map(|v| v * t * t).collect(), dim: *dim }
            }
            HorizontalNorm::Polygon(p) => HorizontalNorm::Polygon(Polygon {
                vertices: p.vertices.iter().map(|v| [v[0] / t, v[1] / t]).collect(),
                facets: p.facets.iter().map(|f| [f[0] * t, f[1] * t]).collect(),
            }),
        }
    }
}

fn quad_length(g: &[f64], n: usize, s: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += g[i * n + j] * s[j];
        }
        acc += s[i] * row;
    }
    acc.max(0.0).sqrt()
}

/// Convex polygon containing the origin in its interior, counterclockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<[f64; 2]>,
    /// One `a` per edge with `a · x = 1` on that edge.
    facets: Vec<[f64; 2]>,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

impl Polygon {
    /// Convex hull of `points` (monotone chain). Collinear points are dropped.
    pub fn hull(points: &[[f64; 2]]) -> Result<Self, DistanceError> {
        let mut pts: Vec<[f64; 2]> = points.iter().copied().filter(|p| p[0].is_finite() && p[1].is_finite()).collect();
        pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        pts.dedup();
        if pts.len() < 3 {
            return Err(DistanceError::Argument("hull needs at least three points".into()));
        }
        let mut lower: Vec<[f64; 2]> = Vec::new();
        for &p in &pts {
            while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
                lower.pop();
            }
            lower.push(p);
        }
        let mut upper: Vec<[f64; 2]> = Vec::new();
        for &p in pts.iter().rev() {
            while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
                upper.pop();
            }
            upper.push(p);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        let vertices = lower;
        let mut facets = Vec::with_capacity(vertices.len());
        for k in 0..vertices.len() {
            let p = vertices[k];
            let q = vertices[(k + 1) % vertices.len()];
            // Outward normal of a counterclockwise edge, scaled so a·p = 1.
            let nrm = [q[1] - p[1], p[0] - q[0]];
            let c = nrm[0] * p[0] + nrm[1] * p[1];
            if !(c > 0.0) {
                return Err(DistanceError::Argument("origin is not interior to the hull".into()));
            }
            facets.push([nrm[0] / c, nrm[1] / c]);
        }
        Ok(Polygon { vertices, facets })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    /// Minkowski gauge: the smallest `t` with `v ∈ t·P`.
    pub fn gauge(&self, v: [f64; 2]) -> f64 {
        self.facets.iter().map(|a| a[0] * v[0] + a[1] * v[1]).fold(0.0, f64::max)
    }

    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        0.5 * (0..n)
            .map(|k| {
                let p = self.vertices[k];
                let q = self.vertices[(k + 1) % n];
                p[0] * q[1] - p[1] * q[0]
            })
            .sum::<f64>()
    }

    /// Every vertex strictly turns left.
    pub fn is_convex(&self) -> bool {
        let n = self.vertices.len();
        (0..n).all(|k| cross(self.vertices[k], self.vertices[(k + 1) % n], self.vertices[(k + 2) % n]) > 0.0)
    }
}

/// One lattice move: first-layer offset `b`, second-layer offset `c`, and
/// the per-node correction `lin` (`d2 × d1`, row-major) coming from
/// `½[x, s]`.
#[derive(Debug, Clone)]
struct Move {
    b: Vec<i64>,
    c: Vec<i64>,
    lin: Vec<i64>,
}

/// A set of admissible moves.
#[derive(Debug, Clone)]
pub struct MoveSet {
    d1: usize,
    d2: usize,
    moves: Vec<Move>,
}

fn primitive_vectors(dim: usize, radius: i64) -> Vec<Vec<i64>> {
    fn gcd(a: i64, b: i64) -> i64 {
        if b == 0 { a.abs() } else { gcd(b, a % b) }
    }
    let side = (2 * radius + 1) as usize;
    let total = side.pow(dim as u32);
    let mut out = Vec::new();
    for code in 0..total {
        let mut r = code;
        let mut v = Vec::with_capacity(dim);
        for _ in 0..dim {
            v.push((r % side) as i64 - radius);
            r /= side;
        }
        if v.iter().fold(0, |g, &x| gcd(g, x)) == 1 {
            out.push(v);
        }
    }
    out
}

impl MoveSet {
    fn base(algebra: &GradedNilpotentAlgebra) -> Result<(usize, usize, Vec<i64>), DistanceError> {
        if algebra.step() > 2 {
            return Err(DistanceError::UnsupportedAlgebra(format!("step {} (at most 2 supported)", algebra.step())));
        }
        let d1 = algebra.horizontal_dim();
        let d2 = algebra.dim() - d1;
        let mut c = vec![0i64; d1 * d1 * d2];
        for i in 0..d1 {
            for j in 0..d1 {
                for q in 0..d2 {
                    let v = algebra.c(i, j, d1 + q);
                    if (v - v.round()).abs() > 1e-12 {
                        return Err(DistanceError::UnsupportedAlgebra(
                            "exact landing needs integer structure constants".into(),
                        ));
                    }
                    c[(q * d1 + i) * d1 + j] = v.round() as i64;
                }
            }
        }
        Ok((d1, d2, c))
    }

    fn make(d1: usize, d2: usize, c: &[i64], b: Vec<i64>, cv: Vec<i64>) -> Move {
        let mut lin = vec![0i64; d2 * d1];
        for q in 0..d2 {
            for i in 0..d1 {
                lin[q * d1 + i] = (0..d1).map(|j| c[(q * d1 + i) * d1 + j] * b[j]).sum();
            }
        }
        Move { b, c: cv, lin }
    }

    /// Horizontal moves only: every primitive integer direction of sup norm
    /// at most `radius` (32 directions for a plane and radius 3).
    pub fn horizontal(algebra: &GradedNilpotentAlgebra, radius: i64) -> Result<Self, DistanceError> {
        let (d1, d2, c) = Self::base(algebra)?;
        let moves = primitive_vectors(d1, radius).into_iter().map(|b| Self::make(d1, d2, &c, b, vec![0; d2])).collect();
        Ok(MoveSet { d1, d2, moves })
    }

    /// Horizontal fan plus moves with a vertical part: unit horizontal
    /// steps combined with `±1, ±2` vertical cells, and pure vertical
    /// steps of `2^k` cells up to 64 along each second-layer axis.
    pub fn riemannian(algebra: &GradedNilpotentAlgebra, radius: i64) -> Result<Self, DistanceError> {
        let (d1, d2, c) = Self::base(algebra)?;
        let mut moves: Vec<Move> =
            primitive_vectors(d1, radius).into_iter().map(|b| Self::make(d1, d2, &c, b, vec![0; d2])).collect();
        for q in 0..d2 {
            for b in primitive_vectors(d1, 1) {
                for k in [-2i64, -1, 1, 2] {
                    let mut cv = vec![0; d2];
                    cv[q] = k;
                    moves.push(Self::make(d1, d2, &c, b.clone(), cv));
                }
            }
            for e in 0..7 {
                for sign in [-1i64, 1] {
                    let mut cv = vec![0; d2];
                    cv[q] = sign << e;
                    moves.push(Self::make(d1, d2, &c, vec![0; d1], cv));
                }
            }
        }
        Ok(MoveSet { d1, d2, moves })
    }

    pub fn len(&self) -> usize {
        self.moves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moves.is_empty()
    }
}

/// A box of lattice nodes containing the identity.
#[derive(Debug, Clone)]
pub struct DistanceLattice {
    algebra: GradedNilpotentAlgebra,
    h: f64,
    spacing: Vec<f64>,
    lo: Vec<i64>,
    dims: Vec<usize>,
}

impl DistanceLattice {
    /// Smallest lattice box covering `[lo, hi]` with horizontal step `h`.
    pub fn covering(algebra: &GradedNilpotentAlgebra, h: f64, lo: &[f64], hi: &[f64]) -> Result<Self, DistanceError> {
        let n = algebra.dim();
        if lo.len() != n || hi.len() != n {
            return Err(DistanceError::Argument(format!("box corners must have {n} coordinates")));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(DistanceError::Argument(format!("step {h} must be positive")));
        }
        let d1 = algebra.horizontal_dim();
        let spacing: Vec<f64> = (0..n).map(|p| if p < d1 { h } else { h * h / 2.0 }).collect();
        let mut lo_i = Vec::with_capacity(n);
        let mut dims = Vec::with_capacity(n);
        let mut nodes = 1usize;
        for p in 0..n {
            if !(lo[p] <= 0.0 && hi[p] >= 0.0) {
                return Err(DistanceError::Argument("box must contain the identity".into()));
            }
            let a = (lo[p] / spacing[p] - 1e-9).floor() as i64;
            let b = (hi[p] / spacing[p] + 1e-9).ceil() as i64;
            let len = (b - a + 1) as usize;
            nodes = nodes.saturating_mul(len);
            lo_i.push(a);
            dims.push(len);
        }
        if nodes > MAX_NODES {
            return Err(DistanceError::TooLarge { nodes });
        }
        Ok(DistanceLattice { algebra: algebra.clone(), h, spacing, lo: lo_i, dims })
    }

    pub fn algebra(&self) -> &GradedNilpotentAlgebra {
        &self.algebra
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn node_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn lo(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.spacing).map(|(&i, s)| i as f64 * s).collect()
    }

    pub fn hi(&self) -> Vec<f64> {
        (0..self.dims.len()).map(|p| (self.lo[p] + self.dims[p] as i64 - 1) as f64 * self.spacing[p]).collect()
    }

    /// Absolute integer index of `node`.
    pub fn absolute(&self, node: usize, out: &mut [i64]) {
        let mut r = node;
        for p in (0..self.dims.len()).rev() {
            out[p] = self.lo[p] + (r % self.dims[p]) as i64;
            r /= self.dims[p];
        }
    }

    pub fn node_at(&self, abs: &[i64]) -> Option<usize> {
        let mut k = 0usize;
        for p in 0..self.dims.len() {
            let local = abs[p] - self.lo[p];
            if local < 0 || local >= self.dims[p] as i64 {
                return None;
            }
            k = k * self.dims[p] + local as usize;
        }
        Some(k)
    }

    pub fn origin(&self) -> usize {
        self.node_at(&vec![0; self.dims.len()]).expect("box contains the identity")
    }

    pub fn position(&self, node: usize) -> Vec<f64> {
        let mut abs = vec![0; self.dims.len()];
        self.absolute(node, &mut abs);
        abs.iter().zip(&self.spacing).map(|(&i, s)| i as f64 * s).collect()
    }

    pub fn on_boundary(&self, node: usize) -> bool {
        let mut r = node;
        for p in (0..self.dims.len()).rev() {
            let i = r % self.dims[p];
            if i == 0 || i + 1 == self.dims[p] {
                return true;
            }
            r /= self.dims[p];
        }
        false
    }

    /// True when some boundary node is within `radius`.
    pub fn touches_boundary(&self, dist: &[f64], radius: f64) -> bool {
        dist.iter().enumerate().any(|(k, &d)| d <= radius && self.on_boundary(k))
    }

    /// Multilinear interpolation of node values. Outside the box, or next
    /// to an unreached node, the result is `+∞`.
    pub fn sample(&self, values: &[f64], x: &[f64]) -> f64 {
        let n = self.dims.len();
        let mut base = [0usize; 8];
        let mut frac = [0f64; 8];
        for p in 0..n {
            let t = x[p] / self.spacing[p] - self.lo[p] as f64;
            let top = (self.dims[p] - 1) as f64;
            if !(t >= -1e-9 && t <= top + 1e-9) {
                return f64::INFINITY;
            }
            let t = t.clamp(0.0, top);
            let i = (t.floor() as usize).min(self.dims[p].saturating_sub(2));
            base[p] = i;
            frac[p] = if self.dims[p] > 1 { t - i as f64 } else { 0.0 };
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut k = 0usize;
            for p in 0..n {
                let up = (corner >> p) & 1 == 1;
                w *= if up { frac[p] } else { 1.0 - frac[p] };
                let i = base[p] + usize::from(up && self.dims[p] > 1);
                k = k * self.dims[p] + i;
            }
            if w == 0.0 {
                continue;
            }
            let v = values[k];
            if !v.is_finite() {
                return f64::INFINITY;
            }
            acc += w * v;
        }
        acc
    }
}

/// How edge lengths are measured.
pub enum EdgeCost<'a> {
    /// Sub-Riemannian length: norm of the first-layer part. Moves with a
    /// vertical part are forbidden.
    Horizontal(&'a HorizontalNorm),
    /// Length under the rescaled metric `g_ρ`, by Simpson's rule along the
    /// one-parameter subgroup (endpoints from a node cache).
    Metric(&'a RescaledCoefficients<'a>),
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

/// Dijkstra from the identity. Nodes farther than `cutoff` are left at
/// `+∞`; with `targets` the search also stops once all targets settle.
pub fn shortest_paths(
    lattice: &DistanceLattice,
    moves: &MoveSet,
    cost: &EdgeCost,
    cutoff: f64,
    targets: Option<&[usize]>,
) -> Result<Vec<f64>, DistanceError> {
    search(lattice, moves, cost, cutoff, targets, None)
}

/// [`shortest_paths`] that also returns the predecessor of every reached
/// node (`usize::MAX` for the identity and unreached nodes).
pub fn shortest_path_tree(
    lattice: &DistanceLattice,
    moves: &MoveSet,
    cost: &EdgeCost,
    cutoff: f64,
    targets: Option<&[usize]>,
) -> Result<(Vec<f64>, Vec<usize>), DistanceError> {
    let mut parents = vec![usize::MAX; lattice.node_count()];
    let d = search(lattice, moves, cost, cutoff, targets, Some(&mut parents))?;
    Ok((d, parents))
}

fn search(
    lattice: &DistanceLattice,
    moves: &MoveSet,
    cost: &EdgeCost,
    cutoff: f64,
    targets: Option<&[usize]>,
    mut parents: Option<&mut Vec<usize>>,
) -> Result<Vec<f64>, DistanceError> {
    let n = lattice.dims.len();
    let (d1, d2) = (moves.d1, moves.d2);
    if d1 + d2 != n {
        return Err(DistanceError::Argument("move set built for a different algebra".into()));
    }
    let h = lattice.spacing[0];
    let hv = if d2 > 0 { lattice.spacing[d1] } else { 0.0 };
    let steps: Vec<Vec<f64>> = moves
        .moves
        .iter()
        .map(|m| m.b.iter().map(|&b| b as f64 * h).chain(m.c.iter().map(|&c| c as f64 * hv)).collect())
        .collect();
    let fixed: Vec<Option<f64>> = match cost {
        EdgeCost::Horizontal(norm) => {
            if norm.dim() != d1 {
                return Err(DistanceError::Argument("norm dimension differs from the first layer".into()));
            }
            moves
                .moves
                .iter()
                .zip(&steps)
                .map(|(m, s)| m.c.iter().all(|&c| c == 0).then(|| norm.norm(&s[..d1])))
                .collect()
        }
        EdgeCost::Metric(r) if r.metric().is_constant() => {
            let mut g = vec![0.0; n * n];
            r.frame_metric_into(&vec![0.0; n], &mut g)?;
            steps.iter().map(|s| Some(quad_length(&g, n, s))).collect()
        }
        EdgeCost::Metric(_) => vec![None; moves.len()],
    };
    let coefficients = match cost {
        EdgeCost::Metric(r) if !r.metric().is_constant() => Some(*r),
        _ => None,
    };
    let nodes = lattice.node_count();
    let mut cache = if coefficients.is_some() { vec![f64::NAN; nodes * n * n] } else { Vec::new() };
    let cache_at = |node: usize, cache: &mut Vec<f64>| -> Result<(), DistanceError> {
        if let Some(r) = coefficients {
            let slot = &mut cache[node * n * n..(node + 1) * n * n];
            if slot[0].is_nan() {
                r.frame_metric_into(&lattice.position(node), slot)?;
            }
        }
        Ok(())
    };

    let mut dist = vec![f64::INFINITY; nodes];
    let mut done = vec![false; nodes];
    let mut remaining = targets.map(|t| t.iter().filter(|&&k| k < nodes).count());
    let mut target_flag = vec![false; if targets.is_some() { nodes } else { 0 }];
    if let Some(t) = targets {
        for &k in t {
            if k < nodes {
                target_flag[k] = true;
            }
        }
    }
    let origin = lattice.origin();
    dist[origin] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Entry(0.0, origin));
    let mut abs = vec![0i64; n];
    let mut next = vec![0i64; n];
    let mut mid = vec![0.0; n];
    let mut gmid = vec![0.0; n * n];
    while let Some(Entry(d, node)) = heap.pop() {
        if done[node] {
            continue;
        }
        if d > cutoff {
            break;
        }
        done[node] = true;
        if let Some(r) = remaining.as_mut() {
            if target_flag[node] {
                *r -= 1;
                if *r == 0 {
                    break;
                }
            }
        }
        lattice.absolute(node, &mut abs);
        cache_at(node, &mut cache)?;
        for (k, m) in moves.moves.iter().enumerate() {
            if matches!(cost, EdgeCost::Horizontal(_)) && fixed[k].is_none() {
                continue;
            }
            for a in 0..d1 {
                next[a] = abs[a] + m.b[a];
            }
            for q in 0..d2 {
                let shift: i64 = (0..d1).map(|i| m.lin[q * d1 + i] * abs[i]).sum();
                next[d1 + q] = abs[d1 + q] + m.c[q] + shift;
            }
            let Some(nb) = lattice.node_at(&next) else { continue };
            if done[nb] {
                continue;
            }
            let w = match fixed[k] {
                Some(w) => w,
                None => {
                    let r = coefficients.expect("variable cost needs coefficients");
                    cache_at(nb, &mut cache)?;
                    let s = &steps[k];
                    // Midpoint p·exp(s/2) = p + s/2 + [p, s]/4 in step two.
                    let p: Vec<f64> = abs.iter().zip(&lattice.spacing).map(|(&i, sp)| i as f64 * sp).collect();
                    let br = lattice.algebra.bracket(&p, s);
                    for t in 0..n {
                        mid[t] = p[t] + 0.5 * s[t] + 0.25 * br[t];
                    }
                    r.frame_metric_into(&mid, &mut gmid)?;
                    let la = quad_length(&cache[node * n * n..(node + 1) * n * n], n, s);
                    let lb = quad_length(&cache[nb * n * n..(nb + 1) * n * n], n, s);
                    (la + 4.0 * quad_length(&gmid, n, s) + lb) / 6.0
                }
            };
            let nd = d + w;
            if nd < dist[nb] {
                dist[nb] = nd;
                if let Some(p) = parents.as_deref_mut() {
                    p[nb] = node;
                }
                heap.push(Entry(nd, nb));
            }
        }
    }
    for (k, v) in dist.iter_mut().enumerate() {
        if !done[k] && *v > cutoff {
            *v = f64::INFINITY;
        }
    }
    Ok(dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{left_invariant_metric, MetricField};

    fn flat(n: usize, diag: &[f64]) -> MetricField {
        let alg = GradedNilpotentAlgebra::torus(n).unwrap();
        left_invariant_metric(alg, &DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(diag))).unwrap()
    }

    fn metric_run(m: &MetricField, rho: f64, h: f64, half: &[f64]) -> (DistanceLattice, Vec<f64>) {
        let alg = m.algebra().clone();
        let lo: Vec<f64> = half.iter().map(|v| -v).collect();
        let lat = DistanceLattice::covering(&alg, h, &lo, half).unwrap();
        let moves = MoveSet::riemannian(&alg, 3).unwrap();
        let r = RescaledCoefficients::new(m, rho).unwrap();
        let d = shortest_paths(&lat, &moves, &EdgeCost::Metric(&r), 2.0, None).unwrap();
        (lat, d)
    }

    #[test]
    fn flat_axis_distance_is_exact() {
        let (lat, d) = metric_run(&flat(2, &[1.0, 1.0]), 4.0, 1.0 / 16.0, &[1.0, 1.0]);
        assert!((lat.sample(&d, &[0.5, 0.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn scaled_axis_distance() {
        let (lat, d) = metric_run(&flat(2, &[4.0, 1.0]), 1.0, 1.0 / 16.0, &[1.0, 1.0]);
        assert!((lat.sample(&d, &[0.5, 0.0]) - 1.0).abs() < 0.02);
    }

    #[test]
    fn fan_error_is_small_off_axis() {
        let (lat, d) = metric_run(&flat(2, &[1.0, 1.0]), 1.0, 1.0 / 16.0, &[1.2, 1.2]);
        let mut worst: f64 = 0.0;
        for k in 0..40 {
            let t = k as f64 * std::f64::consts::PI / 80.0;
            let v = lat.sample(&d, &[0.8 * t.cos(), 0.8 * t.sin()]);
            worst = worst.max((v / 0.8 - 1.0).abs());
        }
        assert!(worst < 0.02, "worst relative error {worst}");
    }

    #[test]
    fn moves_land_on_the_group_product() {
        let alg = GradedNilpotentAlgebra::heisenberg(3).unwrap();
        let lat = DistanceLattice::covering(&alg, 0.25, &[-2.0, -2.0, -4.0], &[2.0, 2.0, 4.0]).unwrap();
        let moves = MoveSet::riemannian(&alg, 2).unwrap();
        let start = lat.node_at(&[3, -2, 5]).unwrap();
        let p = lat.position(start);
        let mut abs = vec![0; 3];
        lat.absolute(start, &mut abs);
        for m in &moves.moves {
            let s = [m.b[0] as f64 * 0.25, m.b[1] as f64 * 0.25, m.c[0] as f64 * 0.25 * 0.25 / 2.0];
            let want = alg.multiply(&p, &s).unwrap();
            let next = [abs[0] + m.b[0], abs[1] + m.b[1], abs[2] + m.c[0] + m.lin[0] * abs[0] + m.lin[1] * abs[1]];
            let got = lat.position(lat.node_at(&next).unwrap());
            for k in 0..3 {
                assert!((got[k] - want[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn horizontal_segment_in_heisenberg() {
        let alg = GradedNilpotentAlgebra::heisenberg(3).unwrap();
        let lat = DistanceLattice::covering(&alg, 1.0 / 16.0, &[-1.0, -1.0, -0.2], &[1.0, 1.0, 0.2]).unwrap();
        let moves = MoveSet::horizontal(&alg, 3).unwrap();
        let norm = HorizontalNorm::quadratic(&DMatrix::identity(2, 2)).unwrap();
        let d = shortest_paths(&lat, &moves, &EdgeCost::Horizontal(&norm), 1.0, None).unwrap();
        assert!((lat.sample(&d, &[0.75, 0.0, 0.0]) - 0.75).abs() < 1e-12);
        assert_eq!(moves.len(), 32);
    }

    #[test]
    fn polygon_gauge_of_square() {
        let sq = Polygon::hull(&[[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [0.5, 0.0]]).unwrap();
        assert_eq!(sq.vertices().len(), 4);
        assert!(sq.is_convex());
        assert!((sq.area() - 4.0).abs() < 1e-12);
        assert!((sq.gauge([0.5, -0.25]) - 0.5).abs() < 1e-12);
        assert!((sq.gauge([-3.0, 2.0]) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn hull_rejects_origin_outside() {
        assert!(Polygon::hull(&[[1.0, 1.0], [2.0, 1.0], [1.0, 2.0]]).is_err());
    }
}
