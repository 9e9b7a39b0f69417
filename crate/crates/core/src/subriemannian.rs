//! Carnot-Carathéodory geometry of the graded limit group: CC balls of a
//! first-layer norm, Dirichlet eigenvalues of the Kohn sub-Laplacian, the
//! stable norm of a periodic metric, and the comparison of the Albanese
//! and stable balls.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::algebra::GradedNilpotentAlgebra;
use crate::ball::{ball_mask, fit_inverse_rho, horizontal_distance_field, BallError, BallMask, DirichletOperator, DistanceField, DistanceOptions, EIGEN_TOL};
use crate::distance::{shortest_path_tree, DistanceError, DistanceLattice, EdgeCost, HorizontalNorm, MoveSet, Polygon};
use crate::grid::{assemble, BoxGrid, Grid, NodeCoefficients};
use crate::linalg::{lowest_eigenpairs, EigenPairs};
use crate::metric::{MetricField, RescaledCoefficients};

#[derive(Debug, Error)]
pub enum SubRiemannianError {
    #[error(transparent)]
    Ball(#[from] BallError),
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error("{0} nodes of the Albanese ball lie more than one cell outside the stable ball")]
    ContainmentViolation(usize),
    #[error("cover patch too small for direction {0:?}")]
    PatchTooSmall(Vec<i64>),
    #[error("invalid argument: {0}")]
    Argument(String),
}

impl From<crate::linalg::SolverError> for SubRiemannianError {
    fn from(e: crate::linalg::SolverError) -> Self {
        SubRiemannianError::Ball(e.into())
    }
}

impl From<crate::grid::GridError> for SubRiemannianError {
    fn from(e: crate::grid::GridError) -> Self {
        SubRiemannianError::Ball(e.into())
    }
}

/// CC distance from the identity for a first-layer norm.
#[derive(Debug, Clone)]
pub struct CCField {
    pub norm: HorizontalNorm,
    pub field: DistanceField,
}

impl CCField {
    pub fn distance(&self, x: &[f64]) -> f64 {
        self.field.at(x)
    }
}

/// Ball-sized starting box for a norm: `1.2` times the largest axis
/// extent of its unit ball, and `0.2` times its square vertically (an arc
/// of length `r` closing a chord encloses area up to `r²/2π`).
fn cc_options(algebra: &GradedNilpotentAlgebra, norm: &HorizontalNorm, step: f64, fan_radius: i64) -> DistanceOptions {
    let d1 = algebra.horizontal_dim();
    let mut reach: f64 = 0.0;
    for a in 0..d1 {
        let mut e = vec![0.0; d1];
        e[a] = 1.0;
        reach = reach.max(1.0 / norm.norm(&e));
    }
    // A non-axis direction may reach farther; the box grows if needed.
    let half_width = (0..algebra.dim()).map(|p| if p < d1 { 1.2 * reach } else { 0.2 * reach * reach }).collect();
    DistanceOptions { step, fan_radius, radius: 1.0, half_width, max_expansions: 4 }
}

/// CC distance field of `norm` on the graded group `algebra` (horizontal
/// moves only, 32-direction fan on a plane).
pub fn cc_distance_field(norm: &HorizontalNorm, algebra: &GradedNilpotentAlgebra, step: f64) -> Result<CCField, SubRiemannianError> {
    if norm.dim() != algebra.horizontal_dim() {
        return Err(SubRiemannianError::Argument("norm dimension differs from the first layer".into()));
    }
    let fan = if algebra.horizontal_dim() == 2 { 3 } else { 2 };
    let field = horizontal_distance_field(algebra, norm, &cc_options(algebra, norm, step, fan))?;
    Ok(CCField { norm: norm.clone(), field })
}

/// The dual norm `|v| = sqrt(vᵀ q⁻¹ v)` of an Albanese tensor `q`.
pub fn albanese_norm(q: &DMatrix<f64>) -> Result<HorizontalNorm, SubRiemannianError> {
    let inv = q.clone().try_inverse().ok_or_else(|| SubRiemannianError::Argument("singular tensor".into()))?;
    let inv = (&inv + inv.transpose()) * 0.5;
    Ok(HorizontalNorm::quadratic(&inv)?)
}

/// Weak form of `Σ q^{ij} X_i X_j` with the frame of the graded group and
/// Haar mass.
pub fn kohn_operator(q: &DMatrix<f64>, algebra: &GradedNilpotentAlgebra, mask: &BallMask) -> Result<DirichletOperator, SubRiemannianError> {
    let n = algebra.dim();
    let d1 = algebra.horizontal_dim();
    if q.nrows() != d1 || q.ncols() != d1 {
        return Err(SubRiemannianError::Argument(format!("tensor must be {d1}x{d1}")));
    }
    if mask.grid.dim() != n {
        return Err(SubRiemannianError::Argument("mask grid dimension differs from the algebra".into()));
    }
    let limit = algebra.graded_limit();
    let mut k = vec![0.0; n * n];
    for i in 0..d1 {
        for j in 0..d1 {
            k[i * n + j] = q[(i, j)];
        }
    }
    let mut index = vec![None; mask.inside.len()];
    let mut nodes = Vec::new();
    for (node, &inside) in mask.inside.iter().enumerate() {
        if inside {
            index[node] = Some(nodes.len());
            nodes.push(node);
        }
    }
    if nodes.is_empty() {
        return Err(BallError::EmptyMask.into());
    }
    let (a, mass) = assemble(&mask.grid, &index, nodes.len(), |node| -> Result<NodeCoefficients, SubRiemannianError> {
        let x = mask.grid.position(node);
        Ok(NodeCoefficients {
            frame: limit.frame(&x).map_err(BallError::from)?,
            conductivity: k.clone(),
            density: 1.0,
        })
    })?;
    Ok(DirichletOperator { a, mass, nodes })
}

pub fn kohn_eigenvalues(
    q: &DMatrix<f64>,
    algebra: &GradedNilpotentAlgebra,
    mask: &BallMask,
    k: usize,
) -> Result<EigenPairs, SubRiemannianError> {
    let op = kohn_operator(q, algebra, mask)?;
    Ok(lowest_eigenpairs(&op.a, &op.mass, k.min(op.nodes.len()), EIGEN_TOL)?)
}

/// Estimate of `‖γ‖_∞` for one first-layer class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionEstimate {
    pub direction: Vec<i64>,
    /// `d_g(e, γ^N)` for `N = 1..`.
    pub distances: Vec<f64>,
    /// Limit of the fit `d/N = ‖γ‖ + c/N` over the upper half of the
    /// powers (or `d/N` at the largest `N` when fewer than three powers
    /// are available).
    pub norm: f64,
    pub slope: f64,
    pub fit_residual: f64,
    /// `min_N d/N`, an upper bound for the stable norm by subadditivity.
    pub upper: f64,
}

/// Stable norm sampled on lattice classes, with polygonal brackets of its
/// unit ball in the plane case.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StableNormEstimate {
    pub estimates: Vec<DirectionEstimate>,
    pub lattice_step: f64,
    /// Hull of `±γ/‖γ‖`: inside the stable unit ball.
    #[serde(skip)]
    pub inner: Option<Polygon>,
    /// Convexity bound: contains the stable unit ball.
    #[serde(skip)]
    pub outer: Option<Polygon>,
}

impl StableNormEstimate {
    pub fn norm_of(&self, direction: &[i64]) -> Option<f64> {
        self.estimates.iter().find(|e| e.direction == direction).map(|e| e.norm)
    }

    pub fn inner_area(&self) -> Option<f64> {
        self.inner.as_ref().map(Polygon::area)
    }
}

/// Primitive first-layer classes with sup norm at most `radius`, one per
/// `±` pair.
pub fn default_directions(d1: usize, radius: i64) -> Vec<Vec<i64>> {
    let side = 2 * radius + 1;
    let mut out = Vec::new();
    for code in 0..side.pow(d1 as u32) {
        let mut r = code;
        let v: Vec<i64> = (0..d1)
            .map(|_| {
                let x = r % side - radius;
                r /= side;
                x
            })
            .collect();
        let g = v.iter().fold(0i64, |g, &x| gcd(g, x));
        let first = v.iter().find(|&&x| x != 0).copied().unwrap_or(0);
        if g == 1 && first > 0 {
            out.push(v);
        }
    }
    out
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 { a.abs() } else { gcd(b, a % b) }
}

fn intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> Option<[f64; 2]> {
    let d1 = [p2[0] - p1[0], p2[1] - p1[1]];
    let d2 = [q2[0] - q1[0], q2[1] - q1[1]];
    let den = d1[0] * d2[1] - d1[1] * d2[0];
    if den.abs() < 1e-14 {
        return None;
    }
    let t = ((q1[0] - p1[0]) * d2[1] - (q1[1] - p1[1]) * d2[0]) / den;
    Some([p1[0] + t * d1[0], p1[1] + t * d1[1]])
}

/// Turns sharper than this (sine of the angle) count as corners; gentler
/// ones are flat faces of the stable ball seen through estimator noise.
const FLAT_TURN: f64 = 1e-3;

fn turn_sine(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1]];
    let w = [c[0] - b[0], c[1] - b[1]];
    (u[0] * w[1] - u[1] * w[0]) / (u[0].hypot(u[1]) * w[0].hypot(w[1]))
}

/// Polygon containing every convex set whose boundary passes through the
/// vertices of `inner` in order: each arc between consecutive vertices
/// lies in the triangle cut out by the neighbouring chords. Where three
/// vertices are collinear the set has a flat face and the chord itself
/// is the boundary.
pub fn outer_polygon(inner: &Polygon) -> Result<Polygon, DistanceError> {
    let v = inner.vertices();
    let n = v.len();
    let mut pts = v.to_vec();
    for k in 0..n {
        let a = v[(k + n - 1) % n];
        let b = v[k];
        let c = v[(k + 1) % n];
        let d = v[(k + 2) % n];
        if turn_sine(a, b, c) < FLAT_TURN || turn_sine(b, c, d) < FLAT_TURN {
            continue;
        }
        match intersect(a, b, c, d) {
            Some(w) if (w[0] - b[0]) * (c[0] - b[0]) + (w[1] - b[1]) * (c[1] - b[1]) > 0.0 => pts.push(w),
            _ => return Err(DistanceError::Argument("too few directions to bound the stable ball".into())),
        }
    }
    Polygon::hull(&pts)
}

/// Estimate `‖γ‖_∞ = lim d_g(e, γ^N)/N` on a cover patch around the
/// segment from `e` to `γ^{N_max}`.
pub fn stable_norm_estimate(
    m: &MetricField,
    directions: &[Vec<i64>],
    n_max: usize,
    step: f64,
) -> Result<StableNormEstimate, SubRiemannianError> {
    let algebra = m.algebra();
    if algebra.step() > 2 {
        return Err(DistanceError::UnsupportedAlgebra("stable norms need step at most 2".into()).into());
    }
    let d1 = algebra.horizontal_dim();
    let n = algebra.dim();
    let coefficients = RescaledCoefficients::new(m, 1.0).map_err(BallError::from)?;
    let fan = if n == 2 { 3 } else { 2 };
    let moves = MoveSet::riemannian(algebra, fan)?;
    let mut estimates = Vec::with_capacity(directions.len());
    for dir in directions {
        if dir.len() != d1 || dir.iter().fold(0, |g, &x| gcd(g, x)) != 1 {
            return Err(SubRiemannianError::Argument(format!("{dir:?} is not a primitive class in Z^{d1}")));
        }
        let span = dir.iter().map(|x| x.abs()).max().unwrap_or(1) as usize;
        let count = (n_max / span).max(1);
        let margin = 1.0;
        let mut lo = vec![0.0; n];
        let mut hi = vec![0.0; n];
        for a in 0..d1 {
            let end = (dir[a] * count as i64) as f64;
            lo[a] = end.min(0.0) - margin;
            hi[a] = end.max(0.0) + margin;
        }
        for q in d1..n {
            lo[q] = -0.75;
            hi[q] = 0.75;
        }
        let lattice = DistanceLattice::covering(algebra, step, &lo, &hi)?;
        let targets: Vec<usize> = (1..=count)
            .map(|k| {
                let mut abs = vec![0i64; n];
                for a in 0..d1 {
                    abs[a] = (((dir[a] * k as i64) as f64) / step).round() as i64;
                }
                lattice.node_at(&abs).ok_or_else(|| SubRiemannianError::PatchTooSmall(dir.clone()))
            })
            .collect::<Result<_, _>>()?;
        let (d, parents) =
            shortest_path_tree(&lattice, &moves, &EdgeCost::Metric(&coefficients), f64::INFINITY, Some(&targets))?;
        // A geodesic running along the patch boundary may have been cut short.
        for &t in &targets {
            let mut node = t;
            while node != usize::MAX {
                if lattice.on_boundary(node) {
                    return Err(SubRiemannianError::PatchTooSmall(dir.clone()));
                }
                node = parents[node];
            }
        }
        let distances: Vec<f64> = targets.iter().map(|&t| d[t]).collect();
        let ratios: Vec<f64> = distances.iter().enumerate().map(|(k, v)| v / (k + 1) as f64).collect();
        let upper = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        // Short powers follow a different optimal path, so only the upper
        // half of the powers enters the fit when enough remain.
        let first = if count >= 6 { count / 2 } else { 1 };
        let (norm, slope, fit_residual) = if count + 1 - first >= 3 {
            let ns: Vec<f64> = (first..=count).map(|k| k as f64).collect();
            let f = fit_inverse_rho(&ns, &ratios[first - 1..])?;
            (f.limit, f.slope, f.relative_residual)
        } else {
            (ratios[count - 1], 0.0, 0.0)
        };
        estimates.push(DirectionEstimate { direction: dir.clone(), distances, norm, slope, fit_residual, upper });
    }
    let (inner, outer) = if d1 == 2 && estimates.len() >= 3 {
        let mut pts = Vec::new();
        for e in &estimates {
            let p = [e.direction[0] as f64 / e.norm, e.direction[1] as f64 / e.norm];
            pts.push(p);
            pts.push([-p[0], -p[1]]);
        }
        let inner = Polygon::hull(&pts)?;
        let outer = outer_polygon(&inner).ok();
        (Some(inner), outer)
    } else {
        (None, None)
    };
    Ok(StableNormEstimate { estimates, lattice_step: step, inner, outer })
}

/// True when every node of `a` has a node of `b` within one grid cell
/// along every axis. Returns the number of offending nodes.
pub fn contained_up_to_one_cell(a: &BallMask, b: &BallMask) -> usize {
    let dims = a.grid.dims().to_vec();
    let n = dims.len();
    let mut bad = 0;
    for (node, &inside) in a.inside.iter().enumerate() {
        if !inside || b.inside[node] {
            continue;
        }
        let m = a.grid.multi_index(node);
        let mut found = false;
        for code in 0..3usize.pow(n as u32) {
            let mut r = code;
            let mut nb = m.clone();
            let mut ok = true;
            for p in 0..n {
                let off = (r % 3) as i64 - 1;
                r /= 3;
                let v = m[p] as i64 + off;
                if v < 0 || v >= dims[p] as i64 {
                    ok = false;
                    break;
                }
                nb[p] = v as usize;
            }
            if ok && b.inside[a.grid.index(&nb)] {
                found = true;
                break;
            }
        }
        if !found {
            bad += 1;
        }
    }
    bad
}

/// Grids for a ball comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonGrid {
    /// Horizontal step of the CC lattice.
    pub lattice_step: f64,
    /// Horizontal spacing of the eigenvalue grid.
    pub horizontal: f64,
    /// Cells across the largest ball along each central axis.
    pub vertical_cells: usize,
}

impl ComparisonGrid {
    pub fn default_for(algebra: &GradedNilpotentAlgebra) -> Self {
        if algebra.step() == 1 {
            ComparisonGrid { lattice_step: 1.0 / 64.0, horizontal: 1.0 / 64.0, vertical_cells: 0 }
        } else {
            ComparisonGrid { lattice_step: 1.0 / 24.0, horizontal: 1.0 / 20.0, vertical_cells: 36 }
        }
    }
}

/// CC balls of several norms as masks on one shared grid.
pub fn shared_masks(
    algebra: &GradedNilpotentAlgebra,
    norms: &[&HorizontalNorm],
    grid: &ComparisonGrid,
) -> Result<(Vec<CCField>, Vec<BallMask>), SubRiemannianError> {
    let limit = algebra.graded_limit();
    let fields: Vec<CCField> =
        norms.iter().map(|nm| cc_distance_field(nm, &limit, grid.lattice_step)).collect::<Result<_, _>>()?;
    let n = algebra.dim();
    let d1 = algebra.horizontal_dim();
    let mut lo = vec![0.0; n];
    let mut hi = vec![0.0; n];
    for f in &fields {
        let (l, h) = f.field.bounds(1.0);
        for a in 0..n {
            lo[a] = f64::min(lo[a], l[a]);
            hi[a] = f64::max(hi[a], h[a]);
        }
    }
    let spacing: Vec<f64> = (0..n)
        .map(|a| if a < d1 { grid.horizontal } else { (hi[a] - lo[a]).max(1e-6) / grid.vertical_cells.max(1) as f64 })
        .collect();
    let lo: Vec<f64> = lo.iter().zip(&spacing).map(|(v, h)| v - h).collect();
    let hi: Vec<f64> = hi.iter().zip(&spacing).map(|(v, h)| v + h).collect();
    let boxgrid = BoxGrid::covering(&lo, &hi, &spacing)?;
    let masks = fields.iter().map(|f| ball_mask(&f.field, boxgrid.clone(), 1.0)).collect();
    Ok((fields, masks))
}

/// Outcome of comparing `B₂(1)` with the stable ball `B_∞(1)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InclusionVerdict {
    /// `B₂(1) ⊆ B_∞(1)` up to one cell, against the outer bracket.
    pub containment: bool,
    /// The same against the inner (inscribed) bracket.
    pub containment_inner: bool,
    /// Mask node counts: Albanese, stable inner, stable outer.
    pub mask_nodes: [usize; 3],
    pub lambda_albanese: Vec<f64>,
    pub lambda_stable_inner: Vec<f64>,
    pub lambda_stable_outer: Vec<f64>,
    /// `λ_i(B₂) - λ_i(B_∞)` with `B_∞` from the inner bracket.
    pub gaps: Vec<f64>,
    /// `λ_i(B_∞, outer) ≤ λ_i(B₂) + tolerance·λ_i(B₂)`.
    pub ordering_holds: bool,
    /// Harmonic-length variances per first-layer form.
    pub variance: Vec<f64>,
    /// Small variance and a gap no larger than the bracket width.
    pub equality_plausible: bool,
    pub tolerance: f64,
}

/// Variance below which the harmonic lengths count as constant.
pub const EQUALITY_VARIANCE: f64 = 1e-3;

/// Compare the Albanese CC ball with the stable ball (bracketed by the
/// polygons of `stable`), both under the Kohn operator of `q`.
pub fn inclusion_minmax_check(
    algebra: &GradedNilpotentAlgebra,
    q: &DMatrix<f64>,
    stable: &StableNormEstimate,
    variance: &[f64],
    grid: &ComparisonGrid,
    k: usize,
    tolerance: f64,
) -> Result<InclusionVerdict, SubRiemannianError> {
    let (Some(inner), Some(outer)) = (stable.inner.clone(), stable.outer.clone()) else {
        return Err(SubRiemannianError::Argument("stable ball needs a planar first layer and enough directions".into()));
    };
    let alb = albanese_norm(q)?;
    let inner = HorizontalNorm::Polygon(inner);
    let outer = HorizontalNorm::Polygon(outer);
    let (_, masks) = shared_masks(algebra, &[&alb, &inner, &outer], grid)?;
    let spectra: Vec<Vec<f64>> =
        masks.iter().map(|mk| kohn_eigenvalues(q, algebra, mk, k).map(|p| p.values)).collect::<Result<_, _>>()?;
    let bad_outer = contained_up_to_one_cell(&masks[0], &masks[2]);
    let bad_inner = contained_up_to_one_cell(&masks[0], &masks[1]);
    let kk = spectra.iter().map(Vec::len).min().unwrap_or(0);
    let gaps: Vec<f64> = (0..kk).map(|i| spectra[0][i] - spectra[1][i]).collect();
    let ordering_holds = (0..kk).all(|i| spectra[2][i] <= spectra[0][i] * (1.0 + tolerance));
    let small_variance = variance.iter().all(|v| *v <= EQUALITY_VARIANCE);
    let bracket_width = spectra[1][0] - spectra[2][0];
    let equality_plausible = small_variance && gaps[0].abs() <= bracket_width.abs() + tolerance * spectra[0][0];
    if bad_outer > 0 {
        return Err(SubRiemannianError::ContainmentViolation(bad_outer));
    }
    Ok(InclusionVerdict {
        containment: bad_outer == 0,
        containment_inner: bad_inner == 0,
        mask_nodes: [masks[0].count(), masks[1].count(), masks[2].count()],
        lambda_albanese: spectra[0].clone(),
        lambda_stable_inner: spectra[1].clone(),
        lambda_stable_outer: spectra[2].clone(),
        gaps,
        ordering_holds,
        variance: variance.to_vec(),
        equality_plausible,
        tolerance,
    })
}
