//! Dirichlet spectra of rescaled balls.
//!
//! Everything lives in the rescaled picture: the ball `B_ρ(1)` of
//! `g_ρ = ρ⁻² δ_ρ* g` on a fixed unit-scale box, with coefficients that
//! oscillate at scale `1/ρ`. Its eigenvalues equal `ρ² λ_i(B_g(ρ))`.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::algebra::{AlgebraError, GradedNilpotentAlgebra};
use crate::distance::{shortest_paths, DistanceError, DistanceLattice, EdgeCost, MoveSet};
use crate::grid::{assemble, BoxGrid, Grid, GridError, NodeCoefficients};
use crate::linalg::{lowest_eigenpairs, CsrMatrix, EigenPairs, SolverError};
use crate::metric::{MetricError, MetricField, RescaledCoefficients};

/// Relative residual requested from the eigensolver.
pub const EIGEN_TOL: f64 = 1e-8;
/// Largest relative RMS residual accepted from the `1/ρ` fit.
pub const FIT_TOL: f64 = 0.1;

#[derive(Debug, Error)]
pub enum BallError {
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("eigensolver: {0}")]
    Solver(#[from] SolverError),
    #[error("the ball mask is empty")]
    EmptyMask,
    #[error("need an ascending list of at least 3 radii, got {0:?}")]
    InsufficientRhoRange(Vec<f64>),
    #[error("1/ρ fit leaves relative residual {residual:.3} (limit {FIT_TOL})")]
    PoorFit { residual: f64 },
}

/// Parameters of the distance computation.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceOptions {
    /// Horizontal lattice step.
    pub step: f64,
    /// Fan radius of the horizontal moves.
    pub fan_radius: i64,
    /// Ball radius (1 in the rescaled picture).
    pub radius: f64,
    /// Initial half widths of the box, one per coordinate.
    pub half_width: Vec<f64>,
    /// How many times the box may grow by half before giving up.
    pub max_expansions: usize,
}

impl DistanceOptions {
    /// Defaults for `B_ρ(1)`: a ±1.2 horizontal box and `0.6/ρ + 0.15` on
    /// the central axes.
    pub fn for_ball(algebra: &GradedNilpotentAlgebra, rho: f64, step: f64) -> Self {
        let d1 = algebra.horizontal_dim();
        let half_width = (0..algebra.dim()).map(|p| if p < d1 { 1.2 } else { 0.6 / rho + 0.15 }).collect();
        let fan_radius = if algebra.dim() == 2 { 3 } else { 2 };
        DistanceOptions { step, fan_radius, radius: 1.0, half_width, max_expansions: 4 }
    }
}

/// `d_ρ(0, ·)` on a lattice box.
#[derive(Debug, Clone)]
pub struct DistanceField {
    pub rho: f64,
    pub radius: f64,
    lattice: DistanceLattice,
    values: Vec<f64>,
}

impl DistanceField {
    pub fn lattice(&self) -> &DistanceLattice {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Interpolated distance at `x` (`+∞` outside the computed region).
    pub fn at(&self, x: &[f64]) -> f64 {
        self.lattice.sample(&self.values, x)
    }

    /// Coordinate bounding box of the lattice nodes within `threshold`.
    pub fn bounds(&self, threshold: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.lattice.dims().len();
        let mut lo = vec![0.0; n];
        let mut hi = vec![0.0; n];
        for (k, &d) in self.values.iter().enumerate() {
            if d <= threshold {
                let p = self.lattice.position(k);
                for a in 0..n {
                    lo[a] = f64::min(lo[a], p[a]);
                    hi[a] = f64::max(hi[a], p[a]);
                }
            }
        }
        (lo, hi)
    }
}

fn run_expanding(
    algebra: &GradedNilpotentAlgebra,
    opts: &DistanceOptions,
    moves: &MoveSet,
    cost: &EdgeCost,
) -> Result<(DistanceLattice, Vec<f64>), BallError> {
    let mut half = opts.half_width.clone();
    // Distances are kept a little past the radius so masks can be
    // inflated and interpolation near the sphere sees finite values.
    let cutoff = opts.radius * 1.15 + 2.0 * opts.step;
    for _ in 0..=opts.max_expansions {
        let lo: Vec<f64> = half.iter().map(|v| -v).collect();
        let lattice = DistanceLattice::covering(algebra, opts.step, &lo, &half)?;
        let d = shortest_paths(&lattice, moves, cost, cutoff, None)?;
        if !lattice.touches_boundary(&d, opts.radius * 1.1) {
            return Ok((lattice, d));
        }
        half.iter_mut().for_each(|v| *v *= 1.5);
    }
    Err(DistanceError::BallTouchesBoundary { radius: opts.radius }.into())
}

/// Riemannian distance from the identity under `g_ρ`.
pub fn distance_field(m: &MetricField, rho: f64, opts: &DistanceOptions) -> Result<DistanceField, BallError> {
    let coefficients = RescaledCoefficients::new(m, rho)?;
    let moves = MoveSet::riemannian(m.algebra(), opts.fan_radius)?;
    let (lattice, values) = run_expanding(m.algebra(), opts, &moves, &EdgeCost::Metric(&coefficients))?;
    Ok(DistanceField { rho, radius: opts.radius, lattice, values })
}

/// Sub-Riemannian counterpart: only horizontal moves, lengths from `norm`.
pub(crate) fn horizontal_distance_field(
    algebra: &GradedNilpotentAlgebra,
    norm: &crate::distance::HorizontalNorm,
    opts: &DistanceOptions,
) -> Result<DistanceField, BallError> {
    let moves = MoveSet::horizontal(algebra, opts.fan_radius)?;
    let (lattice, values) = run_expanding(algebra, opts, &moves, &EdgeCost::Horizontal(norm))?;
    Ok(DistanceField { rho: f64::INFINITY, radius: opts.radius, lattice, values })
}

/// Nodes of a box grid inside a ball. Nodes on the outer face of the box
/// are always outside.
#[derive(Debug, Clone)]
pub struct BallMask {
    pub grid: BoxGrid,
    pub inside: Vec<bool>,
}

impl BallMask {
    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    /// True when every node of `self` is also in `other` (same grid).
    pub fn is_subset_of(&self, other: &BallMask) -> bool {
        self.grid == other.grid && self.inside.iter().zip(&other.inside).all(|(&a, &b)| !a || b)
    }
}

/// Box grid with the given spacing covering the ball plus one cell, with
/// the identity on a node.
pub fn ball_grid(field: &DistanceField, spacing: &[f64], inflate: f64) -> Result<BoxGrid, BallError> {
    let (lo, hi) = field.bounds(field.radius * inflate);
    let lo: Vec<f64> = lo.iter().zip(spacing).map(|(v, h)| v - h).collect();
    let hi: Vec<f64> = hi.iter().zip(spacing).map(|(v, h)| v + h).collect();
    Ok(BoxGrid::covering(&lo, &hi, spacing)?)
}

/// Grid nodes `x` with `d(0, x) < scale · radius`; the zero boundary
/// values sit on the first nodes at or past the sphere.
pub fn ball_mask(field: &DistanceField, grid: BoxGrid, scale: f64) -> BallMask {
    let limit = field.radius * scale;
    let inside = (0..grid.node_count())
        .map(|k| !grid.on_boundary(k) && field.at(&grid.position(k)) < limit)
        .collect();
    BallMask { grid, inside }
}

/// Stiffness and mass of a Dirichlet problem on a mask.
#[derive(Debug, Clone)]
pub struct DirichletOperator {
    pub a: CsrMatrix,
    pub mass: Vec<f64>,
    /// Grid node of each unknown.
    pub nodes: Vec<usize>,
}

fn unknowns(mask: &BallMask) -> (Vec<Option<usize>>, Vec<usize>) {
    let mut index = vec![None; mask.inside.len()];
    let mut nodes = Vec::new();
    for (k, &inside) in mask.inside.iter().enumerate() {
        if inside {
            index[k] = Some(nodes.len());
            nodes.push(k);
        }
    }
    (index, nodes)
}

/// Weak-form Laplacian of `g_ρ` with zero values off the mask, and the
/// quadrature mass `|cell| · sqrt(det g(δ_ρ x))`.
pub fn assemble_dirichlet(m: &MetricField, rho: f64, mask: &BallMask) -> Result<DirichletOperator, BallError> {
    let (index, nodes) = unknowns(mask);
    if nodes.is_empty() {
        return Err(BallError::EmptyMask);
    }
    let coefficients = RescaledCoefficients::new(m, rho)?;
    let algebra = m.algebra();
    let (a, mass) = assemble(&mask.grid, &index, nodes.len(), |node| -> Result<NodeCoefficients, BallError> {
        let x = mask.grid.position(node);
        let s = coefficients.eval(&x)?;
        Ok(NodeCoefficients {
            frame: algebra.frame(&x)?,
            conductivity: s.ginv.iter().map(|v| v * s.weight).collect(),
            density: s.weight,
        })
    })?;
    Ok(DirichletOperator { a, mass, nodes })
}

/// `k` lowest eigenpairs of `A u = λ M u`.
pub fn lowest_eigenvalues(op: &DirichletOperator, k: usize, tol: f64) -> Result<EigenPairs, BallError> {
    Ok(lowest_eigenpairs(&op.a, &op.mass, k, tol)?)
}

/// How the grids of a study depend on `ρ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolutionRule {
    /// Horizontal nodes per unit length: `max(min_per_unit, per_rho · ρ)`,
    /// capped at `max_per_unit`.
    pub per_rho: f64,
    pub min_per_unit: usize,
    pub max_per_unit: usize,
    /// Cells across the ball along each central axis.
    pub vertical_cells: usize,
    /// Horizontal step of the distance lattice on non-abelian groups.
    pub lattice_step: f64,
}

impl ResolutionRule {
    /// `N = max(32, 8ρ)` on tori; a fixed budget-limited grid on step two.
    pub fn default_for(algebra: &GradedNilpotentAlgebra) -> Self {
        if algebra.step() == 1 {
            ResolutionRule { per_rho: 8.0, min_per_unit: 32, max_per_unit: 256, vertical_cells: 0, lattice_step: 0.0 }
        } else {
            ResolutionRule { per_rho: 0.0, min_per_unit: 20, max_per_unit: 20, vertical_cells: 36, lattice_step: 1.0 / 16.0 }
        }
    }

    pub fn per_unit(&self, rho: f64) -> usize {
        ((self.per_rho * rho).ceil() as usize).max(self.min_per_unit).min(self.max_per_unit)
    }
}

/// One solved ball.
#[derive(Debug, Clone)]
pub struct BallProblem {
    pub rho: f64,
    pub field: DistanceField,
    pub mask: BallMask,
    pub operator: DirichletOperator,
    pub pairs: EigenPairs,
}

/// Grid spacing for `B_ρ(1)` under `rule`. Central axes get
/// `vertical_cells` cells across the ball's extent.
pub fn ball_spacing(field: &DistanceField, rule: &ResolutionRule, d1: usize) -> Vec<f64> {
    let h = 1.0 / rule.per_unit(field.rho) as f64;
    let (lo, hi) = field.bounds(field.radius);
    (0..lo.len())
        .map(|a| if a < d1 { h } else { (hi[a] - lo[a]).max(1e-6) / rule.vertical_cells.max(1) as f64 })
        .collect()
}

/// Full pipeline for one `ρ`.
pub fn solve_ball(m: &MetricField, rho: f64, rule: &ResolutionRule, k: usize) -> Result<BallProblem, BallError> {
    let algebra = m.algebra();
    let d1 = algebra.horizontal_dim();
    let step = if algebra.step() == 1 { 1.0 / rule.per_unit(rho) as f64 } else { rule.lattice_step };
    let field = distance_field(m, rho, &DistanceOptions::for_ball(algebra, rho, step))?;
    let spacing = ball_spacing(&field, rule, d1);
    let grid = ball_grid(&field, &spacing, 1.0)?;
    let mask = ball_mask(&field, grid, 1.0);
    let operator = assemble_dirichlet(m, rho, &mask)?;
    let pairs = lowest_eigenvalues(&operator, k.min(operator.nodes.len()), EIGEN_TOL)?;
    Ok(BallProblem { rho, field, mask, operator, pairs })
}

/// Least-squares fit `y(ρ) = limit + slope/ρ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InverseRhoFit {
    pub limit: f64,
    pub slope: f64,
    /// RMS residual over `|limit|`.
    pub relative_residual: f64,
}

pub fn fit_inverse_rho(rho: &[f64], y: &[f64]) -> Result<InverseRhoFit, BallError> {
    if rho.len() < 3 || rho.len() != y.len() || rho.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(BallError::InsufficientRhoRange(rho.to_vec()));
    }
    let n = rho.len() as f64;
    let t: Vec<f64> = rho.iter().map(|r| 1.0 / r).collect();
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let stt: f64 = t.iter().map(|v| (v - tm) * (v - tm)).sum();
    let sty: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let slope = sty / stt;
    let limit = ym - slope * tm;
    let rss: f64 = t.iter().zip(y).map(|(a, b)| (limit + slope * a - b).powi(2)).sum();
    let relative_residual = (rss / n).sqrt() / limit.abs().max(f64::MIN_POSITIVE);
    Ok(InverseRhoFit { limit, slope, relative_residual })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumRow {
    pub rho: f64,
    /// Horizontal nodes per unit length.
    pub grid_n: usize,
    pub spacing: Vec<f64>,
    pub lattice_step: f64,
    pub unknowns: usize,
    pub lambdas: Vec<f64>,
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub rule: ResolutionRule,
    pub rows: Vec<SpectrumRow>,
    /// One fit per eigenvalue index.
    pub limits: Vec<InverseRhoFit>,
    /// Kohn eigenvalues on the Albanese CC ball, when supplied.
    pub reference: Option<Vec<f64>>,
    /// `λ_1^∞ ≤ λ_1(B₂(1)) + tolerance`.
    pub inequality_holds: Option<bool>,
    pub tolerance: f64,
}

/// Solve `B_ρ(1)` for each `ρ` and extrapolate in `1/ρ`.
pub fn macroscopic_study(
    m: &MetricField,
    rhos: &[f64],
    rule: &ResolutionRule,
    k: usize,
    reference: Option<Vec<f64>>,
    tolerance: f64,
) -> Result<StudyReport, BallError> {
    if rhos.len() < 3 || rhos.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(BallError::InsufficientRhoRange(rhos.to_vec()));
    }
    // Collected in ρ order whatever order the workers finish in.
    let rows = rhos
        .par_iter()
        .map(|&rho| {
            let p = solve_ball(m, rho, rule, k)?;
            Ok(SpectrumRow {
                rho,
                grid_n: rule.per_unit(rho),
                spacing: p.mask.grid.spacing().to_vec(),
                lattice_step: p.field.lattice().step(),
                unknowns: p.operator.nodes.len(),
                lambdas: p.pairs.values,
                residuals: p.pairs.residuals,
            })
        })
        .collect::<Result<Vec<_>, BallError>>()?;
    let kk = rows.iter().map(|r| r.lambdas.len()).min().unwrap_or(0);
    let mut limits = Vec::with_capacity(kk);
    for i in 0..kk {
        let y: Vec<f64> = rows.iter().map(|r| r.lambdas[i]).collect();
        let fit = fit_inverse_rho(rhos, &y)?;
        if fit.relative_residual > FIT_TOL {
            return Err(BallError::PoorFit { residual: fit.relative_residual });
        }
        limits.push(fit);
    }
    let inequality_holds = reference
        .as_ref()
        .and_then(|r| r.first().zip(limits.first()))
        .map(|(r, l)| l.limit <= r + tolerance);
    Ok(StudyReport { rule: rule.clone(), rows, limits, reference, inequality_holds, tolerance })
}

/// `∫_{B_ρ(1)} f(δ_ρ x) dμ_ρ` by the nodal rule on a mask.
pub fn masked_integral(
    m: &MetricField,
    rho: f64,
    mask: &BallMask,
    f: impl Fn(&[f64]) -> f64,
) -> Result<f64, BallError> {
    let c = RescaledCoefficients::new(m, rho)?;
    let vol = mask.grid.cell_volume();
    let mut acc = 0.0;
    for (k, &inside) in mask.inside.iter().enumerate() {
        if inside {
            let x = mask.grid.position(k);
            let y = m.algebra().dilate(rho, &x)?;
            acc += vol * c.eval(&x)?.weight * f(&y);
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::left_invariant_metric;
    use crate::oracles::{disk_lambda1, disk_lambda2};
    use nalgebra::{DMatrix, DVector};

    fn flat(n: usize) -> MetricField {
        left_invariant_metric(GradedNilpotentAlgebra::torus(n).unwrap(), &DMatrix::identity(n, n)).unwrap()
    }

    fn flat_disk(n_per_unit: usize) -> (MetricField, BallProblem) {
        let m = flat(2);
        let rule = ResolutionRule { per_rho: 0.0, min_per_unit: n_per_unit, max_per_unit: n_per_unit, vertical_cells: 0, lattice_step: 0.0 };
        let p = solve_ball(&m, 1.0, &rule, 3).unwrap();
        (m, p)
    }

    #[test]
    fn interval_converges_to_quarter_pi_squared() {
        let m = flat(1);
        let target = std::f64::consts::PI.powi(2) / 4.0;
        let mut last = f64::INFINITY;
        for n in [16usize, 32, 64] {
            let rule = ResolutionRule { per_rho: 0.0, min_per_unit: n, max_per_unit: n, vertical_cells: 0, lattice_step: 0.0 };
            let field = distance_field(&m, 1.0, &DistanceOptions {
                step: 1.0 / n as f64,
                fan_radius: 1,
                radius: 1.0,
                half_width: vec![1.5],
                max_expansions: 0,
            })
            .unwrap();
            let grid = ball_grid(&field, &[1.0 / n as f64], 1.0).unwrap();
            let mask = ball_mask(&field, grid, 1.0);
            let op = assemble_dirichlet(&m, 1.0, &mask).unwrap();
            let l = lowest_eigenvalues(&op, 1, EIGEN_TOL).unwrap().values[0];
            let err = (l - target).abs();
            assert!(err < last, "n={n}: {l}");
            last = err;
            let _ = rule;
        }
        assert!(last / target < 2e-3);
    }

    #[test]
    fn flat_disk_against_bessel_zeros() {
        let (_, p) = flat_disk(48);
        let l = &p.pairs.values;
        assert!((l[0] / disk_lambda1() - 1.0).abs() < 0.04, "{l:?}");
        assert!((l[1] / disk_lambda2() - 1.0).abs() < 0.05, "{l:?}");
        assert!((l[1] - l[2]).abs() / l[1] < 0.02, "{l:?}");
    }

    #[test]
    fn one_node_mask() {
        let m = flat(2);
        let grid = BoxGrid::new(vec![-0.1, -0.1], vec![0.1, 0.1], vec![3, 3]).unwrap();
        let mut inside = vec![false; 9];
        inside[4] = true;
        let mask = BallMask { grid, inside };
        let op = assemble_dirichlet(&m, 1.0, &mask).unwrap();
        let l = lowest_eigenvalues(&op, 1, EIGEN_TOL).unwrap().values[0];
        assert_eq!(op.a.n(), 1);
        assert!((l - op.a.get(0, 0) / op.mass[0]).abs() < 1e-12 * l);
        assert!(l > 0.0);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let m = flat(2);
        let grid = BoxGrid::new(vec![0.0, 0.0], vec![0.1, 0.1], vec![3, 3]).unwrap();
        let mask = BallMask { grid, inside: vec![false; 9] };
        assert!(matches!(assemble_dirichlet(&m, 1.0, &mask), Err(BallError::EmptyMask)));
    }

    #[test]
    fn shrinking_the_mask_raises_eigenvalues() {
        let (m, p) = flat_disk(32);
        let small = ball_mask(&p.field, p.mask.grid.clone(), 0.9);
        assert!(small.is_subset_of(&p.mask));
        let op = assemble_dirichlet(&m, 1.0, &small).unwrap();
        let ls = lowest_eigenvalues(&op, 3, EIGEN_TOL).unwrap().values;
        for i in 0..3 {
            assert!(ls[i] >= p.pairs.values[i]);
        }
    }

    #[test]
    fn operator_is_symmetric() {
        let (_, p) = flat_disk(16);
        assert!(p.operator.a.max_asymmetry() < 1e-12);
    }

    #[test]
    fn scaled_metric_shrinks_the_ball() {
        let m = left_invariant_metric(
            GradedNilpotentAlgebra::torus(2).unwrap(),
            &DMatrix::from_diagonal(&DVector::from_row_slice(&[4.0, 1.0])),
        )
        .unwrap();
        let f = distance_field(&m, 1.0, &DistanceOptions::for_ball(m.algebra(), 1.0, 1.0 / 16.0)).unwrap();
        assert!((f.at(&[0.5, 0.0]) - 1.0).abs() < 0.02);
        let (lo, hi) = f.bounds(1.0);
        assert!((hi[0] - 0.5).abs() < 1e-9 && (lo[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn fit_recovers_exact_model() {
        let rho = [4.0, 8.0, 16.0];
        let y: Vec<f64> = rho.iter().map(|r| 3.0 + 2.0 / r).collect();
        let f = fit_inverse_rho(&rho, &y).unwrap();
        assert!((f.limit - 3.0).abs() < 1e-12 && (f.slope - 2.0).abs() < 1e-12);
        assert!(fit_inverse_rho(&rho[..2], &y[..2]).is_err());
    }
}
