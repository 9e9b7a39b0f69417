//! Corrector equations on the fundamental domain and the effective
//! (Albanese) tensor of a periodic metric.
//!
//! For each first-layer index `i` the corrector `χ^i` is the periodic
//! solution of `Δχ^i = Δx_i`, so that `η_i = χ^i - x_i` is harmonic on the
//! cover. The effective tensor is the normalized L² Gram matrix of the
//! harmonic forms `dη_i`.

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::grid::{assemble, GradientBuilder, Grid, GridError, NodeCoefficients, OrthantGradient, PeriodicGrid};
use crate::linalg::{pcg, SolverError};
use crate::metric::{MetricError, MetricField};

/// Relative residual requested from conjugate gradients.
pub const SOLVER_TOL: f64 = 1e-10;
/// Allowed relative mismatch between the direct and Gram formulas for `q`.
pub const FORMULA_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CellError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("corrector solve failed: {0}")]
    Solver(#[from] SolverError),
    #[error("metric and grid are built on different algebras")]
    AlgebraMismatch,
    #[error("direct and Gram forms of q disagree (relative gap {gap:e})")]
    InconsistentFormulas { gap: f64 },
}

pub fn build_periodic_grid(
    algebra: &crate::algebra::GradedNilpotentAlgebra,
    resolution: &[usize],
) -> Result<PeriodicGrid, GridError> {
    PeriodicGrid::new(algebra, resolution)
}

#[derive(Debug, Clone)]
pub struct CorrectorSolution {
    pub grid: PeriodicGrid,
    /// `chi[i][node]` for first-layer index `i`.
    pub chi: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
    /// μ_g-means of the correctors after normalization.
    pub means: Vec<f64>,
    /// Sum of each discrete right-hand side (zero for a solvable system).
    pub rhs_sums: Vec<f64>,
    /// `max |a_ij - a_ji| / max |a_ij|` of the assembled operator.
    pub operator_asymmetry: f64,
    pub tolerance: f64,
    coefficients: Vec<NodeCoefficients>,
}

fn node_coefficients(m: &MetricField, grid: &PeriodicGrid) -> Result<Vec<NodeCoefficients>, CellError> {
    let alg = m.algebra();
    (0..grid.node_count())
        .map(|p| {
            let x = grid.position(p);
            let (ginv, w) = m.inverse_at(&x)?;
            Ok(NodeCoefficients {
                frame: alg.frame(&x).map_err(MetricError::from)?,
                conductivity: ginv.iter().map(|v| v * w).collect(),
                density: w,
            })
        })
        .collect()
}

/// Solve the first-layer corrector equations in weak form.
pub fn solve_correctors(m: &MetricField, grid: &PeriodicGrid) -> Result<CorrectorSolution, CellError> {
    let alg = m.algebra();
    if alg.dim() != grid.dim() || alg.constants() != grid.algebra().constants() {
        return Err(CellError::AlgebraMismatch);
    }
    let n = grid.dim();
    let d1 = alg.horizontal_dim();
    let count = grid.node_count();
    let coefficients = node_coefficients(m, grid)?;
    let unknown: Vec<Option<usize>> = (0..count).map(Some).collect();
    let (a, mass) = assemble(grid, &unknown, count, |p| Ok::<_, CellError>(coefficients[p].clone()))?;
    let operator_asymmetry = a.max_asymmetry() / a.max_abs();

    // b_i(φ) = Σ (|cell| / 2^n) Σ_orthants (F K e_i) · ∇_s φ
    let mut rhs = vec![vec![0.0; count]; d1];
    let mut builder = GradientBuilder::new(n);
    let scale = grid.cell_volume() / builder.orthants() as f64;
    let mut g = OrthantGradient::default();
    for p in 0..count {
        let c = &coefficients[p];
        for i in 0..d1 {
            let flux: Vec<f64> = (0..n).map(|a| (0..n).map(|k| c.frame[a * n + k] * c.conductivity[k * n + i]).sum()).collect();
            for s in 0..builder.orthants() {
                builder.build(grid, p, s, &mut g);
                for (j, &q) in g.nodes.iter().enumerate() {
                    rhs[i][q] += scale * (0..n).map(|a| flux[a] * g.coef[j * n + a]).sum::<f64>();
                }
            }
        }
    }
    let rhs_sums: Vec<f64> = rhs.iter().map(|b| b.iter().sum()).collect();
    let total_mass: f64 = mass.iter().sum();
    let max_iter = 50 * count.max(200);
    let mut out = CorrectorSolution {
        grid: grid.clone(),
        chi: Vec::new(),
        residuals: Vec::new(),
        iterations: Vec::new(),
        means: Vec::new(),
        rhs_sums,
        operator_asymmetry,
        tolerance: SOLVER_TOL,
        coefficients,
    };
    for b in &rhs {
        let sol = pcg(&a, b, SOLVER_TOL, max_iter, true)?;
        let mut chi = sol.x;
        let mean = chi.iter().zip(&mass).map(|(c, m)| c * m).sum::<f64>() / total_mass;
        chi.iter_mut().for_each(|c| *c -= mean);
        out.means.push(chi.iter().zip(&mass).map(|(c, m)| c * m).sum::<f64>() / total_mass);
        out.residuals.push(sol.relative_residual);
        out.iterations.push(sol.iterations);
        out.chi.push(chi);
    }
    Ok(out)
}

impl CorrectorSolution {
    fn horizontal_dim(&self) -> usize {
        self.chi.len()
    }

    /// Frame derivatives `X_k η_i` in every orthant around `node`, for every
    /// first-layer `i`: `out[s][i][k]`.
    fn eta_gradients(&self, node: usize, builder: &mut GradientBuilder, g: &mut OrthantGradient) -> Vec<Vec<Vec<f64>>> {
        let n = self.grid.dim();
        let f = &self.coefficients[node].frame;
        (0..builder.orthants())
            .map(|s| {
                builder.build(&self.grid, node, s, g);
                self.chi
                    .iter()
                    .enumerate()
                    .map(|(i, chi)| {
                        let d: Vec<f64> = (0..n).map(|a| g.nodes.iter().enumerate().map(|(j, &q)| g.coef[j * n + a] * chi[q]).sum()).collect();
                        (0..n).map(|k| (0..n).map(|a| f[a * n + k] * d[a]).sum::<f64>() - if k == i { 1.0 } else { 0.0 }).collect()
                    })
                    .collect()
            })
            .collect()
    }

    fn total_mass(&self) -> f64 {
        self.coefficients.iter().map(|c| c.density).sum::<f64>() * self.grid.cell_volume()
    }
}

/// Effective tensor on the first layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlbaneseTensor {
    /// `q^{ij} = (1/Vol) ∫ (g^{ij} - g^{ik} X_k χ^j) dμ_g`, symmetrized.
    pub q: Vec<Vec<f64>>,
    /// `q^{ij} = (1/Vol) ⟨dη_i, dη_j⟩` computed independently.
    pub q_gram: Vec<Vec<f64>>,
    /// Relative gap between the two.
    pub formula_gap: f64,
    /// `μ_g` of the fundamental domain.
    pub volume: f64,
    pub resolution: Vec<usize>,
    pub solver_tolerance: f64,
}

impl AlbaneseTensor {
    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.q.len();
        DMatrix::from_fn(d, d, |i, j| self.q[i][j])
    }
}

pub fn albanese_tensor(sol: &CorrectorSolution) -> Result<AlbaneseTensor, CellError> {
    let n = sol.grid.dim();
    let d1 = sol.horizontal_dim();
    let mut builder = GradientBuilder::new(n);
    let mut g = OrthantGradient::default();
    let per = sol.grid.cell_volume() / builder.orthants() as f64;
    let mut direct = vec![vec![0.0; d1]; d1];
    let mut gram = vec![vec![0.0; d1]; d1];
    for p in 0..sol.grid.node_count() {
        let k = &sol.coefficients[p].conductivity;
        for grads in sol.eta_gradients(p, &mut builder, &mut g) {
            for i in 0..d1 {
                for j in 0..d1 {
                    // X χ^j = X η_j + e_j
                    let xchi_j: Vec<f64> = (0..n).map(|l| grads[j][l] + if l == j { 1.0 } else { 0.0 }).collect();
                    direct[i][j] += per * (k[i * n + j] - (0..n).map(|l| k[i * n + l] * xchi_j[l]).sum::<f64>());
                    gram[i][j] += per
                        * (0..n).map(|a| (0..n).map(|b| grads[i][a] * k[a * n + b] * grads[j][b]).sum::<f64>()).sum::<f64>();
                }
            }
        }
    }
    let vol = sol.total_mass();
    let mut q = vec![vec![0.0; d1]; d1];
    let mut scale = 0.0f64;
    let mut gap = 0.0f64;
    for i in 0..d1 {
        for j in 0..d1 {
            q[i][j] = 0.5 * (direct[i][j] + direct[j][i]) / vol;
            gram[i][j] /= vol;
            scale = scale.max(q[i][j].abs());
        }
    }
    for i in 0..d1 {
        for j in 0..d1 {
            gap = gap.max((q[i][j] - gram[i][j]).abs() / scale);
        }
    }
    if !(gap <= FORMULA_TOL) {
        return Err(CellError::InconsistentFormulas { gap });
    }
    Ok(AlbaneseTensor {
        q,
        q_gram: gram,
        formula_gap: gap,
        volume: vol,
        resolution: sol.grid.resolution().to_vec(),
        solver_tolerance: sol.tolerance,
    })
}

/// Pointwise lengths `‖dη_i‖_g` and their μ_g-statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicLengths {
    /// `lengths[i][node]`.
    pub lengths: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

pub fn harmonic_length_field(sol: &CorrectorSolution) -> HarmonicLengths {
    let n = sol.grid.dim();
    let d1 = sol.horizontal_dim();
    let mut builder = GradientBuilder::new(n);
    let mut g = OrthantGradient::default();
    let count = sol.grid.node_count();
    let mut lengths = vec![vec![0.0; count]; d1];
    for p in 0..count {
        let c = &sol.coefficients[p];
        let grads = sol.eta_gradients(p, &mut builder, &mut g);
        for i in 0..d1 {
            let sq: f64 = grads
                .iter()
                .map(|gr| (0..n).map(|a| (0..n).map(|b| gr[i][a] * c.conductivity[a * n + b] * gr[i][b]).sum::<f64>()).sum::<f64>())
                .sum::<f64>()
                / (grads.len() as f64 * c.density);
            lengths[i][p] = sq.sqrt();
        }
    }
    let w: Vec<f64> = sol.coefficients.iter().map(|c| c.density).collect();
    let wsum: f64 = w.iter().sum();
    let mut mean = Vec::new();
    let mut variance = Vec::new();
    for l in &lengths {
        let m = l.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / wsum;
        variance.push(l.iter().zip(&w).map(|(a, b)| (a - m).powi(2) * b).sum::<f64>() / wsum);
        mean.push(m);
    }
    HarmonicLengths { lengths, mean, variance }
}

/// Normalized L² norm against sup norm of one harmonic form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormPair {
    pub coefficients: Vec<f64>,
    pub l2: f64,
    pub sup: f64,
}

/// For `samples` random unit combinations `α = Σ c_i dη_i` (plus the zero
/// form), the normalized L² norm and the sup norm of `|α|_g`.
pub fn norm_comparison<R: Rng + ?Sized>(sol: &CorrectorSolution, samples: usize, rng: &mut R) -> Vec<NormPair> {
    let n = sol.grid.dim();
    let d1 = sol.horizontal_dim();
    let mut combos: Vec<Vec<f64>> = vec![vec![0.0; d1]];
    for _ in 0..samples {
        let v: Vec<f64> = (0..d1).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        combos.push(v.iter().map(|x| x / norm).collect());
    }
    let mut builder = GradientBuilder::new(n);
    let mut g = OrthantGradient::default();
    let mut l2 = vec![0.0; combos.len()];
    let mut sup = vec![0.0f64; combos.len()];
    let mut mass = 0.0;
    for p in 0..sol.grid.node_count() {
        let c = &sol.coefficients[p];
        let grads = sol.eta_gradients(p, &mut builder, &mut g);
        mass += c.density;
        for (t, coef) in combos.iter().enumerate() {
            let mut sq = 0.0;
            for gr in &grads {
                let alpha: Vec<f64> = (0..n).map(|k| (0..d1).map(|i| coef[i] * gr[i][k]).sum()).collect();
                sq += (0..n).map(|a| (0..n).map(|b| alpha[a] * c.conductivity[a * n + b] * alpha[b]).sum::<f64>()).sum::<f64>();
            }
            sq /= grads.len() as f64;
            l2[t] += sq;
            sup[t] = sup[t].max((sq / c.density).sqrt());
        }
    }
    combos
        .into_iter()
        .enumerate()
        .map(|(t, coefficients)| NormPair { coefficients, l2: (l2[t] / mass).sqrt(), sup: sup[t] })
        .collect()
}

/// Machine-readable summary of a cell computation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRecord {
    pub q: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub variance_per_form: Vec<f64>,
    pub grid: GridRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRecord {
    pub resolution: Vec<usize>,
    pub offset: Vec<f64>,
    pub solver_tolerance: f64,
}

impl CellRecord {
    pub fn new(sol: &CorrectorSolution, q: &AlbaneseTensor, lengths: &HarmonicLengths) -> Self {
        CellRecord {
            q: q.q.clone(),
            residuals: sol.residuals.clone(),
            variance_per_form: lengths.variance.clone(),
            grid: GridRecord {
                resolution: sol.grid.resolution().to_vec(),
                offset: sol.grid.offset().to_vec(),
                solver_tolerance: sol.tolerance,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::GradedNilpotentAlgebra;
    use crate::expr::{parse, Expr};
    use crate::metric::{left_invariant_metric, pseudo_left_invariant_metric};
    use crate::oracles::cell_corrector_1d;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn torus2() -> GradedNilpotentAlgebra {
        GradedNilpotentAlgebra::torus(2).unwrap()
    }

    /// Frame metric diag(1/a, a): conductivity diag(a, 1/a).
    fn laminate() -> MetricField {
        let rows = vec![
            vec!["1/(1+0.5*sin(2*pi*x1))".to_string(), "0".to_string()],
            vec!["1+0.5*sin(2*pi*x1)".to_string()],
        ];
        MetricField::from_text(torus2(), &rows).unwrap()
    }

    #[test]
    fn constant_metric_has_zero_correctors() {
        let q = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let m = left_invariant_metric(torus2(), &q).unwrap();
        let grid = build_periodic_grid(&torus2(), &[16, 16]).unwrap();
        let sol = solve_correctors(&m, &grid).unwrap();
        assert!(sol.chi.iter().flatten().all(|c| c.abs() < 1e-12));
        let t = albanese_tensor(&sol).unwrap();
        let inv = q.try_inverse().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((t.q[i][j] - inv[(i, j)]).abs() < 1e-12);
            }
        }
        let lengths = harmonic_length_field(&sol);
        assert!(lengths.variance.iter().all(|v| *v < 1e-24));
        let pairs = norm_comparison(&sol, 5, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!((pairs[0].l2, pairs[0].sup), (0.0, 0.0));
        for p in &pairs[1..] {
            assert!((p.l2 - p.sup).abs() < 1e-12);
        }
    }

    #[test]
    fn heisenberg_left_invariant_gives_identity() {
        let h3 = GradedNilpotentAlgebra::heisenberg(3).unwrap();
        let m = left_invariant_metric(h3.clone(), &DMatrix::identity(3, 3)).unwrap();
        let grid = build_periodic_grid(&h3, &[8, 8, 8]).unwrap();
        let sol = solve_correctors(&m, &grid).unwrap();
        let t = albanese_tensor(&sol).unwrap();
        assert!((t.q[0][0] - 1.0).abs() < 1e-10 && (t.q[1][1] - 1.0).abs() < 1e-10 && t.q[0][1].abs() < 1e-10);
    }

    #[test]
    fn laminate_corrector_matches_one_dimensional_oracle() {
        let a = |x: f64| 1.0 + 0.5 * (2.0 * PI * x).sin();
        let mut errs = Vec::new();
        for n in [32usize, 64] {
            let grid = build_periodic_grid(&torus2(), &[n, 8]).unwrap();
            let sol = solve_correctors(&laminate(), &grid).unwrap();
            assert!(sol.rhs_sums.iter().all(|s| s.abs() < 1e-10));
            assert!(sol.means.iter().all(|m| m.abs() < 1e-10));
            // The oracle solves (a (1 + χ'))' = 0; here η = χ - x, so the sign flips.
            // Both are compared at zero μ_g-mean (density 1).
            let oracle: Vec<f64> = (0..n).map(|i| cell_corrector_1d(a, i as f64 / n as f64).1).collect();
            let mean = oracle.iter().sum::<f64>() / n as f64;
            let err = (0..n)
                .map(|i| (sol.chi[0][grid.index_of(&[i, 3])] + (oracle[i] - mean)).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        assert!(errs[1] < errs[0] / 3.0, "{errs:?}");
        assert!(errs[0] * 32.0 * 32.0 < 5.0, "{errs:?}");
    }

    #[test]
    fn laminate_tensor_and_lengths() {
        let grid = build_periodic_grid(&torus2(), &[128, 8]).unwrap();
        let sol = solve_correctors(&laminate(), &grid).unwrap();
        assert!(sol.operator_asymmetry <= 1e-12);
        let t = albanese_tensor(&sol).unwrap();
        let harmonic = 0.75f64.sqrt();
        assert!((t.q[0][0] - harmonic).abs() < 0.01 * harmonic);
        assert!((t.q[1][1] - 1.0 / harmonic).abs() < 0.01 / harmonic);
        assert!(t.q[0][1].abs() < 1e-10);
        let lengths = harmonic_length_field(&sol);
        assert!(lengths.variance[0] > 1e-2, "{:?}", lengths.variance);
        let pairs = norm_comparison(&sol, 0, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(pairs.len(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e1 = norm_comparison(&sol, 40, &mut rng);
        assert!(e1.iter().all(|p| p.l2 <= p.sup + 1e-12));
    }

    #[test]
    fn laminate_refinement_order() {
        let q: Vec<f64> = [16usize, 32, 64]
            .iter()
            .map(|&n| {
                let grid = build_periodic_grid(&torus2(), &[n, 8]).unwrap();
                albanese_tensor(&solve_correctors(&laminate(), &grid).unwrap()).unwrap().q[0][0]
            })
            .collect();
        let order = ((q[0] - q[1]).abs() / (q[1] - q[2]).abs()).log2();
        assert!(order >= 1.5, "{q:?} order {order}");
    }

    #[test]
    fn offset_box_gives_same_tensor() {
        let g0 = build_periodic_grid(&torus2(), &[64, 8]).unwrap();
        let g1 = PeriodicGrid::with_offset(&torus2(), &[64, 8], &[0.3172, -0.41]).unwrap();
        let a = albanese_tensor(&solve_correctors(&laminate(), &g0).unwrap()).unwrap();
        let b = albanese_tensor(&solve_correctors(&laminate(), &g1).unwrap()).unwrap();
        assert!((a.q[0][0] - b.q[0][0]).abs() <= 1e-6 * a.q[0][0]);
    }

    #[test]
    fn pseudo_left_invariant_lengths_are_constant() {
        let h3 = GradedNilpotentAlgebra::heisenberg(3).unwrap();
        let a1 = parse("0.1*sin(2*pi*x2)", 3).unwrap();
        let m = pseudo_left_invariant_metric(h3.clone(), &DMatrix::identity(2, 2), a1, Expr::num(0.0)).unwrap();
        let grid = build_periodic_grid(&h3, &[16, 16, 8]).unwrap();
        let sol = solve_correctors(&m, &grid).unwrap();
        assert!(sol.means.iter().all(|m| m.abs() < 1e-10));
        let t = albanese_tensor(&sol).unwrap();
        assert!((t.q[0][0] - 1.0).abs() < 1e-8 && (t.q[1][1] - 1.0).abs() < 1e-8);
        let lengths = harmonic_length_field(&sol);
        assert!(lengths.variance.iter().all(|v| *v < 1e-12), "{:?}", lengths.variance);
    }

    #[test]
    fn mismatched_algebra_rejected() {
        let m = laminate();
        let grid = build_periodic_grid(&GradedNilpotentAlgebra::heisenberg(3).unwrap(), &[8, 8, 8]).unwrap();
        assert!(matches!(solve_correctors(&m, &grid), Err(CellError::AlgebraMismatch)));
    }
}
