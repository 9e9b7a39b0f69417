//! Γ-periodic Riemannian metrics written in the left-invariant frame.
//!
//! Entry `(i, j)` of a [`MetricField`] is `g(X_i, X_j)` as a function of the
//! first-kind coordinates. Because the frame is left-invariant, lattice
//! periodicity of the metric is plain invariance of each entry under the
//! left lattice action.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::algebra::{AlgebraError, GradedNilpotentAlgebra};
use crate::expr::{self, check_lattice_periodicity, EvalError, Expr, ParseError, PeriodicityError};

/// Smallest eigenvalue accepted by the construction-time sampling.
pub const SPD_FLOOR: f64 = 1e-8;
/// Entrywise tolerance of the construction-time periodicity check.
pub const PERIODICITY_TOL: f64 = 1e-9;
const PERIODICITY_SAMPLES: usize = 200;
const PERIODICITY_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("entry ({row}, {col}): {source}")]
    Parse { row: usize, col: usize, source: ParseError },
    #[error("expected a {expected}x{expected} matrix, found {found}")]
    Shape { expected: usize, found: String },
    #[error("entries ({i}, {j}) and ({j}, {i}) differ")]
    NotSymmetric { i: usize, j: usize },
    #[error("metric is not positive definite at {x:?} (smallest eigenvalue {eigenvalue:e})")]
    NotPositiveDefinite { x: Vec<f64>, eigenvalue: f64 },
    #[error("entry ({i}, {j}) is not lattice periodic (violation {violation:e} at {point:?})")]
    PeriodicityViolation { i: usize, j: usize, violation: f64, point: Vec<f64> },
    #[error("perturbation a{index} depends on x3")]
    VerticalDependence { index: usize },
    #[error("pseudo left-invariant metrics are built on heisenberg:3 only")]
    NotHeisenberg3,
    #[error("rescaling factor must be at least 1, got {0}")]
    BadRho(f64),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

impl From<PeriodicityError> for MetricError {
    fn from(e: PeriodicityError) -> Self {
        match e {
            PeriodicityError::Eval(e) => MetricError::Eval(e),
            PeriodicityError::Algebra(e) => MetricError::Algebra(e),
            PeriodicityError::TooFewSamples(_) => unreachable!("sample count is fixed"),
        }
    }
}

/// How a metric was specified; kept so reports can echo it.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricKind {
    Expr,
    LeftInvariant,
    PseudoLeftInvariant,
}

#[derive(Debug, Clone)]
pub struct MetricField {
    algebra: GradedNilpotentAlgebra,
    /// Full symmetric `n x n` table (lower entries clone the upper ones).
    entries: Vec<Expr>,
    /// Value of each entry when it is constant.
    constants: Vec<Option<f64>>,
    kind: MetricKind,
}

impl MetricField {
    /// Parse a metric from expression text. Each row may hold the full
    /// `n` entries or only the upper triangle (`n - i` entries for row `i`).
    pub fn from_text(algebra: GradedNilpotentAlgebra, rows: &[Vec<String>]) -> Result<Self, MetricError> {
        let n = algebra.dim();
        if rows.len() != n {
            return Err(MetricError::Shape { expected: n, found: format!("{} rows", rows.len()) });
        }
        let mut upper = Vec::with_capacity(n * (n + 1) / 2);
        let mut lower: Vec<(usize, usize, Expr)> = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            let full = row.len() == n;
            if !full && row.len() != n - i {
                return Err(MetricError::Shape { expected: n, found: format!("row {i} with {} entries", row.len()) });
            }
            for (c, text) in row.iter().enumerate() {
                let j = if full { c } else { i + c };
                let e = expr::parse(text, n).map_err(|source| MetricError::Parse { row: i, col: j, source })?;
                if j >= i {
                    upper.push(e);
                } else {
                    lower.push((i, j, e));
                }
            }
        }
        let m = Self::from_upper(algebra, upper, MetricKind::Expr)?;
        for (i, j, e) in lower {
            if e != m.entries[j * n + i] {
                return Err(MetricError::NotSymmetric { i, j });
            }
        }
        Ok(m)
    }

    /// Build from upper-triangle trees in row order and validate.
    pub fn from_upper(algebra: GradedNilpotentAlgebra, upper: Vec<Expr>, kind: MetricKind) -> Result<Self, MetricError> {
        let n = algebra.dim();
        if upper.len() != n * (n + 1) / 2 {
            return Err(MetricError::Shape { expected: n, found: format!("{} upper entries", upper.len()) });
        }
        let mut entries = vec![Expr::Number(0.0); n * n];
        let mut it = upper.into_iter();
        for i in 0..n {
            for j in i..n {
                let e = it.next().unwrap();
                entries[j * n + i] = e.clone();
                entries[i * n + j] = e;
            }
        }
        let constants = entries.iter().map(Expr::constant_value).collect();
        let m = MetricField { algebra, entries, constants, kind };
        m.check_periodic()?;
        m.check_positive_on_samples()?;
        Ok(m)
    }

    fn check_periodic(&self) -> Result<(), MetricError> {
        let n = self.dim();
        if self.algebra.step() > 2 {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(PERIODICITY_SEED);
        for i in 0..n {
            for j in i..n {
                if self.constants[i * n + j].is_some() {
                    continue;
                }
                let e = &self.entries[i * n + j];
                let r = check_lattice_periodicity(e, &self.algebra, PERIODICITY_SAMPLES, PERIODICITY_TOL, &mut rng)?;
                if !r.pass {
                    return Err(MetricError::PeriodicityViolation { i, j, violation: r.worst_violation, point: r.worst_point });
                }
            }
        }
        Ok(())
    }

    /// Sample `[0, 1]^n` on a 17-point grid per axis (random points with a
    /// fixed seed beyond three dimensions) and require `λ_min ≥ SPD_FLOOR`.
    fn check_positive_on_samples(&self) -> Result<(), MetricError> {
        let n = self.dim();
        let mut points: Vec<Vec<f64>> = Vec::new();
        if self.constants.iter().all(Option::is_some) {
            points.push(vec![0.0; n]);
        } else if n <= 3 {
            let total = 17usize.pow(n as u32);
            for mut idx in 0..total {
                let mut p = vec![0.0; n];
                for v in p.iter_mut() {
                    *v = (idx % 17) as f64 / 16.0;
                    idx /= 17;
                }
                points.push(p);
            }
        } else {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(PERIODICITY_SEED);
            for _ in 0..5000 {
                points.push((0..n).map(|_| rng.gen_range(0.0..1.0)).collect());
            }
        }
        let mut g = vec![0.0; n * n];
        for p in points {
            self.eval_into(&p, &mut g)?;
            let ev = min_eigenvalue(&g, n);
            if !(ev >= SPD_FLOOR) {
                return Err(MetricError::NotPositiveDefinite { x: p, eigenvalue: ev });
            }
        }
        Ok(())
    }

    pub fn algebra(&self) -> &GradedNilpotentAlgebra {
        &self.algebra
    }

    pub fn dim(&self) -> usize {
        self.algebra.dim()
    }

    pub fn kind(&self) -> &MetricKind {
        &self.kind
    }

    /// Entry trees of the full symmetric table, row-major.
    pub fn entries(&self) -> &[Expr] {
        &self.entries
    }

    /// True when every entry is a constant (a left-invariant metric).
    pub fn is_constant(&self) -> bool {
        self.constants.iter().all(Option::is_some)
    }

    /// Evaluate the frame metric at `x` without any positivity check.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        let n = self.dim();
        for i in 0..n {
            for j in i..n {
                let v = match self.constants[i * n + j] {
                    Some(v) => v,
                    None => self.entries[i * n + j].eval(x)?,
                };
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
        Ok(())
    }

    /// The frame metric at `x` and its determinant.
    pub fn metric_at(&self, x: &[f64]) -> Result<(DMatrix<f64>, f64), MetricError> {
        let n = self.dim();
        if x.len() != n {
            return Err(AlgebraError::PointDimension { expected: n, got: x.len() }.into());
        }
        let mut g = vec![0.0; n * n];
        self.eval_into(x, &mut g)?;
        let m = DMatrix::from_row_slice(n, n, &g);
        match m.clone().cholesky() {
            Some(c) => {
                let det = c.l_dirty().diagonal().iter().map(|d| d * d).product();
                Ok((m, det))
            }
            None => Err(MetricError::NotPositiveDefinite { x: x.to_vec(), eigenvalue: min_eigenvalue(&g, n) }),
        }
    }

    /// Inverse frame metric and `sqrt(det g)` at `x`.
    pub fn inverse_at(&self, x: &[f64]) -> Result<(Vec<f64>, f64), MetricError> {
        let n = self.dim();
        let mut g = vec![0.0; n * n];
        self.eval_into(x, &mut g)?;
        let (inv, det) = spd_inverse(&g, n).ok_or_else(|| MetricError::NotPositiveDefinite {
            x: x.to_vec(),
            eigenvalue: min_eigenvalue(&g, n),
        })?;
        Ok((inv, det.sqrt()))
    }
}

/// Inverse and determinant of a symmetric positive definite row-major matrix.
pub fn spd_inverse(g: &[f64], n: usize) -> Option<(Vec<f64>, f64)> {
    match n {
        1 => (g[0] > 0.0).then(|| (vec![1.0 / g[0]], g[0])),
        2 => {
            let det = g[0] * g[3] - g[1] * g[2];
            (g[0] > 0.0 && det > 0.0).then(|| (vec![g[3] / det, -g[1] / det, -g[2] / det, g[0] / det], det))
        }
        _ => {
            let c = DMatrix::from_row_slice(n, n, g).cholesky()?;
            let det = c.l_dirty().diagonal().iter().map(|d| d * d).product();
            let inv = c.inverse();
            Some((inv.transpose().as_slice().to_vec(), det))
        }
    }
}

pub fn min_eigenvalue(g: &[f64], n: usize) -> f64 {
    let m = DMatrix::from_row_slice(n, n, g);
    SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Left-invariant metric with constant frame matrix `q`.
pub fn left_invariant_metric(algebra: GradedNilpotentAlgebra, q: &DMatrix<f64>) -> Result<MetricField, MetricError> {
    let n = algebra.dim();
    if q.nrows() != n || q.ncols() != n {
        return Err(MetricError::Shape { expected: n, found: format!("{}x{}", q.nrows(), q.ncols()) });
    }
    let mut upper = Vec::new();
    for i in 0..n {
        for j in i..n {
            if q[(i, j)] != q[(j, i)] {
                return Err(MetricError::NotSymmetric { i: j, j: i });
            }
            upper.push(Expr::Number(q[(i, j)]));
        }
    }
    MetricField::from_upper(algebra, upper, MetricKind::LeftInvariant)
}

/// Metric on `heisenberg:3` whose coframe `(α₁, α₂, ϑ)` is orthonormal, with
/// `α` a flat coframe for `torus` on the first layer and
/// `ϑ = ω₃ + a₁ ω₁ + a₂ ω₂` (`ω` the left-invariant coframe dual to `X`).
///
/// In the frame this reads `g_ab = T_ab + a_a a_b`, `g_a3 = a_a`, `g_33 = 1`.
pub fn pseudo_left_invariant_metric(
    algebra: GradedNilpotentAlgebra,
    torus: &DMatrix<f64>,
    a1: Expr,
    a2: Expr,
) -> Result<MetricField, MetricError> {
    if algebra.dim() != 3 || algebra.layer_dims() != [2, 1] {
        return Err(MetricError::NotHeisenberg3);
    }
    if torus.nrows() != 2 || torus.ncols() != 2 {
        return Err(MetricError::Shape { expected: 2, found: format!("{}x{}", torus.nrows(), torus.ncols()) });
    }
    if torus[(0, 1)] != torus[(1, 0)] {
        return Err(MetricError::NotSymmetric { i: 1, j: 0 });
    }
    let a = [a1.simplify(), a2.simplify()];
    for (k, e) in a.iter().enumerate() {
        if e.uses_var(3) {
            return Err(MetricError::VerticalDependence { index: k + 1 });
        }
    }
    let sq = |i: usize, j: usize| {
        Expr::Add(Box::new(Expr::Number(torus[(i, j)])), Box::new(Expr::Mul(Box::new(a[i].clone()), Box::new(a[j].clone()))))
            .simplify()
    };
    let upper = vec![sq(0, 0), sq(0, 1), a[0].clone(), sq(1, 1), a[1].clone(), Expr::Number(1.0)];
    MetricField::from_upper(algebra, upper, MetricKind::PseudoLeftInvariant)
}

/// Map `x` to `γ⁻¹ x` in the box `offset + [0, 1)^n`: integer left shifts
/// along each first-layer axis in turn, then plain wraps of the central
/// coordinates.
pub fn reduce_to_fundamental_domain(
    algebra: &GradedNilpotentAlgebra,
    x: &[f64],
    offset: &[f64],
) -> Result<Vec<f64>, AlgebraError> {
    if algebra.step() > 2 {
        return Err(AlgebraError::UnsupportedStep(algebra.step()));
    }
    let n = algebra.dim();
    if x.len() != n || offset.len() != n {
        return Err(AlgebraError::PointDimension { expected: n, got: x.len().min(offset.len()) });
    }
    let d1 = algebra.horizontal_dim();
    let mut y = x.to_vec();
    let mut shift = vec![0.0; n];
    for p in 0..d1 {
        for _ in 0..2 {
            let k = (y[p] - offset[p]).floor();
            if k == 0.0 {
                break;
            }
            shift[p] = -k;
            y = algebra.multiply(&shift, &y)?;
            shift[p] = 0.0;
        }
    }
    for q in d1..n {
        y[q] -= (y[q] - offset[q]).floor();
        if y[q] - offset[q] >= 1.0 {
            y[q] -= 1.0;
        }
    }
    Ok(y)
}

/// Coefficients of the rescaled metric `ρ⁻² δ_ρ* g` in the frame.
#[derive(Debug, Clone)]
pub struct RescaledCoefficients<'a> {
    metric: &'a MetricField,
    rho: f64,
    /// `ρ^(α(i) + α(j) - 2)`, row-major.
    scale: Vec<f64>,
    offset: Vec<f64>,
}

/// One evaluation of [`RescaledCoefficients`].
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledSample {
    /// Frame metric of `g_ρ`.
    pub g: Vec<f64>,
    /// Inverse frame metric of `g_ρ`.
    pub ginv: Vec<f64>,
    /// `sqrt(det g(δ_ρ x))`, the density of `μ_ρ` against Haar measure.
    pub weight: f64,
}

impl<'a> RescaledCoefficients<'a> {
    pub fn new(metric: &'a MetricField, rho: f64) -> Result<Self, MetricError> {
        if !(rho >= 1.0) || !rho.is_finite() {
            return Err(MetricError::BadRho(rho));
        }
        let n = metric.dim();
        let w = metric.algebra().weights();
        let mut scale = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                scale[i * n + j] = rho.powi(w[i] as i32 + w[j] as i32 - 2);
            }
        }
        Ok(RescaledCoefficients { metric, rho, scale, offset: vec![0.0; n] })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn metric(&self) -> &MetricField {
        self.metric
    }

    /// Frame metric of `g_ρ` at `x`, skipping the inverse.
    pub fn frame_metric_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), MetricError> {
        let alg = self.metric.algebra();
        if self.metric.is_constant() {
            self.metric.eval_into(x, out)?;
        } else {
            let y = alg.dilate(self.rho, x)?;
            let y = if alg.step() > 2 { y } else { reduce_to_fundamental_domain(alg, &y, &self.offset)? };
            self.metric.eval_into(&y, out)?;
        }
        for (o, s) in out.iter_mut().zip(&self.scale) {
            *o *= s;
        }
        Ok(())
    }

    /// Evaluate at `x` through `reduce_to_fundamental_domain(δ_ρ x)`.
    pub fn eval(&self, x: &[f64]) -> Result<RescaledSample, MetricError> {
        let n = self.metric.dim();
        let alg = self.metric.algebra();
        let y = alg.dilate(self.rho, x)?;
        let y = if self.metric.is_constant() || alg.step() > 2 {
            y
        } else {
            reduce_to_fundamental_domain(alg, &y, &self.offset)?
        };
        let mut g = vec![0.0; n * n];
        self.metric.eval_into(&y, &mut g)?;
        let (mut ginv, det) = spd_inverse(&g, n).ok_or_else(|| MetricError::NotPositiveDefinite {
            x: y.clone(),
            eigenvalue: min_eigenvalue(&g, n),
        })?;
        for k in 0..n * n {
            g[k] *= self.scale[k];
            ginv[k] /= self.scale[k];
        }
        Ok(RescaledSample { g, ginv, weight: det.sqrt() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use proptest::prelude::*;

    fn text(rows: &[&[&str]]) -> Vec<Vec<String>> {
        rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect()
    }

    fn h3() -> GradedNilpotentAlgebra {
        GradedNilpotentAlgebra::heisenberg(3).unwrap()
    }

    #[test]
    fn identity_metric_everywhere() {
        let m = MetricField::from_text(h3(), &text(&[&["1", "0", "0"], &["1", "0"], &["1"]])).unwrap();
        let (g, det) = m.metric_at(&[3.0, -2.0, 7.5]).unwrap();
        assert_eq!(g, DMatrix::identity(3, 3));
        assert_eq!(det, 1.0);
    }

    #[test]
    fn laminate_value_at_quarter() {
        let t2 = GradedNilpotentAlgebra::torus(2).unwrap();
        let m = MetricField::from_text(t2, &text(&[&["1+0.5*sin(2*pi*x1)", "0"], &["0", "1"]])).unwrap();
        let (g, det) = m.metric_at(&[0.25, 0.3]).unwrap();
        assert!((g[(0, 0)] - 1.5).abs() < 1e-15 && g[(1, 1)] == 1.0 && g[(0, 1)] == 0.0);
        assert!((det - 1.5).abs() < 1e-15);
    }

    #[test]
    fn negative_entry_rejected_at_construction() {
        let t2 = GradedNilpotentAlgebra::torus(2).unwrap();
        let err = MetricField::from_text(t2, &text(&[&["-1", "0"], &["1"]])).unwrap_err();
        assert!(matches!(err, MetricError::NotPositiveDefinite { eigenvalue, .. } if eigenvalue == -1.0));
    }

    #[test]
    fn asymmetric_full_rows_rejected() {
        let t2 = GradedNilpotentAlgebra::torus(2).unwrap();
        let err = MetricField::from_text(t2, &text(&[&["2", "0.1"], &["0.2", "1"]])).unwrap_err();
        assert_eq!(err, MetricError::NotSymmetric { i: 1, j: 0 });
    }

    #[test]
    fn non_periodic_entry_rejected() {
        let t2 = GradedNilpotentAlgebra::torus(2).unwrap();
        let err = MetricField::from_text(t2, &text(&[&["2+sin(x1)", "0"], &["1"]])).unwrap_err();
        assert!(matches!(err, MetricError::PeriodicityViolation { i: 0, j: 0, .. }));
        // Plain x3 periodicity is not enough: the x2 generator shifts x3 by -x1/2.
        let err = MetricField::from_text(h3(), &text(&[&["2+sin(2*pi*x3)*cos(2*pi*x1)", "0", "0"], &["1", "0"], &["1"]]));
        assert!(matches!(err, Err(MetricError::PeriodicityViolation { .. })));
        let err = MetricField::from_text(h3(), &text(&[&["2+sin(2*pi*(x3+x1))", "0", "0"], &["1", "0"], &["1"]])).unwrap_err();
        assert!(matches!(err, MetricError::PeriodicityViolation { .. }));
    }

    #[test]
    fn reduce_examples() {
        let t2 = GradedNilpotentAlgebra::torus(2).unwrap();
        let y = reduce_to_fundamental_domain(&t2, &[2.3, -0.7], &[0.0, 0.0]).unwrap();
        assert!((y[0] - 0.3).abs() < 1e-12 && (y[1] - 0.3).abs() < 1e-12);
        let y = reduce_to_fundamental_domain(&h3(), &[1.2, 0.5, 0.0], &[0.0; 3]).unwrap();
        assert!((y[0] - 0.2).abs() < 1e-12 && (y[1] - 0.5).abs() < 1e-15 && (y[2] - 0.75).abs() < 1e-15);
        // Cross-check with the group law: e₁⁻¹ * x, then the central wrap.
        let z = h3().multiply(&[-1.0, 0.0, 0.0], &[1.2, 0.5, 0.0]).unwrap();
        assert!((z[2] + 0.25).abs() < 1e-15);
        let inside = [0.1, 0.9, 0.4];
        assert_eq!(reduce_to_fundamental_domain(&h3(), &inside, &[0.0; 3]).unwrap(), inside);
    }

    #[test]
    fn reduce_respects_offset_box() {
        let y = reduce_to_fundamental_domain(&h3(), &[0.7, -1.6, 3.1], &[-0.5, -0.5, -0.5]).unwrap();
        assert!(y.iter().all(|v| (-0.5..0.5).contains(v)), "{y:?}");
    }

    #[test]
    fn left_invariant_constructor() {
        let t2 = GradedNilpotentAlgebra::torus(2).unwrap();
        let m = left_invariant_metric(t2.clone(), &DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0])).unwrap();
        assert!(m.is_constant());
        assert_eq!(m.metric_at(&[0.3, 0.9]).unwrap().1, 4.0);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(left_invariant_metric(t2, &bad), Err(MetricError::NotSymmetric { .. })));
    }

    #[test]
    fn pseudo_left_invariant_zero_perturbation_is_standard() {
        let p = pseudo_left_invariant_metric(h3(), &DMatrix::identity(2, 2), Expr::num(0.0), Expr::num(0.0)).unwrap();
        let l = left_invariant_metric(h3(), &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(p.entries(), l.entries());
    }

    #[test]
    fn pseudo_left_invariant_structure() {
        let a1 = parse("0.1*sin(2*pi*x2)", 3).unwrap();
        let m = pseudo_left_invariant_metric(h3(), &DMatrix::identity(2, 2), a1, Expr::num(0.0)).unwrap();
        assert!(!m.is_constant());
        let x = [0.3, 0.125, 0.7];
        let (g, det) = m.metric_at(&x).unwrap();
        let a = 0.1 * (2.0 * std::f64::consts::PI * 0.125).sin();
        assert!((g[(0, 0)] - (1.0 + a * a)).abs() < 1e-15 && (g[(0, 2)] - a).abs() < 1e-15);
        assert!((det - 1.0).abs() < 1e-14);
        let bad = parse("0.1*sin(2*pi*x3)", 3).unwrap();
        let err = pseudo_left_invariant_metric(h3(), &DMatrix::identity(2, 2), bad, Expr::num(0.0)).unwrap_err();
        assert_eq!(err, MetricError::VerticalDependence { index: 1 });
    }

    #[test]
    fn rescaled_weights() {
        let m = left_invariant_metric(h3(), &DMatrix::identity(3, 3)).unwrap();
        let r1 = RescaledCoefficients::new(&m, 1.0).unwrap().eval(&[0.2, 0.1, 0.3]).unwrap();
        assert_eq!(r1.ginv, m.inverse_at(&[0.2, 0.1, 0.3]).unwrap().0);
        let r = RescaledCoefficients::new(&m, 10.0).unwrap().eval(&[0.2, 0.1, 0.3]).unwrap();
        assert!((r.ginv[8] - 0.01).abs() < 1e-16);
        let q = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.3, 0.0, 1.0, 0.0, 0.3, 0.0, 1.0]);
        let m = left_invariant_metric(h3(), &q).unwrap();
        let (inv, _) = m.inverse_at(&[0.0; 3]).unwrap();
        for rho in [2.0, 5.0] {
            let r = RescaledCoefficients::new(&m, rho).unwrap().eval(&[0.0; 3]).unwrap();
            assert!((r.ginv[2] - inv[2] / rho).abs() < 1e-15);
        }
        assert!(matches!(RescaledCoefficients::new(&m, 0.5), Err(MetricError::BadRho(_))));
    }

    #[test]
    fn coordinate_metric_consistency() {
        let a1 = parse("0.2*cos(2*pi*x1)", 3).unwrap();
        let a2 = parse("0.1*sin(2*pi*x2)", 3).unwrap();
        let t = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let m = pseudo_left_invariant_metric(h3(), &t, a1, a2).unwrap();
        let x = [0.4, -1.3, 2.2];
        let (g, det) = m.metric_at(&x).unwrap();
        let f = DMatrix::from_row_slice(3, 3, &h3().frame(&x).unwrap());
        let finv = f.clone().try_inverse().unwrap();
        let gc = finv.transpose() * &g * &finv;
        assert!(gc.clone().cholesky().is_some());
        assert!((gc.determinant() - det).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn metric_is_invariant_under_generators(
            x in proptest::collection::vec(-3.0f64..3.0, 3),
            gen in 0usize..3,
        ) {
            let a1 = parse("0.2*cos(2*pi*x1)", 3).unwrap();
            let a2 = parse("0.1*sin(2*pi*(x1+x2))", 3).unwrap();
            let m = pseudo_left_invariant_metric(h3(), &DMatrix::identity(2, 2), a1, a2).unwrap();
            let g = &h3().lattice_generators()[gen];
            let gx = h3().multiply(g, &x).unwrap();
            let (a, _) = m.metric_at(&x).unwrap();
            let (b, _) = m.metric_at(&gx).unwrap();
            prop_assert!((a - b).amax() <= 1e-9);
        }

        #[test]
        fn reduction_is_a_lattice_translate(x in proptest::collection::vec(-5.0f64..5.0, 3)) {
            let h = h3();
            let y = reduce_to_fundamental_domain(&h, &x, &[0.0; 3]).unwrap();
            prop_assert!(y.iter().all(|v| (0.0..1.0).contains(v)));
            // γ = x * y⁻¹ must lie in the lattice {(a, b, c + ab/2)}.
            let g = h.multiply(&x, &h.inverse(&y).unwrap()).unwrap();
            let c = g[2] - 0.5 * g[0] * g[1];
            for v in [g[0], g[1], c] {
                prop_assert!((v - v.round()).abs() < 1e-9);
            }
        }
    }
}
