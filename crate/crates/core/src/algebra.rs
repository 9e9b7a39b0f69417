//! Nilpotent Lie algebras given by structure constants, and the simply
//! connected group in exponential coordinates of the first kind.
//!
//! The basis is assumed adapted to the lower central series: coordinates of
//! weight `i` span the `i`-th layer. Group operations are implemented for
//! step at most two, where the Baker-Campbell-Hausdorff series stops after
//! the first bracket.

use thiserror::Error;

/// Largest supported dimension.
pub const MAX_DIM: usize = 16;

/// Tolerance used when checking the Lie algebra axioms.
pub const AXIOM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlgebraError {
    #[error("dimension {0} is outside 1..={MAX_DIM}")]
    BadDimension(usize),
    #[error("structure constants have {got} entries, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("structure constant c[{i}][{j}][{k}] is not finite")]
    NonFinite { i: usize, j: usize, k: usize },
    #[error("antisymmetry fails: c[{i}][{j}][{k}] + c[{j}][{i}][{k}] = {defect:e}")]
    AntisymmetryViolation { i: usize, j: usize, k: usize, defect: f64 },
    #[error("Jacobi identity fails on (X{i}, X{j}, X{k}), defect {defect:e}")]
    JacobiViolation { i: usize, j: usize, k: usize, defect: f64 },
    #[error("lower central series stalls at dimension {stalled_dim}")]
    NotNilpotent { stalled_dim: usize },
    #[error("basis is not adapted to the lower central series: {0}")]
    BasisNotAdapted(String),
    #[error("operation requires step <= 2, algebra has step {0}")]
    UnsupportedStep(usize),
    #[error("dilation factor must be positive, got {0}")]
    NonpositiveRho(f64),
    #[error("point has {got} coordinates, algebra has dimension {expected}")]
    PointDimension { expected: usize, got: usize },
    #[error("unknown algebra name {0:?}")]
    UnknownName(String),
}

/// A validated nilpotent Lie algebra with a basis adapted to its layers.
#[derive(Debug, Clone, PartialEq)]
pub struct GradedNilpotentAlgebra {
    dim: usize,
    /// Flattened `c[i][j][k]`, index `(i * n + j) * n + k`.
    constants: Vec<f64>,
    layer_dims: Vec<usize>,
    weights: Vec<u32>,
}

/// One nonzero structure constant `[X_i, X_j] = value * X_k + ...`
/// with zero-based indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BracketTerm {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub value: f64,
}

impl GradedNilpotentAlgebra {
    /// Validate a dense `n*n*n` table of structure constants against the
    /// given layer dimensions.
    pub fn validate(constants: Vec<f64>, layer_dims: &[usize]) -> Result<Self, AlgebraError> {
        let n: usize = layer_dims.iter().sum();
        if n == 0 || n > MAX_DIM || layer_dims.iter().any(|&d| d == 0) {
            return Err(AlgebraError::BadDimension(n));
        }
        if constants.len() != n * n * n {
            return Err(AlgebraError::ShapeMismatch { expected: n * n * n, got: constants.len() });
        }
        let at = |i: usize, j: usize, k: usize| constants[(i * n + j) * n + k];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if !at(i, j, k).is_finite() {
                        return Err(AlgebraError::NonFinite { i, j, k });
                    }
                }
            }
        }
        for i in 0..n {
            for j in i..n {
                for k in 0..n {
                    let defect = at(i, j, k) + at(j, i, k);
                    if defect.abs() > AXIOM_TOL {
                        return Err(AlgebraError::AntisymmetryViolation { i, j, k, defect });
                    }
                }
            }
        }
        // [[Xi,Xj],Xk] + [[Xj,Xk],Xi] + [[Xk,Xi],Xj] = 0, coefficient l.
        for i in 0..n {
            for j in (i + 1)..n {
                for k in (j + 1)..n {
                    for l in 0..n {
                        let mut s = 0.0;
                        for m in 0..n {
                            s += at(i, j, m) * at(m, k, l)
                                + at(j, k, m) * at(m, i, l)
                                + at(k, i, m) * at(m, j, l);
                        }
                        if s.abs() > AXIOM_TOL {
                            return Err(AlgebraError::JacobiViolation { i, j, k, defect: s });
                        }
                    }
                }
            }
        }

        let series = lower_central_series(&constants, n)?;
        let step = series.len();
        if step != layer_dims.len() {
            return Err(AlgebraError::BasisNotAdapted(format!(
                "series has {step} nonzero terms but {} layers were given",
                layer_dims.len()
            )));
        }
        let mut weights = Vec::with_capacity(n);
        for (layer, &d) in layer_dims.iter().enumerate() {
            weights.extend(std::iter::repeat(layer as u32 + 1).take(d));
        }
        for (idx, term) in series.iter().enumerate() {
            let level = idx as u32 + 1;
            let expected: usize = layer_dims[idx..].iter().sum();
            if term.len() != expected {
                return Err(AlgebraError::BasisNotAdapted(format!(
                    "term {level} of the series has dimension {}, layers predict {expected}",
                    term.len()
                )));
            }
            for v in term {
                for (p, &x) in v.iter().enumerate() {
                    if weights[p] < level && x.abs() > 1e-9 {
                        return Err(AlgebraError::BasisNotAdapted(format!(
                            "term {level} of the series has a component along X{}",
                            p + 1
                        )));
                    }
                }
            }
        }
        Ok(Self { dim: n, constants, layer_dims: layer_dims.to_vec(), weights })
    }

    /// Validate from a sparse list of brackets; antisymmetric partners are
    /// filled in automatically.
    pub fn from_brackets(terms: &[BracketTerm], layer_dims: &[usize]) -> Result<Self, AlgebraError> {
        let n: usize = layer_dims.iter().sum();
        if n == 0 || n > MAX_DIM {
            return Err(AlgebraError::BadDimension(n));
        }
        let mut c = vec![0.0; n * n * n];
        for t in terms {
            if t.i >= n || t.j >= n || t.k >= n {
                return Err(AlgebraError::BadDimension(t.i.max(t.j).max(t.k) + 1));
            }
            c[(t.i * n + t.j) * n + t.k] += t.value;
            if t.i != t.j {
                c[(t.j * n + t.i) * n + t.k] -= t.value;
            }
        }
        Self::validate(c, layer_dims)
    }

    /// Abelian `R^n`.
    pub fn torus(n: usize) -> Result<Self, AlgebraError> {
        Self::validate(vec![0.0; n * n * n], &[n])
    }

    /// Heisenberg algebra of dimension `2m + 1` with `[X_{2i-1}, X_{2i}] = X_n`.
    pub fn heisenberg(dim: usize) -> Result<Self, AlgebraError> {
        if dim < 3 || dim % 2 == 0 {
            return Err(AlgebraError::BadDimension(dim));
        }
        let centre = dim - 1;
        let terms: Vec<BracketTerm> = (0..centre / 2)
            .map(|p| BracketTerm { i: 2 * p, j: 2 * p + 1, k: centre, value: 1.0 })
            .collect();
        Self::from_brackets(&terms, &[dim - 1, 1])
    }

    /// Built-in algebras: `torus:n`, `heisenberg:3`, `heisenberg:5`.
    pub fn named(name: &str) -> Result<Self, AlgebraError> {
        let unknown = || AlgebraError::UnknownName(name.to_string());
        let (family, arg) = name.split_once(':').ok_or_else(unknown)?;
        let n: usize = arg.trim().parse().map_err(|_| unknown())?;
        match family.trim() {
            "torus" => Self::torus(n),
            "heisenberg" if n == 3 || n == 5 => Self::heisenberg(n),
            _ => Err(unknown()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> usize {
        self.layer_dims.len()
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    /// Dimension of the first (horizontal) layer.
    pub fn horizontal_dim(&self) -> usize {
        self.layer_dims[0]
    }

    /// Layer index (starting at 1) of each basis vector.
    pub fn weights(&self) -> &[u32] {
        &self.weights
    }

    /// `sum_i i * d_i`, the growth exponent of ball volumes.
    pub fn homogeneous_dim(&self) -> usize {
        self.layer_dims.iter().enumerate().map(|(i, d)| (i + 1) * d).sum()
    }

    /// Coefficient of `X_k` in `[X_i, X_j]` (zero-based).
    #[inline]
    pub fn c(&self, i: usize, j: usize, k: usize) -> f64 {
        self.constants[(i * self.dim + j) * self.dim + k]
    }

    pub fn constants(&self) -> &[f64] {
        &self.constants
    }

    /// Nonzero structure constants with `i < j`.
    pub fn bracket_terms(&self) -> Vec<BracketTerm> {
        let n = self.dim;
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                for k in 0..n {
                    let value = self.c(i, j, k);
                    if value != 0.0 {
                        out.push(BracketTerm { i, j, k, value });
                    }
                }
            }
        }
        out
    }

    /// Lie bracket of two vectors in the basis `X_i`.
    pub fn bracket(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n];
        for i in 0..n {
            if x[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                let xy = x[i] * y[j];
                if xy == 0.0 {
                    continue;
                }
                for (k, o) in out.iter_mut().enumerate() {
                    *o += self.c(i, j, k) * xy;
                }
            }
        }
        out
    }

    /// Structure constants of the associated graded algebra: each bracket
    /// is projected onto the layer of weight `α(i) + α(j)`.
    pub fn graded_limit(&self) -> Self {
        let n = self.dim;
        let mut c = self.constants.clone();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if self.weights[k] != self.weights[i] + self.weights[j] {
                        c[(i * n + j) * n + k] = 0.0;
                    }
                }
            }
        }
        Self { dim: n, constants: c, layer_dims: self.layer_dims.clone(), weights: self.weights.clone() }
    }

    /// True when every bracket of layers `i` and `j` lands in layer `i + j`.
    pub fn is_graded(&self) -> bool {
        let n = self.dim;
        (0..n).all(|i| {
            (0..n).all(|j| {
                (0..n).all(|k| self.weights[k] == self.weights[i] + self.weights[j] || self.c(i, j, k) == 0.0)
            })
        })
    }

    fn check_point(&self, x: &[f64]) -> Result<(), AlgebraError> {
        if x.len() != self.dim {
            return Err(AlgebraError::PointDimension { expected: self.dim, got: x.len() });
        }
        Ok(())
    }

    fn require_step_two(&self) -> Result<(), AlgebraError> {
        if self.step() > 2 {
            return Err(AlgebraError::UnsupportedStep(self.step()));
        }
        Ok(())
    }

    /// `δ_ρ`: coordinate `p` is multiplied by `ρ^α(p)`.
    pub fn dilate(&self, rho: f64, x: &[f64]) -> Result<Vec<f64>, AlgebraError> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(AlgebraError::NonpositiveRho(rho));
        }
        self.check_point(x)?;
        Ok(x.iter().zip(&self.weights).map(|(v, &w)| v * rho.powi(w as i32)).collect())
    }

    /// Group law `x * y = x + y + [x, y] / 2` (step at most two).
    pub fn multiply(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>, AlgebraError> {
        self.require_step_two()?;
        self.check_point(x)?;
        self.check_point(y)?;
        let b = self.bracket(x, y);
        Ok(x.iter().zip(y).zip(b).map(|((a, c), d)| a + c + 0.5 * d).collect())
    }

    pub fn inverse(&self, x: &[f64]) -> Result<Vec<f64>, AlgebraError> {
        self.require_step_two()?;
        self.check_point(x)?;
        Ok(x.iter().map(|v| -v).collect())
    }

    /// Left-invariant frame at `x`: row-major `n x n` matrix whose column
    /// `i` holds the coordinate components of `X_i(x)`.
    pub fn frame(&self, x: &[f64]) -> Result<Vec<f64>, AlgebraError> {
        self.require_step_two()?;
        self.check_point(x)?;
        let n = self.dim;
        let mut f = vec![0.0; n * n];
        for k in 0..n {
            f[k * n + k] = 1.0;
        }
        for j in 0..n {
            if x[j] == 0.0 {
                continue;
            }
            for i in 0..n {
                for k in 0..n {
                    f[k * n + i] += 0.5 * self.c(j, i, k) * x[j];
                }
            }
        }
        Ok(f)
    }

    /// Default generators of the lattice: the unit coordinate vectors.
    pub fn lattice_generators(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|p| {
                let mut e = vec![0.0; self.dim];
                e[p] = 1.0;
                e
            })
            .collect()
    }
}

/// Orthonormal bases of `u^1 ⊃ u^2 ⊃ ...`, stopping before the zero term.
fn lower_central_series(c: &[f64], n: usize) -> Result<Vec<Vec<Vec<f64>>>, AlgebraError> {
    let identity: Vec<Vec<f64>> = (0..n)
        .map(|p| {
            let mut e = vec![0.0; n];
            e[p] = 1.0;
            e
        })
        .collect();
    let mut series = vec![identity];
    loop {
        let current = series.last().expect("series starts nonempty");
        let mut next: Vec<Vec<f64>> = Vec::new();
        for v in current {
            for j in 0..n {
                let mut w = vec![0.0; n];
                for (i, &vi) in v.iter().enumerate() {
                    if vi == 0.0 {
                        continue;
                    }
                    for (k, wk) in w.iter_mut().enumerate() {
                        *wk += vi * c[(i * n + j) * n + k];
                    }
                }
                push_orthonormal(&mut next, w);
            }
        }
        if next.is_empty() {
            return Ok(series);
        }
        if next.len() == current.len() {
            return Err(AlgebraError::NotNilpotent { stalled_dim: next.len() });
        }
        series.push(next);
    }
}

/// Gram-Schmidt step; drops vectors already in the span.
fn push_orthonormal(basis: &mut Vec<Vec<f64>>, mut w: Vec<f64>) {
    let scale = w.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return;
    }
    for _ in 0..2 {
        for b in basis.iter() {
            let dot: f64 = b.iter().zip(&w).map(|(a, c)| a * c).sum();
            for (wi, bi) in w.iter_mut().zip(b) {
                *wi -= dot * bi;
            }
        }
    }
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1e-10 * scale.max(1.0) {
        basis.push(w.into_iter().map(|x| x / norm).collect());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn h3() -> GradedNilpotentAlgebra {
        GradedNilpotentAlgebra::named("heisenberg:3").unwrap()
    }

    fn filiform4(extra: f64) -> Result<GradedNilpotentAlgebra, AlgebraError> {
        // [X1,X2] = X3 + extra X4, [X1,X3] = X4
        GradedNilpotentAlgebra::from_brackets(
            &[
                BracketTerm { i: 0, j: 1, k: 2, value: 1.0 },
                BracketTerm { i: 0, j: 1, k: 3, value: extra },
                BracketTerm { i: 0, j: 2, k: 3, value: 1.0 },
            ],
            &[2, 1, 1],
        )
    }

    #[test]
    fn heisenberg_is_step_two_with_homogeneous_dimension_four() {
        let a = h3();
        assert_eq!(a.step(), 2);
        assert_eq!(a.homogeneous_dim(), 4);
        assert_eq!(a.weights(), &[1, 1, 2]);
    }

    #[test]
    fn abelian_plane() {
        let a = GradedNilpotentAlgebra::torus(2).unwrap();
        assert_eq!(a.step(), 1);
        assert_eq!(a.homogeneous_dim(), 2);
        assert!(a.graded_limit().constants().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn heisenberg5_layers() {
        let a = GradedNilpotentAlgebra::named("heisenberg:5").unwrap();
        assert_eq!(a.layer_dims(), &[4, 1]);
        assert_eq!(a.homogeneous_dim(), 6);
    }

    #[test]
    fn solvable_non_nilpotent_is_rejected() {
        let err = GradedNilpotentAlgebra::from_brackets(&[BracketTerm { i: 0, j: 1, k: 0, value: 1.0 }], &[2])
            .unwrap_err();
        assert!(matches!(err, AlgebraError::NotNilpotent { .. }), "{err}");
    }

    #[test]
    fn antisymmetry_violation_is_named() {
        let mut c = vec![0.0; 27];
        c[(0 * 3 + 1) * 3 + 2] = 1.0;
        let err = GradedNilpotentAlgebra::validate(c, &[2, 1]).unwrap_err();
        assert!(matches!(err, AlgebraError::AntisymmetryViolation { .. }));
    }

    #[test]
    fn jacobi_violation_is_named() {
        // [X1,X2]=X3, [X2,X3]=X4, [X1,X4]=X5: the cyclic sum on (X1,X2,X3)
        // reduces to [X4,X1] = -X5.
        let err = GradedNilpotentAlgebra::from_brackets(
            &[
                BracketTerm { i: 0, j: 1, k: 2, value: 1.0 },
                BracketTerm { i: 1, j: 2, k: 3, value: 1.0 },
                BracketTerm { i: 0, j: 3, k: 4, value: 1.0 },
            ],
            &[2, 1, 1, 1],
        )
        .unwrap_err();
        assert!(matches!(err, AlgebraError::JacobiViolation { .. }), "{err}");
    }

    #[test]
    fn misordered_basis_is_not_adapted() {
        // Heisenberg with the centre placed first.
        let err = GradedNilpotentAlgebra::from_brackets(&[BracketTerm { i: 1, j: 2, k: 0, value: 1.0 }], &[2, 1])
            .unwrap_err();
        assert!(matches!(err, AlgebraError::BasisNotAdapted(_)), "{err}");
    }

    #[test]
    fn graded_limit_projects_onto_target_layer() {
        let a = filiform4(1.0).unwrap();
        assert_eq!(a.step(), 3);
        assert!(!a.is_graded());
        let g = a.graded_limit();
        // Brute-force projector: keep c[i][j][k] iff weight(k) = weight(i) + weight(j).
        let w = a.weights();
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    let expected = if w[k] == w[i] + w[j] { a.c(i, j, k) } else { 0.0 };
                    assert_eq!(g.c(i, j, k), expected);
                }
            }
        }
        assert_eq!(g.c(0, 1, 2), 1.0);
        assert_eq!(g.c(0, 1, 3), 0.0);
        assert_eq!(g.c(0, 2, 3), 1.0);
        assert!(g.is_graded());
        assert_eq!(g.graded_limit(), g);
        assert_eq!(h3().graded_limit(), h3());
    }

    #[test]
    fn dilation_examples() {
        let a = h3();
        assert_eq!(a.dilate(2.0, &[1.0, 1.0, 1.0]).unwrap(), vec![2.0, 2.0, 4.0]);
        assert_eq!(a.dilate(1.0, &[0.3, -1.0, 5.0]).unwrap(), vec![0.3, -1.0, 5.0]);
        let back = a.dilate(0.5, &a.dilate(2.0, &[0.3, -1.0, 5.0]).unwrap()).unwrap();
        assert_eq!(back, vec![0.3, -1.0, 5.0]);
        assert!(matches!(a.dilate(0.0, &[0.0; 3]), Err(AlgebraError::NonpositiveRho(_))));
    }

    #[test]
    fn group_law_examples() {
        let a = h3();
        let e1 = [1.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0];
        assert_eq!(a.multiply(&e1, &e2).unwrap(), vec![1.0, 1.0, 0.5]);
        // e1 e2 e1^-1 e2^-1 composed step by step:
        // (1,1,1/2) * (-1,0,0) = (0,1,1/2 + 1/2) ; then * (0,-1,0) = (0,0,1).
        let p = a.multiply(&e1, &e2).unwrap();
        let p = a.multiply(&p, &a.inverse(&e1).unwrap()).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 1.0]);
        let p = a.multiply(&p, &a.inverse(&e2).unwrap()).unwrap();
        assert_eq!(p, vec![0.0, 0.0, 1.0]);
        assert!(matches!(filiform4(0.0).unwrap().multiply(&[0.0; 4], &[0.0; 4]), Err(AlgebraError::UnsupportedStep(3))));
    }

    #[test]
    fn heisenberg_frame_matches_hand_derivation() {
        let a = h3();
        let (x, y) = (0.7, -1.3);
        let f = a.frame(&[x, y, 2.0]).unwrap();
        // columns: X1 = dx - y/2 dz, X2 = dy + x/2 dz, X3 = dz
        let expected = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, -y / 2.0, x / 2.0, 1.0];
        assert_eq!(f, expected);
        assert_eq!(a.frame(&[0.0; 3]).unwrap(), vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn frame_fields_bracket_numerically() {
        // [X1, X2] = X3 as vector fields, via finite differences of the
        // frame columns: [V, W] = DW.V - DV.W.
        let a = h3();
        let p = [0.4, -0.2, 0.9];
        let h = 1e-5;
        let col = |x: &[f64], i: usize| -> Vec<f64> {
            let f = a.frame(x).unwrap();
            (0..3).map(|k| f[k * 3 + i]).collect()
        };
        let directional = |i: usize, along: &[f64]| -> Vec<f64> {
            let plus: Vec<f64> = p.iter().zip(along).map(|(a, b)| a + h * b).collect();
            let minus: Vec<f64> = p.iter().zip(along).map(|(a, b)| a - h * b).collect();
            col(&plus, i).iter().zip(col(&minus, i)).map(|(u, v)| (u - v) / (2.0 * h)).collect()
        };
        let x1 = col(&p, 0);
        let x2 = col(&p, 1);
        let d2 = directional(1, &x1);
        let d1 = directional(0, &x2);
        let br: Vec<f64> = d2.iter().zip(&d1).map(|(u, v)| u - v).collect();
        assert!((br[0]).abs() < 1e-8 && (br[1]).abs() < 1e-8 && (br[2] - 1.0).abs() < 1e-8, "{br:?}");
    }

    #[test]
    fn named_rejects_unknown() {
        assert!(GradedNilpotentAlgebra::named("heisenberg:7").is_err());
        assert!(GradedNilpotentAlgebra::named("sphere:2").is_err());
    }

    fn det(m: &[f64], n: usize) -> f64 {
        nalgebra::DMatrix::from_row_slice(n, n, m).determinant()
    }

    fn step_two_algebras() -> Vec<GradedNilpotentAlgebra> {
        vec![
            GradedNilpotentAlgebra::torus(3).unwrap(),
            h3(),
            GradedNilpotentAlgebra::heisenberg(5).unwrap(),
            // a step-two algebra with non-unit constants
            GradedNilpotentAlgebra::from_brackets(
                &[
                    BracketTerm { i: 0, j: 1, k: 3, value: 1.0 },
                    BracketTerm { i: 0, j: 2, k: 4, value: 2.0 },
                    BracketTerm { i: 1, j: 2, k: 3, value: -0.5 },
                ],
                &[3, 2],
            )
            .unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn dilation_is_a_group_automorphism(
            which in 0usize..4,
            xs in proptest::collection::vec(-3.0f64..3.0, 5),
            ys in proptest::collection::vec(-3.0f64..3.0, 5),
            rho in 0.1f64..5.0,
        ) {
            let a = &step_two_algebras()[which];
            let n = a.dim();
            let (x, y) = (&xs[..n], &ys[..n]);
            let lhs = a.dilate(rho, &a.multiply(x, y).unwrap()).unwrap();
            let rhs = a.multiply(&a.dilate(rho, x).unwrap(), &a.dilate(rho, y).unwrap()).unwrap();
            for (l, r) in lhs.iter().zip(&rhs) {
                prop_assert!((l - r).abs() <= 1e-10 * (1.0 + l.abs()));
            }
        }

        #[test]
        fn group_law_is_associative_with_inverses(
            which in 0usize..4,
            xs in proptest::collection::vec(-3.0f64..3.0, 5),
            ys in proptest::collection::vec(-3.0f64..3.0, 5),
            zs in proptest::collection::vec(-3.0f64..3.0, 5),
        ) {
            let a = &step_two_algebras()[which];
            let n = a.dim();
            let (x, y, z) = (&xs[..n], &ys[..n], &zs[..n]);
            let l = a.multiply(&a.multiply(x, y).unwrap(), z).unwrap();
            let r = a.multiply(x, &a.multiply(y, z).unwrap()).unwrap();
            for (u, v) in l.iter().zip(&r) {
                prop_assert!((u - v).abs() < 1e-12 * (1.0 + u.abs()) * 10.0);
            }
            let e = a.multiply(x, &a.inverse(x).unwrap()).unwrap();
            prop_assert!(e.iter().all(|v| v.abs() < 1e-12));
            prop_assert_eq!(a.multiply(x, &vec![0.0; n]).unwrap(), x.to_vec());
        }

        #[test]
        fn frame_is_unimodular_and_left_invariant(
            which in 0usize..4,
            gs in proptest::collection::vec(-2.0f64..2.0, 5),
            xs in proptest::collection::vec(-2.0f64..2.0, 5),
            vs in proptest::collection::vec(-1.0f64..1.0, 5),
        ) {
            let a = &step_two_algebras()[which];
            let n = a.dim();
            let (g, x, v) = (&gs[..n], &xs[..n], &vs[..n]);
            let f = a.frame(x).unwrap();
            prop_assert!((det(&f, n) - 1.0).abs() < 1e-12);
            // F(g*x) v versus the differential of L_g applied to F(x) v.
            let gx = a.multiply(g, x).unwrap();
            let fgx = a.frame(&gx).unwrap();
            let direct: Vec<f64> = (0..n).map(|k| (0..n).map(|i| fgx[k * n + i] * v[i]).sum()).collect();
            let w: Vec<f64> = (0..n).map(|k| (0..n).map(|i| f[k * n + i] * v[i]).sum()).collect();
            let h = 1e-6;
            let xp: Vec<f64> = x.iter().zip(&w).map(|(a, b)| a + h * b).collect();
            let xm: Vec<f64> = x.iter().zip(&w).map(|(a, b)| a - h * b).collect();
            let lp = a.multiply(g, &xp).unwrap();
            let lm = a.multiply(g, &xm).unwrap();
            for k in 0..n {
                let numeric = (lp[k] - lm[k]) / (2.0 * h);
                prop_assert!((numeric - direct[k]).abs() < 1e-6);
            }
            // X_i . x_j = delta_ij on the first layer.
            for j in 0..a.horizontal_dim() {
                for i in 0..n {
                    let expected = if i == j { 1.0 } else { 0.0 };
                    prop_assert_eq!(f[j * n + i], expected);
                }
            }
        }
    }
}
