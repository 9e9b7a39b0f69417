//! Sparse symmetric matrices, preconditioned conjugate gradients and a
//! shift-invert block Lanczos eigensolver for `A u = λ M u` with diagonal `M`.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("conjugate gradients stalled at relative residual {residual:e} after {iterations} iterations")]
    Diverged { residual: f64, iterations: usize },
    #[error("operator is not positive semidefinite (curvature {0:e})")]
    NegativeCurvature(f64),
    #[error("operator is singular or indefinite; factorization failed")]
    Singular,
    #[error("eigensolver did not converge after {iterations} basis vectors (worst residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("invalid request: {0}")]
    Argument(String),
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Square matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in t {
            assert!(i < n && j < n, "triplet ({i}, {j}) outside {n}x{n}");
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { n, row_ptr, cols, vals }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            y[i] = s;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[(i, j)] += v;
            }
        }
        d
    }

    fn to_faer(&self) -> SparseColMat<usize, f64> {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                t.push(Triplet::new(i, j, v));
            }
        }
        SparseColMat::try_new_from_triplets(self.n, self.n, &t).expect("valid triplets")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn remove_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖b - A x‖ / ‖b‖` after projection.
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients. With `constant_nullspace` the
/// right-hand side and every search direction are projected onto vectors
/// of zero sum, which is the range of a symmetric operator annihilating
/// constants.
pub fn pcg(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize, constant_nullspace: bool) -> Result<PcgSolution, SolverError> {
    let n = a.n();
    if b.len() != n {
        return Err(SolverError::Argument(format!("rhs has length {}, expected {n}", b.len())));
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut r = b.to_vec();
    if constant_nullspace {
        remove_mean(&mut r);
    }
    let bnorm = dot(&r, &r).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(PcgSolution { x, iterations: 0, relative_residual: 0.0 });
    }
    let precondition = |r: &[f64], z: &mut Vec<f64>| {
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        if constant_nullspace {
            remove_mean(z);
        }
    };
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let scale = a.max_abs();
    for it in 1..=max_iter {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            if pap < -1e-12 * scale * dot(&p, &p) {
                return Err(SolverError::NegativeCurvature(pap));
            }
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if constant_nullspace && it % 50 == 0 {
            remove_mean(&mut r);
        }
        let rel = dot(&r, &r).sqrt() / bnorm;
        if rel <= tol {
            return Ok(PcgSolution { x, iterations: it, relative_residual: rel });
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    // Recompute the true residual before giving up.
    let mut ax = vec![0.0; n];
    a.matvec(&x, &mut ax);
    let mut res: Vec<f64> = b.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
    if constant_nullspace {
        remove_mean(&mut res);
    }
    let rel = dot(&res, &res).sqrt() / bnorm;
    if rel <= tol {
        Ok(PcgSolution { x, iterations: max_iter, relative_residual: rel })
    } else {
        Err(SolverError::Diverged { residual: rel, iterations: max_iter })
    }
}

/// Lowest eigenpairs of `A u = λ M u`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPairs {
    /// Ascending.
    pub values: Vec<f64>,
    /// `M`-normalized eigenvectors.
    pub vectors: Vec<Vec<f64>>,
    /// `‖A u - λ M u‖ / (λ ‖M u‖)` per pair.
    pub residuals: Vec<f64>,
}

/// Problems up to this size are solved densely.
pub const DENSE_LIMIT: usize = 400;
const MAX_BASIS: usize = 600;

/// `k` smallest eigenpairs of the symmetric positive definite pencil
/// `(A, diag(m))`, each with relative residual at most `tol`.
pub fn lowest_eigenpairs(a: &CsrMatrix, m: &[f64], k: usize, tol: f64) -> Result<EigenPairs, SolverError> {
    let n = a.n();
    if k == 0 || k > n || k > 16 {
        return Err(SolverError::Argument(format!("requested {k} eigenpairs of a {n}x{n} problem (limit 16)")));
    }
    if m.len() != n || m.iter().any(|v| !(*v > 0.0)) {
        return Err(SolverError::Argument("mass matrix must be a positive diagonal of matching size".into()));
    }
    if n <= DENSE_LIMIT {
        dense_pairs(a, m, k)
    } else {
        block_lanczos(a, m, k, tol)
    }
}

/// Dense generalized eigensolve via `M^{-1/2} A M^{-1/2}`.
pub fn dense_pairs(a: &CsrMatrix, m: &[f64], k: usize) -> Result<EigenPairs, SolverError> {
    let n = a.n();
    let s: Vec<f64> = m.iter().map(|v| 1.0 / v.sqrt()).collect();
    let mut d = a.to_dense();
    for i in 0..n {
        for j in 0..n {
            d[(i, j)] *= s[i] * s[j];
        }
    }
    let d = (&d + d.transpose()) * 0.5;
    let eig = SymmetricEigen::new(d);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut out = EigenPairs { values: vec![], vectors: vec![], residuals: vec![] };
    for &c in order.iter().take(k) {
        let lambda = eig.eigenvalues[c];
        if !(lambda > 0.0) {
            return Err(SolverError::Singular);
        }
        let u: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, c)] * s[i]).collect();
        out.residuals.push(relative_residual(a, m, lambda, &u));
        out.values.push(lambda);
        out.vectors.push(u);
    }
    Ok(out)
}

fn relative_residual(a: &CsrMatrix, m: &[f64], lambda: f64, u: &[f64]) -> f64 {
    let mut au = vec![0.0; u.len()];
    a.matvec(u, &mut au);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..u.len() {
        let mu = m[i] * u[i];
        num += (au[i] - lambda * mu).powi(2);
        den += mu * mu;
    }
    num.sqrt() / (lambda * den.sqrt())
}

/// Orthonormalize `w` against `basis` and itself (classical Gram-Schmidt,
/// applied twice). Columns that collapse are dropped.
fn orthonormalize(basis: &[Vec<f64>], mut w: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(w.len());
    for v in w.iter_mut() {
        let norm0 = dot(v, v).sqrt();
        for _ in 0..2 {
            for q in basis.iter().chain(out.iter()) {
                let c = dot(q, v);
                v.iter_mut().zip(q).for_each(|(x, q)| *x -= c * q);
            }
        }
        let norm = dot(v, v).sqrt();
        if norm > 1e-10 * norm0.max(f64::MIN_POSITIVE) {
            out.push(v.iter().map(|x| x / norm).collect());
        }
    }
    out
}

fn block_lanczos(a: &CsrMatrix, m: &[f64], k: usize, tol: f64) -> Result<EigenPairs, SolverError> {
    let n = a.n();
    let llt = a.to_faer().sp_cholesky(Side::Lower).map_err(|_| SolverError::Singular)?;
    let s: Vec<f64> = m.iter().map(|v| v.sqrt()).collect();
    // op(v) = S A^{-1} S v with S = M^{1/2}; its largest eigenvalues are 1/λ.
    let op = |block: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let mut rhs = Mat::<f64>::from_fn(n, block.len(), |i, j| s[i] * block[j][i]);
        llt.solve_in_place(rhs.as_mut());
        (0..block.len()).map(|j| (0..n).map(|i| s[i] * rhs[(i, j)]).collect()).collect()
    };
    let b = k.max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(0x1a2c);
    let start: Vec<Vec<f64>> = (0..b).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut basis = orthonormalize(&[], start);
    let mut images: Vec<Vec<f64>> = Vec::new();
    let mut block_start = 0;
    let cap = MAX_BASIS.min(n);
    let mut worst = f64::INFINITY;
    loop {
        let new_images = op(&basis[block_start..]);
        images.extend(new_images.iter().cloned());
        let dim = basis.len();
        if dim >= 2 * k + 4 || dim >= cap {
            let mut h = DMatrix::zeros(dim, dim);
            for i in 0..dim {
                for j in 0..dim {
                    h[(i, j)] = dot(&basis[i], &images[j]);
                }
            }
            let h = (&h + h.transpose()) * 0.5;
            let eig = SymmetricEigen::new(h);
            let mut order: Vec<usize> = (0..dim).collect();
            order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
            let mut out = EigenPairs { values: vec![], vectors: vec![], residuals: vec![] };
            worst = 0.0;
            for &c in order.iter().take(k) {
                let mu = eig.eigenvalues[c];
                if !(mu > 0.0) {
                    return Err(SolverError::Singular);
                }
                let mut y = vec![0.0; n];
                for (j, q) in basis.iter().enumerate() {
                    let w = eig.eigenvectors[(j, c)];
                    y.iter_mut().zip(q).for_each(|(y, q)| *y += w * q);
                }
                let u: Vec<f64> = y.iter().zip(&s).map(|(y, s)| y / s).collect();
                let lambda = 1.0 / mu;
                let r = relative_residual(a, m, lambda, &u);
                worst = worst.max(r);
                out.values.push(lambda);
                out.vectors.push(u);
                out.residuals.push(r);
            }
            if worst <= tol {
                return Ok(out);
            }
        }
        if basis.len() >= cap {
            return Err(SolverError::NoConvergence { iterations: basis.len(), residual: worst });
        }
        block_start = basis.len();
        let take = (cap - basis.len()).min(b);
        let next = orthonormalize(&basis, new_images.into_iter().take(take).collect());
        if next.is_empty() {
            // Invariant subspace exhausted: restart with a fresh random block.
            let fresh: Vec<Vec<f64>> = (0..take).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let fresh = orthonormalize(&basis, fresh);
            if fresh.is_empty() {
                return Err(SolverError::NoConvergence { iterations: basis.len(), residual: worst });
            }
            basis.extend(fresh);
        } else {
            basis.extend(next);
        }
    }
}
