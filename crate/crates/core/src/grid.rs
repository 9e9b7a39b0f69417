//! Uniform grids in first-kind coordinates and the weak-form assembly shared
//! by the cell problem, the rescaled Dirichlet problems and the Kohn
//! operator.
//!
//! A frame derivative `X_k u` is the coordinate gradient contracted with
//! the frame. The coordinate gradient at a node is taken one-sidedly in
//! each of the `2^n` orthants and the energy density is averaged over
//! orthants. This keeps the operator symmetric positive semidefinite,
//! exact on affine functions, and free of the odd-even null modes of a
//! central-difference energy.

use thiserror::Error;

use crate::algebra::{AlgebraError, GradedNilpotentAlgebra};
use crate::linalg::CsrMatrix;
use crate::metric::reduce_to_fundamental_domain;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("resolution {0} outside [8, 256]")]
    ResolutionOutOfRange(usize),
    #[error("expected {expected} resolutions, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("grid would have {0} nodes, above the limit")]
    TooLarge(usize),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// Upper bound on grid nodes accepted anywhere.
pub const MAX_NODES: usize = 4_000_000;

/// A value at a stencil point as a combination of node values.
pub type Stencil = Vec<(usize, f64)>;

/// Common interface of the two grid flavours.
pub trait Grid {
    fn dim(&self) -> usize;
    fn node_count(&self) -> usize;
    fn spacing(&self) -> &[f64];
    fn position(&self, node: usize) -> Vec<f64>;
    /// Value at `position(node) + sign * h_axis * e_axis`; an empty stencil
    /// means the value is zero (outside a Dirichlet box).
    fn neighbor(&self, node: usize, axis: usize, sign: f64, out: &mut Stencil);
    fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }
}

fn unravel(mut idx: usize, dims: &[usize], out: &mut [usize]) {
    for a in (0..dims.len()).rev() {
        out[a] = idx % dims[a];
        idx /= dims[a];
    }
}

fn ravel(multi: &[usize], dims: &[usize]) -> usize {
    multi.iter().zip(dims).fold(0, |acc, (i, d)| acc * d + i)
}

/// Grid on the box fundamental domain `offset + [0, 1)^n` with the lattice
/// wraps. A wrapped neighbour that falls between nodes of the central axes
/// is linearly interpolated.
#[derive(Debug, Clone)]
pub struct PeriodicGrid {
    algebra: GradedNilpotentAlgebra,
    dims: Vec<usize>,
    h: Vec<f64>,
    offset: Vec<f64>,
}

impl PeriodicGrid {
    pub fn new(algebra: &GradedNilpotentAlgebra, resolution: &[usize]) -> Result<Self, GridError> {
        Self::with_offset(algebra, resolution, &vec![0.0; algebra.dim()])
    }

    pub fn with_offset(algebra: &GradedNilpotentAlgebra, resolution: &[usize], offset: &[f64]) -> Result<Self, GridError> {
        if algebra.step() > 2 {
            return Err(AlgebraError::UnsupportedStep(algebra.step()).into());
        }
        let n = algebra.dim();
        if resolution.len() != n || offset.len() != n {
            return Err(GridError::Shape { expected: n, got: resolution.len() });
        }
        if let Some(&bad) = resolution.iter().find(|r| !(8..=256).contains(*r)) {
            return Err(GridError::ResolutionOutOfRange(bad));
        }
        let count = resolution.iter().product();
        if count > MAX_NODES {
            return Err(GridError::TooLarge(count));
        }
        Ok(PeriodicGrid {
            algebra: algebra.clone(),
            dims: resolution.to_vec(),
            h: resolution.iter().map(|&r| 1.0 / r as f64).collect(),
            offset: offset.to_vec(),
        })
    }

    pub fn algebra(&self) -> &GradedNilpotentAlgebra {
        &self.algebra
    }

    pub fn resolution(&self) -> &[usize] {
        &self.dims
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn index_of(&self, multi: &[usize]) -> usize {
        ravel(multi, &self.dims)
    }

    /// Stencil of an arbitrary point, after reduction to the box.
    pub fn locate(&self, x: &[f64], out: &mut Stencil) {
        let n = self.dims.len();
        let y = reduce_to_fundamental_domain(&self.algebra, x, &self.offset).expect("step checked at construction");
        out.clear();
        out.push((0, 1.0));
        let mut stride = 1;
        for a in (0..n).rev() {
            let f = (y[a] - self.offset[a]) / self.h[a];
            let r = f.round();
            let (i0, frac) = if (f - r).abs() < 1e-9 { (r, 0.0) } else { (f.floor(), f - f.floor()) };
            let i0 = (i0 as i64).rem_euclid(self.dims[a] as i64) as usize;
            let i1 = (i0 + 1) % self.dims[a];
            if frac == 0.0 {
                out.iter_mut().for_each(|(idx, _)| *idx += i0 * stride);
            } else {
                let mut split = Vec::with_capacity(out.len() * 2);
                for &(idx, w) in out.iter() {
                    split.push((idx + i0 * stride, w * (1.0 - frac)));
                    split.push((idx + i1 * stride, w * frac));
                }
                *out = split;
            }
            stride *= self.dims[a];
        }
    }
}

impl Grid for PeriodicGrid {
    fn dim(&self) -> usize {
        self.dims.len()
    }

    fn node_count(&self) -> usize {
        self.dims.iter().product()
    }

    fn spacing(&self) -> &[f64] {
        &self.h
    }

    fn position(&self, node: usize) -> Vec<f64> {
        let mut m = vec![0; self.dims.len()];
        unravel(node, &self.dims, &mut m);
        m.iter().enumerate().map(|(a, &i)| self.offset[a] + i as f64 * self.h[a]).collect()
    }

    fn neighbor(&self, node: usize, axis: usize, sign: f64, out: &mut Stencil) {
        let n = self.dims.len();
        let mut m = vec![0; n];
        unravel(node, &self.dims, &mut m);
        let next = m[axis] as i64 + sign as i64;
        if next >= 0 && (next as usize) < self.dims[axis] {
            m[axis] = next as usize;
            out.clear();
            out.push((ravel(&m, &self.dims), 1.0));
            return;
        }
        let mut x = self.position(node);
        x[axis] += sign * self.h[axis];
        self.locate(&x, out);
    }
}

/// Uniform box `lo + i * h`, `i < dims`, with zero values outside.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxGrid {
    lo: Vec<f64>,
    h: Vec<f64>,
    dims: Vec<usize>,
}

impl BoxGrid {
    pub fn new(lo: Vec<f64>, h: Vec<f64>, dims: Vec<usize>) -> Result<Self, GridError> {
        if lo.len() != h.len() || lo.len() != dims.len() {
            return Err(GridError::Shape { expected: lo.len(), got: dims.len() });
        }
        let count = dims.iter().product();
        if count > MAX_NODES {
            return Err(GridError::TooLarge(count));
        }
        Ok(BoxGrid { lo, h, dims })
    }

    /// Box covering `[lo, hi]` per axis with spacing `h`, containing the
    /// origin as a node when `lo < 0 < hi` and `lo` is a multiple of `h`.
    pub fn covering(lo: &[f64], hi: &[f64], h: &[f64]) -> Result<Self, GridError> {
        let mut l = Vec::new();
        let mut d = Vec::new();
        for a in 0..lo.len() {
            let i0 = (lo[a] / h[a]).floor();
            let i1 = (hi[a] / h[a]).ceil();
            l.push(i0 * h[a]);
            d.push((i1 - i0) as usize + 1);
        }
        Self::new(l, h.to_vec(), d)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> Vec<f64> {
        (0..self.dims.len()).map(|a| self.lo[a] + (self.dims[a] - 1) as f64 * self.h[a]).collect()
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        let mut m = vec![0; self.dims.len()];
        unravel(node, &self.dims, &mut m);
        m
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        ravel(multi, &self.dims)
    }

    /// True when the node lies on the outer face of the box.
    pub fn on_boundary(&self, node: usize) -> bool {
        self.multi_index(node).iter().zip(&self.dims).any(|(&i, &d)| i == 0 || i + 1 == d)
    }
}

impl Grid for BoxGrid {
    fn dim(&self) -> usize {
        self.dims.len()
    }

    fn node_count(&self) -> usize {
        self.dims.iter().product()
    }

    fn spacing(&self) -> &[f64] {
        &self.h
    }

    fn position(&self, node: usize) -> Vec<f64> {
        let m = self.multi_index(node);
        m.iter().enumerate().map(|(a, &i)| self.lo[a] + i as f64 * self.h[a]).collect()
    }

    fn neighbor(&self, node: usize, axis: usize, sign: f64, out: &mut Stencil) {
        out.clear();
        let mut m = self.multi_index(node);
        let next = m[axis] as i64 + sign as i64;
        if next >= 0 && (next as usize) < self.dims[axis] {
            m[axis] = next as usize;
            out.push((ravel(&m, &self.dims), 1.0));
        }
    }
}

/// Coefficients at one node: frame `F` (row-major, column `k` = `X_k`),
/// frame conductivity `K = w g^{-1}` and volume density `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeCoefficients {
    pub frame: Vec<f64>,
    pub conductivity: Vec<f64>,
    pub density: f64,
}

impl NodeCoefficients {
    /// Coordinate conductivity `F K Fᵀ`.
    pub fn coordinate_conductivity(&self, n: usize) -> Vec<f64> {
        let f = &self.frame;
        let k = &self.conductivity;
        let mut fk = vec![0.0; n * n];
        for a in 0..n {
            for j in 0..n {
                fk[a * n + j] = (0..n).map(|i| f[a * n + i] * k[i * n + j]).sum();
            }
        }
        let mut c = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                c[a * n + b] = (0..n).map(|j| fk[a * n + j] * f[b * n + j]).sum();
            }
        }
        c
    }
}

/// One-sided coordinate gradient in one orthant: `d_a = Σ coef[m][a] u[node_m]`.
#[derive(Debug, Clone, Default)]
pub struct OrthantGradient {
    pub nodes: Vec<usize>,
    /// `nodes.len() x n`, row-major.
    pub coef: Vec<f64>,
}

/// Builds orthant gradients around a node, reusing buffers.
pub struct GradientBuilder {
    n: usize,
    stencil: Stencil,
}

impl GradientBuilder {
    pub fn new(n: usize) -> Self {
        GradientBuilder { n, stencil: Vec::new() }
    }

    pub fn orthants(&self) -> usize {
        1 << self.n
    }

    /// Gradient in orthant `mask` (bit `a` set means the backward side on axis `a`).
    pub fn build<G: Grid>(&mut self, grid: &G, node: usize, mask: usize, out: &mut OrthantGradient) {
        let n = self.n;
        let h = grid.spacing();
        out.nodes.clear();
        out.coef.clear();
        out.nodes.push(node);
        out.coef.extend(std::iter::repeat(0.0).take(n));
        for a in 0..n {
            let sign = if mask >> a & 1 == 1 { -1.0 } else { 1.0 };
            out.coef[a] -= sign / h[a];
            grid.neighbor(node, a, sign, &mut self.stencil);
            for &(q, w) in &self.stencil {
                let pos = match out.nodes.iter().position(|&x| x == q) {
                    Some(p) => p,
                    None => {
                        out.nodes.push(q);
                        out.coef.extend(std::iter::repeat(0.0).take(n));
                        out.nodes.len() - 1
                    }
                };
                out.coef[pos * n + a] += sign * w / h[a];
            }
        }
    }
}

/// Stiffness matrix `Σ_nodes Σ_orthants (|cell| / 2^n) (B u)ᵀ C (B u)` over
/// the unknowns. `unknown[node]` gives the unknown index of a node (values
/// at other nodes are zero). Returns the matrix and the diagonal mass
/// `|cell| · density` of each unknown.
pub fn assemble<G: Grid, E>(
    grid: &G,
    unknown: &[Option<usize>],
    unknown_count: usize,
    mut coefficients: impl FnMut(usize) -> Result<NodeCoefficients, E>,
) -> Result<(CsrMatrix, Vec<f64>), E> {
    let n = grid.dim();
    let vol = grid.cell_volume();
    let mut builder = GradientBuilder::new(n);
    let orthants = builder.orthants();
    let scale = vol / orthants as f64;
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut mass = vec![0.0; unknown_count];
    let mut grads: Vec<OrthantGradient> = (0..orthants).map(|_| OrthantGradient::default()).collect();
    let mut bc = Vec::new();
    for node in 0..grid.node_count() {
        let mut touches = unknown[node].is_some();
        for (s, g) in grads.iter_mut().enumerate() {
            builder.build(grid, node, s, g);
            touches |= g.nodes.iter().any(|&q| unknown[q].is_some());
        }
        if !touches {
            continue;
        }
        let c = coefficients(node)?;
        if let Some(u) = unknown[node] {
            mass[u] = vol * c.density;
        }
        let cc = c.coordinate_conductivity(n);
        for g in &grads {
            let m = g.nodes.len();
            // bc[i] = C · coef_i
            bc.clear();
            for i in 0..m {
                for a in 0..n {
                    bc.push((0..n).map(|b| cc[a * n + b] * g.coef[i * n + b]).sum::<f64>());
                }
            }
            for i in 0..m {
                let Some(ui) = unknown[g.nodes[i]] else { continue };
                for j in 0..m {
                    let Some(uj) = unknown[g.nodes[j]] else { continue };
                    let v: f64 = (0..n).map(|a| g.coef[i * n + a] * bc[j * n + a]).sum();
                    if v != 0.0 {
                        triplets.push((ui, uj, scale * v));
                    }
                }
            }
        }
    }
    Ok((CsrMatrix::from_triplets(unknown_count, triplets), mass))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h3() -> GradedNilpotentAlgebra {
        GradedNilpotentAlgebra::heisenberg(3).unwrap()
    }

    #[test]
    fn periodic_grid_sizes() {
        let t2 = GradedNilpotentAlgebra::torus(2).unwrap();
        assert_eq!(PeriodicGrid::new(&t2, &[16, 16]).unwrap().node_count(), 256);
        assert_eq!(PeriodicGrid::new(&h3(), &[16, 16, 32]).unwrap().node_count(), 8192);
        assert_eq!(PeriodicGrid::new(&t2, &[4, 16]).unwrap_err(), GridError::ResolutionOutOfRange(4));
    }

    #[test]
    fn twisted_wraps() {
        let g = PeriodicGrid::new(&h3(), &[8, 8, 8]).unwrap();
        let mut s = Vec::new();
        // Node (7, 2, 3) stepping +x1 lands on (0, 2/8, 3/8 - 1/8) = (0, 2, 2).
        let node = g.index_of(&[7, 2, 3]);
        g.neighbor(node, 0, 1.0, &mut s);
        assert_eq!(s, vec![(g.index_of(&[0, 2, 2]), 1.0)]);
        // Node (3, 7, 0) stepping +x2: x3 + x1/2 = 3/16, halfway between z-nodes 1 and 2.
        let node = g.index_of(&[3, 7, 0]);
        g.neighbor(node, 1, 1.0, &mut s);
        s.sort_by_key(|p| p.0);
        assert_eq!(s, vec![(g.index_of(&[3, 0, 1]), 0.5), (g.index_of(&[3, 0, 2]), 0.5)]);
        // Plain central wrap.
        let node = g.index_of(&[3, 5, 7]);
        g.neighbor(node, 2, 1.0, &mut s);
        assert_eq!(s, vec![(g.index_of(&[3, 5, 0]), 1.0)]);
    }

    #[test]
    fn orthant_gradient_exact_on_affine() {
        let b = BoxGrid::new(vec![-1.0, -1.0], vec![0.25, 0.5], vec![9, 5]).unwrap();
        let u: Vec<f64> = (0..b.node_count()).map(|p| {
            let x = b.position(p);
            3.0 * x[0] - 2.0 * x[1] + 1.0
        }).collect();
        let mut builder = GradientBuilder::new(2);
        let mut g = OrthantGradient::default();
        let node = b.index(&[4, 2]);
        for s in 0..4 {
            builder.build(&b, node, s, &mut g);
            for a in 0..2 {
                let d: f64 = g.nodes.iter().enumerate().map(|(m, &q)| g.coef[m * 2 + a] * u[q]).sum();
                assert!((d - [3.0, -2.0][a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn periodic_operator_is_symmetric_psd_with_constant_kernel() {
        let g = PeriodicGrid::new(&h3(), &[8, 8, 8]).unwrap();
        let n = g.node_count();
        let unknown: Vec<Option<usize>> = (0..n).map(Some).collect();
        let (a, mass) = assemble(&g, &unknown, n, |p| -> Result<_, ()> {
            let x = g.position(p);
            Ok(NodeCoefficients {
                frame: h3().frame(&x).unwrap(),
                conductivity: vec![1.0, 0.0, 0.0, 0.0, 1.5, 0.0, 0.0, 0.0, 2.0],
                density: 1.0,
            })
        })
        .unwrap();
        assert!(a.max_asymmetry() <= 1e-12 * a.max_abs());
        let mut y = vec![0.0; n];
        a.matvec(&vec![1.0; n], &mut y);
        assert!(y.iter().all(|v| v.abs() < 1e-9));
        assert!((mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let e = nalgebra::SymmetricEigen::new(a.to_dense()).eigenvalues;
        assert!(e.iter().all(|&l| l > -1e-9));
        assert_eq!(e.iter().filter(|l| l.abs() < 1e-9).count(), 1);
    }

    #[test]
    fn dirichlet_interval_approaches_closed_form() {
        // (-1, 1): λ₁ = π²/4.
        let mut last = f64::INFINITY;
        for m in [32usize, 64, 128] {
            let h = 2.0 / m as f64;
            let b = BoxGrid::new(vec![-1.0], vec![h], vec![m + 1]).unwrap();
            let unknown: Vec<Option<usize>> = (0..=m).map(|i| (i > 0 && i < m).then(|| i - 1)).collect();
            let (a, mass) = assemble(&b, &unknown, m - 1, |_| -> Result<_, ()> {
                Ok(NodeCoefficients { frame: vec![1.0], conductivity: vec![1.0], density: 1.0 })
            })
            .unwrap();
            let l = crate::linalg::lowest_eigenpairs(&a, &mass, 1, 1e-10).unwrap().values[0];
            let err = (l - std::f64::consts::PI.powi(2) / 4.0).abs();
            assert!(err < last / 3.0);
            last = err;
        }
        assert!(last < 2e-4);
    }
}
