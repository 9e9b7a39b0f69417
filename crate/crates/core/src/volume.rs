//! Asymptotic volume `Asvol(g) = lim μ_g(B_g(ρ)) / ρ^{d_h}` and the lower
//! bound coming from the Albanese CC ball.
//!
//! In the rescaled picture `μ_ρ(B_ρ(1))` already equals
//! `μ_g(B_g(ρ)) / ρ^{d_h}`. The limit measure is Haar measure scaled so
//! that the unit box fundamental domain has mass `Vol_g(M)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::ball::{
    ball_grid, ball_mask, ball_spacing, distance_field, fit_inverse_rho, BallError, BallMask, DistanceOptions,
    InverseRhoFit, ResolutionRule,
};
use crate::grid::Grid;
use crate::metric::{MetricField, RescaledCoefficients};
use crate::subriemannian::CCField;

/// `μ(B)` with an inner/outer bracket: the inner sum keeps nodes whose
/// whole one-cell neighbourhood is inside, the outer sum adds every node
/// within one cell of the mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VolumeEstimate {
    pub volume: f64,
    pub low: f64,
    pub high: f64,
}

impl VolumeEstimate {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.high - self.low)
    }
}

fn neighbourhood(mask: &BallMask, node: usize, mut visit: impl FnMut(usize) -> bool) -> bool {
    let dims = mask.grid.dims();
    let n = dims.len();
    let m = mask.grid.multi_index(node);
    let mut nb = m.clone();
    for code in 0..3usize.pow(n as u32) {
        let mut r = code;
        let mut ok = true;
        for p in 0..n {
            let v = m[p] as i64 + (r % 3) as i64 - 1;
            r /= 3;
            if v < 0 || v >= dims[p] as i64 {
                ok = false;
                break;
            }
            nb[p] = v as usize;
        }
        if ok && !visit(mask.grid.index(&nb)) {
            return false;
        }
    }
    true
}

/// Weighted node count of a mask with density `weight(x)`.
pub fn weighted_volume(mask: &BallMask, mut weight: impl FnMut(&[f64]) -> Result<f64, BallError>) -> Result<VolumeEstimate, BallError> {
    let vol = mask.grid.cell_volume();
    let (mut volume, mut low, mut high) = (0.0, 0.0, 0.0);
    for node in 0..mask.inside.len() {
        let inside = mask.inside[node];
        let interior = inside && neighbourhood(mask, node, |k| mask.inside[k]);
        let near = inside || !neighbourhood(mask, node, |k| !mask.inside[k]);
        if !near {
            continue;
        }
        let w = weight(&mask.grid.position(node))? * vol;
        high += w;
        if inside {
            volume += w;
        }
        if interior {
            low += w;
        }
    }
    Ok(VolumeEstimate { volume, low, high })
}

/// `μ_ρ(B_ρ(1))` on a mask: `Σ sqrt(det g(δ_ρ x)) · |cell|`.
pub fn ball_volume(m: &MetricField, rho: f64, mask: &BallMask) -> Result<VolumeEstimate, BallError> {
    let c = RescaledCoefficients::new(m, rho)?;
    weighted_volume(mask, |x| Ok(c.eval(x)?.weight))
}

/// Haar volume of a mask.
pub fn haar_volume(mask: &BallMask) -> VolumeEstimate {
    weighted_volume(mask, |_| Ok(1.0)).expect("constant weight cannot fail")
}

/// `Vol_g(M) = ∫ sqrt(det g)` over the unit box, midpoint rule with
/// `per_axis` cells per coordinate.
pub fn manifold_volume(m: &MetricField, per_axis: usize) -> Result<f64, BallError> {
    let n = m.dim();
    let cells = per_axis.pow(n as u32);
    let h = 1.0 / per_axis as f64;
    let mut acc = 0.0;
    let mut x = vec![0.0; n];
    for code in 0..cells {
        let mut r = code;
        for v in x.iter_mut() {
            *v = ((r % per_axis) as f64 + 0.5) * h;
            r /= per_axis;
        }
        acc += m.inverse_at(&x)?.1;
    }
    Ok(acc / cells as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolumeRow {
    pub rho: f64,
    pub volume: f64,
    pub bracket_low: f64,
    pub bracket_high: f64,
    pub spacing: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolumeStudy {
    pub rows: Vec<VolumeRow>,
    pub fit: InverseRhoFit,
    /// `|v(ρ_{k+1}) - v(ρ_k)|` along the list.
    pub increments: Vec<f64>,
}

impl VolumeStudy {
    pub fn asvol(&self) -> f64 {
        self.fit.limit
    }

    /// Error bar for the extrapolated value: half the bracket at the
    /// largest `ρ` plus the distance from the last value to the limit.
    pub fn error_bar(&self) -> f64 {
        let last = self.rows.last().expect("study has rows");
        0.5 * (last.bracket_high - last.bracket_low) + (self.fit.limit - last.volume).abs()
    }

    /// Successive increments shrink (the sequence looks Cauchy).
    pub fn is_cauchy(&self) -> bool {
        self.increments.windows(2).all(|w| w[1] <= w[0])
    }
}

/// `v(ρ)` along `rhos` and its `1/ρ` extrapolation.
pub fn asvol_study(m: &MetricField, rhos: &[f64], rule: &ResolutionRule) -> Result<VolumeStudy, BallError> {
    if rhos.len() < 3 || rhos.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(BallError::InsufficientRhoRange(rhos.to_vec()));
    }
    let algebra = m.algebra();
    let d1 = algebra.horizontal_dim();
    let rows = rhos
        .par_iter()
        .map(|&rho| {
            let step = if algebra.step() == 1 { 1.0 / rule.per_unit(rho) as f64 } else { rule.lattice_step };
            let field = distance_field(m, rho, &DistanceOptions::for_ball(algebra, rho, step))?;
            let spacing = ball_spacing(&field, rule, d1);
            let mask = ball_mask(&field, ball_grid(&field, &spacing, 1.0)?, 1.0);
            let v = ball_volume(m, rho, &mask)?;
            Ok(VolumeRow { rho, volume: v.volume, bracket_low: v.low, bracket_high: v.high, spacing })
        })
        .collect::<Result<Vec<_>, BallError>>()?;
    let y: Vec<f64> = rows.iter().map(|r| r.volume).collect();
    let fit = fit_inverse_rho(rhos, &y)?;
    let increments = y.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    Ok(VolumeStudy { rows, fit, increments })
}

/// `Vol_g(M) · μ₂(B₂(1)) / μ₂(D_M)` with Haar measure normalized by the
/// unit box, so `μ₂(D_M) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerBound {
    pub bound: f64,
    pub manifold_volume: f64,
    pub haar_ball: VolumeEstimate,
}

impl LowerBound {
    pub fn error_bar(&self) -> f64 {
        self.manifold_volume * self.haar_ball.half_width()
    }
}

/// Lower bound from the Albanese CC ball `cc` sampled on `mask`.
pub fn asvol_lower_bound(manifold_volume: f64, cc_mask: &BallMask) -> LowerBound {
    let haar_ball = haar_volume(cc_mask);
    LowerBound { bound: manifold_volume * haar_ball.volume, manifold_volume, haar_ball }
}

/// Mask of a CC ball on its own grid.
pub fn cc_mask(cc: &CCField, spacing: &[f64]) -> Result<BallMask, BallError> {
    Ok(ball_mask(&cc.field, ball_grid(&cc.field, spacing, 1.0)?, 1.0))
}

/// Pansu's value `Vol_g(M) · μ(B_∞(1))` where the limit ball is the CC
/// ball of the stable norm. The stable unit ball lies between the inner
/// and outer polygons, so their CC balls bracket the value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PansuValue {
    pub low: f64,
    pub high: f64,
    pub manifold_volume: f64,
}

impl PansuValue {
    pub fn new(manifold_volume: f64, inner: &BallMask, outer: &BallMask) -> Self {
        PansuValue {
            low: manifold_volume * haar_volume(inner).volume,
            high: manifold_volume * haar_volume(outer).volume,
            manifold_volume,
        }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.low + self.high)
    }

    /// Relative distance from `v` to the bracket (zero inside it).
    pub fn mismatch(&self, v: f64) -> f64 {
        let d = if v < self.low {
            self.low - v
        } else if v > self.high {
            v - self.high
        } else {
            0.0
        };
        d / self.midpoint()
    }
}

/// Comparison of an asymptotic-volume estimate with the lower bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundVerdict {
    pub asvol: f64,
    pub bound: f64,
    /// `(asvol - bound) / bound`.
    pub relative_gap: f64,
    pub error_bar: f64,
    pub holds: bool,
}

pub fn compare_with_bound(study: &VolumeStudy, bound: &LowerBound) -> BoundVerdict {
    let error_bar = study.error_bar() + bound.error_bar();
    let asvol = study.asvol();
    BoundVerdict {
        asvol,
        bound: bound.bound,
        relative_gap: (asvol - bound.bound) / bound.bound,
        error_bar,
        holds: asvol >= bound.bound - error_bar,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::GradedNilpotentAlgebra;
    use crate::grid::BoxGrid;
    use crate::metric::left_invariant_metric;
    use nalgebra::DMatrix;

    fn scaled_flat(s: f64) -> MetricField {
        left_invariant_metric(GradedNilpotentAlgebra::torus(2).unwrap(), &(DMatrix::identity(2, 2) * s)).unwrap()
    }

    fn disk_volume(m: &MetricField) -> VolumeEstimate {
        let f = distance_field(m, 1.0, &DistanceOptions::for_ball(m.algebra(), 1.0, 1.0 / 64.0)).unwrap();
        let mask = ball_mask(&f, ball_grid(&f, &[1.0 / 64.0, 1.0 / 64.0], 1.0).unwrap(), 1.0);
        ball_volume(m, 1.0, &mask).unwrap()
    }

    #[test]
    fn flat_unit_disk_area() {
        let v = disk_volume(&scaled_flat(1.0));
        assert!((v.volume / std::f64::consts::PI - 1.0).abs() < 0.02, "{v:?}");
        assert!(v.low < v.volume && v.volume < v.high);
    }

    #[test]
    fn four_times_identity_keeps_area_pi() {
        // Coordinate disk of radius 1/2 (area π/4) with density sqrt(det 4I) = 4.
        let v = disk_volume(&scaled_flat(4.0));
        assert!((v.volume / std::f64::consts::PI - 1.0).abs() < 0.02, "{v:?}");
    }

    #[test]
    fn empty_mask_has_no_volume() {
        let grid = BoxGrid::new(vec![0.0, 0.0], vec![0.1, 0.1], vec![4, 4]).unwrap();
        let mask = BallMask { grid, inside: vec![false; 16] };
        let v = ball_volume(&scaled_flat(1.0), 2.0, &mask).unwrap();
        assert_eq!((v.volume, v.low, v.high), (0.0, 0.0, 0.0));
    }

    #[test]
    fn bracket_narrows_with_resolution() {
        let m = scaled_flat(1.0);
        let width = |n: f64| {
            let f = distance_field(&m, 1.0, &DistanceOptions::for_ball(m.algebra(), 1.0, 1.0 / n)).unwrap();
            let mask = ball_mask(&f, ball_grid(&f, &[1.0 / n, 1.0 / n], 1.0).unwrap(), 1.0);
            let v = ball_volume(&m, 1.0, &mask).unwrap();
            v.high - v.low
        };
        assert!(width(64.0) < 0.6 * width(32.0));
    }

    #[test]
    fn manifold_volume_of_the_normalization_domain() {
        // The limit measure gives the fundamental domain its Riemannian mass.
        let t2 = GradedNilpotentAlgebra::torus(2).unwrap();
        let m = MetricField::from_text(t2, &[vec!["1+0.5*sin(2*pi*x1)".into(), "0".into()], vec!["1".into()]]).unwrap();
        let exact = crate::oracles::simpson(|t| (1.0 + 0.5 * (2.0 * std::f64::consts::PI * t).sin()).sqrt(), 0.0, 1.0, 2000);
        assert!((manifold_volume(&m, 64).unwrap() - exact).abs() < 1e-12);
        assert!((manifold_volume(&scaled_flat(4.0), 8).unwrap() - 4.0).abs() < 1e-14);
    }
}
