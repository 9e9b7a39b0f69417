//! Reference solutions used to check the numerical pipelines.
//!
//! Everything here is computed independently of the main code paths:
//! a direct text interpreter for the expression language, Bessel zeros by
//! quadrature and bisection, closed forms for one-dimensional cell
//! problems, and geodesic shooting on the Heisenberg group.

use std::f64::consts::PI;

/// Evaluate expression text directly, without building a tree.
///
/// Mirrors the grammar of [`crate::expr`] but shares no code with it.
pub fn reference_eval(text: &str, x: &[f64]) -> Result<f64, String> {
    let mut r = Reader { s: text.as_bytes(), pos: 0, x };
    let v = r.expr()?;
    r.skip_ws();
    if r.pos != r.s.len() {
        return Err(format!("trailing input at byte {}", r.pos));
    }
    Ok(v)
}

struct Reader<'a> {
    s: &'a [u8],
    pos: usize,
    x: &'a [f64],
}

fn finite(v: f64) -> Result<f64, String> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err("non-finite".into())
    }
}

impl Reader<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<f64, String> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    acc = finite(acc + self.term()?)?;
                }
                Some(b'-') => {
                    self.pos += 1;
                    acc = finite(acc - self.term()?)?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<f64, String> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    acc = finite(acc * self.factor()?)?;
                }
                Some(b'/') => {
                    self.pos += 1;
                    let d = self.factor()?;
                    if d == 0.0 {
                        return Err("division by zero".into());
                    }
                    acc = finite(acc / d)?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<f64, String> {
        let base = self.atom()?;
        if self.peek() != Some(b'^') {
            return Ok(base);
        }
        self.pos += 1;
        let neg = if self.peek() == Some(b'-') {
            self.pos += 1;
            true
        } else {
            false
        };
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let k: i32 = std::str::from_utf8(&self.s[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| "bad exponent".to_string())?;
        let k = if neg { -k } else { k };
        if base == 0.0 && k < 0 {
            return Err("division by zero".into());
        }
        finite(base.powi(k))
    }

    fn atom(&mut self) -> Result<f64, String> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(-self.atom()?)
            }
            Some(b'(') => {
                self.pos += 1;
                let v = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err("missing )".into());
                }
                self.pos += 1;
                Ok(v)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let start = self.pos;
                while self.pos < self.s.len()
                    && (self.s[self.pos].is_ascii_digit()
                        || self.s[self.pos] == b'.'
                        || ((self.s[self.pos] == b'e' || self.s[self.pos] == b'E')
                            && self.s.get(self.pos + 1).is_some_and(|b| b.is_ascii_digit() || *b == b'+' || *b == b'-'))
                        || ((self.s[self.pos] == b'+' || self.s[self.pos] == b'-')
                            && matches!(self.s[self.pos - 1], b'e' | b'E')))
                {
                    self.pos += 1;
                }
                let text = std::str::from_utf8(&self.s[start..self.pos]).unwrap();
                text.parse::<f64>().map_err(|e| e.to_string()).and_then(finite)
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.s.len() && self.s[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.s[start..self.pos]).unwrap().to_string();
                if name == "pi" {
                    return Ok(PI);
                }
                if let Some(idx) = name.strip_prefix('x') {
                    let i: usize = idx.parse().map_err(|_| format!("bad name {name}"))?;
                    return self.x.get(i.wrapping_sub(1)).copied().ok_or_else(|| format!("no {name}"));
                }
                let f: fn(f64) -> f64 = match name.as_str() {
                    "sin" => f64::sin,
                    "cos" => f64::cos,
                    "exp" => f64::exp,
                    _ => return Err(format!("unknown name {name}")),
                };
                if self.peek() != Some(b'(') {
                    return Err("missing (".into());
                }
                self.pos += 1;
                let v = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err("missing )".into());
                }
                self.pos += 1;
                finite(f(v))
            }
            _ => Err(format!("unexpected input at byte {}", self.pos)),
        }
    }
}

/// Bessel function of the first kind by the integral
/// `J_n(x) = (1/π) ∫_0^π cos(nτ - x sin τ) dτ`, trapezoid rule on a
/// periodic analytic integrand.
pub fn bessel_j(n: u32, x: f64) -> f64 {
    let m = 400;
    let h = PI / m as f64;
    let mut s = 0.0;
    for k in 0..=m {
        let t = k as f64 * h;
        let w = if k == 0 || k == m { 0.5 } else { 1.0 };
        s += w * (n as f64 * t - x * t.sin()).cos();
    }
    s * h / PI
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    assert!(flo * f(hi) < 0.0, "root not bracketed");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// First positive zero of `J_0`.
pub fn bessel_j0_first_zero() -> f64 {
    bisect(|x| bessel_j(0, x), 2.0, 3.0)
}

/// First positive zero of `J_1`.
pub fn bessel_j1_first_zero() -> f64 {
    bisect(|x| bessel_j(1, x), 3.0, 4.5)
}

/// First Dirichlet eigenvalue of the unit disk, `j_{0,1}^2`.
pub fn disk_lambda1() -> f64 {
    bessel_j0_first_zero().powi(2)
}

/// Second (double) Dirichlet eigenvalue of the unit disk, `j_{1,1}^2`.
pub fn disk_lambda2() -> f64 {
    bessel_j1_first_zero().powi(2)
}

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + k as f64 * h);
    }
    s * h / 3.0
}

/// Mean over one period of a 1-periodic function (trapezoid rule, which is
/// spectrally accurate for smooth periodic integrands).
pub fn periodic_mean(f: impl Fn(f64) -> f64, n: usize) -> f64 {
    (0..n).map(|k| f(k as f64 / n as f64)).sum::<f64>() / n as f64
}

/// One-dimensional cell problem `(c (1 + χ'))' = 0` on the unit circle with
/// conductivity `c`: returns `(harmonic mean of c, χ(x))` for the corrector
/// normalised by `χ(0) = 0`.
pub fn cell_corrector_1d(c: impl Fn(f64) -> f64 + Copy, x: f64) -> (f64, f64) {
    let n = 4096;
    let inv_mean = periodic_mean(|t| 1.0 / c(t), n);
    let h = 1.0 / inv_mean;
    // χ' = h / c - 1  =>  χ(x) = ∫_0^x (h / c - 1).
    let chi = if x == 0.0 { 0.0 } else { simpson(|t| h / c(t) - 1.0, 0.0, x, 2048) };
    (h, chi)
}

/// Horizontal unit-speed curve of the Heisenberg group with
/// `[X1, X2] = X3` in first-kind coordinates, integrated by RK4: returns the
/// end point after length `length`, starting at the origin with initial
/// direction angle `theta` and curvature `kappa`, while the vertical frame
/// component has constant speed `vertical` (zero for horizontal curves).
pub fn heisenberg_curve_end(theta: f64, kappa: f64, vertical: f64, length: f64, steps: usize) -> [f64; 3] {
    // State (x, y, z, angle); d/dt (x, y) = (cos a, sin a),
    // dz/dt = (x sin a - y cos a) / 2 + vertical, da/dt = kappa.
    let rhs = |s: [f64; 4]| -> [f64; 4] {
        let (c, sn) = (s[3].cos(), s[3].sin());
        [c, sn, 0.5 * (s[0] * sn - s[1] * c) + vertical, kappa]
    };
    let h = length / steps as f64;
    let mut s = [0.0, 0.0, 0.0, theta];
    for _ in 0..steps {
        let k1 = rhs(s);
        let k2 = rhs(add(s, k1, h / 2.0));
        let k3 = rhs(add(s, k2, h / 2.0));
        let k4 = rhs(add(s, k3, h));
        for i in 0..4 {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    [s[0], s[1], s[2]]
}

fn add(s: [f64; 4], k: [f64; 4], h: f64) -> [f64; 4] {
    [s[0] + h * k[0], s[1] + h * k[1], s[2] + h * k[2], s[3] + h * k[3]]
}

/// Sub-Riemannian distance from the origin to `(0, 0, w)` for the standard
/// inner product on the first layer, by shooting: a closed horizontal loop
/// of curvature `kappa` and length `2π/kappa` is integrated numerically and
/// `kappa` is adjusted until the end height equals `|w|`.
pub fn cc_vertical_distance_by_shooting(w: f64) -> f64 {
    let w = w.abs();
    if w == 0.0 {
        return 0.0;
    }
    let height = |kappa: f64| heisenberg_curve_end(0.0, kappa, 0.0, 2.0 * PI / kappa, 2000)[2];
    // Height decreases in kappa.
    let (mut lo, mut hi) = (1e-3f64, 1e3f64);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if height(mid) > w {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    2.0 * PI / (lo * hi).sqrt()
}

/// Riemannian distance from the origin to `(0, 0, w)` for the left-invariant
/// metric with orthonormal frame `(X1, X2, X3 / rho)`, by shooting.
///
/// Candidates are the vertical segment (length `rho |w|`) and helices: a
/// horizontal circle of curvature `kappa` travelled once at unit horizontal
/// speed with constant vertical frame speed `v`, whose length is
/// `(2π/kappa) sqrt(1 + rho² v²)`. Along a geodesic the vertical momentum
/// `rho² v` equals the curvature, which fixes `v = kappa / rho²`; the
/// remaining parameter `kappa` is shot so the helix ends at height `|w|`.
pub fn riemannian_vertical_distance_by_shooting(w: f64, rho: f64) -> f64 {
    let w = w.abs();
    let straight = rho * w;
    let height = |kappa: f64| {
        let v = kappa / (rho * rho);
        heisenberg_curve_end(0.0, kappa, v, 2.0 * PI / kappa, 2000)[2]
    };
    // The helix height decreases from +inf (kappa -> 0) to 2π/rho² (kappa -> inf).
    if w <= 2.0 * PI / (rho * rho) {
        return straight;
    }
    let (mut lo, mut hi) = (1e-3f64, 1e4f64);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if height(mid) > w {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let kappa = (lo * hi).sqrt();
    let v = kappa / (rho * rho);
    let helix = 2.0 * PI / kappa * (1.0 + rho * rho * v * v).sqrt();
    helix.min(straight)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_zeros_match_tabulated_values() {
        assert!((bessel_j0_first_zero() - 2.404_825_557_695_773).abs() < 1e-12);
        assert!((bessel_j1_first_zero() - 3.831_705_970_207_512).abs() < 1e-12);
        assert!((disk_lambda1() - 5.78319).abs() < 1e-5);
        assert!((disk_lambda2() - 14.6820).abs() < 1e-3);
    }

    #[test]
    fn laminate_harmonic_mean_closed_form() {
        // ∫_0^1 dx / (1 + b sin 2πx) = 1 / sqrt(1 - b²)
        let b = 0.5;
        let (h, chi) = cell_corrector_1d(|x| 1.0 + b * (2.0 * PI * x).sin(), 1.0);
        assert!((h - (1.0f64 - b * b).sqrt()).abs() < 1e-12);
        assert!(chi.abs() < 1e-10, "corrector must be periodic");
    }

    #[test]
    fn circle_encloses_its_area_as_height() {
        // Radius r circle: length 2πr, height πr².
        let r = 0.3;
        let end = heisenberg_curve_end(0.0, 1.0 / r, 0.0, 2.0 * PI * r, 4000);
        assert!(end[0].abs() < 1e-10 && end[1].abs() < 1e-10);
        assert!((end[2] - PI * r * r).abs() < 1e-10);
    }

    #[test]
    fn isoperimetric_constant() {
        // Minimal length L enclosing area w is sqrt(4πw).
        for w in [0.01, 0.05, 0.2] {
            let d = cc_vertical_distance_by_shooting(w);
            assert!((d - (4.0 * PI * w).sqrt()).abs() < 1e-9, "{w}: {d}");
        }
    }

    #[test]
    fn riemannian_vertical_distance_limits() {
        // Below the helix threshold the vertical segment wins.
        assert_eq!(riemannian_vertical_distance_by_shooting(0.05, 8.0), 0.4);
        // Far above it the helix approaches the sub-Riemannian value.
        let d = riemannian_vertical_distance_by_shooting(0.1, 200.0);
        assert!((d - (4.0 * PI * 0.1f64).sqrt()).abs() < 1e-3);
        // Closed form of the helix family: sqrt(4π (w - π/rho²)).
        let (w, rho) = (0.2, 8.0);
        let d = riemannian_vertical_distance_by_shooting(w, rho);
        let closed = (4.0 * PI * (w - PI / (rho * rho))).sqrt();
        assert!((d - closed.min(rho * w)).abs() < 1e-8, "{d} vs {closed}");
    }

    #[test]
    fn reference_interpreter_basics() {
        assert_eq!(reference_eval("1 + 2*3", &[]).unwrap(), 7.0);
        assert_eq!(reference_eval("x2^2", &[0.0, 3.0]).unwrap(), 9.0);
        assert!(reference_eval("1/0", &[]).is_err());
        assert_eq!(reference_eval("2e-1", &[]).unwrap(), 0.2);
    }
}
