//! Scalar kernels shared by the solvers: Lambert W, root finders,
//! quadrature, golden-section search and the quadratic surface fit.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::E;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("lambert_w0 argument {z} is below -1/e")]
    LambertDomain { z: f64 },
    #[error("no convergence after {iterations} iterations (last x = {last}, residual = {residual})")]
    NoConvergence {
        iterations: usize,
        last: f64,
        residual: f64,
    },
    #[error("secant slope {slope:e} is numerically zero at x = {x}")]
    FlatSecant { x: f64, slope: f64 },
    #[error("invalid bracket [{a}, {b}] with residuals {fa}, {fb}")]
    InvalidBracket { a: f64, b: f64, fa: f64, fb: f64 },
    #[error("residual is not finite at x = {x}")]
    NonFinite { x: f64 },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("normal equations are singular (condition estimate {condition:e})")]
    Singular { condition: f64 },
    #[error("invalid root configuration: {0}")]
    InvalidConfig(&'static str),
}

/// Principal branch `W0(z)` of `w e^w = z`, for `z >= -1/e`.
pub fn lambert_w0(z: f64) -> Result<f64, NumericsError> {
    let branch = -1.0 / E;
    if z.is_nan() || z < branch - 1e-12 {
        return Err(NumericsError::LambertDomain { z });
    }
    if z <= branch {
        return Ok(-1.0);
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    if z == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    let mut w = if z < -0.25 {
        // Series in p = sqrt(2(ez + 1)) about the branch point.
        let q = 2.0 * (E * z + 1.0);
        let p = q.max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else {
        z.ln_1p()
    };
    for _ in 0..50 {
        let ew = w.exp();
        let f = w * ew - z;
        let wp1 = w + 1.0;
        if wp1.abs() < 1e-300 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        let step = f / denom;
        let next = (w - step).max(-1.0);
        let done = (next - w).abs() <= 4.0 * f64::EPSILON * (1.0 + next.abs());
        w = next;
        if done {
            break;
        }
    }
    Ok(w)
}

/// Settings for [`secant_solve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub seeds: (f64, f64),
}

impl RootConfig {
    pub fn new(tol: f64, max_iter: usize, seeds: (f64, f64)) -> Result<Self, NumericsError> {
        if !(tol > 0.0) {
            return Err(NumericsError::InvalidConfig("tol must be positive"));
        }
        if max_iter == 0 {
            return Err(NumericsError::InvalidConfig("max_iter must be at least 1"));
        }
        if seeds.0 == seeds.1 {
            return Err(NumericsError::InvalidConfig("seeds must differ"));
        }
        Ok(RootConfig {
            tol,
            max_iter,
            seeds,
        })
    }
}

/// Plain secant iteration. Returns the root and the number of secant updates.
pub fn secant_solve<F>(mut residual: F, cfg: RootConfig) -> Result<(f64, usize), NumericsError>
where
    F: FnMut(f64) -> f64,
{
    let (mut x0, mut x1) = cfg.seeds;
    let mut f0 = residual(x0);
    if !f0.is_finite() {
        return Err(NumericsError::NonFinite { x: x0 });
    }
    if f0.abs() <= cfg.tol {
        return Ok((x0, 0));
    }
    let mut f1 = residual(x1);
    for it in 1..=cfg.max_iter {
        if !f1.is_finite() {
            return Err(NumericsError::NonFinite { x: x1 });
        }
        if f1.abs() <= cfg.tol {
            return Ok((x1, it - 1));
        }
        let slope = (f1 - f0) / (x1 - x0);
        if slope.abs() < 1e-30 || !slope.is_finite() {
            return Err(NumericsError::FlatSecant { x: x1, slope });
        }
        let x2 = x1 - f1 / slope;
        x0 = x1;
        f0 = f1;
        x1 = x2;
        f1 = residual(x1);
    }
    if f1.is_finite() && f1.abs() <= cfg.tol {
        return Ok((x1, cfg.max_iter));
    }
    Err(NumericsError::NoConvergence {
        iterations: cfg.max_iter,
        last: x1,
        residual: f1,
    })
}

/// Bisection to an interval of width at most `tol` (or floating-point resolution).
pub fn bisection<F>(mut residual: F, a: f64, b: f64, tol: f64) -> Result<f64, NumericsError>
where
    F: FnMut(f64) -> f64,
{
    let (mut lo, mut hi) = if a <= b { (a, b) } else { (b, a) };
    let mut f_lo = residual(lo);
    let f_hi = residual(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if !(f_lo * f_hi < 0.0) {
        return Err(NumericsError::InvalidBracket {
            a: lo,
            b: hi,
            fa: f_lo,
            fb: f_hi,
        });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = residual(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if !f_mid.is_finite() {
            return Err(NumericsError::NonFinite { x: mid });
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Root of a function with known derivative inside a sign-changing bracket.
/// Newton steps are taken when they stay inside the bracket, bisection otherwise.
pub(crate) fn newton_in_bracket<F>(
    mut f_df: F,
    mut lo: f64,
    mut hi: f64,
    ftol: f64,
) -> Result<f64, NumericsError>
where
    F: FnMut(f64) -> (f64, f64),
{
    let (f_lo, _) = f_df(lo);
    let (f_hi, _) = f_df(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if !(f_lo * f_hi < 0.0) {
        return Err(NumericsError::InvalidBracket {
            a: lo,
            b: hi,
            fa: f_lo,
            fb: f_hi,
        });
    }
    let lo_negative = f_lo < 0.0;
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (fx, dfx) = f_df(x);
        if !fx.is_finite() {
            return Err(NumericsError::NonFinite { x });
        }
        if fx.abs() <= ftol {
            return Ok(x);
        }
        if (fx < 0.0) == lo_negative {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - fx / dfx;
        let next = if dfx != 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// Composite trapezoid over `(t, value)` samples.
pub fn integrate_trapezoid(samples: &[(f64, f64)]) -> Result<f64, NumericsError> {
    if samples.len() < 2 {
        return Err(NumericsError::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    Ok(samples
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum())
}

/// Golden-section minimization on `[a, b]`; endpoints are also compared so a
/// boundary minimum is returned exactly.
pub fn golden_section_min<F>(mut f: F, a: f64, b: f64, tol: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (a, b);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let mut best = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    for x in [a, b] {
        let fx = f(x);
        if fx < best.1 {
            best = (x, fx);
        }
    }
    best
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let (l0, l1) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == n - 1 {
                hi
            } else {
                (l0 + (l1 - l0) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Least-squares surface `a0 + a1 g + a2 g^2 + a3 b + a4 b^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadFit {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub r2: f64,
}

impl QuadFit {
    pub fn predict(&self, g: f64, b: f64) -> f64 {
        self.a0 + self.a1 * g + self.a2 * g * g + self.a3 * b + self.a4 * b * b
    }

    pub fn coefficients(&self) -> [f64; 5] {
        [self.a0, self.a1, self.a2, self.a3, self.a4]
    }

    /// Gradient of the squared error with respect to the coefficients.
    pub fn sse_gradient(&self, points: &[(f64, f64, f64)]) -> [f64; 5] {
        let mut grad = [0.0; 5];
        for &(g, b, y) in points {
            let e = self.predict(g, b) - y;
            for (slot, phi) in grad.iter_mut().zip([1.0, g, g * g, b, b * b]) {
                *slot += 2.0 * e * phi;
            }
        }
        grad
    }
}

fn center_scale(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    (mean, scale)
}

/// Fits the 5-term quadratic surface by normal equations on centered, scaled inputs.
pub fn fit_quadratic_surface(points: &[(f64, f64, f64)]) -> Result<QuadFit, NumericsError> {
    if points.len() < 5 {
        return Err(NumericsError::TooFewSamples {
            needed: 5,
            got: points.len(),
        });
    }
    let (gm, gs) = center_scale(points.iter().map(|p| p.0));
    let (bm, bs) = center_scale(points.iter().map(|p| p.1));
    let mut ata = SMatrix::<f64, 5, 5>::zeros();
    let mut aty = SVector::<f64, 5>::zeros();
    for &(g, b, y) in points {
        let gg = (g - gm) / gs;
        let bb = (b - bm) / bs;
        let row = SVector::<f64, 5>::from([1.0, gg, gg * gg, bb, bb * bb]);
        ata += row * row.transpose();
        aty += row * y;
    }
    let eig = ata.symmetric_eigen().eigenvalues;
    let max = eig.iter().cloned().fold(0.0_f64, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 1e-12 * max) {
        return Err(NumericsError::Singular {
            condition: max / min.max(f64::MIN_POSITIVE),
        });
    }
    let c = ata
        .cholesky()
        .ok_or(NumericsError::Singular {
            condition: f64::INFINITY,
        })?
        .solve(&aty);
    // Undo the affine change of variables.
    let a2 = c[2] / (gs * gs);
    let a1 = c[1] / gs - 2.0 * c[2] * gm / (gs * gs);
    let a4 = c[4] / (bs * bs);
    let a3 = c[3] / bs - 2.0 * c[4] * bm / (bs * bs);
    let a0 = c[0] - c[1] * gm / gs + c[2] * gm * gm / (gs * gs) - c[3] * bm / bs
        + c[4] * bm * bm / (bs * bs);
    let mut fit = QuadFit {
        a0,
        a1,
        a2,
        a3,
        a4,
        r2: 0.0,
    };
    let mean_y = points.iter().map(|p| p.2).sum::<f64>() / points.len() as f64;
    let ss_tot: f64 = points.iter().map(|p| (p.2 - mean_y).powi(2)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.2 - fit.predict(p.0, p.1)).powi(2))
        .sum();
    fit.r2 = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lambert_fixed_points() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert_relative_eq!(lambert_w0(E).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(lambert_w0(-1.0 / E).unwrap(), -1.0);
        assert!(lambert_w0(-1.0 / E - 1e-9).is_err());
        // Omega constant.
        assert_relative_eq!(
            lambert_w0(1.0).unwrap(),
            0.567_143_290_409_783_8,
            epsilon = 1e-15
        );
    }

    #[test]
    fn secant_examples() {
        let cfg = RootConfig::new(1e-12, 100, (1.0, 3.0)).unwrap();
        let (root, _) = secant_solve(|x| x * x - 4.0, cfg).unwrap();
        assert_relative_eq!(root, 2.0, epsilon = 1e-10);
        let (root, it) = secant_solve(|x| x, RootConfig::new(1e-12, 10, (0.5, 1.0)).unwrap()).unwrap();
        assert!(root.abs() <= 1e-12);
        assert_eq!(it, 1);
    }

    #[test]
    fn secant_reports_flat_slope_and_non_convergence() {
        let cfg = RootConfig::new(1e-12, 10, (1.0, 2.0)).unwrap();
        assert!(matches!(
            secant_solve(|_| 1.0, cfg),
            Err(NumericsError::FlatSecant { .. })
        ));
        let cfg = RootConfig::new(1e-12, 3, (1.0, 2.0)).unwrap();
        assert!(matches!(
            secant_solve(|x| x.atan() + 2.0, cfg),
            Err(NumericsError::NoConvergence { .. }) | Err(NumericsError::NonFinite { .. })
        ));
        assert!(RootConfig::new(1e-5, 10, (1.0, 1.0)).is_err());
    }

    #[test]
    fn bisection_cube() {
        let root = bisection(|x| x * x * x, -1.0, 2.0, 1e-12).unwrap();
        assert!(root.abs() < 1e-12);
        assert!(bisection(|x| x * x + 1.0, -1.0, 2.0, 1e-12).is_err());
    }

    #[test]
    fn trapezoid_examples() {
        let ones: Vec<_> = (0..=7).map(|i| (i as f64 / 7.0, 1.0)).collect();
        assert_relative_eq!(integrate_trapezoid(&ones).unwrap(), 1.0, epsilon = 1e-15);
        let ramp: Vec<_> = (0..=10).map(|i| (0.2 * i as f64, 0.2 * i as f64)).collect();
        assert_relative_eq!(integrate_trapezoid(&ramp).unwrap(), 2.0, epsilon = 1e-14);
        let disc: Vec<_> = (0..=250)
            .map(|i| {
                let t = 0.4 * i as f64;
                (t, (-0.05 * t).exp())
            })
            .collect();
        let exact = (1.0 - (-5.0f64).exp()) / 0.05;
        assert!((integrate_trapezoid(&disc).unwrap() - exact).abs() < 1e-2);
        assert!(integrate_trapezoid(&[(0.0, 1.0)]).is_err());
    }

    #[test]
    fn golden_section_finds_interior_and_boundary_minima() {
        let (x, _) = golden_section_min(|x| (x - 0.3).powi(2), 0.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8);
        let (x, fx) = golden_section_min(|x| (x + 0.3).powi(2), 0.0, 1.0, 1e-10);
        assert_eq!(x, 0.0);
        assert_relative_eq!(fx, 0.09);
    }

    #[test]
    fn fit_recovers_its_own_model_class() {
        let mut pts = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                let g = 0.1 + 0.02 * i as f64;
                let b = 0.01 + 0.002 * j as f64;
                pts.push((g, b, 1.0 - 2.0 * g + 3.0 * g * g));
            }
        }
        let fit = fit_quadratic_surface(&pts).unwrap();
        for (got, want) in fit.coefficients().iter().zip([1.0, -2.0, 3.0, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
        assert_relative_eq!(fit.r2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_rejects_degenerate_designs() {
        let pts: Vec<_> = (0..10).map(|i| (0.1, 0.01 * i as f64, i as f64)).collect();
        assert!(matches!(
            fit_quadratic_surface(&pts),
            Err(NumericsError::Singular { .. })
        ));
        assert!(fit_quadratic_surface(&pts[..3]).is_err());
    }

    #[test]
    fn logspace_endpoints() {
        let xs = logspace(1e-8, 1e-1, 400);
        assert_eq!(xs.len(), 400);
        assert_eq!(xs[0], 1e-8);
        assert_eq!(xs[399], 1e-1);
        assert!(xs.windows(2).all(|w| w[1] > w[0]));
    }
}
