//! Single-control extremals from the constant-𝕐 condition, costate
//! reconstruction, and shooting on `K = λ(0)` for the transversality condition.
//!
//! Accumulators use the left-rectangle rule, the quadrature that is
//! consistent with the explicit Euler state step:
//! `A_{i+1} = A_i + Δt f_x(i)`, `B_{i+1} = B_i + Δt F_x(i) e^{A_i}`.

use crate::model::{
    partials_unchecked, drift_unchecked, switching_point, Grid, ModelError, ModelParams,
    Trajectory, X_FLOOR,
};
use crate::numerics::newton_in_bracket;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper end of the per-knot control search interval.
pub const W_MAX: f64 = 1e3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShootError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("fixed control has {got} entries, grid has {expected} knots")]
    SelectorLength { expected: usize, got: usize },
    #[error("invalid fixed control {value} at knot {knot}")]
    SelectorValue { knot: usize, value: f64 },
    #[error("initial stock must be positive, got {0}")]
    BadInitialStock(f64),
    #[error("control root solve failed at knot {knot} (K = {k})")]
    KnotSolve { knot: usize, k: f64 },
    #[error("state fell through the floor at knot {knot} (K = {k})")]
    FloorBreach { knot: usize, k: f64 },
    #[error("costate accumulators overflowed at knot {knot}")]
    AccumulatorOverflow { knot: usize },
    #[error("shooting seeds must differ and be finite ({0}, {1})")]
    BadSeeds(f64, f64),
    #[error("shooting did not reach tolerance after {iterations} evaluations (best K = {best_k}, residual = {best_residual:e})")]
    NoConvergence {
        iterations: usize,
        best_k: f64,
        best_residual: f64,
    },
    #[error("shooting bracket collapsed to floating-point resolution at K = {k} with residual {residual:e}")]
    ResolutionLimited { k: f64, residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlKind {
    Water,
    Fire,
}

impl std::fmt::Display for ControlKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ControlKind::Water => "water",
            ControlKind::Fire => "fire",
        })
    }
}

/// Which control is optimized, with the other one held on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSelector {
    pub which: ControlKind,
    pub fixed_other: Vec<f64>,
}

impl ControlSelector {
    pub fn new(which: ControlKind, fixed_other: Vec<f64>) -> Self {
        ControlSelector { which, fixed_other }
    }

    fn validate(&self, grid: &Grid) -> Result<(), ShootError> {
        if self.fixed_other.len() != grid.len() {
            return Err(ShootError::SelectorLength {
                expected: grid.len(),
                got: self.fixed_other.len(),
            });
        }
        if let Some((knot, &value)) = self
            .fixed_other
            .iter()
            .enumerate()
            .find(|(_, w)| !(**w >= 0.0 && w.is_finite()))
        {
            return Err(ShootError::SelectorValue { knot, value });
        }
        Ok(())
    }
}

/// Running quadrature values at one knot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtremalAccumulators {
    /// `∫ f_x`
    pub a: f64,
    /// `∫ F_x e^{∫ f_x}`
    pub b: f64,
    /// `-F_w/f_w e^{A} + B` at the chosen control.
    pub y: f64,
}

/// Output of [`build_extremal`]: the trajectory with the builder's costate
/// and the accumulator history.
#[derive(Debug, Clone, PartialEq)]
pub struct Extremal {
    pub trajectory: Trajectory,
    pub accumulators: Vec<ExtremalAccumulators>,
}

/// Terminal condition imposed on the costate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Terminal {
    /// `λ(T) = 0`.
    Zero,
    /// `λ(T) = μ e^{-rT}`, the present value of a steady-state current-value costate `μ`.
    SteadyState { current_value: f64 },
}

impl Terminal {
    pub fn target(&self, p: &ModelParams, horizon: f64) -> f64 {
        match *self {
            Terminal::Zero => 0.0,
            Terminal::SteadyState { current_value } => current_value * (-p.r * horizon).exp(),
        }
    }
}

/// Solves `F_w + λ f_w = 0` for the active control at one knot.
fn knot_control(
    p: &ModelParams,
    which: ControlKind,
    t: f64,
    x: f64,
    lambda: f64,
) -> Option<f64> {
    let disc = (-p.r * t).exp();
    let h_w = |w: f64| -> (f64, f64) {
        match which {
            ControlKind::Water => {
                let s = p.beta * x.powf(p.theta);
                let q = 1.0 + w;
                (2.0 * w * disc - lambda * s / q, 2.0 * disc + lambda * s / (q * q))
            }
            ControlKind::Fire => {
                let q = 1.0 + w;
                (
                    2.0 * w * disc + lambda * (p.rho * p.k * x.powf(p.alpha) - p.gamma * x / q),
                    2.0 * disc + lambda * p.gamma * x / (q * q),
                )
            }
        }
    };
    let (h0, _) = h_w(0.0);
    if h0 >= 0.0 {
        return Some(0.0);
    }
    let mut hi = 1.0;
    while h_w(hi).0 <= 0.0 {
        hi *= 4.0;
        if hi > W_MAX {
            if h_w(W_MAX).0 <= 0.0 {
                return None;
            }
            hi = W_MAX;
            break;
        }
    }
    let scale = 2.0 * disc * hi;
    newton_in_bracket(h_w, 0.0, hi, 1e-15 * scale.max(f64::MIN_POSITIVE)).ok()
}

/// Marches the extremal with constant `𝕐 = K` from `x0`.
///
/// The returned trajectory carries the costate `λ_i = (K - B_i) e^{-A_i}` the
/// builder used at every knot; [`costate_from_k`] recomputes it independently.
pub fn build_extremal(
    p: &ModelParams,
    grid: &Grid,
    x0: f64,
    k: f64,
    sel: &ControlSelector,
) -> Result<Extremal, ShootError> {
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(ShootError::BadInitialStock(x0));
    }
    if !k.is_finite() {
        return Err(ShootError::BadSeeds(k, k));
    }
    sel.validate(grid)?;
    let x_switch = switching_point(p)?;
    let n = grid.len();
    let dt = grid.dt();
    let mut traj = Trajectory::zeros(grid.clone());
    let mut accs = Vec::with_capacity(n);
    let (mut a, mut b) = (0.0_f64, 0.0_f64);
    let mut x = x0;
    for i in 0..n {
        let t = grid.t(i);
        let ea = a.exp();
        let lambda = (k - b) / ea;
        if !(lambda.is_finite() && ea.is_finite() && ea > 0.0) {
            return Err(ShootError::AccumulatorOverflow { knot: i });
        }
        let other = sel.fixed_other[i];
        let w = if lambda <= 0.0 || (sel.which == ControlKind::Fire && x < x_switch) {
            0.0
        } else {
            knot_control(p, sel.which, t, x, lambda)
                .ok_or(ShootError::KnotSolve { knot: i, k })?
        };
        let (u, v) = match sel.which {
            ControlKind::Water => (w, other),
            ControlKind::Fire => (other, w),
        };
        let d = partials_unchecked(p, t, x, u, v);
        let (big_f_w, f_w) = match sel.which {
            ControlKind::Water => (d.big_f_u, d.f_u),
            ControlKind::Fire => (d.big_f_v, d.f_v),
        };
        let y = if w > 0.0 {
            // Near the switch f_v cancels and the late discount makes F_w tiny;
            // the knot solve already enforced F_w = -λ f_w, so use that form.
            if f_w.abs() < 1e-14 {
                lambda * ea + b
            } else {
                -big_f_w / f_w * ea + b
            }
        } else {
            b
        };
        traj.x[i] = x;
        traj.u[i] = u;
        traj.v[i] = v;
        traj.lambda[i] = lambda;
        accs.push(ExtremalAccumulators { a, b, y });
        if i + 1 == n {
            break;
        }
        let next = x + dt * drift_unchecked(p, x, u, v);
        if !next.is_finite() || next < X_FLOOR {
            return Err(ShootError::FloorBreach { knot: i + 1, k });
        }
        b += dt * d.big_f_x * ea;
        a += dt * d.f_x;
        if !(a.is_finite() && b.is_finite()) {
            return Err(ShootError::AccumulatorOverflow { knot: i + 1 });
        }
        x = next;
    }
    Ok(Extremal {
        trajectory: traj,
        accumulators: accs,
    })
}

/// Costate `λ_i = (K - B_i) e^{-A_i}` recomputed from a filled trajectory.
pub fn costate_from_k(p: &ModelParams, traj: &Trajectory, k: f64) -> Result<Vec<f64>, ShootError> {
    let grid = &traj.grid;
    let dt = grid.dt();
    let mut out = Vec::with_capacity(grid.len());
    let (mut a, mut b) = (0.0_f64, 0.0_f64);
    for i in 0..grid.len() {
        let lambda = (k - b) * (-a).exp();
        if !lambda.is_finite() {
            return Err(ShootError::AccumulatorOverflow { knot: i });
        }
        out.push(lambda);
        let t = grid.t(i);
        let d = partials_unchecked(p, t, traj.x[i], traj.u[i], traj.v[i]);
        b += dt * d.big_f_x * a.exp();
        a += dt * d.f_x;
    }
    Ok(out)
}

/// Settings for [`shoot`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Growth of the search step while looking for a sign change.
    pub expand: f64,
    pub terminal: Terminal,
}

impl ShootConfig {
    /// Acceptance window `[-tol/10, tol]` around the target. The exact costate
    /// never undershoots the target, so undershoot is held to a tenth of `tol`.
    pub fn accepts(&self, residual: f64) -> bool {
        residual <= self.tol && residual >= -UNDERSHOOT * self.tol
    }
}

const UNDERSHOOT: f64 = 0.1;

impl Default for ShootConfig {
    fn default() -> Self {
        ShootConfig {
            tol: 1e-5,
            max_iter: 100,
            expand: 1.6,
            terminal: Terminal::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShootingResult {
    pub k: f64,
    pub extremal: Extremal,
    /// `|λ(T) - target|`
    pub residual: f64,
    /// Number of extremals built, seeds included.
    pub iterations: usize,
}

impl ShootingResult {
    pub fn trajectory(&self) -> &Trajectory {
        &self.extremal.trajectory
    }
}

/// Value used for extremals that collapse onto the state floor: they belong
/// to the "too much control" side, where the terminal costate is large.
const CRASH: f64 = 1e300;

struct Shooter<'a> {
    p: &'a ModelParams,
    grid: &'a Grid,
    x0: f64,
    sel: &'a ControlSelector,
    target: f64,
    evals: usize,
    best: Option<(f64, f64)>,
}

impl Shooter<'_> {
    fn residual(&mut self, k: f64) -> Result<f64, ShootError> {
        self.evals += 1;
        let r = match build_extremal(self.p, self.grid, self.x0, k, self.sel) {
            Ok(e) => {
                let r = e.trajectory.last_lambda() - self.target;
                if r.is_finite() {
                    r
                } else {
                    CRASH
                }
            }
            Err(ShootError::FloorBreach { .. })
            | Err(ShootError::AccumulatorOverflow { .. })
            | Err(ShootError::KnotSolve { .. }) => {
                CRASH
            }
            Err(e) => return Err(e),
        };
        if self.best.is_none_or(|(_, rb)| r.abs() < rb.abs()) {
            self.best = Some((k, r));
        }
        Ok(r)
    }

    fn finish(&self, k: f64) -> Result<ShootingResult, ShootError> {
        let extremal = build_extremal(self.p, self.grid, self.x0, k, self.sel)?;
        let residual = (extremal.trajectory.last_lambda() - self.target).abs();
        Ok(ShootingResult {
            k,
            extremal,
            residual,
            iterations: self.evals,
        })
    }

    fn give_up(&self) -> ShootError {
        let (best_k, best_residual) = self.best.unwrap_or((f64::NAN, f64::NAN));
        ShootError::NoConvergence {
            iterations: self.evals,
            best_k,
            best_residual,
        }
    }
}

/// Finds `K` with `λ(T; K) - target` inside [`ShootConfig::accepts`].
///
/// Secant steps from the two seeds, expanded geometrically in the direction
/// indicated by the residual sign (`λ(T)` increases with `K`) until a sign
/// change is bracketed, then Anderson-Björck regula falsi inside the bracket.
pub fn shoot(
    p: &ModelParams,
    grid: &Grid,
    x0: f64,
    k_min: f64,
    k_max: f64,
    sel: &ControlSelector,
    cfg: &ShootConfig,
) -> Result<ShootingResult, ShootError> {
    if k_min == k_max || !k_min.is_finite() || !k_max.is_finite() {
        return Err(ShootError::BadSeeds(k_min, k_max));
    }
    let mut s = Shooter {
        p,
        grid,
        x0,
        sel,
        target: cfg.terminal.target(p, grid.horizon()),
        evals: 0,
        best: None,
    };
    let (mut k0, mut k1) = (k_min, k_max);
    let mut r0 = s.residual(k0)?;
    if cfg.accepts(r0) {
        return s.finish(k0);
    }
    let mut r1 = s.residual(k1)?;
    if cfg.accepts(r1) {
        return s.finish(k1);
    }
    while r0 * r1 > 0.0 {
        if s.evals >= cfg.max_iter {
            return Err(s.give_up());
        }
        if r1.abs() > r0.abs() {
            std::mem::swap(&mut k0, &mut k1);
            std::mem::swap(&mut r0, &mut r1);
        }
        let step = (k1 - k0).abs() * cfg.expand;
        let mut k2 = if r1 > 0.0 { k1 - step } else { k1 + step };
        if r0.abs() < CRASH && r1.abs() < CRASH && r1 != r0 {
            let ks = k1 - r1 * (k1 - k0) / (r1 - r0);
            if ks.is_finite() && (ks - k1) * (k2 - k1) > 0.0 && (ks - k1).abs() < step {
                k2 = ks;
            }
        }
        let r2 = s.residual(k2)?;
        if cfg.accepts(r2) {
            return s.finish(k2);
        }
        k0 = k1;
        r0 = r1;
        k1 = k2;
        r1 = r2;
    }
    let (mut a, mut ra, mut b, mut rb) = (k0, r0, k1, r1);
    loop {
        if s.evals >= cfg.max_iter {
            return Err(s.give_up());
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            let (k, r) = s.best.expect("bracket implies evaluations");
            return Err(ShootError::ResolutionLimited { k, residual: r });
        }
        let mut c = if ra.abs() < CRASH && rb.abs() < CRASH {
            b - rb * (b - a) / (rb - ra)
        } else {
            mid
        };
        if !(c > lo && c < hi) {
            c = mid;
        }
        let rc = s.residual(c)?;
        if cfg.accepts(rc) {
            return s.finish(c);
        }
        if rc * rb < 0.0 {
            a = b;
            ra = rb;
        } else {
            // Anderson-Björck scaling of the retained end point.
            let m = 1.0 - rc / rb;
            ra *= if m > 0.0 { m } else { 0.5 };
        }
        b = c;
        rb = rc;
    }
}
