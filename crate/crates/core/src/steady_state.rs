//! A-priori steady states: feedback rules solving `ẋ = 0`, the evolution
//! function `L`, root scanning with stability labels, and the steady-state
//! coordinate descent over both controls.

use crate::model::{drift, switching_point, uncontrolled_steady_state, ModelError, ModelParams};
use crate::numerics::{lambert_w0, logspace, NumericsError};
use crate::shooting::ControlKind;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SteadyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("stock must be positive, got {0}")]
    BadStock(f64),
    #[error("water feedback exponent {exponent} overflows at x = {x}")]
    Overflow { x: f64, exponent: f64 },
    #[error("fire feedback undefined at x = {x}: Lambert argument {z} is below -1/e")]
    NoFireBalance { x: f64, z: f64 },
    #[error("fire feedback needs rho > 0")]
    NoRecruitment,
    #[error("feedback is clamped at x = {x} (unclamped value {raw})")]
    Clamped { x: f64, raw: f64 },
    #[error("control slope vanishes at x = {x}")]
    FlatControl { x: f64 },
    #[error("invalid window [{lo}, {hi}]")]
    BadWindow { lo: f64, hi: f64 },
    #[error("cycle {cycle}: no {stage} root in [{lo}, {hi}]")]
    StageRootMissing {
        cycle: usize,
        stage: ControlKind,
        lo: f64,
        hi: f64,
    },
    #[error("no convergence after {cycles} cycles (last iterates {previous} and {last})")]
    NoConvergence {
        cycles: usize,
        previous: f64,
        last: f64,
    },
}

/// A feedback value with its unclamped counterpart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feedback {
    pub value: f64,
    pub raw: f64,
    pub clamped: bool,
}

impl Feedback {
    fn from_raw(raw: f64) -> Self {
        Feedback {
            value: raw.max(0.0),
            raw,
            clamped: raw < 0.0,
        }
    }
}

/// Water level `R1(x; v)` that freezes the stock.
pub fn feedback_water(p: &ModelParams, x: f64, v: f64) -> Result<Feedback, SteadyError> {
    if !(x > 0.0) {
        return Err(SteadyError::BadStock(x));
    }
    let balance = p.tau + (1.0 + p.rho * v) * p.k * x.powf(p.alpha)
        - p.mu * x
        - p.gamma * v.ln_1p() * x;
    let exponent = balance / (p.beta * x.powf(p.theta));
    if exponent > 700.0 {
        return Err(SteadyError::Overflow { x, exponent });
    }
    Ok(Feedback::from_raw(exponent.exp_m1()))
}

/// Fire level `R2(x; u)` that freezes the stock, through the principal Lambert branch.
pub fn feedback_fire(p: &ModelParams, x: f64, u: f64) -> Result<Feedback, SteadyError> {
    if !(x > 0.0) {
        return Err(SteadyError::BadStock(x));
    }
    if !(p.rho > 0.0) {
        return Err(SteadyError::NoRecruitment);
    }
    let ln_minus_z = (p.k * p.rho / p.gamma).ln() + (p.alpha - 1.0) * x.ln()
        + (p.tau - p.mu * x - p.k * x.powf(p.alpha) * (p.rho - 1.0)) / (x * p.gamma)
        - p.beta * x.powf(p.theta - 1.0) / p.gamma * u.ln_1p();
    let z = -ln_minus_z.exp();
    if ln_minus_z > -1.0 + 1e-15 {
        return Err(SteadyError::NoFireBalance { x, z });
    }
    let w = lambert_w0(z.max(-1.0 / std::f64::consts::E))?;
    let raw = -1.0 - x.powf(1.0 - p.alpha) * p.gamma / (p.k * p.rho) * w;
    Ok(Feedback::from_raw(raw))
}

fn feedback(p: &ModelParams, which: ControlKind, x: f64, other: f64) -> Result<Feedback, SteadyError> {
    match which {
        ControlKind::Water => feedback_water(p, x, other),
        ControlKind::Fire => feedback_fire(p, x, other),
    }
}

fn controls(which: ControlKind, w: f64, other: f64) -> (f64, f64) {
    match which {
        ControlKind::Water => (w, other),
        ControlKind::Fire => (other, w),
    }
}

/// One evaluation of the evolution function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolutionSample {
    pub x: f64,
    pub l: f64,
    /// Feedback control at `x`.
    pub r: f64,
}

/// `L(x) = r (G_w / f_w + dW/dx)` with `W(x) = G(x, R(x)) / r`.
///
/// The derivative uses a central difference with relative step `1e-6 x`,
/// so the stencil stays inside `x > 0` even for stocks around `1e-7`.
pub fn evolution_function(
    p: &ModelParams,
    x: f64,
    which: ControlKind,
    other: f64,
) -> Result<EvolutionSample, SteadyError> {
    let fb = feedback(p, which, x, other)?;
    if fb.clamped {
        return Err(SteadyError::Clamped { x, raw: fb.raw });
    }
    let w = fb.value;
    let (u, v) = controls(which, w, other);
    let f_w = match which {
        ControlKind::Water => -p.beta * x.powf(p.theta) / (1.0 + u),
        ControlKind::Fire => p.rho * p.k * x.powf(p.alpha) - p.gamma * x / (1.0 + v),
    };
    if f_w.abs() < 1e-300 {
        return Err(SteadyError::FlatControl { x });
    }
    let h = 1e-6 * x;
    let g_along = |y: f64| -> Result<f64, SteadyError> {
        let w = feedback(p, which, y, other)?.raw;
        let (u, v) = controls(which, w, other);
        Ok(crate::model::undiscounted_cost(p, y, u, v))
    };
    let dg = (g_along(x + h)? - g_along(x - h)?) / (2.0 * h);
    let l = p.r * (2.0 * w / f_w) + dg;
    Ok(EvolutionSample { x, l, r: w })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Low,
    High,
}

impl std::fmt::Display for Stability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stability::Stable => "stable",
            Stability::Unstable => "unstable",
        })
    }
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Branch::Low => "low",
            Branch::High => "high",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub x_s: f64,
    pub u_s: f64,
    pub v_s: f64,
    pub stability: Stability,
    pub drift_residual: f64,
    pub l_residual: f64,
    pub branch: Branch,
}

impl SteadyState {
    /// Undiscounted running cost at the triple.
    pub fn cost_rate(&self, p: &ModelParams) -> f64 {
        crate::model::undiscounted_cost(p, self.x_s, self.u_s, self.v_s)
    }

    /// Current-value costate `-G_w / f_w` implied by stationarity in `which`.
    pub fn current_value_costate(&self, p: &ModelParams, which: ControlKind) -> f64 {
        match which {
            ControlKind::Water => {
                let f_u = -p.beta * self.x_s.powf(p.theta) / (1.0 + self.u_s);
                -2.0 * self.u_s / f_u
            }
            ControlKind::Fire => {
                let f_v = p.rho * p.k * self.x_s.powf(p.alpha) - p.gamma * self.x_s / (1.0 + self.v_s);
                -2.0 * self.v_s / f_v
            }
        }
    }
}

/// Number of log-spaced scan points used by [`find_steady_states`].
pub const SCAN_POINTS: usize = 400;

fn l_at(p: &ModelParams, which: ControlKind, other: f64, x: f64) -> Option<f64> {
    evolution_function(p, x, which, other)
        .ok()
        .map(|s| s.l)
        .filter(|l| l.is_finite())
}

/// All zeros of `L` on `[x_lo, x_hi]` for one control with the other fixed.
pub fn find_steady_states(
    p: &ModelParams,
    which: ControlKind,
    other: f64,
    x_lo: f64,
    x_hi: f64,
) -> Result<Vec<SteadyState>, SteadyError> {
    if !(x_lo > 0.0 && x_hi > x_lo) {
        return Err(SteadyError::BadWindow { lo: x_lo, hi: x_hi });
    }
    let x_switch = switching_point(p)?;
    let xs = logspace(x_lo, x_hi, SCAN_POINTS);
    let ls: Vec<Option<f64>> = xs.iter().map(|&x| l_at(p, which, other, x)).collect();
    let mut out = Vec::new();
    for i in 0..xs.len() - 1 {
        let (Some(l0), Some(l1)) = (ls[i], ls[i + 1]) else {
            continue;
        };
        if l0 == 0.0 || l0 * l1 >= 0.0 {
            if l0 == 0.0 {
                out.push(finish_root(p, which, other, xs[i], l1 > 0.0, x_switch)?);
            }
            continue;
        }
        let (mut lo, mut hi, mut f_lo) = (xs[i], xs[i + 1], l0);
        let mut f_hi = l1;
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let Some(fm) = l_at(p, which, other, mid) else {
                break;
            };
            if fm == 0.0 {
                lo = mid;
                f_lo = 0.0;
                break;
            }
            if (fm < 0.0) == (f_lo < 0.0) {
                lo = mid;
                f_lo = fm;
            } else {
                hi = mid;
                f_hi = fm;
            }
        }
        let root = if f_lo.abs() <= f_hi.abs() { lo } else { hi };
        let candidate = finish_root(p, which, other, root, l1 > l0, x_switch)?;
        // A sign change across a pole of G_w/f_w is not a root.
        if candidate.l_residual <= 1e-8 {
            out.push(candidate);
        }
    }
    Ok(out)
}

fn finish_root(
    p: &ModelParams,
    which: ControlKind,
    other: f64,
    x: f64,
    rising: bool,
    x_switch: f64,
) -> Result<SteadyState, SteadyError> {
    let sample = evolution_function(p, x, which, other)?;
    let (u, v) = controls(which, sample.r, other);
    Ok(SteadyState {
        x_s: x,
        u_s: u,
        v_s: v,
        stability: if rising {
            Stability::Stable
        } else {
            Stability::Unstable
        },
        drift_residual: drift(p, x, u, v)?.abs(),
        l_residual: sample.l.abs(),
        branch: if x < x_switch { Branch::Low } else { Branch::High },
    })
}

/// Picks the largest stable root, falling back to the largest root.
fn select_root(roots: &[SteadyState]) -> Option<SteadyState> {
    roots
        .iter()
        .rev()
        .find(|s| s.stability == Stability::Stable)
        .or_else(|| roots.last())
        .copied()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyCcdConfig {
    pub x_tol: f64,
    pub max_cycles: usize,
}

impl Default for SteadyCcdConfig {
    fn default() -> Self {
        SteadyCcdConfig {
            x_tol: 1e-8,
            max_cycles: 100,
        }
    }
}

/// Default search window `(x^S, 10 x_uncontrolled)` for the high branch.
pub fn default_window(p: &ModelParams) -> Result<(f64, f64), SteadyError> {
    let lo = switching_point(p)?;
    let hi = 10.0 * uncontrolled_steady_state(p)?;
    Ok((lo.max(1e-8), hi))
}

/// Result of one water-then-fire stage pair.
fn stage(
    p: &ModelParams,
    which: ControlKind,
    other: f64,
    window: (f64, f64),
    cycle: usize,
) -> Result<SteadyState, SteadyError> {
    let roots = find_steady_states(p, which, other, window.0, window.1)?;
    select_root(&roots).ok_or(SteadyError::StageRootMissing {
        cycle,
        stage: which,
        lo: window.0,
        hi: window.1,
    })
}

/// Steady-state coordinate descent from `u = v = 0`.
pub fn steady_ccd(
    p: &ModelParams,
    window: (f64, f64),
    cfg: &SteadyCcdConfig,
) -> Result<SteadyState, SteadyError> {
    if !(window.0 > 0.0 && window.1 > window.0) {
        return Err(SteadyError::BadWindow {
            lo: window.0,
            hi: window.1,
        });
    }
    let mut v = 0.0;
    let mut previous = f64::NAN;
    let mut last = f64::NAN;
    for cycle in 1..=cfg.max_cycles {
        let water = stage(p, ControlKind::Water, v, window, cycle)?;
        let fire = stage(p, ControlKind::Fire, water.u_s, window, cycle)?;
        v = fire.v_s;
        previous = last;
        last = fire.x_s;
        if (last - previous).abs() < cfg.x_tol {
            return Ok(fire);
        }
    }
    Err(SteadyError::NoConvergence {
        cycles: cfg.max_cycles,
        previous,
        last,
    })
}
