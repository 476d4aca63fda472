//! Controlled dynamics, running cost, analytic partials and the closed-form
//! quantities of the fire-and-water model.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Lower bound applied to the state during explicit integration.
pub const X_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("parameter file line {line}: {detail}")]
    Parse { line: usize, detail: String },
}

/// Structural parameters of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub r: f64,
    pub c: f64,
    pub tau: f64,
    pub rho: f64,
    pub k: f64,
    pub alpha: f64,
    pub mu: f64,
    pub beta: f64,
    pub theta: f64,
    pub gamma: f64,
    /// 1 for the linear stock cost `c x`, 2 for `c x^2`.
    pub cost_exponent: u8,
}

pub const PARAM_KEYS: [&str; 11] = [
    "r",
    "c",
    "tau",
    "rho",
    "k",
    "alpha",
    "mu",
    "beta",
    "theta",
    "gamma",
    "cost_exponent",
];

impl ModelParams {
    /// The base calibration.
    pub fn base() -> Self {
        ModelParams {
            r: 0.05,
            c: 1.0,
            tau: 1e-5,
            rho: 1.0,
            k: 0.05,
            alpha: 0.75,
            mu: 0.05,
            beta: 0.01,
            theta: 0.1,
            gamma: 0.1,
            cost_exponent: 1,
        }
    }

    /// Base calibration with the quadratic stock cost.
    pub fn quadratic() -> Self {
        ModelParams {
            cost_exponent: 2,
            ..Self::base()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let check = |ok: bool, name: &'static str, value: f64, reason: &'static str| {
            if ok {
                Ok(())
            } else {
                Err(ModelError::InvalidParam { name, value, reason })
            }
        };
        check(self.r > 0.0, "r", self.r, "must be > 0")?;
        check(self.c.is_finite(), "c", self.c, "must be finite")?;
        check(self.tau >= 0.0, "tau", self.tau, "must be >= 0")?;
        check(self.rho >= 0.0, "rho", self.rho, "must be >= 0")?;
        check(self.k > 0.0, "k", self.k, "must be > 0")?;
        check(
            (0.0..=1.0).contains(&self.alpha),
            "alpha",
            self.alpha,
            "must lie in [0, 1]",
        )?;
        check(self.mu > 0.0, "mu", self.mu, "must be > 0")?;
        check(self.beta > 0.0, "beta", self.beta, "must be > 0")?;
        check(self.theta <= 1.0, "theta", self.theta, "must be <= 1")?;
        check(self.gamma > 0.0, "gamma", self.gamma, "must be > 0")?;
        check(
            matches!(self.cost_exponent, 1 | 2),
            "cost_exponent",
            f64::from(self.cost_exponent),
            "must be 1 or 2",
        )
    }

    pub fn derived(&self) -> Result<DerivedConstants, ModelError> {
        Ok(DerivedConstants {
            x_switch: switching_point(self)?,
            x_uncontrolled: uncontrolled_steady_state(self)?,
        })
    }

    fn get(&self, key: &str) -> Option<f64> {
        Some(match key {
            "r" => self.r,
            "c" => self.c,
            "tau" => self.tau,
            "rho" => self.rho,
            "k" => self.k,
            "alpha" => self.alpha,
            "mu" => self.mu,
            "beta" => self.beta,
            "theta" => self.theta,
            "gamma" => self.gamma,
            "cost_exponent" => f64::from(self.cost_exponent),
            _ => return None,
        })
    }
}

impl FromStr for ModelParams {
    type Err = ModelError;

    /// Parses `key = value` lines. Every key must appear exactly once;
    /// `#` starts a comment.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut values: [Option<f64>; 11] = [None; 11];
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ModelError::Parse {
                line: line_no,
                detail: format!("expected key=value, got `{line}`"),
            })?;
            let key = key.trim();
            let slot = PARAM_KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| ModelError::Parse {
                    line: line_no,
                    detail: format!("unknown key `{key}`"),
                })?;
            if values[slot].is_some() {
                return Err(ModelError::Parse {
                    line: line_no,
                    detail: format!("duplicate key `{key}`"),
                });
            }
            let parsed: f64 = value.trim().parse().map_err(|_| ModelError::Parse {
                line: line_no,
                detail: format!("`{}` is not a number", value.trim()),
            })?;
            values[slot] = Some(parsed);
        }
        let mut out = [0.0; 11];
        for (i, v) in values.iter().enumerate() {
            out[i] = v.ok_or_else(|| ModelError::Parse {
                line: 0,
                detail: format!("missing key `{}`", PARAM_KEYS[i]),
            })?;
        }
        let exponent = out[10];
        if exponent.fract() != 0.0 || !(1.0..=2.0).contains(&exponent) {
            return Err(ModelError::InvalidParam {
                name: "cost_exponent",
                value: exponent,
                reason: "must be 1 or 2",
            });
        }
        let p = ModelParams {
            r: out[0],
            c: out[1],
            tau: out[2],
            rho: out[3],
            k: out[4],
            alpha: out[5],
            mu: out[6],
            beta: out[7],
            theta: out[8],
            gamma: out[9],
            cost_exponent: exponent as u8,
        };
        p.validate()?;
        Ok(p)
    }
}

impl fmt::Display for ModelParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for key in PARAM_KEYS {
            writeln!(f, "{key} = {}", self.get(key).unwrap_or(f64::NAN))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedConstants {
    pub x_switch: f64,
    pub x_uncontrolled: f64,
}

/// Uniform time grid with `steps` sub-intervals on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    horizon: f64,
    steps: usize,
}

impl Grid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self, ModelError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(ModelError::InvalidParam {
                name: "horizon",
                value: horizon,
                reason: "must be positive and finite",
            });
        }
        if steps < 2 {
            return Err(ModelError::InvalidParam {
                name: "steps",
                value: steps as f64,
                reason: "must be at least 2",
            });
        }
        Ok(Grid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Knot `i`; the last knot is exactly the horizon.
    pub fn t(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            i as f64 * self.dt()
        }
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.t(i)).collect()
    }
}

/// State, controls and costate sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: Grid,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl Trajectory {
    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        Trajectory {
            grid,
            x: vec![0.0; n],
            u: vec![0.0; n],
            v: vec![0.0; n],
            lambda: vec![0.0; n],
        }
    }

    pub fn last_x(&self) -> f64 {
        *self.x.last().expect("trajectory has at least 3 knots")
    }

    pub fn last_lambda(&self) -> f64 {
        *self.lambda.last().expect("trajectory has at least 3 knots")
    }

    /// Composite trapezoid of the discounted running cost over the grid.
    pub fn discounted_cost(&self, p: &ModelParams) -> f64 {
        let dt = self.grid.dt();
        let n = self.grid.len();
        (0..n)
            .map(|i| {
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                w * running_cost(p, self.grid.t(i), self.x[i], self.u[i], self.v[i])
            })
            .sum::<f64>()
            * dt
    }
}

fn domain(op: &'static str, detail: String) -> ModelError {
    ModelError::Domain { op, detail }
}

/// Stock drift `f(x, u, v)`.
pub fn drift(p: &ModelParams, x: f64, u: f64, v: f64) -> Result<f64, ModelError> {
    if !(x >= 0.0 && u >= 0.0 && v >= 0.0) {
        return Err(domain(
            "drift",
            format!("requires x, u, v >= 0 (x={x}, u={u}, v={v})"),
        ));
    }
    Ok(drift_unchecked(p, x, u, v))
}

#[inline]
pub(crate) fn drift_unchecked(p: &ModelParams, x: f64, u: f64, v: f64) -> f64 {
    // Net recruitment first so the normalized stock x = 1 drifts by exactly τ.
    p.tau + ((1.0 + p.rho * v) * p.k * x.powf(p.alpha) - p.mu * x)
        - p.beta * u.ln_1p() * x.powf(p.theta)
        - p.gamma * v.ln_1p() * x
}

/// Undiscounted integrand `c x^p + u^2 + v^2`.
#[inline]
pub fn undiscounted_cost(p: &ModelParams, x: f64, u: f64, v: f64) -> f64 {
    p.c * x.powi(i32::from(p.cost_exponent)) + u * u + v * v
}

/// Discounted running cost `(c x^p + u^2 + v^2) e^{-rt}`.
#[inline]
pub fn running_cost(p: &ModelParams, t: f64, x: f64, u: f64, v: f64) -> f64 {
    undiscounted_cost(p, x, u, v) * (-p.r * t).exp()
}

/// First partials of the drift `f` and of the discounted integrand `F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partials {
    pub f_x: f64,
    pub f_u: f64,
    pub f_v: f64,
    pub big_f_x: f64,
    pub big_f_u: f64,
    pub big_f_v: f64,
}

pub fn partials(p: &ModelParams, t: f64, x: f64, u: f64, v: f64) -> Result<Partials, ModelError> {
    if !(x > 0.0 && u >= 0.0 && v >= 0.0) {
        return Err(domain(
            "partials",
            format!("requires x > 0 and u, v >= 0 (x={x}, u={u}, v={v})"),
        ));
    }
    Ok(partials_unchecked(p, t, x, u, v))
}

#[inline]
pub(crate) fn partials_unchecked(p: &ModelParams, t: f64, x: f64, u: f64, v: f64) -> Partials {
    let disc = (-p.r * t).exp();
    let x_a = x.powf(p.alpha);
    let x_th = x.powf(p.theta);
    let pe = i32::from(p.cost_exponent);
    Partials {
        f_x: p.alpha * (1.0 + p.rho * v) * p.k * x_a / x
            - p.mu
            - p.theta * p.beta * u.ln_1p() * x_th / x
            - p.gamma * v.ln_1p(),
        f_u: -p.beta * x_th / (1.0 + u),
        f_v: p.rho * p.k * x_a - p.gamma * x / (1.0 + v),
        big_f_x: f64::from(pe) * p.c * x.powi(pe - 1) * disc,
        big_f_u: 2.0 * u * disc,
        big_f_v: 2.0 * v * disc,
    }
}

/// Stock below which fire is never used: `(ρk/γ)^{1/(1-α)}`.
pub fn switching_point(p: &ModelParams) -> Result<f64, ModelError> {
    if p.alpha >= 1.0 {
        return Err(domain(
            "switching_point",
            "alpha = 1 makes the threshold degenerate".into(),
        ));
    }
    if p.rho == 0.0 || p.k == 0.0 {
        return Ok(0.0);
    }
    Ok((p.rho * p.k / p.gamma).powf(1.0 / (1.0 - p.alpha)))
}

/// Steady state of the uncontrolled flow without inflow: `(k/μ)^{1/(1-α)}`.
pub fn uncontrolled_steady_state(p: &ModelParams) -> Result<f64, ModelError> {
    if p.alpha >= 1.0 {
        return Err(domain(
            "uncontrolled_steady_state",
            "alpha = 1 has no interior steady state".into(),
        ));
    }
    Ok((p.k / p.mu).powf(1.0 / (1.0 - p.alpha)))
}

/// Minimizer of the Hamiltonian over `v >= 0` for present-value costate `lambda`.
///
/// With `m = λ e^{rt}` and `a = ρ k x^α m` the unconstrained root is
/// `v = [-(2 + a) + sqrt(D)] / 4`, `D = (a - 2)^2 + 8 m γ x`. It is evaluated
/// in the cancellation-free form `-2 m (ρ k x^α - γ x) / ((2 + a) + sqrt(D))`,
/// whose sign is that of `γ x - ρ k x^α`, i.e. negative exactly below the
/// switching point.
pub fn v_star(p: &ModelParams, x: f64, lambda: f64, t: f64) -> Result<f64, ModelError> {
    if x < 0.0 {
        return Err(domain("v_star", format!("negative stock {x}")));
    }
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let m = lambda * (p.r * t).exp();
    let recruit = p.rho * p.k * x.powf(p.alpha);
    let a = recruit * m;
    let radicand = (a - 2.0).powi(2) + 8.0 * m * p.gamma * x;
    if radicand < 0.0 {
        return Err(domain(
            "v_star",
            format!("negative radicand {radicand} at x={x}, lambda={lambda}"),
        ));
    }
    let denom = (2.0 + a) + radicand.sqrt();
    let v = -2.0 * m * (recruit - p.gamma * x) / denom;
    Ok(v.max(0.0))
}

/// Closed-form pair `(u⁰, v⁰)` minimizing the Hamiltonian, each clamped at 0.
///
/// Evaluated directly from the expanded radicals, independently of [`v_star`].
pub fn u0_v0_quadratic(
    p: &ModelParams,
    x: f64,
    lambda: f64,
    t: f64,
) -> Result<(f64, f64), ModelError> {
    if !(x > 0.0) || lambda < 0.0 {
        return Err(domain(
            "u0_v0_quadratic",
            format!("requires x > 0 and lambda >= 0 (x={x}, lambda={lambda})"),
        ));
    }
    let g = (p.r * t).exp();
    let u0 = 0.5 * ((2.0 * p.beta * lambda * g * x.powf(p.theta) + 1.0).sqrt() - 1.0);
    let kl = p.k * lambda * p.rho * g * x.powf(p.alpha);
    let radicand = kl * kl - 4.0 * kl + 8.0 * p.gamma * lambda * x * g + 4.0;
    if radicand < 0.0 {
        return Err(domain(
            "u0_v0_quadratic",
            format!("negative fire radicand {radicand} at x={x}"),
        ));
    }
    let v0 = 0.25 * (radicand.sqrt() - kl - 2.0);
    Ok((u0.max(0.0), v0.max(0.0)))
}
