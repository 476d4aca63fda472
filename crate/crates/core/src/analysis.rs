//! Experiments built on the solvers: parameter sweeps, surface fit and
//! contour inversion, the DNS point, discounted cost, Arrow's sufficiency
//! check and a direct-transcription oracle.

use crate::ccd::{
    solve_low_branch, solve_multicontrol, CcdConfig, CcdError, CcdResult, HIGH_HORIZON,
    HIGH_STEPS, LOW_HORIZON, LOW_STEPS,
};
use crate::model::{
    drift_unchecked, u0_v0_quadratic, undiscounted_cost, Grid, ModelError, ModelParams,
    Trajectory,
};
use crate::numerics::{fit_quadratic_surface, golden_section_min, NumericsError, QuadFit};
use crate::steady_state::{default_window, steady_ccd, SteadyCcdConfig, SteadyError, SteadyState};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Steady(#[from] SteadyError),
    #[error(transparent)]
    Ccd(#[from] CcdError),
    #[error("invalid range [{lo}, {hi}] with step {step}")]
    Range { lo: f64, hi: f64, step: f64 },
    #[error("invalid bracket ({lo}, {hi})")]
    Bracket { lo: f64, hi: f64 },
    #[error("cost difference has the same sign at both ends: {d_lo} at {lo}, {d_hi} at {hi}")]
    NoSignChange { lo: f64, hi: f64, d_lo: f64, d_hi: f64 },
    #[error("{branch} branch failed at x0 = {x0}: {detail}")]
    Branch {
        branch: &'static str,
        x0: f64,
        detail: String,
    },
    #[error("derived Hamiltonian undefined at knot {knot}: {source}")]
    Hamiltonian {
        knot: usize,
        #[source]
        source: ModelError,
    },
    #[error("solution did not converge; Arrow check needs a converged costate")]
    NotConverged,
    #[error("too few successful sweep points to fit ({0})")]
    FitInput(usize),
}

/// Discounted cost over the grid and a bound on the neglected tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostReport {
    pub value: f64,
    /// `c x_max^p e^{-rT} / r`, the state-cost tail if the stock never exceeds
    /// its running maximum after `T`.
    pub tail_bound: f64,
}

pub fn total_cost(p: &ModelParams, traj: &Trajectory) -> CostReport {
    let x_max = traj.x.iter().cloned().fold(0.0_f64, f64::max);
    let tail_bound =
        p.c * x_max.powi(i32::from(p.cost_exponent)) * (-p.r * traj.grid.horizon()).exp() / p.r;
    CostReport {
        value: traj.discounted_cost(p),
        tail_bound,
    }
}

/// Points `lo, lo + step, ...` up to `hi` inclusive, snapped to the step count.
pub fn grid_values(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>, AnalysisError> {
    let bad = AnalysisError::Range { lo, hi, step };
    if !(lo.is_finite() && hi.is_finite() && hi >= lo) {
        return Err(bad);
    }
    if hi == lo {
        return Ok(vec![lo]);
    }
    if !(step > 0.0) {
        return Err(bad);
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    if n > 1_000_000 {
        return Err(bad);
    }
    Ok((0..=n).map(|i| lo + step * i as f64).collect())
}

/// One `(γ, β)` grid point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub gamma: f64,
    pub beta: f64,
    pub x_s: f64,
    pub u_s: f64,
    pub v_s: f64,
    /// Undiscounted integrand at the steady state.
    pub cost_rate: f64,
    pub error: Option<String>,
}

impl SweepPoint {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// High steady state with `γ`, `β` replaced in `p`.
pub fn steady_at(p: &ModelParams, gamma: f64, beta: f64) -> Result<SteadyState, AnalysisError> {
    let q = ModelParams { gamma, beta, ..*p };
    q.validate()?;
    Ok(steady_ccd(&q, default_window(&q)?, &SteadyCcdConfig::default())?)
}

fn sweep_point(p: &ModelParams, gamma: f64, beta: f64) -> SweepPoint {
    match steady_at(p, gamma, beta) {
        Ok(s) => {
            let q = ModelParams { gamma, beta, ..*p };
            let cost_rate = undiscounted_cost(&q, s.x_s, s.u_s, s.v_s);
            debug_assert_eq!(cost_rate, s.cost_rate(&q));
            SweepPoint {
                gamma,
                beta,
                x_s: s.x_s,
                u_s: s.u_s,
                v_s: s.v_s,
                cost_rate,
                error: None,
            }
        }
        Err(e) => SweepPoint {
            gamma,
            beta,
            x_s: f64::NAN,
            u_s: f64::NAN,
            v_s: f64::NAN,
            cost_rate: f64::NAN,
            error: Some(e.to_string()),
        },
    }
}

/// Steady states over the `γ × β` grid, γ-major. Points run in parallel on
/// the current rayon pool; a failing point is recorded in its row.
pub fn sweep_gamma_beta(p: &ModelParams, gammas: &[f64], betas: &[f64]) -> Vec<SweepPoint> {
    let pairs: Vec<(f64, f64)> = gammas
        .iter()
        .flat_map(|&g| betas.iter().map(move |&b| (g, b)))
        .collect();
    pairs
        .par_iter()
        .map(|&(g, b)| sweep_point(p, g, b))
        .collect()
}

/// Least-squares surface through the successful rows of a sweep.
pub fn fit_sweep(points: &[SweepPoint]) -> Result<QuadFit, AnalysisError> {
    let data: Vec<(f64, f64, f64)> = points
        .iter()
        .filter(|s| s.is_ok())
        .map(|s| (s.gamma, s.beta, s.x_s))
        .collect();
    if data.len() < 5 {
        return Err(AnalysisError::FitInput(data.len()));
    }
    Ok(fit_quadratic_surface(&data)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContourSolution {
    pub pairs: Vec<(f64, f64)>,
    /// β values with no real root inside the γ range.
    pub skipped: Vec<f64>,
}

/// Solves `fit(γ, β) = target` for γ at each β, keeping roots in `gamma_range`.
/// When both roots qualify the one closer to the middle of the range is kept.
pub fn contour_solve(
    fit: &QuadFit,
    target: f64,
    betas: &[f64],
    gamma_range: (f64, f64),
) -> ContourSolution {
    let (g_lo, g_hi) = gamma_range;
    let slack = 1e-9 * (g_hi - g_lo).abs().max(1.0);
    let mid = 0.5 * (g_lo + g_hi);
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for &beta in betas {
        let (a, b) = (fit.a2, fit.a1);
        let c = fit.a0 + fit.a3 * beta + fit.a4 * beta * beta - target;
        let roots: Vec<f64> = if a.abs() < 1e-300 {
            if b == 0.0 {
                vec![]
            } else {
                vec![-c / b]
            }
        } else {
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                vec![]
            } else {
                // Citardauq pairing avoids cancellation in the smaller root.
                let q = -0.5 * (b + b.signum() * disc.sqrt());
                if q == 0.0 {
                    vec![0.0]
                } else {
                    vec![q / a, c / q]
                }
            }
        };
        let pick = roots
            .into_iter()
            .filter(|g| *g >= g_lo - slack && *g <= g_hi + slack)
            .min_by(|x, y| (x - mid).abs().total_cmp(&(y - mid).abs()));
        match pick {
            Some(g) => pairs.push((g, beta)),
            None => skipped.push(beta),
        }
    }
    ContourSolution { pairs, skipped }
}

/// Steady-state check of contour pairs, in input order.
pub fn verify_contour(p: &ModelParams, pairs: &[(f64, f64)]) -> Vec<SweepPoint> {
    pairs
        .par_iter()
        .map(|&(g, b)| sweep_point(p, g, b))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DnsConfig {
    pub high_grid: Grid,
    pub high: CcdConfig,
    pub low_grid: Grid,
    pub low_tol: f64,
    /// Bisection stops once the bracket is narrower than this.
    pub x_tol: f64,
    /// Acceptable `|J_high - J_low|` at the returned point.
    pub cost_tol: f64,
}

impl Default for DnsConfig {
    fn default() -> Self {
        DnsConfig {
            high_grid: Grid::new(HIGH_HORIZON, HIGH_STEPS).expect("valid constants"),
            high: CcdConfig::turnpike(),
            low_grid: Grid::new(LOW_HORIZON, LOW_STEPS).expect("valid constants"),
            low_tol: 1e-5,
            x_tol: 1e-6,
            cost_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchCosts {
    pub x0: f64,
    pub j_high: f64,
    pub j_low: f64,
}

impl BranchCosts {
    pub fn delta(&self) -> f64 {
        self.j_high - self.j_low
    }
}

/// Costs of the path to the high steady state and of the fire-free path to
/// the stable low steady state, both from `x0`.
pub fn branch_costs(p: &ModelParams, x0: f64, cfg: &DnsConfig) -> Result<BranchCosts, AnalysisError> {
    let high = solve_multicontrol(p, &cfg.high_grid, x0, &cfg.high).map_err(|e| {
        AnalysisError::Branch {
            branch: "high",
            x0,
            detail: e.to_string(),
        }
    })?;
    if !high.converged {
        return Err(AnalysisError::Branch {
            branch: "high",
            x0,
            detail: "coordinate descent did not converge".into(),
        });
    }
    let low = solve_low_branch(p, &cfg.low_grid, x0, cfg.low_tol).map_err(|e| {
        AnalysisError::Branch {
            branch: "low",
            x0,
            detail: e.to_string(),
        }
    })?;
    Ok(BranchCosts {
        x0,
        j_high: high.cost,
        j_low: low.cost,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DnsResult {
    pub x_d: f64,
    pub j_low: f64,
    pub j_high: f64,
    pub bracket_width: f64,
    pub evaluations: usize,
}

/// Bisection on `x0` for the sign change of `J_high - J_low`.
pub fn find_dns(
    p: &ModelParams,
    bracket: (f64, f64),
    cfg: &DnsConfig,
) -> Result<DnsResult, AnalysisError> {
    let (mut lo, mut hi) = bracket;
    if !(lo > 0.0 && hi > lo && cfg.x_tol > 0.0) {
        return Err(AnalysisError::Bracket { lo, hi });
    }
    let mut c_lo = branch_costs(p, lo, cfg)?;
    let mut c_hi = branch_costs(p, hi, cfg)?;
    let mut evaluations = 2;
    if c_lo.delta().signum() == c_hi.delta().signum() {
        return Err(AnalysisError::NoSignChange {
            lo,
            hi,
            d_lo: c_lo.delta(),
            d_hi: c_hi.delta(),
        });
    }
    while hi - lo > cfg.x_tol {
        let mid = 0.5 * (lo + hi);
        let c = branch_costs(p, mid, cfg)?;
        evaluations += 1;
        if c.delta() == 0.0 {
            c_lo = c;
            c_hi = c;
            lo = mid;
            hi = mid;
            break;
        }
        if c.delta().signum() == c_lo.delta().signum() {
            lo = mid;
            c_lo = c;
        } else {
            hi = mid;
            c_hi = c;
        }
    }
    let best = if c_lo.delta().abs() <= c_hi.delta().abs() {
        c_lo
    } else {
        c_hi
    };
    Ok(DnsResult {
        x_d: best.x0,
        j_low: best.j_low,
        j_high: best.j_high,
        bracket_width: hi - lo,
        evaluations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    LocallyConvex,
    Indeterminate,
    Nonconvex,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::LocallyConvex => "locally_convex",
            Verdict::Indeterminate => "indeterminate",
            Verdict::Nonconvex => "nonconvex",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArrowReport {
    /// `(t, ∂²H⁰/∂x²)` at every knot.
    pub samples: Vec<(f64, f64)>,
    pub min_h0_xx: f64,
    /// Minimum of the current-value curvature `e^{rt} ∂²H⁰/∂x²`.
    pub min_scaled: f64,
    /// `1e-6` times the largest current-value `|H⁰|` on the path.
    pub noise_floor: f64,
    pub verdict: Verdict,
    /// `λ(T) x(T)`
    pub side_condition: f64,
    pub side_ok: bool,
}

/// `H⁰ = F(x, u⁰, v⁰, t) + λ f(x, u⁰, v⁰)` with the Hamiltonian minimizers substituted.
pub fn derived_hamiltonian(
    p: &ModelParams,
    x: f64,
    lambda: f64,
    t: f64,
) -> Result<f64, ModelError> {
    let (u, v) = u0_v0_quadratic(p, x, lambda, t)?;
    Ok(undiscounted_cost(p, x, u, v) * (-p.r * t).exp() + lambda * drift_unchecked(p, x, u, v))
}

/// Central second difference of [`derived_hamiltonian`] with `h = 1e-4 max(1, x)`.
pub fn derived_hamiltonian_xx(
    p: &ModelParams,
    x: f64,
    lambda: f64,
    t: f64,
) -> Result<f64, ModelError> {
    let h = 1e-4 * x.max(1.0);
    let h = h.min(0.5 * x);
    let f0 = derived_hamiltonian(p, x, lambda, t)?;
    let fp = derived_hamiltonian(p, x + h, lambda, t)?;
    let fm = derived_hamiltonian(p, x - h, lambda, t)?;
    Ok((fp - 2.0 * f0 + fm) / (h * h))
}

/// Negative costate values down to this size are treated as zero.
pub const COSTATE_SLACK: f64 = 1e-5;

/// Convexity of the derived Hamiltonian along a converged trajectory.
///
/// Curvatures are compared in current value (`e^{rt}` scaling) so the late
/// part of a long horizon is not flattened by discounting. The verdict is
/// `locally_convex` when the minimum exceeds the finite-difference noise
/// floor, `indeterminate` when it is within the floor of zero and
/// `nonconvex` below that.
pub fn arrow_check(
    p: &ModelParams,
    result: &CcdResult,
    side_tol: f64,
) -> Result<ArrowReport, AnalysisError> {
    if !result.converged {
        return Err(AnalysisError::NotConverged);
    }
    arrow_check_trajectory(p, &result.trajectory, side_tol)
}

/// [`arrow_check`] on any trajectory with a filled costate.
pub fn arrow_check_trajectory(
    p: &ModelParams,
    traj: &Trajectory,
    side_tol: f64,
) -> Result<ArrowReport, AnalysisError> {
    p.validate()?;
    let mut samples = Vec::with_capacity(traj.grid.len());
    let mut min_h0_xx = f64::INFINITY;
    let mut min_scaled = f64::INFINITY;
    let mut scale = 1.0_f64;
    for i in 0..traj.grid.len() {
        let t = traj.grid.t(i);
        let x = traj.x[i];
        // The exact costate is non-negative; residual-sized undershoot near T is noise.
        let lambda = if traj.lambda[i] < 0.0 && traj.lambda[i] >= -COSTATE_SLACK {
            0.0
        } else {
            traj.lambda[i]
        };
        let wrap = |source| AnalysisError::Hamiltonian { knot: i, source };
        let d2 = derived_hamiltonian_xx(p, x, lambda, t).map_err(wrap)?;
        let level = derived_hamiltonian(p, x, lambda, t).map_err(wrap)?;
        let grow = (p.r * t).exp();
        scale = scale.max((level * grow).abs());
        min_h0_xx = min_h0_xx.min(d2);
        min_scaled = min_scaled.min(d2 * grow);
        samples.push((t, d2));
    }
    let noise_floor = 1e-6 * scale;
    let verdict = if min_scaled > noise_floor {
        Verdict::LocallyConvex
    } else if min_scaled >= -noise_floor {
        Verdict::Indeterminate
    } else {
        Verdict::Nonconvex
    };
    let side_condition = traj.last_lambda() * traj.last_x();
    Ok(ArrowReport {
        samples,
        min_h0_xx,
        min_scaled,
        noise_floor,
        verdict,
        side_condition,
        side_ok: side_condition >= -side_tol,
    })
}

/// Cost of knot controls under Euler state steps and trapezoid quadrature,
/// or `None` if the stock leaves `[0, ∞)` or turns non-finite.
pub fn discretized_cost(p: &ModelParams, grid: &Grid, x0: f64, u: &[f64], v: &[f64]) -> Option<f64> {
    let n = grid.len();
    if u.len() != n || v.len() != n {
        return None;
    }
    let dt = grid.dt();
    let mut x = x0;
    let mut total = 0.0;
    for i in 0..n {
        if !(x >= 0.0 && x.is_finite()) {
            return None;
        }
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        total += w * undiscounted_cost(p, x, u[i], v[i]) * (-p.r * grid.t(i)).exp();
        if i + 1 < n {
            x += dt * drift_unchecked(p, x, u[i], v[i]);
        }
    }
    Some(total * dt)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Upper bound of each control value.
    pub w_max: f64,
    /// Golden-section tolerance per coordinate.
    pub coord_tol: f64,
    /// Stop once a full pass lowers the cost by less than this.
    pub pass_tol: f64,
    pub max_passes: usize,
    pub fire_enabled: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            w_max: 2.0,
            coord_tol: 1e-9,
            pass_tol: 1e-8,
            max_passes: 2000,
            fire_enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub cost: f64,
    /// Euler states with the piecewise-constant controls; costate left zero.
    pub trajectory: Trajectory,
    pub passes: usize,
    pub hit_pass_limit: bool,
}

/// Direct transcription: piecewise-constant controls on a coarse grid,
/// minimized by cyclic golden-section search over each control value.
pub fn oracle_direct_solve(
    p: &ModelParams,
    horizon: f64,
    steps: usize,
    x0: f64,
    cfg: &OracleConfig,
) -> Result<OracleResult, AnalysisError> {
    p.validate()?;
    let grid = Grid::new(horizon, steps)?;
    let n = grid.len();
    let mut u = vec![0.0; steps];
    let mut v = vec![0.0; steps];
    // Knot controls: interval i holds on [t_i, t_{i+1}); the last knot repeats it.
    let expand = |w: &[f64]| -> Vec<f64> {
        let mut out = w.to_vec();
        out.push(w[steps - 1]);
        out
    };
    let eval = |u: &[f64], v: &[f64]| -> f64 {
        discretized_cost(p, &grid, x0, &expand(u), &expand(v)).unwrap_or(f64::INFINITY)
    };
    let mut cost = eval(&u, &v);
    let mut passes = 0;
    let mut hit_pass_limit = true;
    while passes < cfg.max_passes {
        passes += 1;
        let before = cost;
        for i in 0..steps {
            let (w, fw) = golden_section_min(
                |w| {
                    let mut trial = u.clone();
                    trial[i] = w;
                    eval(&trial, &v)
                },
                0.0,
                cfg.w_max,
                cfg.coord_tol,
            );
            if fw <= cost {
                u[i] = w;
                cost = fw;
            }
            if cfg.fire_enabled {
                let (w, fw) = golden_section_min(
                    |w| {
                        let mut trial = v.clone();
                        trial[i] = w;
                        eval(&u, &trial)
                    },
                    0.0,
                    cfg.w_max,
                    cfg.coord_tol,
                );
                if fw <= cost {
                    v[i] = w;
                    cost = fw;
                }
            }
        }
        if before - cost < cfg.pass_tol {
            hit_pass_limit = false;
            break;
        }
    }
    let mut trajectory = Trajectory::zeros(grid.clone());
    trajectory.u = expand(&u);
    trajectory.v = expand(&v);
    trajectory.x[0] = x0;
    for i in 0..n - 1 {
        trajectory.x[i + 1] =
            trajectory.x[i] + grid.dt() * drift_unchecked(p, trajectory.x[i], u[i], v[i]);
    }
    Ok(OracleResult {
        cost,
        trajectory,
        passes,
        hit_pass_limit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_values_counts_endpoints() {
        assert_eq!(grid_values(0.1, 0.2, 0.01).unwrap().len(), 11);
        assert_eq!(grid_values(0.01, 0.02, 0.001).unwrap().len(), 11);
        assert_eq!(grid_values(0.3, 0.3, 0.0).unwrap(), vec![0.3]);
        assert!(grid_values(0.2, 0.1, 0.01).is_err());
        assert!(grid_values(0.1, 0.2, 0.0).is_err());
    }

    #[test]
    fn zero_path_costs_nothing() {
        let g = Grid::new(30.0, 30).unwrap();
        let t = Trajectory::zeros(g);
        let rep = total_cost(&ModelParams::base(), &t);
        assert_eq!(rep.value, 0.0);
        assert_eq!(rep.tail_bound, 0.0);
    }

    #[test]
    fn linear_contour_is_exact() {
        let fit = QuadFit {
            a0: 1.0,
            a1: -1.0,
            a2: 0.0,
            a3: 0.0,
            a4: 0.0,
            r2: 1.0,
        };
        let sol = contour_solve(&fit, 0.5, &[0.01, 0.02], (0.0, 1.0));
        assert_eq!(sol.pairs, vec![(0.5, 0.01), (0.5, 0.02)]);
        assert!(sol.skipped.is_empty());
    }

    #[test]
    fn contour_reports_missing_roots() {
        let fit = QuadFit {
            a0: 1.0,
            a1: 0.0,
            a2: 1.0,
            a3: 0.0,
            a4: 0.0,
            r2: 1.0,
        };
        let sol = contour_solve(&fit, 0.5, &[0.01], (0.0, 1.0));
        assert!(sol.pairs.is_empty());
        assert_eq!(sol.skipped, vec![0.01]);
    }

    #[test]
    fn failing_sweep_point_is_recorded() {
        let rows = sweep_gamma_beta(&ModelParams::base(), &[0.1, -1.0], &[0.01]);
        assert_eq!(rows.len(), 2);
        assert!(rows[0].is_ok());
        assert!(rows[1].error.is_some());
    }
}
