//! Cyclic coordinate descent over the two controls, plus the one-control
//! construction of the path that settles on the low steady state.

use crate::model::{switching_point, Grid, ModelError, ModelParams, Trajectory};
use crate::shooting::{
    build_extremal, shoot, ControlKind, ControlSelector, ShootConfig, ShootError, Terminal,
};
use crate::steady_state::{
    default_window, find_steady_states, steady_ccd, Stability, SteadyCcdConfig, SteadyError,
    SteadyState,
};
use serde::Serialize;
use thiserror::Error;

/// Horizon and step count used for paths toward the high steady state.
pub const HIGH_HORIZON: f64 = 300.0;
pub const HIGH_STEPS: usize = 750;
/// Horizon and step count used for paths toward the low steady state.
pub const LOW_HORIZON: f64 = 50.0;
pub const LOW_STEPS: usize = 250;
/// Stage tolerance of [`CcdConfig::turnpike`]. Over long horizons the
/// present-value costate target is itself of order `1e-6`, so the residual
/// has to be resolved well below that for the end state to be determined.
pub const TURNPIKE_STAGE_TOL: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CcdError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cycle {cycle}, {stage} stage: {source}")]
    Stage {
        cycle: usize,
        stage: ControlKind,
        #[source]
        source: ShootError,
    },
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("low steady state unavailable: {0}")]
    NoLowSteadyState(String),
    #[error(transparent)]
    Steady(#[from] SteadyError),
    #[error("low-branch extremal: {0}")]
    LowBranch(#[source] ShootError),
}

/// Terminal condition imposed on every stage of [`solve_multicontrol`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalPolicy {
    /// `λ(T) = 0`.
    Zero,
    /// `λ(T) = μ_s e^{-rT}` with `μ_s` the current-value costate of the high
    /// steady state, so the truncated path ends on the turnpike instead of
    /// bending away from it in a terminal layer.
    HighSteadyState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcdConfig {
    pub tol_k: f64,
    pub max_cycles: usize,
    /// Stage tolerance and search settings; its terminal field is set from `terminal`.
    pub shoot: ShootConfig,
    pub terminal: TerminalPolicy,
    /// First-cycle seeds for each stage; `None` uses `(0, 2 c x0 / r)`.
    pub seeds: Option<(f64, f64)>,
    pub order: [ControlKind; 2],
}

impl Default for CcdConfig {
    fn default() -> Self {
        CcdConfig {
            tol_k: 1e-3,
            max_cycles: 20,
            shoot: ShootConfig::default(),
            terminal: TerminalPolicy::Zero,
            seeds: None,
            order: [ControlKind::Water, ControlKind::Fire],
        }
    }
}

impl CcdConfig {
    /// Long-horizon setting: stages shoot to the high steady-state costate
    /// with a tolerance fine enough to resolve it, so the path ends on the
    /// turnpike rather than in a terminal layer.
    pub fn turnpike() -> Self {
        CcdConfig {
            shoot: ShootConfig {
                tol: TURNPIKE_STAGE_TOL,
                ..ShootConfig::default()
            },
            terminal: TerminalPolicy::HighSteadyState,
            ..CcdConfig::default()
        }
    }

    fn validate(&self) -> Result<(), CcdError> {
        if !(self.tol_k > 0.0) {
            return Err(CcdError::Config("tol_k must be positive"));
        }
        if self.max_cycles == 0 {
            return Err(CcdError::Config("max_cycles must be at least 1"));
        }
        if self.order[0] == self.order[1] {
            return Err(CcdError::Config("stage order must name both controls"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub k_water: f64,
    pub k_fire: f64,
    pub iterations_water: usize,
    pub iterations_fire: usize,
    pub residual_water: f64,
    pub residual_fire: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcdResult {
    /// Terminal costate target each stage was shot to.
    pub terminal_target: f64,
    /// Both controls and the state; costate of the last stage.
    pub trajectory: Trajectory,
    pub k_water: f64,
    pub k_fire: f64,
    pub cycles: usize,
    pub cost: f64,
    pub history: Vec<CycleRecord>,
    pub converged: bool,
}

impl CcdResult {
    pub fn last(&self) -> &CycleRecord {
        self.history.last().expect("at least one cycle")
    }
}

fn stage_seeds(previous: Option<f64>, initial: (f64, f64)) -> (f64, f64) {
    match previous {
        Some(k) if k.abs() > 1e-12 => (k, 1.05 * k),
        _ => initial,
    }
}

/// Alternates water and fire shooting stages from `u = v = 0` until both
/// shooting constants move by less than `tol_k` between cycles.
pub fn solve_multicontrol(
    p: &ModelParams,
    grid: &Grid,
    x0: f64,
    cfg: &CcdConfig,
) -> Result<CcdResult, CcdError> {
    p.validate()?;
    cfg.validate()?;
    let initial = cfg.seeds.unwrap_or((0.0, 2.0 * p.c.abs().max(1e-3) * x0 / p.r));
    let terminal = match cfg.terminal {
        TerminalPolicy::Zero => Terminal::Zero,
        TerminalPolicy::HighSteadyState => {
            let ss = steady_ccd(p, default_window(p)?, &SteadyCcdConfig::default())?;
            Terminal::SteadyState {
                current_value: ss.current_value_costate(p, ControlKind::Water),
            }
        }
    };
    let shoot_cfg = ShootConfig {
        terminal,
        ..cfg.shoot
    };
    let n = grid.len();
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut k_prev: [Option<f64>; 2] = [None, None];
    let mut history = Vec::new();
    let mut best: Option<CcdResult> = None;
    for cycle in 1..=cfg.max_cycles {
        let mut record = CycleRecord {
            cycle,
            k_water: f64::NAN,
            k_fire: f64::NAN,
            iterations_water: 0,
            iterations_fire: 0,
            residual_water: f64::NAN,
            residual_fire: f64::NAN,
            cost: f64::NAN,
        };
        let mut trajectory = None;
        for &stage in &cfg.order {
            let slot = stage as usize;
            let other = match stage {
                ControlKind::Water => v.clone(),
                ControlKind::Fire => u.clone(),
            };
            let sel = ControlSelector::new(stage, other);
            let (s0, s1) = stage_seeds(k_prev[slot], initial);
            let res = shoot(p, grid, x0, s0, s1, &sel, &shoot_cfg).map_err(|source| {
                CcdError::Stage {
                    cycle,
                    stage,
                    source,
                }
            })?;
            let traj = res.extremal.trajectory;
            match stage {
                ControlKind::Water => {
                    u.clone_from(&traj.u);
                    record.k_water = res.k;
                    record.iterations_water = res.iterations;
                    record.residual_water = res.residual;
                }
                ControlKind::Fire => {
                    v.clone_from(&traj.v);
                    record.k_fire = res.k;
                    record.iterations_fire = res.iterations;
                    record.residual_fire = res.residual;
                }
            }
            trajectory = Some(traj);
        }
        let trajectory = trajectory.expect("two stages ran");
        record.cost = trajectory.discounted_cost(p);
        let done = match k_prev {
            [Some(kw), Some(kf)] => {
                (record.k_water - kw).abs() < cfg.tol_k && (record.k_fire - kf).abs() < cfg.tol_k
            }
            _ => false,
        };
        k_prev = [Some(record.k_water), Some(record.k_fire)];
        history.push(record);
        let current = CcdResult {
            terminal_target: terminal.target(p, grid.horizon()),
            trajectory,
            k_water: record.k_water,
            k_fire: record.k_fire,
            cycles: cycle,
            cost: record.cost,
            history: history.clone(),
            converged: done,
        };
        if done {
            return Ok(current);
        }
        if best.as_ref().is_none_or(|b| current.cost < b.cost) {
            best = Some(current);
        }
    }
    let mut flagged = best.expect("max_cycles >= 1");
    flagged.history = history;
    flagged.converged = false;
    Ok(flagged)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LowBranchStatus {
    /// Terminal costate target met within tolerance.
    Converged,
    /// The residual jumps across the target between adjacent floating-point
    /// values of `K`; the best adjacent value is returned.
    ResolutionLimited,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowBranchResult {
    pub trajectory: Trajectory,
    pub k: f64,
    /// `|λ(T) - μ e^{-rT}|`
    pub residual: f64,
    pub status: LowBranchStatus,
    pub evaluations: usize,
    pub cost: f64,
    /// Stable low steady state the path settles on.
    pub target: SteadyState,
}

/// The two steady states of the water-only problem below the switching point.
pub fn low_steady_states(p: &ModelParams) -> Result<(SteadyState, Option<SteadyState>), CcdError> {
    let x_switch = switching_point(p)?;
    if !(x_switch > 1e-10) {
        return Err(CcdError::NoLowSteadyState(
            "switching point is not positive".into(),
        ));
    }
    let roots = find_steady_states(p, ControlKind::Water, 0.0, 1e-10, x_switch)?;
    let stable = roots
        .iter()
        .find(|s| s.stability == Stability::Stable)
        .copied()
        .ok_or_else(|| CcdError::NoLowSteadyState("no stable root below the switch".into()))?;
    let unstable = roots
        .iter()
        .find(|s| s.stability == Stability::Unstable && s.x_s > stable.x_s)
        .copied();
    Ok((stable, unstable))
}

enum Probe {
    Crash,
    Path { x_end: f64, residual: f64 },
}

fn keep(best: &mut (f64, f64), k: f64, r: f64) {
    if r.abs() < best.1.abs() {
        *best = (k, r);
    }
}

/// Water-only path (fire held at zero) that settles on the stable low steady state.
///
/// The terminal condition is the steady-state costate, `λ(T) = μ e^{-rT}`
/// with `μ = -G_u/f_u` at the low root. Along `K` the terminal residual is
/// positive for paths that escape upward, negative on a thin band of paths
/// that linger at the low root, positive again for paths that dive late,
/// and past a threshold the path collapses onto the state floor. The solver
/// locates the collapse threshold, walks down into the lingering band and
/// bisects its upper edge.
pub fn solve_low_branch(
    p: &ModelParams,
    grid: &Grid,
    x0: f64,
    tol: f64,
) -> Result<LowBranchResult, CcdError> {
    p.validate()?;
    let (target, _) = low_steady_states(p)?;
    let mu = target.current_value_costate(p, ControlKind::Water);
    let goal = Terminal::SteadyState { current_value: mu }.target(p, grid.horizon());
    let sel = ControlSelector::new(ControlKind::Water, vec![0.0; grid.len()]);
    let mut evaluations = 0usize;
    let mut probe = |k: f64| -> Result<Probe, CcdError> {
        evaluations += 1;
        match build_extremal(p, grid, x0, k, &sel) {
            Ok(e) => Ok(Probe::Path {
                x_end: e.trajectory.last_x(),
                residual: e.trajectory.last_lambda() - goal,
            }),
            Err(ShootError::FloorBreach { .. })
            | Err(ShootError::AccumulatorOverflow { .. })
            | Err(ShootError::KnotSolve { .. }) => {
                Ok(Probe::Crash)
            }
            Err(e) => Err(CcdError::LowBranch(e)),
        }
    };

    // Bracket and bisect the collapse threshold.
    let mut k_ok = 0.0;
    let mut k_crash = (2.0 * p.c.abs().max(1e-3) * x0 / p.r).max(1.0);
    let mut doublings = 0;
    while let Probe::Path { .. } = probe(k_crash)? {
        k_ok = k_crash;
        k_crash *= 2.0;
        doublings += 1;
        if doublings > 200 {
            return Err(CcdError::NoLowSteadyState(
                "no collapsing extremal found".into(),
            ));
        }
    }
    loop {
        let mid = 0.5 * (k_ok + k_crash);
        if mid <= k_ok || mid >= k_crash {
            break;
        }
        match probe(mid)? {
            Probe::Crash => k_crash = mid,
            Probe::Path { .. } => k_ok = mid,
        }
    }
    let Probe::Path { residual: r_ok, .. } = probe(k_ok)? else {
        unreachable!("k_ok never collapses")
    };
    let mut best = (k_ok, r_ok);

    // Walk down into the lingering band.
    let mut band = None;
    if r_ok < 0.0 {
        band = Some(k_ok);
    } else {
        let scale = k_ok.abs().max(1.0);
        let mut offset = 1e-13 * scale;
        while offset < 0.5 * scale {
            let k = k_ok - offset;
            if let Probe::Path { x_end, residual } = probe(k)? {
                keep(&mut best, k, residual);
                if residual < 0.0 {
                    band = Some(k);
                    break;
                }
                if x_end > 10.0 * target.x_s {
                    break;
                }
            }
            offset *= 2.0;
        }
    }

    match band {
        Some(mut lo) => {
            let mut hi = if lo == k_ok { k_crash } else { k_ok };
            loop {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                match probe(mid)? {
                    Probe::Path { residual, .. } => {
                        keep(&mut best, mid, residual);
                        if residual.abs() <= tol {
                            break;
                        }
                        if residual < 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    Probe::Crash => hi = mid,
                }
            }
        }
        None => {
            // No band resolved: end exactly on the low root instead.
            let (mut lo, mut hi) = (0.0_f64, k_ok);
            let mut last = None;
            loop {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                match probe(mid)? {
                    Probe::Path { x_end, residual } => {
                        last = Some((mid, residual));
                        if x_end > target.x_s {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    Probe::Crash => hi = mid,
                }
            }
            if let Some(found) = last {
                best = found;
            }
        }
    }
    let (k_best, r_best) = best;
    let trajectory = build_extremal(p, grid, x0, k_best, &sel)
        .map_err(CcdError::LowBranch)?
        .trajectory;
    let cost = trajectory.discounted_cost(p);
    Ok(LowBranchResult {
        trajectory,
        k: k_best,
        residual: r_best.abs(),
        status: if r_best.abs() <= tol {
            LowBranchStatus::Converged
        } else {
            LowBranchStatus::ResolutionLimited
        },
        evaluations,
        cost,
        target,
    })
}
