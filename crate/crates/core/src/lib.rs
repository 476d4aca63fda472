//! Optimal control of a terrorist stock with two counter-measures: "water"
//! (targeted, no collateral damage) and "fire" (collateral damage that feeds
//! recruitment).
//!
//! The crate solves the discounted problem
//! `min ∫ (c x^p + u² + v²) e^{-rt} dt` subject to
//! `ẋ = τ + (1 + ρv) k x^α − μx − β ln(1+u) x^θ − γ ln(1+v) x`
//! by indirect shooting on the initial costate, one control at a time
//! ([`ccd`]), and locates steady states directly from the evolution
//! function ([`steady_state`]).

pub mod analysis;
pub mod ccd;
pub mod model;
pub mod numerics;
pub mod shooting;
pub mod steady_state;

pub use analysis::{
    arrow_check, find_dns, oracle_direct_solve, sweep_gamma_beta, verify_contour, AnalysisError,
    ArrowReport, DnsResult, SweepPoint, Verdict,
};
pub use ccd::{solve_low_branch, solve_multicontrol, CcdConfig, CcdError, CcdResult, TerminalPolicy};
pub use model::{Grid, ModelError, ModelParams, Trajectory};
pub use numerics::{NumericsError, QuadFit};
pub use shooting::{ControlKind, ControlSelector, ShootConfig, ShootError, ShootingResult};
pub use steady_state::{steady_ccd, SteadyError, SteadyState};
