use std::path::Path;
use std::time::Instant;

use firewater::analysis::{
    arrow_check, branch_costs, contour_solve, find_dns, grid_values, sweep_gamma_beta,
    verify_contour, AnalysisError, DnsConfig, SweepPoint,
};
use firewater::ccd::{low_steady_states, solve_low_branch, LowBranchStatus};
use firewater::model::switching_point;
use firewater::numerics::fit_quadratic_surface;
use firewater::steady_state::{default_window, SteadyCcdConfig};
use firewater::{
    solve_multicontrol, steady_ccd, CcdConfig, CcdResult, Grid, ModelParams, QuadFit,
    SteadyState,
};
use serde::Serialize;
use serde_json::json;

use crate::args::{
    ArrowArgs, ContourArgs, DnsArgs, FitArgs, GridArgs, PathArgs, SolveArgs, SolveBranch,
    SteadyArgs, SteadyBranch, SweepArgs, TerminalArg,
};
use crate::output::{num, write_csv, write_json};
use crate::CliError;

/// How a command that produced its artifacts ended.
pub enum Outcome {
    Done,
    /// Outputs were written but the solver did not meet its tolerance.
    Flagged(String),
}

pub fn load_params(path: Option<&Path>) -> Result<ModelParams, CliError> {
    let Some(path) = path else {
        return Ok(ModelParams::base());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let p: ModelParams = text
        .parse()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    p.validate()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(p)
}

fn ccd_config(a: &PathArgs) -> Result<CcdConfig, CliError> {
    let mut cfg = match a.terminal {
        TerminalArg::Zero => CcdConfig::default(),
        TerminalArg::Steady => CcdConfig::turnpike(),
    };
    if let Some(tol) = a.shoot_tol {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(CliError::Input(format!("--shoot-tol must be positive, got {tol}")));
        }
        cfg.shoot.tol = tol;
    }
    if a.max_cycles == 0 {
        return Err(CliError::Input("--max-cycles must be at least 1".into()));
    }
    cfg.max_cycles = a.max_cycles;
    Ok(cfg)
}

fn path_grid(a: &PathArgs) -> Result<Grid, CliError> {
    if !(a.x0 > 0.0 && a.x0.is_finite()) {
        return Err(CliError::Input(format!("--x0 must be positive, got {}", a.x0)));
    }
    Grid::new(a.horizon, a.steps).map_err(|e| CliError::Input(e.to_string()))
}

fn trajectory_rows(t: &firewater::Trajectory) -> Vec<Vec<String>> {
    (0..t.grid.len())
        .map(|i| {
            vec![
                num(t.grid.t(i)),
                num(t.x[i]),
                num(t.u[i]),
                num(t.v[i]),
                num(t.lambda[i]),
            ]
        })
        .collect()
}

const TRAJECTORY_HEADER: [&str; 5] = ["t", "x", "u", "v", "lambda"];

fn high_summary(res: &CcdResult, cfg: &CcdConfig) -> serde_json::Value {
    let last = res.last();
    json!({
        "branch": "high",
        "converged": res.converged,
        "cycles": res.cycles,
        "K_water": res.k_water,
        "K_fire": res.k_fire,
        "cost": res.cost,
        "residual_water": last.residual_water,
        "residual_fire": last.residual_fire,
        "terminal_target": res.terminal_target,
        "final_x": res.trajectory.last_x(),
        "history": res.history.iter().map(|h| json!({
            "cycle": h.cycle,
            "K_water": h.k_water,
            "K_fire": h.k_fire,
            "iterations_water": h.iterations_water,
            "iterations_fire": h.iterations_fire,
            "residual_water": h.residual_water,
            "residual_fire": h.residual_fire,
            "cost": h.cost,
        })).collect::<Vec<_>>(),
        "tolerances": { "shoot": cfg.shoot.tol, "K": cfg.tol_k, "max_cycles": cfg.max_cycles },
    })
}

/// Branch for `--branch auto`: high above the switching point, otherwise the
/// cheaper of the two branches under the long-horizon costing used for DNS.
fn pick_branch(p: &ModelParams, x0: f64) -> Result<SolveBranch, CliError> {
    let x_switch = switching_point(p).map_err(|e| CliError::Input(e.to_string()))?;
    if x0 >= x_switch {
        return Ok(SolveBranch::High);
    }
    match branch_costs(p, x0, &DnsConfig::default()) {
        Ok(c) if c.j_low < c.j_high => Ok(SolveBranch::Low),
        Ok(_) => Ok(SolveBranch::High),
        Err(AnalysisError::Branch { branch: "high", .. }) => Ok(SolveBranch::Low),
        Err(AnalysisError::Branch { branch: "low", .. }) => Ok(SolveBranch::High),
        Err(e) => Err(CliError::Solver(e.to_string())),
    }
}

pub fn solve(p: &ModelParams, a: &SolveArgs) -> Result<Outcome, CliError> {
    let grid = path_grid(&a.path)?;
    let cfg = ccd_config(&a.path)?;
    let x0 = a.path.x0;
    let start = Instant::now();
    let branch = match a.branch {
        SolveBranch::Auto => pick_branch(p, x0)?,
        b => b,
    };
    let (traj, mut summary, outcome) = match branch {
        SolveBranch::Low => {
            let res = solve_low_branch(p, &grid, x0, cfg.shoot.tol)
                .map_err(|e| CliError::Solver(e.to_string()))?;
            let status = match res.status {
                LowBranchStatus::Converged => "converged",
                LowBranchStatus::ResolutionLimited => "resolution_limited",
            };
            let summary = json!({
                "branch": "low",
                "status": status,
                "K": res.k,
                "residual": res.residual,
                "evaluations": res.evaluations,
                "cost": res.cost,
                "final_x": res.trajectory.last_x(),
                "low_steady_state": res.target.x_s,
                "tolerances": { "shoot": cfg.shoot.tol },
            });
            let outcome = match res.status {
                LowBranchStatus::Converged => Outcome::Done,
                LowBranchStatus::ResolutionLimited => Outcome::Flagged(format!(
                    "low branch: residual {:.3e} is limited by floating-point resolution of K",
                    res.residual
                )),
            };
            (res.trajectory, summary, outcome)
        }
        _ => {
            let res =
                solve_multicontrol(p, &grid, x0, &cfg).map_err(|e| CliError::Solver(e.to_string()))?;
            let summary = high_summary(&res, &cfg);
            let outcome = if res.converged {
                Outcome::Done
            } else {
                Outcome::Flagged(format!(
                    "coordinate descent stopped after {} cycles without meeting the K tolerance",
                    res.cycles
                ))
            };
            (res.trajectory, summary, outcome)
        }
    };
    let obj = summary.as_object_mut().expect("summary is an object");
    obj.insert("x0".into(), json!(x0));
    obj.insert("horizon".into(), json!(a.path.horizon));
    obj.insert("steps".into(), json!(a.path.steps));
    obj.insert("params".into(), json!(p));
    if a.timing {
        obj.insert("runtime_s".into(), json!(start.elapsed().as_secs_f64()));
    }
    write_csv(a.out.as_deref(), &TRAJECTORY_HEADER, trajectory_rows(&traj))?;
    if let Some(path) = &a.summary {
        write_json(Some(path), &summary)?;
    }
    Ok(outcome)
}

fn steady_row(p: &ModelParams, s: &SteadyState) -> Vec<String> {
    vec![
        num(p.gamma),
        num(p.beta),
        s.branch.to_string(),
        num(s.x_s),
        num(s.u_s),
        num(s.v_s),
        s.stability.to_string(),
        num(s.cost_rate(p)),
    ]
}

pub fn steady(p: &ModelParams, a: &SteadyArgs) -> Result<Outcome, CliError> {
    let mut states = Vec::new();
    if matches!(a.branch, SteadyBranch::High | SteadyBranch::All) {
        let window = default_window(p).map_err(|e| CliError::Solver(e.to_string()))?;
        let s = steady_ccd(p, window, &SteadyCcdConfig::default())
            .map_err(|e| CliError::Solver(e.to_string()))?;
        states.push(s);
    }
    if matches!(a.branch, SteadyBranch::Low | SteadyBranch::All) {
        let (stable, unstable) =
            low_steady_states(p).map_err(|e| CliError::Solver(e.to_string()))?;
        states.push(stable);
        states.extend(unstable);
    }
    let header = ["gamma", "beta", "branch", "x_s", "u_s", "v_s", "stability", "cost_rate"];
    let rows: Vec<Vec<String>> = states.iter().map(|s| steady_row(p, s)).collect();
    write_csv(a.out.as_deref(), &header, rows)?;
    if a.out.is_some() {
        println!(
            "{:<6} {:>14} {:>12} {:>12} {:>10} {:>10}",
            "branch", "x_s", "u_s", "v_s", "stability", "cost_rate"
        );
        for s in &states {
            println!(
                "{:<6} {:>14.6e} {:>12.6} {:>12.6} {:>10} {:>10.6}",
                s.branch.to_string(),
                s.x_s,
                s.u_s,
                s.v_s,
                s.stability.to_string(),
                s.cost_rate(p)
            );
        }
    }
    Ok(Outcome::Done)
}

fn axes(g: &GridArgs) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let gammas = grid_values(g.gamma_min, g.gamma_max, g.gamma_step)
        .map_err(|e| CliError::Input(format!("gamma range: {e}")))?;
    let betas = grid_values(g.beta_min, g.beta_max, g.beta_step)
        .map_err(|e| CliError::Input(format!("beta range: {e}")))?;
    Ok((gammas, betas))
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::Input("--jobs must be at least 1".into()));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Input(e.to_string()))
}

fn run_sweep(p: &ModelParams, g: &GridArgs, jobs: Option<usize>) -> Result<Vec<SweepPoint>, CliError> {
    let (gammas, betas) = axes(g)?;
    Ok(pool(jobs)?.install(|| sweep_gamma_beta(p, &gammas, &betas)))
}

fn failures(rows: &[SweepPoint]) -> Outcome {
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    if failed == 0 {
        Outcome::Done
    } else {
        Outcome::Flagged(format!("{failed} of {} points failed", rows.len()))
    }
}

pub fn sweep(p: &ModelParams, a: &SweepArgs) -> Result<Outcome, CliError> {
    let rows = run_sweep(p, &a.grid, a.jobs)?;
    let header = ["gamma", "beta", "x_s", "u_s", "v_s", "cost_rate", "status"];
    write_csv(
        a.out.as_deref(),
        &header,
        rows.iter().map(|r| {
            vec![
                num(r.gamma),
                num(r.beta),
                num(r.x_s),
                num(r.u_s),
                num(r.v_s),
                num(r.cost_rate),
                match &r.error {
                    None => "ok".to_string(),
                    Some(e) => format!("error: {e}"),
                },
            ]
        }),
    )?;
    Ok(failures(&rows))
}

#[derive(Debug, serde::Deserialize)]
struct SweepRecord {
    gamma: f64,
    beta: f64,
    x_s: f64,
    status: String,
}

#[derive(Serialize)]
struct FitReport {
    #[serde(flatten)]
    fit: QuadFit,
    points: usize,
    max_residual: f64,
}

pub fn fit(a: &FitArgs) -> Result<Outcome, CliError> {
    let mut rd = csv::Reader::from_path(&a.input)
        .map_err(|e| CliError::Input(format!("{}: {e}", a.input.display())))?;
    let mut pts = Vec::new();
    for rec in rd.deserialize::<SweepRecord>() {
        let rec = rec.map_err(|e| CliError::Input(format!("{}: {e}", a.input.display())))?;
        if rec.status == "ok" {
            pts.push((rec.gamma, rec.beta, rec.x_s));
        }
    }
    let fit = fit_quadratic_surface(&pts).map_err(|e| CliError::Input(e.to_string()))?;
    let max_residual = pts
        .iter()
        .map(|&(g, b, y)| (fit.predict(g, b) - y).abs())
        .fold(0.0, f64::max);
    write_json(
        a.out.as_deref(),
        &FitReport {
            fit,
            points: pts.len(),
            max_residual,
        },
    )?;
    Ok(Outcome::Done)
}

pub fn contour(p: &ModelParams, a: &ContourArgs) -> Result<Outcome, CliError> {
    let fit: QuadFit = match &a.fit {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        }
        None => {
            let rows = run_sweep(p, &a.grid, a.jobs)?;
            let pts: Vec<(f64, f64, f64)> = rows
                .iter()
                .filter(|r| r.is_ok())
                .map(|r| (r.gamma, r.beta, r.x_s))
                .collect();
            fit_quadratic_surface(&pts).map_err(|e| CliError::Solver(e.to_string()))?
        }
    };
    let (_, betas) = axes(&a.grid)?;
    let sol = contour_solve(&fit, a.target, &betas, (a.grid.gamma_min, a.grid.gamma_max));
    for b in &sol.skipped {
        eprintln!("beta = {b}: no root of the fitted surface in the gamma range");
    }
    let rows = pool(a.jobs)?.install(|| verify_contour(p, &sol.pairs));
    let header = ["gamma", "beta", "x_s", "u_s", "v_s", "cost"];
    write_csv(
        a.out.as_deref(),
        &header,
        rows.iter().map(|r| {
            vec![
                num(r.gamma),
                num(r.beta),
                num(r.x_s),
                num(r.u_s),
                num(r.v_s),
                num(r.cost_rate),
            ]
        }),
    )?;
    for r in rows.iter().filter(|r| !r.is_ok()) {
        eprintln!(
            "gamma = {}, beta = {}: {}",
            r.gamma,
            r.beta,
            r.error.as_deref().unwrap_or("")
        );
    }
    Ok(failures(&rows))
}

pub fn dns(p: &ModelParams, a: &DnsArgs) -> Result<Outcome, CliError> {
    let cfg = DnsConfig {
        x_tol: a.x_tol,
        ..DnsConfig::default()
    };
    let res = find_dns(p, (a.lo, a.hi), &cfg).map_err(|e| match e {
        AnalysisError::Bracket { .. } | AnalysisError::NoSignChange { .. } => {
            CliError::Input(e.to_string())
        }
        other => CliError::Solver(other.to_string()),
    })?;
    write_json(
        a.out.as_deref(),
        &json!({
            "x_D": res.x_d,
            "J_low": res.j_low,
            "J_high": res.j_high,
            "bracket_width": res.bracket_width,
            "evaluations": res.evaluations,
            "tolerances": { "x": cfg.x_tol, "cost": cfg.cost_tol },
        }),
    )?;
    Ok(Outcome::Done)
}

pub fn arrow(p: &ModelParams, a: &ArrowArgs) -> Result<Outcome, CliError> {
    let grid = path_grid(&a.path)?;
    let cfg = ccd_config(&a.path)?;
    let res = solve_multicontrol(p, &grid, a.path.x0, &cfg)
        .map_err(|e| CliError::Solver(e.to_string()))?;
    let rep = arrow_check(p, &res, a.side_tol).map_err(|e| match e {
        AnalysisError::NotConverged => CliError::Solver(format!(
            "the solve stopped after {} cycles without converging; \
             the sufficiency check needs a converged path",
            res.cycles
        )),
        other => CliError::Solver(other.to_string()),
    })?;
    if let Some(path) = &a.out {
        write_csv(
            Some(path),
            &["t", "H0_xx"],
            rep.samples.iter().map(|&(t, h)| vec![num(t), num(h)]),
        )?;
    }
    write_json(
        a.summary.as_deref(),
        &json!({
            "verdict": rep.verdict.to_string(),
            "min_H0_xx": rep.min_h0_xx,
            "min_current_value_H0_xx": rep.min_scaled,
            "noise_floor": rep.noise_floor,
            "side_condition": rep.side_condition,
            "side_condition_ok": rep.side_ok,
            "cost_exponent": p.cost_exponent,
        }),
    )?;
    Ok(Outcome::Done)
}
