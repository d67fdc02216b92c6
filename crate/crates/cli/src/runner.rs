//! Experiment orchestration: builds problem instances from a validated
//! configuration, runs the requested pipeline, and persists reports and
//! plot-ready artifacts.

use crate::config::{apply_override, ExperimentConfig};
use crate::report::{
    write_atomic, write_control_norms_csv, write_convergence_csv, write_eta_bin,
    write_profile_csv, write_terminal_csv, write_timings, KktReport, NashGapReport, RunReport,
};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;
use stochact::control::{minimize_j, verify_optimality, ControlProblem, SolveOptions, SolveStatus};
use stochact::diagnostics::estimate_observability_constant;
use stochact::dynamics::{duality_residual, forward_solve};
use stochact::grid::Grid;
use stochact::placement::{optimize_theta, GameOptions, GameProblem, StepRule};
use stochact::rounding::{round_to_indicator, verify_bang_bang};
use stochact::tree::{
    expected_sq_norm_level, AdaptedField, NoiseCoefficient, TerminalField, TreeTopology,
};
use stochact::verify::{all_passed, run_suite, Mutation, VerifyOptions};

pub type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

/// Number of sampled densities in the rearrangement certificate.
const BANG_BANG_SAMPLES: usize = 1000;

struct Instance {
    grid: Grid,
    tree: TreeTopology,
    prop: stochact::grid::Propagator,
    noise: NoiseCoefficient,
    y0: Vec<f64>,
}

fn build_instance(config: &ExperimentConfig) -> CliResult<Instance> {
    let grid = config.build_grid()?;
    let tree = config.build_tree()?;
    let prop = config.build_propagator(&grid, &tree)?;
    let noise = config.build_noise(&tree)?;
    let y0 = config.build_initial_state(&grid);
    Ok(Instance {
        grid,
        tree,
        prop,
        noise,
        y0,
    })
}

fn inner_options(config: &ExperimentConfig) -> SolveOptions {
    SolveOptions {
        tol_kkt: config.solver.tol_kkt,
        max_iters: config.solver.max_iters,
        ..Default::default()
    }
}

fn status_name(status: SolveStatus) -> &'static str {
    match status {
        SolveStatus::Converged => "converged",
        SolveStatus::IterationLimit => "iteration-limit",
        SolveStatus::InfeasibleAtTolerance => "infeasible-at-tolerance",
    }
}

struct PhaseClock {
    timings: BTreeMap<String, f64>,
    last: Instant,
}

impl PhaseClock {
    fn start() -> Self {
        PhaseClock {
            timings: BTreeMap::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, phase: &str) {
        let now = Instant::now();
        self.timings
            .insert(phase.to_string(), (now - self.last).as_secs_f64());
        self.last = now;
    }
}

/// Writes the control-solution artifacts shared by `solve-control` and
/// `optimize-actuator`.
#[allow(clippy::too_many_arguments)]
fn write_control_artifacts(
    out: &Path,
    config: &ExperimentConfig,
    inst: &Instance,
    eta: &TerminalField,
    u: &AdaptedField,
    terminal: &TerminalField,
    csv: bool,
    bin: bool,
) -> CliResult<()> {
    let tree = &inst.tree;
    let grid = &inst.grid;
    if csv {
        let leaf_prob = tree.node_prob(tree.steps());
        let eta_rows: Vec<(usize, f64, f64)> = (0..eta.num_leaves())
            .map(|j| (j, leaf_prob, grid.inner(eta.leaf(j), eta.leaf(j))))
            .collect();
        write_terminal_csv(&out.join("eta_star.csv"), &eta_rows, "leaf,prob,sq_norm")?;
        let term_rows: Vec<(usize, f64, f64)> = (0..terminal.num_leaves())
            .map(|j| (j, leaf_prob, grid.inner(terminal.leaf(j), terminal.leaf(j))))
            .collect();
        write_terminal_csv(
            &out.join("terminal_state.csv"),
            &term_rows,
            "leaf,prob,sq_norm",
        )?;
        let norm_rows: Vec<(usize, f64, f64)> = (0..u.num_levels())
            .map(|k| {
                (
                    k,
                    k as f64 * tree.dt(),
                    expected_sq_norm_level(tree, grid, k, u.level(k)).sqrt(),
                )
            })
            .collect();
        write_control_norms_csv(&out.join("control_norms.csv"), &norm_rows)?;
    }
    if bin {
        write_eta_bin(&out.join("eta_star.bin"), eta.as_slice())?;
    }
    let _ = config;
    Ok(())
}

/// Minimum-norm control synthesis with a fixed actuator shape.
pub fn run_solve_control(
    config: &ExperimentConfig,
    warnings: Vec<String>,
    out: &Path,
) -> CliResult<RunReport> {
    let mut clock = PhaseClock::start();
    let inst = build_instance(config)?;
    let beta = config.build_beta(&inst.grid);
    let pb = ControlProblem::new(
        &inst.grid,
        &inst.tree,
        &inst.prop,
        &inst.noise,
        config.control.epsilon,
        &inst.y0,
        &beta,
        config.control.ball_radius,
    )?;
    clock.lap("build");

    let sol = minimize_j(&pb, &inner_options(config), None);
    clock.lap("solve");

    let optimality = verify_optimality(&pb, &sol);
    let residual = duality_residual(
        &inst.grid,
        &inst.tree,
        &inst.prop,
        &inst.noise,
        &beta,
        &inst.y0,
        Some(&sol.u_star),
        &sol.eta_star,
    );
    clock.lap("verify");

    let mut report = RunReport::new("solve-control", config, warnings);
    report.status = status_name(sol.status).to_string();
    report.n_value = Some(sol.n_value);
    report.j_value = Some(sol.j_value);
    report.duality_residual = Some(residual);
    report.kkt = Some(KktReport {
        stationarity: optimality.kkt_residual,
        el_identity: optimality.el_identity,
        constraint_slack: optimality.constraint_slack,
        norm_bound_ratio: optimality.norm_bound_ratio,
    });
    report.iterations = Some(sol.iterations as u64);

    let csv = config.outputs.formats.iter().any(|f| f == "csv");
    let bin = config.outputs.formats.iter().any(|f| f == "bin");
    let (_, terminal) = forward_solve(
        &inst.grid,
        &inst.tree,
        &inst.prop,
        &inst.noise,
        &beta,
        &inst.y0,
        Some(&sol.u_star),
    );
    write_control_artifacts(
        out,
        config,
        &inst,
        &sol.eta_star,
        &sol.u_star,
        &terminal,
        csv,
        bin,
    )?;
    if csv {
        let rows: Vec<(usize, f64, f64, f64)> = sol
            .trace
            .iter()
            .map(|r| (r.iter, r.objective, r.residual, r.step))
            .collect();
        write_convergence_csv(&out.join("convergence.csv"), &rows)?;
    }
    write_atomic(&out.join("report.json"), report.to_json().as_bytes())?;
    clock.lap("io");
    write_timings(&out.join("timings.json"), &clock.timings)?;
    Ok(report)
}

/// Relaxed actuator-location game followed by level-set rounding.
pub fn run_optimize_actuator(
    config: &ExperimentConfig,
    warnings: Vec<String>,
    out: &Path,
) -> CliResult<RunReport> {
    let mut clock = PhaseClock::start();
    let inst = build_instance(config)?;
    let gp = GameProblem {
        grid: &inst.grid,
        tree: &inst.tree,
        prop: &inst.prop,
        noise: &inst.noise,
        epsilon: config.control.epsilon,
        y0: &inst.y0,
        ball_radius: config.control.ball_radius,
    };
    let game_opts = GameOptions {
        outer_iters: config.solver.outer_iters,
        step_rule: if config.solver.step0 > 0.0 {
            StepRule::Diminishing {
                step0: Some(config.solver.step0),
            }
        } else {
            StepRule::Adaptive
        },
        tol_gap: config.solver.tol_gap,
        inner: inner_options(config),
    };
    let alpha = config.control.alpha;
    clock.lap("build");

    let equilibrium = optimize_theta(&gp, alpha, None, &game_opts)?;
    clock.lap("optimize");

    let rounded = round_to_indicator(&inst.grid, &equilibrium.h_field, alpha, config.tie_break())?;
    // re-solve with the rounded actuator to measure the rounding cost
    let beta_rounded = rounded.indicator.beta();
    let pb_rounded = ControlProblem::new(
        &inst.grid,
        &inst.tree,
        &inst.prop,
        &inst.noise,
        config.control.epsilon,
        &inst.y0,
        &beta_rounded,
        config.control.ball_radius,
    )?;
    let sol_rounded = minimize_j(
        &pb_rounded,
        &inner_options(config),
        Some(&equilibrium.eta_star),
    );
    let certificate = verify_bang_bang(
        &inst.grid,
        &rounded,
        &equilibrium.h_field,
        BANG_BANG_SAMPLES,
        config.solver.seed,
        &[&equilibrium.theta_star],
    )?;
    clock.lap("round");

    // optimality diagnostics at the relaxed pair
    let beta_star = equilibrium.theta_star.beta();
    let pb_star = ControlProblem::new(
        &inst.grid,
        &inst.tree,
        &inst.prop,
        &inst.noise,
        config.control.epsilon,
        &inst.y0,
        &beta_star,
        config.control.ball_radius,
    )?;
    let sol_star = minimize_j(&pb_star, &inner_options(config), Some(&equilibrium.eta_star));
    let optimality = verify_optimality(&pb_star, &sol_star);
    let residual = duality_residual(
        &inst.grid,
        &inst.tree,
        &inst.prop,
        &inst.noise,
        &beta_star,
        &inst.y0,
        Some(&sol_star.u_star),
        &sol_star.eta_star,
    );
    clock.lap("verify");

    let mut report = RunReport::new("optimize-actuator", config, warnings);
    report.status = if equilibrium.converged {
        "converged".to_string()
    } else {
        "iteration-limit".to_string()
    };
    report.n_value = Some(equilibrium.n_value);
    report.j_value = Some(-equilibrium.f_value);
    report.n_after_rounding = Some(sol_rounded.n_value);
    report.duality_residual = Some(residual);
    report.kkt = Some(KktReport {
        stationarity: optimality.kkt_residual,
        el_identity: optimality.el_identity,
        constraint_slack: optimality.constraint_slack,
        norm_bound_ratio: optimality.norm_bound_ratio,
    });
    report.nash_gaps = Some(NashGapReport {
        theta: equilibrium.gap_theta,
        eta: equilibrium.gap_eta,
    });
    report.c_alpha = Some(rounded.c_alpha);
    report.achieved_mass = Some(rounded.achieved_mass);
    report.bang_bang_violation = Some(certificate.max_violation);
    report.iterations = Some(equilibrium.iterations as u64);

    let csv = config.outputs.formats.iter().any(|f| f == "csv");
    let bin = config.outputs.formats.iter().any(|f| f == "bin");
    if csv {
        let positions = inst.grid.positions();
        write_profile_csv(&out.join("H.csv"), &positions, &equilibrium.h_field)?;
        write_profile_csv(
            &out.join("theta_star.csv"),
            &positions,
            equilibrium.theta_star.theta(),
        )?;
        write_profile_csv(
            &out.join("indicator.csv"),
            &positions,
            rounded.indicator.theta(),
        )?;
        let rows: Vec<(usize, f64, f64, f64)> = equilibrium
            .trace
            .iter()
            .map(|r| (r.iter, r.n_value, r.gap_theta + r.gap_eta, r.step))
            .collect();
        write_convergence_csv(&out.join("convergence.csv"), &rows)?;
    }
    let (_, terminal) = forward_solve(
        &inst.grid,
        &inst.tree,
        &inst.prop,
        &inst.noise,
        &beta_star,
        &inst.y0,
        Some(&sol_star.u_star),
    );
    write_control_artifacts(
        out,
        config,
        &inst,
        &sol_star.eta_star,
        &sol_star.u_star,
        &terminal,
        csv,
        bin,
    )?;
    write_atomic(&out.join("report.json"), report.to_json().as_bytes())?;
    clock.lap("io");
    write_timings(&out.join("timings.json"), &clock.timings)?;
    Ok(report)
}

/// Rounds a stored actuation profile (`H.csv` from a previous run) to an
/// indicator actuator.
pub fn run_round_levelset(
    config: &ExperimentConfig,
    warnings: Vec<String>,
    h_file: &Path,
    out: &Path,
) -> CliResult<RunReport> {
    let mut clock = PhaseClock::start();
    let grid = config.build_grid()?;
    let rows = crate::report::read_profile_csv(h_file)?;
    if rows.len() != grid.n() {
        return Err(format!(
            "profile {} has {} rows but grid.n = {}",
            h_file.display(),
            rows.len(),
            grid.n()
        )
        .into());
    }
    let h_field: Vec<f64> = rows.iter().map(|(_, v)| *v).collect();
    clock.lap("build");

    let rounded = round_to_indicator(&grid, &h_field, config.control.alpha, config.tie_break())?;
    let certificate = verify_bang_bang(
        &grid,
        &rounded,
        &h_field,
        BANG_BANG_SAMPLES,
        config.solver.seed,
        &[],
    )?;
    clock.lap("round");

    let mut report = RunReport::new("round-levelset", config, warnings);
    report.c_alpha = Some(rounded.c_alpha);
    report.achieved_mass = Some(rounded.achieved_mass);
    report.bang_bang_violation = Some(certificate.max_violation);
    if config.outputs.formats.iter().any(|f| f == "csv") {
        let positions = grid.positions();
        write_profile_csv(&out.join("H.csv"), &positions, &h_field)?;
        write_profile_csv(&out.join("indicator.csv"), &positions, rounded.indicator.theta())?;
    }
    write_atomic(&out.join("report.json"), report.to_json().as_bytes())?;
    clock.lap("io");
    write_timings(&out.join("timings.json"), &clock.timings)?;
    Ok(report)
}

/// Observability-constant estimation (a logged lower bound).
pub fn run_estimate_obs(
    config: &ExperimentConfig,
    warnings: Vec<String>,
    trials: usize,
    out: &Path,
) -> CliResult<RunReport> {
    let mut clock = PhaseClock::start();
    let inst = build_instance(config)?;
    let beta = config.build_beta(&inst.grid);
    let pb = ControlProblem::new(
        &inst.grid,
        &inst.tree,
        &inst.prop,
        &inst.noise,
        config.control.epsilon,
        &inst.y0,
        &beta,
        None,
    )?;
    clock.lap("build");
    let estimate = estimate_observability_constant(&pb, trials, config.solver.seed)?;
    clock.lap("estimate");

    let mut report = RunReport::new("estimate-obs", config, warnings);
    report.obs_constant = Some(estimate.lower_bound);
    report.obs_samples_used = Some(estimate.used as u64);
    report.obs_samples_excluded = Some(estimate.excluded as u64);
    write_atomic(&out.join("report.json"), report.to_json().as_bytes())?;
    clock.lap("io");
    write_timings(&out.join("timings.json"), &clock.timings)?;
    Ok(report)
}

/// Runs the invariant suite; returns success. `verify.*` overrides tighten
/// or loosen group tolerances; a mutation demonstrates designed sensitivity.
pub fn run_verify(
    seed: u64,
    tolerance_overrides: &[(String, f64)],
    mutation: Mutation,
) -> CliResult<bool> {
    let mut opts = VerifyOptions {
        seed,
        mutation,
        ..Default::default()
    };
    for (name, value) in tolerance_overrides {
        opts.set_tolerance(name, *value)?;
    }
    let results = run_suite(&opts);
    for group in &results {
        let tag = if group.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {}: {}", group.name, group.detail);
    }
    Ok(all_passed(&results))
}

/// Runs `solve-control` across a swept parameter; one subdirectory per
/// value plus a summary `sweep.csv`.
pub fn run_sweep(
    config: &ExperimentConfig,
    param: &str,
    values: &[String],
    out: &Path,
) -> CliResult<Vec<RunReport>> {
    if values.is_empty() {
        return Err("sweep needs at least one value".into());
    }
    let mut reports = Vec::new();
    let mut rows = String::from("param,value,n_value,j_value,constraint_slack,norm_bound_ratio,status\n");
    for (index, value) in values.iter().enumerate() {
        let mut tree = serde_json::to_value(config)?;
        apply_override(&mut tree, &format!("{param}={value}"))?;
        let swept: ExperimentConfig = serde_json::from_value(tree)?;
        let warnings = swept
            .validate()
            .map_err(|errors| format!("sweep value '{value}': {}", errors.join("; ")))?;
        let run_dir = out.join("runs").join(index.to_string());
        let report = run_solve_control(&swept, warnings, &run_dir)?;
        let kkt = report.kkt.as_ref();
        rows.push_str(&format!(
            "{param},{value},{},{},{},{},{}\n",
            report.n_value.unwrap_or(f64::NAN),
            report.j_value.unwrap_or(f64::NAN),
            kkt.map(|k| k.constraint_slack).unwrap_or(f64::NAN),
            kkt.and_then(|k| k.norm_bound_ratio).unwrap_or(f64::NAN),
            report.status
        ));
        reports.push(report);
    }
    write_atomic(&out.join("sweep.csv"), rows.as_bytes())?;
    Ok(reports)
}
