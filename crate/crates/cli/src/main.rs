use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use stochact::verify::Mutation;
use stochact_cli::config::{load_config, ExperimentConfig};
use stochact_cli::runner;

/// Minimum-norm controls for a stochastic heat equation on a scenario tree,
/// with optimal actuator placement and level-set rounding.
#[derive(Parser)]
#[command(name = "stochact", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Configuration file (TOML, or JSON by extension); defaults apply when
    /// omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `outputs.directory` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed; overrides `solver.seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-path configuration override, e.g. `control.epsilon=0.2`
    /// (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the minimum-norm control problem with a fixed actuator shape.
    SolveControl(CommonArgs),
    /// Optimize the relaxed actuator density and round it to an indicator.
    OptimizeActuator(CommonArgs),
    /// Round a stored actuation profile (H.csv) to an indicator actuator.
    RoundLevelset {
        #[command(flatten)]
        common: CommonArgs,
        /// Profile produced by a previous `optimize-actuator` run.
        #[arg(long = "h-file")]
        h_file: PathBuf,
    },
    /// Estimate the observability constant (a logged lower bound).
    EstimateObs {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Run the desk-scale invariant suite; nonzero exit on failure.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Inject a deliberate defect ("flip-martingale-sign") to
        /// demonstrate suite sensitivity.
        #[arg(long)]
        mutate: Option<String>,
    },
    /// Re-run solve-control across a swept parameter.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Dotted configuration path to sweep, e.g. `control.epsilon`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
    },
}

fn prepare(common: &CommonArgs) -> Result<(ExperimentConfig, Vec<String>, PathBuf), ExitCode> {
    let (mut config, warnings) =
        load_config(common.config.as_deref(), &common.overrides).map_err(|e| {
            eprintln!("{e}");
            ExitCode::from(2)
        })?;
    if let Some(seed) = common.seed {
        config.solver.seed = seed;
    }
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.outputs.directory));
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    Ok((config, warnings, out))
}

fn finish(result: runner::CliResult<stochact_cli::report::RunReport>, out: &PathBuf) -> ExitCode {
    match result {
        Ok(report) => {
            println!(
                "{}: status {}, report written to {}",
                report.command,
                report.status,
                out.join("report.json").display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::SolveControl(common) => match prepare(&common) {
            Ok((config, warnings, out)) => {
                finish(runner::run_solve_control(&config, warnings, &out), &out)
            }
            Err(code) => code,
        },
        Command::OptimizeActuator(common) => match prepare(&common) {
            Ok((config, warnings, out)) => {
                finish(runner::run_optimize_actuator(&config, warnings, &out), &out)
            }
            Err(code) => code,
        },
        Command::RoundLevelset { common, h_file } => match prepare(&common) {
            Ok((config, warnings, out)) => finish(
                runner::run_round_levelset(&config, warnings, &h_file, &out),
                &out,
            ),
            Err(code) => code,
        },
        Command::EstimateObs { common, trials } => match prepare(&common) {
            Ok((config, warnings, out)) => finish(
                runner::run_estimate_obs(&config, warnings, trials, &out),
                &out,
            ),
            Err(code) => code,
        },
        Command::Verify { common, mutate } => {
            // verify.* overrides route to suite tolerances, the rest to the
            // configuration (which supplies the seed)
            let mut tolerance_overrides = Vec::new();
            let mut config_overrides = Vec::new();
            for spec in &common.overrides {
                if let Some(rest) = spec.strip_prefix("verify.") {
                    match rest.split_once('=') {
                        Some((name, value)) => match value.parse::<f64>() {
                            Ok(v) => tolerance_overrides.push((name.to_string(), v)),
                            Err(_) => {
                                eprintln!("error: override '{spec}' needs a numeric value");
                                return ExitCode::from(2);
                            }
                        },
                        None => {
                            eprintln!("error: override '{spec}' is not of the form key=value");
                            return ExitCode::from(2);
                        }
                    }
                } else {
                    config_overrides.push(spec.clone());
                }
            }
            let stripped = CommonArgs {
                config: common.config,
                out: common.out,
                seed: common.seed,
                overrides: config_overrides,
            };
            let (config, _, _) = match prepare(&stripped) {
                Ok(v) => v,
                Err(code) => return code,
            };
            let mutation = match mutate.as_deref() {
                None => Mutation::None,
                Some("flip-martingale-sign") => Mutation::FlipMartingaleSign,
                Some(other) => {
                    eprintln!("error: unknown mutation '{other}'");
                    return ExitCode::from(2);
                }
            };
            match runner::run_verify(config.solver.seed, &tolerance_overrides, mutation) {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => ExitCode::FAILURE,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Sweep {
            common,
            param,
            values,
        } => match prepare(&common) {
            Ok((config, _, out)) => {
                let values: Vec<String> =
                    values.split(',').map(|v| v.trim().to_string()).collect();
                match runner::run_sweep(&config, &param, &values, &out) {
                    Ok(reports) => {
                        println!(
                            "sweep over {param}: {} runs, summary in {}",
                            reports.len(),
                            out.join("sweep.csv").display()
                        );
                        ExitCode::SUCCESS
                    }
                    Err(e) => {
                        eprintln!("error: {e}");
                        ExitCode::FAILURE
                    }
                }
            }
            Err(code) => code,
        },
    }
}
