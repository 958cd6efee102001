//! Batch front-end for the policy-iteration engines.
//!
//! Exit codes: 0 success, 2 config error, 3 verification failure, 4 runtime
//! cap exceeded.

mod experiment;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use vigpi_core::dp::optimal_values;
use vigpi_core::engine::EngineConfig;
use vigpi_core::error::{DpError, EngineError};
use vigpi_core::verify::{certification_matrix, oracle_equivalence_suite, run_counterexample_suite, SuiteReport};
use vigpi_core::TabularPolicy;

use experiment::{apply_sweep_value, run_cells, ExperimentConfig, MdpSource};

#[derive(Debug)]
pub enum CliError {
    /// Malformed config, unresolvable MDP source, bad arguments.
    Config(String),
    /// An expected verification outcome did not hold.
    Verification(String),
    /// An iteration cap was exhausted mid-run.
    RuntimeCap(String),
}

impl CliError {
    fn from_engine(e: EngineError) -> Self {
        match &e {
            EngineError::Evaluation {
                source: DpError::IterationCapExceeded(_),
                ..
            } => CliError::RuntimeCap(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }

    fn from_engine_dp(e: DpError) -> Self {
        match e {
            DpError::IterationCapExceeded(_) => CliError::RuntimeCap(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Verification(_) => 3,
            CliError::RuntimeCap(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Verification(m) | CliError::RuntimeCap(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(name = "vigpi", version, about = "Exact policy-iteration engines, operator catalog, and certification suites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the engine runs described by a config file.
    Run(RunArgs),
    /// Cross a config with a list of values for one parameter.
    Sweep(SweepArgs),
    /// Execute the verification suites.
    Verify(VerifyArgs),
    /// Print optimal values and an optimal deterministic policy.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Parameter to sweep: beta, vi_beta, tau, n_samples, or k.
    #[arg(long)]
    param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
}

#[derive(Args)]
struct VerifyArgs {
    /// counterexamples | operators | oracle | all
    #[arg(long, default_value = "all")]
    suite: String,
    /// Instances for the oracle-equivalence suite.
    #[arg(long, default_value_t = 100)]
    instances: usize,
    /// Base seed for the oracle-equivalence suite.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct OracleArgs {
    /// Builtin name (two_action, branching, grid_world, random_layered) or a
    /// path to an MDP file.
    #[arg(long)]
    mdp: String,
    /// Horizon for time-augmenting a stationary MDP.
    #[arg(long)]
    horizon: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Oracle(args) => cmd_oracle(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code())
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let config = ExperimentConfig::load(&args.config)?;
    let cells = vec![(String::new(), config.engine.clone())];
    let rows = run_cells(&config, &cells)?;
    for row in &rows {
        println!("{}", row.to_csv_line());
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    if args.values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let config = ExperimentConfig::load(&args.config)?;
    let cells: Vec<(String, EngineConfig)> = args
        .values
        .iter()
        .map(|raw| {
            apply_sweep_value(&config.engine, &args.param, raw)
                .map(|engine| (format!("{}={raw}_", args.param), engine))
        })
        .collect::<Result<_, _>>()?;
    let rows = run_cells(&config, &cells)?;
    for row in &rows {
        println!("{}", row.to_csv_line());
    }
    Ok(())
}

fn print_suite(report: &SuiteReport) {
    for assertion in &report.assertions {
        let status = if assertion.passed { "PASS" } else { "FAIL" };
        println!("{status}  {}/{}: {}", report.name, assertion.name, assertion.detail);
    }
}

fn cmd_verify(args: VerifyArgs) -> Result<(), CliError> {
    let reports: Vec<SuiteReport> = match args.suite.as_str() {
        "counterexamples" => vec![run_counterexample_suite()],
        "operators" => vec![certification_matrix()],
        "oracle" => vec![oracle_equivalence_suite(args.instances, args.seed)],
        "all" => vec![
            run_counterexample_suite(),
            certification_matrix(),
            oracle_equivalence_suite(args.instances, args.seed),
        ],
        other => {
            return Err(CliError::Config(format!(
                "unknown suite `{other}` (expected counterexamples, operators, oracle, or all)"
            )))
        }
    };
    let mut all_passed = true;
    for report in &reports {
        print_suite(report);
        all_passed &= report.all_passed();
    }
    if all_passed {
        Ok(())
    } else {
        Err(CliError::Verification(
            "one or more expected outcomes did not hold".into(),
        ))
    }
}

#[derive(Serialize)]
struct OracleOutput {
    v_star: Vec<f64>,
    q_star: Vec<Vec<f64>>,
    policy: TabularPolicy,
}

fn cmd_oracle(args: OracleArgs) -> Result<(), CliError> {
    let mut source = if args.mdp.contains('/') || args.mdp.ends_with(".json") {
        MdpSource::from_path(PathBuf::from(&args.mdp))
    } else {
        MdpSource::builtin(&args.mdp)
    };
    source.augment_horizon = args.horizon;
    let mdp = source.resolve()?;
    if !mdp.is_layered() {
        return Err(CliError::Config(
            "stationary MDP: pass --horizon to time-augment before computing the oracle".into(),
        ));
    }
    let (q_star, v_star) = optimal_values(&mdp).map_err(CliError::from_engine_dp)?;
    let actions: Vec<usize> = (0..mdp.num_states())
        .map(|s| {
            (0..mdp.num_actions())
                .max_by(|&a, &b| {
                    q_star
                        .get(s, a)
                        .partial_cmp(&q_star.get(s, b))
                        .expect("finite values")
                })
                .expect("at least one action")
        })
        .collect();
    let output = OracleOutput {
        v_star: v_star.values().to_vec(),
        q_star: q_star.rows().to_vec(),
        policy: TabularPolicy::deterministic(mdp.num_actions(), &actions),
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&output).expect("oracle output serializes")
    );
    Ok(())
}
