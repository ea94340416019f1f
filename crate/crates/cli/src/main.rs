//! `tamper`: runs tampering experiments from TOML configs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid config or arguments,
//! 3 a comparator failed under `--check`.

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tamper_core::bounds::{Formula, FormulaArgs};
use tamper_core::experiment::{has_errors, run_experiment, validate_config, ExperimentConfig, Kind};
use tamper_core::Error;

#[derive(Parser)]
#[command(name = "tamper", version, about = "Online tampering attacks on Boolean functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure the bias an attacker induces on a Boolean function.
    Bias(RunArgs),
    /// Tamper test instances to increase a classifier's error.
    Evasion(RunArgs),
    /// Poison training streams with correctly labeled examples.
    Poison(RunArgs),
    /// Check the exact attack against its bounds on a suite of small functions.
    VerifyExact(RunArgs),
    /// Measure the tails of the Monte-Carlo estimators.
    EstimatorTails(RunArgs),
    /// Evaluate one closed-form bound.
    Bounds(BoundsArgs),
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (overrides `output` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 3 when a comparator fails.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    formula: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    s: Option<f64>,
}

enum Failure {
    Config(String),
    Runtime(String),
    Check,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidParameter { .. } | Error::UnknownLearner(_) | Error::CapExceeded { .. } => {
                Failure::Config(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn load(path: Option<&PathBuf>) -> Result<ExperimentConfig, Failure> {
    match path {
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            Error::Io(io) => Failure::Config(format!("cannot read {}: {io}", p.display())),
            other => Failure::from(other),
        }),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(kind: Kind, args: RunArgs) -> Result<(), Failure> {
    let mut config = load(args.config.as_ref())?;
    match config.kind {
        Some(k) if k != kind => {
            return Err(Failure::Config(format!("config is for `{}`, not `{}`", k.name(), kind.name())));
        }
        _ => config.kind = Some(kind),
    }
    if let Some(seed) = args.seed {
        config.params.seed = Some(seed);
    }
    if let Some(trials) = args.trials {
        config.params.trials = Some(trials);
    }
    if args.workers.is_some() {
        config.workers = args.workers;
    }
    if args.out.is_some() {
        config.output = args.out;
    }
    let diags = validate_config(&config);
    for d in &diags {
        eprintln!("{d}");
    }
    if has_errors(&diags) {
        return Err(Failure::Config("invalid config".into()));
    }
    let out = run_experiment(&config)?;
    println!("{}", out.digest);
    if let Some(dir) = &config.output {
        out.write_to(dir)?;
        println!("wrote {}", dir.display());
    }
    if args.check && !out.pass {
        return Err(Failure::Check);
    }
    Ok(())
}

fn bounds(args: BoundsArgs) -> Result<(), Failure> {
    let formula = Formula::parse(&args.formula).ok_or_else(|| {
        let known: Vec<&str> = Formula::ALL.iter().map(|f| f.name()).collect();
        Failure::Config(format!("unknown formula `{}` (known: {})", args.formula, known.join(", ")))
    })?;
    let a = FormulaArgs { n: Some(args.n), mu: args.mu, rho: args.rho, tau: args.tau, gamma: args.gamma, s: args.s };
    let value = formula.evaluate(&a)?;
    println!("{value}");
    Ok(())
}

fn validate(path: PathBuf) -> Result<(), Failure> {
    let config = load(Some(&path))?;
    let diags = validate_config(&config);
    for d in &diags {
        println!("{d}");
    }
    if has_errors(&diags) {
        return Err(Failure::Config(format!("{} is invalid", path.display())));
    }
    println!("ok");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Bias(a) => run(Kind::Bias, a),
        Command::Evasion(a) => run(Kind::Evasion, a),
        Command::Poison(a) => run(Kind::Poisoning, a),
        Command::VerifyExact(a) => run(Kind::VerifyExact, a),
        Command::EstimatorTails(a) => run(Kind::EstimatorTails, a),
        Command::Bounds(a) => bounds(a),
        Command::Validate { config } => validate(config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    // External objectives and learners panic on protocol failures.
    let result = panic::catch_unwind(AssertUnwindSafe(|| dispatch(cli)))
        .unwrap_or_else(|_| Err(Failure::Runtime("aborted after a panic".into())));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Check) => {
            eprintln!("check failed: a comparator did not hold");
            ExitCode::from(3)
        }
    }
}
