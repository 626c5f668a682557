use clap::{Args, Parser, Subcommand};
use logspline::experiment::{run_to_dir, ExperimentConfig, ExperimentKind};
use logspline::Error;
use std::path::PathBuf;
use std::process::ExitCode;

/// Log-spline density experiments under model-averaging priors.
#[derive(Parser)]
#[command(name = "logspline", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (sectioned key=value text).
    #[arg(long)]
    config: PathBuf,
    /// Root seed; overrides the config's seed when given.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for results.csv, summary.txt and the resolved config.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Contraction-rate experiment with fitted exponent.
    Rates(RunArgs),
    /// Bayes-factor trajectories against the parametric null.
    Bf(RunArgs),
    /// Numeric audit of the contraction conditions.
    Audit(RunArgs),
    /// Entropy and ball-volume tables.
    Entropy(RunArgs),
    /// Re-measure the calibration constants.
    Calibrate(RunArgs),
}

fn execute(args: &RunArgs, kind: ExperimentKind) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if cfg.kind != kind {
        return Err(Error::Config(format!(
            "config declares kind {:?} but the {:?} subcommand was invoked",
            cfg.kind.as_str(),
            kind.as_str()
        )));
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = run_to_dir(&cfg, &args.out, args.jobs)?;
    print!("{}", out.summary);
    if !out.table.failures.is_empty() {
        eprintln!("{} cell(s) failed; see summary", out.table.failures.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, kind) = match &cli.command {
        Command::Rates(a) => (a, ExperimentKind::Rates),
        Command::Bf(a) => (a, ExperimentKind::Bf),
        Command::Audit(a) => (a, ExperimentKind::Audit),
        Command::Entropy(a) => (a, ExperimentKind::Entropy),
        Command::Calibrate(a) => (a, ExperimentKind::Calibrate),
    };
    match execute(args, kind) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(other) => {
            eprintln!("error: {other}");
            ExitCode::from(2)
        }
    }
}
