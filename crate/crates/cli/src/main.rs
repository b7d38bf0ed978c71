//! Command-line front end: one subcommand per experiment, a config file for
//! everything else, and a handful of overrides that rewrite the config
//! before it runs.
//!
//! Exit codes: 0 on success, 2 for configuration problems (including a
//! config whose experiment disagrees with the subcommand), 3 when a
//! convergence gate fails, 1 for anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use quench_core::error::Error;
use quench_core::harness::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "quench", version, about = "Disordered spin system experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config, .toml or .json.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,

    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory; defaults to the config's out_dir, then to
    /// out/<experiment>.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override the config's replica count.
    #[arg(long)]
    replicas: Option<u32>,

    /// Override the exact-enumeration state cap.
    #[arg(long, value_name = "STATES")]
    exact_cap: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Boundary-variation functional vs box side.
    FlucDecay(RunArgs),
    /// Weighted boundary-variation functional vs box side.
    WeightedFluc(RunArgs),
    /// Disorder-averaged magnetization vs box side.
    MagDecay(RunArgs),
    /// Free-energy cost of a plane flip against its spin-wave budget.
    MwGap(RunArgs),
    /// Covering bounds and Gaussian integrals for perturbed convex functions.
    StabilitySuite(RunArgs),
    /// Probability that nested box scans leave a vertex uncovered.
    PartitionScan(RunArgs),
    /// Exactly known observable targets for the discrete models.
    ModelFacts(RunArgs),
    /// Sandwich estimate of the limiting observable mean.
    Alpha(RunArgs),
}

impl Command {
    fn experiment(&self) -> &'static str {
        match self {
            Command::FlucDecay(_) => "fluc-decay",
            Command::WeightedFluc(_) => "weighted-fluc",
            Command::MagDecay(_) => "mag-decay",
            Command::MwGap(_) => "mw-gap",
            Command::StabilitySuite(_) => "stability-suite",
            Command::PartitionScan(_) => "partition-scan",
            Command::ModelFacts(_) => "model-facts",
            Command::Alpha(_) => "alpha",
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::FlucDecay(a)
            | Command::WeightedFluc(a)
            | Command::MagDecay(a)
            | Command::MwGap(a)
            | Command::StabilitySuite(a)
            | Command::PartitionScan(a)
            | Command::ModelFacts(a)
            | Command::Alpha(a) => a,
        }
    }
}

fn load_and_override(experiment: &str, args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = harness::load_config(&args.config)?;
    if cfg.experiment != experiment {
        return Err(Error::config(format!(
            "config declares experiment {:?} but the {experiment} subcommand was invoked",
            cfg.experiment
        )));
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(replicas) = args.replicas {
        cfg.replicas = replicas;
    }
    if let Some(cap) = args.exact_cap {
        cfg.params.max_states = Some(cap);
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.display().to_string());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(experiment: &str, args: &RunArgs) -> Result<(), Error> {
    let cfg = load_and_override(experiment, args)?;
    let out = harness::run_experiment(&cfg)?;
    let dir = cfg
        .out_dir
        .clone()
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new("out").join(experiment));
    let paths = harness::write_outputs(&cfg, &out, &dir)?;
    for note in &out.notes {
        println!("{note}");
    }
    for p in &paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let experiment = cli.command.experiment();
    match run(experiment, cli.command.args()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e @ Error::Convergence(_)) => {
            eprintln!("{e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
