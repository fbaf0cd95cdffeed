use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use histitch::harness::{self, ExperimentConfig, Outputs};
use histitch::Result;

#[derive(Parser, Debug)]
#[command(name = "histitch", version, about = "Offline RL over observation histories: experiments and reproductions")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML experiment config; each subcommand has its own built-in default profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Concurrent grid points.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,

    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Print timings and per-run diagnostics to stderr.
    #[arg(long, global = true)]
    diag: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate a dataset file.
    GenData,
    /// Train and evaluate one algorithm.
    Solve,
    /// Grid over dataset sizes, seeds and algorithms.
    Sweep,
    /// Exact bisimulation metric and aggregation-bound report.
    BisimOracle,
    /// Filtered BC, CQL and CQL+bisim on the gridworld.
    ReproGridworld,
    /// SubOpt against dataset size for naive and aggregated PEVI.
    ReproScaling,
    /// Bisimulation loss curves of CQL+bisim training.
    ReproLosscurve,
}

impl Command {
    fn profile(self) -> &'static str {
        match self {
            Command::GenData | Command::Solve | Command::ReproGridworld => "gridworld",
            Command::Sweep | Command::ReproScaling => "scaling",
            Command::BisimOracle => "oracle",
            Command::ReproLosscurve => "losscurve",
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::profile(cli.command.profile())?,
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output = out.clone();
    }
    let workers = cli.workers;
    let outputs: Outputs = match cli.command {
        Command::GenData => harness::gen_data(&config)?,
        Command::Solve => harness::solve(&config)?.1,
        Command::Sweep => harness::sweep(&config, workers)?.1,
        Command::BisimOracle => harness::bisim_oracle(&config)?.1,
        Command::ReproGridworld => harness::repro_gridworld(&config, workers)?.1,
        Command::ReproScaling => harness::repro_scaling(&config, workers)?.1,
        Command::ReproLosscurve => harness::repro_losscurve(&config, workers)?.1,
    };
    outputs.write(&config.output, &config)?;
    println!("{}", outputs.summary);
    if cli.diag {
        for line in &outputs.timings {
            eprintln!("{line}");
        }
        eprintln!("wrote {} files to {}", outputs.files.len() + 1, config.output.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
