use clap::{Parser, Subcommand};
use seedbank::config::parse_config;
use seedbank::run::{run, Command as RunCommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Seed-bank population simulators: forward diffusion and Volterra paths,
/// the discrete Wright-Fisher model, dual jump processes, and duality checks.
#[derive(Parser)]
#[command(name = "seedbank", version, about)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for CSV/JSON artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override sim.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override sim.reps (and wf.reps).
    #[arg(long)]
    reps: Option<u64>,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Euler-Maruyama paths or ensembles of the seed-bank diffusion.
    Forward(CommonArgs),
    /// Stochastic Volterra paths of the active frequency alone.
    Sve(CommonArgs),
    /// The discrete-time Wright-Fisher model, time rescaled by N.
    Wf(CommonArgs),
    /// One trajectory of the block-counting dual jump process.
    Dual(CommonArgs),
    /// One trajectory of the marked-partition coalescent.
    Coalescent(CommonArgs),
    /// Monte Carlo check of the moment duality (exit 1 on failure).
    DualityCheck(CommonArgs),
    /// Scaling-limit check of the embedded Wright-Fisher mean (exit 1 on failure).
    ScalingCheck(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        CliCommand::Forward(a) => (RunCommand::Forward, a),
        CliCommand::Sve(a) => (RunCommand::Sve, a),
        CliCommand::Wf(a) => (RunCommand::Wf, a),
        CliCommand::Dual(a) => (RunCommand::Dual, a),
        CliCommand::Coalescent(a) => (RunCommand::Coalescent, a),
        CliCommand::DualityCheck(a) => (RunCommand::DualityCheck, a),
        CliCommand::ScalingCheck(a) => (RunCommand::ScalingCheck, a),
    };
    match execute(command, args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("seedbank {}: {err:#}", command.name());
            ExitCode::from(2)
        }
    }
}

fn execute(command: RunCommand, args: &CommonArgs) -> anyhow::Result<i32> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", args.config.display()))?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = args.seed {
        cfg.sim.seed = seed;
    }
    if let Some(reps) = args.reps {
        cfg.sim.reps = reps;
        if cfg.wf.reps.is_some() {
            cfg.wf.reps = Some(reps);
        }
    }
    run(command, &cfg, &args.out)
}
