use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use condot_cli::commands::{self, Command};
use condot_cli::{config, exit_code, Result};

#[derive(Parser)]
#[command(name = "condot", version, about = "Conditional optimal transport experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Two-point instance where the joint and conditional distances differ.
    Counterexample(Common),
    /// Relaxed cost and condition leakage across β.
    BetaSweep(Common),
    /// Primal-dual gap of the conditional Kantorovich problem.
    DualityCheck(Common),
    /// Geodesic identity, condition velocity and kinetic energy.
    GeodesicCheck(Common),
    /// Sinkhorn particle flows on a labeled toy.
    ParticleFlow(Common),
    /// Train a conditional flow on the GMM posterior problem.
    GmmTrain(Common),
    /// Score a checkpoint against exact GMM posteriors.
    GmmEval(Common),
    /// Train and score every coupling over several seeds.
    GmmBench(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Print the default config and exit.
    #[arg(long)]
    print_defaults: bool,
}

fn dispatch<C: Command>(args: &Common) -> Result<bool> {
    if args.print_defaults {
        println!("{}", config::print_defaults::<C::Config>()?);
        return Ok(true);
    }
    let cfg: C::Config = config::load(args.config.as_deref(), args.seed)?;
    let outcome = commands::execute::<C>(cfg, &args.out, args.jobs)?;
    println!("{}", outcome.dir.path().display());
    for f in &outcome.failures {
        eprintln!("check failed: {f}");
    }
    Ok(outcome.failures.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::Counterexample(a) => dispatch::<commands::Counterexample>(a),
        Cmd::BetaSweep(a) => dispatch::<commands::BetaSweep>(a),
        Cmd::DualityCheck(a) => dispatch::<commands::DualityCheck>(a),
        Cmd::GeodesicCheck(a) => dispatch::<commands::GeodesicCheck>(a),
        Cmd::ParticleFlow(a) => dispatch::<commands::ParticleFlow>(a),
        Cmd::GmmTrain(a) => dispatch::<commands::GmmTrain>(a),
        Cmd::GmmEval(a) => dispatch::<commands::GmmEval>(a),
        Cmd::GmmBench(a) => dispatch::<commands::GmmBench>(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
