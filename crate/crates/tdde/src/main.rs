use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tdde::{Command, Overrides};

#[derive(Parser)]
#[command(name = "tdde", version, about = "Time-dependent density estimation with binary classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the configured dataset or simulate sample paths.
    Simulate(Common),
    /// Train the classifier and save the density model.
    Train(Common),
    /// Evaluate log-densities on the configured space grid.
    DensityGrid(Common),
    /// Draw samples with ULA or HMC.
    Sample(Common),
    /// Compute OT, KS, L2 and AUC metrics.
    Eval(Common),
    /// Rank a labeled dataset by rarity and report the ROC.
    RareScore(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Experiment seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (command, args) = match cli.command {
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Train(a) => (Command::Train, a),
        Cmd::DensityGrid(a) => (Command::DensityGrid, a),
        Cmd::Sample(a) => (Command::Sample, a),
        Cmd::Eval(a) => (Command::Eval, a),
        Cmd::RareScore(a) => (Command::RareScore, a),
    };
    let ov = Overrides {
        out: args.out,
        seed: args.seed,
        threads: args.threads,
    };
    match tdde::run(command, &args.config, &ov) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
