use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ktune::commands::{cmd_enumerate, cmd_stats, cmd_tune};

/// Auto-tuner for parameterized compute kernels.
#[derive(Debug, Parser)]
#[command(name = "ktune", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run the job's search once and write the results CSV.
    Tune {
        job: PathBuf,
        /// Results CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the job's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Repeat the job's search and write best-of-run statistics.
    Stats {
        job: PathBuf,
        #[arg(long)]
        runs: usize,
        /// First seed; run i uses base + i. Defaults to the job's seed.
        #[arg(long)]
        base_seed: Option<u64>,
        /// Statistics CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent searches, honoured only for backends safe to share.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Report search-space sizes.
    Enumerate {
        job: PathBuf,
        /// Print every valid configuration.
        #[arg(long)]
        list: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KTUNE_LOG", "warn")).init();
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let outcome = match cli.command {
        Cmd::Tune { job, out: path, seed } => cmd_tune(&job, path.as_deref(), seed, &mut out).map(drop),
        Cmd::Stats {
            job,
            runs,
            base_seed,
            out: path,
            parallel,
        } => cmd_stats(&job, runs, base_seed, path.as_deref(), parallel, &mut out).map(drop),
        Cmd::Enumerate { job, list } => cmd_enumerate(&job, list, &mut out),
    };
    let _ = out.flush();
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
