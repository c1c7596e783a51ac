//! Command-line front end of `otfs-sim`.

use crate::experiments::{run_ber, run_residuals, run_sparsity, run_xivar};
use crate::output::write_csv;
use crate::{HarnessError, SimConfig};
use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

/// OTFS turbo-equalizer experiments.
#[derive(Parser)]
#[command(name = "otfs-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// BER after each outer iteration over an Eb/N0 sweep.
    Ber(RunArgs),
    /// Mean solver residual per inner iteration with the Chebyshev bound.
    Residuals(RunArgs),
    /// Spread of the exact per-symbol xi over Eb/N0 and path counts.
    Xivar(RunArgs),
    /// Degree CDF of the approximate inverse factor.
    Sparsity(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Overrides master_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long)]
    threads: Option<usize>,
}

fn run(command: Command) -> Result<(), HarnessError> {
    let (args, which) = match command {
        Command::Ber(a) => (a, 0),
        Command::Residuals(a) => (a, 1),
        Command::Xivar(a) => (a, 2),
        Command::Sparsity(a) => (a, 3),
    };
    let mut cfg = SimConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(HarnessError::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let hash = cfg.hash();
    let out = BufWriter::new(File::create(&args.out)?);
    pool.install(|| match which {
        0 => write_csv(out, &hash, &run_ber(&cfg)?),
        1 => write_csv(out, &hash, &run_residuals(&cfg)?),
        2 => write_csv(out, &hash, &run_xivar(&cfg)?),
        _ => write_csv(out, &hash, &run_sparsity(&cfg)?),
    })
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("otfs-sim: {e}");
            e.exit_code()
        }
    }
}
