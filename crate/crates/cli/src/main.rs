mod manifest;
mod reference;
mod runs;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::manifest::Manifest;

#[derive(Parser, Debug)]
#[command(name = "permcmc", version, about = "Permutation MCMC experiments and verification suites")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check that a kernel's permutation map is one-to-one, invertible and volume preserving.
    Verify(verify::VerifyArgs),
    /// Parallel Gibbs sampling for the toroidal Ising model.
    Ising(runs::IsingArgs),
    /// Parallel Gibbs or Metropolis sampling for the truncated bivariate normal.
    Truncnorm(runs::TruncNormArgs),
    /// Improved importance sampling on the banana-shaped test distribution.
    Istest(runs::IsTestArgs),
    /// Rerun the experiment recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write outputs here instead of the directory named in the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    /// A verification check did not hold.
    Check(String),
    /// Bad flags, unreadable input or an invalid configuration.
    Usage(String),
    /// Anything that went wrong while running.
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) | Failure::Runtime(_) => 1,
            Failure::Usage(_) => 2,
        }
    }
}

impl From<permcmc::Error> for Failure {
    fn from(e: permcmc::Error) -> Self {
        use permcmc::Error as E;
        match e {
            E::Parse { .. } | E::InvalidConfig(_) | E::InvalidKernel(_) | E::InvalidTarget(_) | E::EnumerationTooLarge { .. } => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Verify(args) => verify::run(&args),
        Command::Ising(args) => runs::ising(&args),
        Command::Truncnorm(args) => runs::truncnorm(&args),
        Command::Istest(args) => runs::istest(&args),
        Command::Replay(args) => replay(&args),
    }
}

fn replay(args: &ReplayArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.manifest)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", args.manifest.display())))?;
    let mut manifest = Manifest::parse(&text).map_err(Failure::Usage)?;
    if let Some(out) = &args.out {
        manifest.set("out", out.display().to_string());
    }
    let argv = manifest.to_args().map_err(Failure::Usage)?;
    let cli = Cli::try_parse_from(argv).map_err(|e| Failure::Usage(format!("manifest does not describe a valid run: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Failure::Usage("a manifest cannot describe a replay".into()));
    }
    dispatch(cli.command)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Check(msg) => eprintln!("check failed: {msg}"),
                Failure::Usage(msg) => eprintln!("error: {msg}"),
                Failure::Runtime(msg) => eprintln!("error: {msg}"),
            }
            ExitCode::from(f.code())
        }
    }
}
