//! Argument parsing for the `twincg` experiment runner.

// NaN must fail these comparisons
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Duration;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use twincg::experiment::{ExperimentSpec, MatrixSource};
use twincg::resilience::{ExecMode, ResilienceConfig, Variant};

#[derive(Debug, Parser)]
#[command(
    name = "twincg",
    version,
    about = "Fault-injection experiments for replicated conjugate gradient solvers",
    args_conflicts_with_subcommands = true
)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run repeated solves and report recovery statistics (default).
    Run(RunArgs),
    /// Compare analytic window-fault probabilities with a Monte Carlo estimate.
    Probe(ProbeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Standard,
    OnlineAbft,
    Twincg,
    Tmr,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PrecondArg {
    None,
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Concurrent,
    Simulated,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Matrix Market file, `poisson2d:K`, or `poisson3d:K`.
    #[arg(long)]
    matrix: Option<String>,
    #[arg(long, value_enum, default_value = "all")]
    variant: VariantArg,
    /// Mean faults per iteration per replica.
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Inclusive range of bit positions eligible for flips.
    #[arg(long, value_name = "LO:HI", default_value = "0:63", value_parser = parse_bits)]
    bits: (u32, u32),
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 60)]
    reps: usize,
    /// Detection interval in iterations.
    #[arg(long, default_value_t = 5)]
    d: usize,
    /// Checkpoint interval in iterations.
    #[arg(long, default_value_t = 10)]
    ckpt: usize,
    #[arg(long, default_value_t = 1e-15)]
    eps1: f64,
    #[arg(long, default_value_t = 1e-10)]
    eps2: f64,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 6000)]
    max_iter: usize,
    #[arg(long, value_enum, default_value = "jacobi")]
    precond: PrecondArg,
    /// Per-run CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "concurrent")]
    mode: ModeArg,
    /// Rendezvous timeout in seconds (concurrent mode).
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_bits(s: &str) -> Result<(u32, u32), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected LO:HI")?;
    let lo: u32 = lo
        .trim()
        .parse()
        .map_err(|_| format!("invalid bit `{lo}`"))?;
    let hi: u32 = hi
        .trim()
        .parse()
        .map_err(|_| format!("invalid bit `{hi}`"))?;
    if lo > hi || hi > 63 {
        return Err(format!(
            "bit range {lo}:{hi} must satisfy 0 <= LO <= HI <= 63"
        ));
    }
    Ok((lo, hi))
}

/// A fully parsed command line.
#[derive(Debug, Clone)]
pub enum Invocation {
    Run {
        spec: ExperimentSpec,
        out: Option<PathBuf>,
    },
    Probe {
        lambda: f64,
        d: usize,
        samples: usize,
        seed: u64,
    },
}

/// Parses `argv` (including the program name). Errors carry clap's usage
/// exit code.
pub fn parse_args<I, T>(argv: I) -> Result<Invocation, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    match cli.command {
        Some(Command::Probe(p)) => {
            if !(p.lambda >= 0.0) || p.d == 0 || p.samples == 0 {
                return Err(usage("probe needs lambda >= 0, d >= 1, samples >= 1"));
            }
            Ok(Invocation::Probe {
                lambda: p.lambda,
                d: p.d,
                samples: p.samples,
                seed: p.seed,
            })
        }
        Some(Command::Run(args)) => run_invocation(args),
        None => run_invocation(cli.run),
    }
}

fn usage(msg: impl std::fmt::Display) -> clap::Error {
    Cli::command().error(ErrorKind::ValueValidation, msg)
}

fn run_invocation(args: RunArgs) -> Result<Invocation, clap::Error> {
    let Some(matrix) = args.matrix else {
        return Err(
            Cli::command().error(ErrorKind::MissingRequiredArgument, "--matrix is required")
        );
    };
    let matrix: MatrixSource = matrix.parse().map_err(usage)?;
    let mut spec = ExperimentSpec::new(matrix);
    spec.variants = match args.variant {
        VariantArg::All => Variant::ALL.to_vec(),
        VariantArg::Standard => vec![Variant::StandardCg],
        VariantArg::OnlineAbft => vec![Variant::OnlineAbft],
        VariantArg::Twincg => vec![Variant::TwinCg],
        VariantArg::Tmr => vec![Variant::Tmr],
    };
    spec.precond = args.precond == PrecondArg::Jacobi;
    spec.lambda = args.lambda;
    spec.bits = args.bits;
    spec.seed = args.seed;
    spec.reps = args.reps;
    spec.cfg = ResilienceConfig {
        d: args.d,
        checkpoint_interval: args.ckpt,
        eps1: args.eps1,
        eps2: args.eps2,
        tol: args.tol,
        max_iter: args.max_iter,
    };
    if !(args.timeout > 0.0 && args.timeout.is_finite()) {
        return Err(usage("--timeout must be a positive number of seconds"));
    }
    spec.mode = match args.mode {
        ModeArg::Simulated => ExecMode::Simulated,
        ModeArg::Concurrent => ExecMode::Concurrent {
            timeout: Duration::from_secs_f64(args.timeout),
        },
    };
    spec.validate().map_err(usage)?;
    Ok(Invocation::Run {
        spec,
        out: args.out,
    })
}
