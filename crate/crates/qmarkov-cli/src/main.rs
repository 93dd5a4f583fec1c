//! Command-line frontend for finite quantum Markov chains described by JSON
//! chain specs.
//!
//! Exit codes: 0 when every reported check passes, 1 when any check fails
//! (including a classification other than MarkovState), 2 for input errors,
//! which are printed to stderr as `{"code", "message"}`.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::InputError;
use report::Format;

#[derive(Parser)]
#[command(
    name = "qmarkov",
    version,
    about = "Verify, evaluate, and classify finite quantum Markov chains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-kernel verification suite plus boundary and initial-state gates
    Verify(Common),
    /// Correlation values with a stabilization profile over growing horizons
    Eval(EvalArgs),
    /// Construct the boundary sequence and report its validity checks
    Boundary(Common),
    /// Name the chain's class: MarkovState, MarkovChain, or Indeterminate
    Classify(Common),
    /// verify + boundary + classify (+ eval when observables are given)
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// Chain spec (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Pass threshold for stabilization, martingale, projectivity, and
    /// compatibility judgments; library-internal tolerances come from the
    /// config file's `tolerances` block
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Overrides the config file's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output format on stdout
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Observables file (JSON): one site-local matrix per site from site 0
    #[arg(long)]
    observables: PathBuf,
    /// Largest horizon extension in the stabilization profile
    #[arg(long, default_value_t = 3)]
    horizon: usize,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// Optional observables file; adds an eval section to the report
    #[arg(long)]
    observables: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    horizon: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
    Md,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Format {
        match f {
            FormatArg::Json => Format::Json,
            FormatArg::Csv => Format::Csv,
            FormatArg::Md => Format::Md,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    match run(&cli) {
        Ok((mut report, format)) => {
            report.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
            print!("{}", report.render(format));
            if report.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({ "code": e.code, "message": e.message })
            );
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<(report::Report, Format), InputError> {
    match &cli.command {
        Command::Verify(c) => {
            let built = load(c)?;
            Ok((commands::cmd_verify(&built)?, c.format.into()))
        }
        Command::Eval(a) => {
            let built = load(&a.common)?;
            let file = config::parse_observables(&a.observables)?;
            let obs = commands::observables_from_rows(&built, &file.observables)?;
            let k_max = file.horizon_extension.unwrap_or(a.horizon);
            Ok((
                commands::cmd_eval(&built, obs, k_max, a.common.tol)?,
                a.common.format.into(),
            ))
        }
        Command::Boundary(c) => {
            let built = load(c)?;
            Ok((commands::cmd_boundary(&built)?, c.format.into()))
        }
        Command::Classify(c) => {
            let built = load(c)?;
            Ok((commands::cmd_classify(&built, c.tol)?, c.format.into()))
        }
        Command::Report(a) => {
            let built = load(&a.common)?;
            let obs = match &a.observables {
                Some(path) => {
                    let file = config::parse_observables(path)?;
                    Some(commands::observables_from_rows(&built, &file.observables)?)
                }
                None => None,
            };
            Ok((
                commands::cmd_report(&built, obs, a.horizon, a.common.tol)?,
                a.common.format.into(),
            ))
        }
    }
}

fn load(c: &Common) -> Result<config::Built, InputError> {
    if !c.tol.is_finite() || c.tol <= 0.0 {
        return Err(InputError::new(
            "schema",
            format!("--tol must be positive and finite, got {}", c.tol),
        ));
    }
    let cfg = config::parse_spec(&c.config)?;
    config::build(&cfg, c.seed)
}
