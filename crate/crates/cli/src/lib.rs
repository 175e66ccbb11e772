//! `metapac` command-line harness.

pub mod commands;
pub mod coverage;
pub mod error;
pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use error::{CliError, CliResult};
use report::Format;

pub const DEFAULT_OUT: &str = "metapac-out";

#[derive(Debug, Parser)]
#[command(
    name = "metapac",
    version,
    about = "PAC-Bayes meta-learning bounds, checks and experiments"
)]
pub struct Cli {
    /// Master seed.
    #[arg(long, global = true, env = "METAPAC_SEED")]
    pub seed: Option<u64>,
    /// Output directory for written artifacts.
    #[arg(long, global = true, env = "METAPAC_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate meta-generalization bounds on given inputs.
    Bounds(commands::BoundsArgs),
    /// Check the concentration lemmas numerically.
    Lemmas(commands::LemmasArgs),
    /// Meta-train a hyper-posterior from a JSON config.
    Train(commands::TrainArgs),
    /// Adapt to meta-test tasks and report test loss and certified bounds.
    Eval(commands::EvalArgs),
    /// Count bound violations over independent environment draws.
    Coverage(commands::CoverageArgs),
    /// Merge eval reports into a comparison table.
    Report(commands::ReportArgs),
}

/// Global options after environment resolution.
#[derive(Debug, Clone)]
pub struct Globals {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub format: Format,
}

impl Globals {
    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }
}

pub fn dispatch(cli: Cli, stdout: &mut dyn Write) -> CliResult<()> {
    let g = Globals {
        seed: cli.seed.unwrap_or(0),
        out: cli.out,
        format: cli.format,
    };
    match cli.command {
        Command::Bounds(a) => commands::bounds(&a, &g, stdout),
        Command::Lemmas(a) => commands::lemmas(&a, &g, stdout),
        Command::Train(a) => commands::train(&a, &g, cli.seed, stdout),
        Command::Eval(a) => commands::eval(&a, &g, cli.seed, stdout),
        Command::Coverage(a) => commands::coverage(&a, &g, stdout),
        Command::Report(a) => commands::report(&a, &g, stdout),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{rendered}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{rendered}");
                    1
                }
            };
        }
    };
    match dispatch(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
