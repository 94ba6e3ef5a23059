use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use coexsim::config::{parse_config, Mode, ScenarioConfig};
use coexsim::experiment::{self, ExperimentError, MetricsRow};

#[derive(Parser)]
#[command(name = "coexsim", version, about = "NR-U / Wi-Fi coexistence simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the protocol roster over node counts
    Compare(Common),
    /// Sweep PC3 counts over fixed skip levels and dynamic targets
    Skip(Common),
    /// Train gNB/AP agents; writes the checkpoint and a learning curve
    Train(Common),
    /// Evaluate checkpointed agents greedily
    Eval(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML); defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for per-run event traces
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Base seed
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeds per configuration
    #[arg(long)]
    runs: Option<u32>,
    /// Worker threads (0 = all cores)
    #[arg(long)]
    parallel: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}

fn load(mode: Mode, c: &Common) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.clone(), source })?;
            parse_config(&text).map_err(ExperimentError::from)?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(r) = c.runs {
        cfg.runs = r;
    }
    if let Some(p) = c.parallel {
        cfg.parallel = p;
    }
    if c.out.is_some() {
        cfg.out = c.out.clone();
    }
    if c.trace.is_some() {
        cfg.trace = c.trace.clone();
    }
    cfg.validate().map_err(ExperimentError::from)?;
    Ok(cfg.for_mode(mode).map_err(ExperimentError::from)?)
}

fn with_output(
    out: Option<&Path>,
    f: impl FnOnce(&mut dyn Write) -> Result<(), ExperimentError>,
) -> Result<(), ExperimentError> {
    match out {
        Some(path) => {
            let file = fs::File::create(path).map_err(|source| ExperimentError::Io { path: path.into(), source })?;
            let mut w = io::BufWriter::new(file);
            f(&mut w)?;
            w.flush().map_err(|source| ExperimentError::Io { path: path.into(), source })
        }
        None => f(&mut io::stdout().lock()),
    }
}

fn emit(cfg: &ScenarioConfig, rows: &[MetricsRow]) -> Result<(), ExperimentError> {
    with_output(cfg.out.as_deref(), |w| experiment::write_rows(w, rows))?;
    info!("{} rows written", rows.len());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Compare(c) => {
            let cfg = load(Mode::Compare, &c)?;
            emit(&cfg, &experiment::run_compare(&cfg)?)?;
        }
        Command::Skip(c) => {
            let cfg = load(Mode::Skip, &c)?;
            emit(&cfg, &experiment::run_skip(&cfg)?)?;
        }
        Command::Train(c) => {
            let cfg = load(Mode::Train, &c)?;
            let trained = experiment::run_train(&cfg)?;
            let path = experiment::save_checkpoint(&cfg, &trained.entries)?;
            info!("checkpoint written to {}", path.display());
            with_output(cfg.out.as_deref(), |w| trained.write_curve(w))?;
        }
        Command::Eval(c) => {
            let cfg = load(Mode::Eval, &c)?;
            emit(&cfg, &experiment::run_eval(&cfg)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
