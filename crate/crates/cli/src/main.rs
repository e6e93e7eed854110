use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Parser, Subcommand};
use legalqa_cli::config::Config;
use legalqa_cli::manifest::Stage;
use legalqa_cli::pipeline::{Pipeline, PipelineError, StageRun};
use legalqa_core::metrics::FactorialCell;

#[derive(Parser)]
#[command(
    name = "legalqa",
    version,
    about = "Chunked question answering over long legal documents"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding the manifest and stage artifacts.
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,
    /// Rerun stages that are already done.
    #[arg(long, global = true)]
    force: bool,
    /// Configuration override, `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Shorthand for `--set corpus=PATH`.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a SQuAD-style or normalized corpus file.
    Ingest,
    /// Split documents into test and verification sets.
    Split,
    /// Cut documents into base and bridging chunks.
    Chunk,
    /// Build (and optionally rank) the instruction template.
    Prompts,
    /// Generate one answer per (document, category, chunk).
    Infer,
    /// Build per-category answer location distributions.
    Dbl,
    /// Pick one answer per (document, category).
    Select,
    /// Score selected answers against gold.
    Judge,
    /// Write the factorial report.
    Report {
        /// Another run's directory for a report cell, `cell=DIR`, where cell is
        /// basic, complex, augmented-basic or augmented-complex. Repeatable.
        #[arg(long = "cell", value_name = "CELL=DIR")]
        cells: Vec<String>,
    },
    /// Run every stage that is not done yet.
    RunAll,
}

/// Log sink writing to stderr and the run log.
struct Tee(Mutex<Option<File>>);

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        io::stderr().write_all(buf)?;
        if let Some(f) = self.0.lock().unwrap().as_mut() {
            f.write_all(buf)?;
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        if let Some(f) = self.0.lock().unwrap().as_mut() {
            f.flush()?;
        }
        io::stderr().flush()
    }
}

fn init_logging(run_dir: &PathBuf) {
    let file = std::fs::create_dir_all(run_dir)
        .and_then(|_| {
            File::options()
                .create(true)
                .append(true)
                .open(run_dir.join("run.log"))
        })
        .ok();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Pipe(Box::new(Tee(Mutex::new(file)))))
        .init();
}

fn parse_cells(raw: &[String]) -> Result<Vec<(FactorialCell, PathBuf)>, String> {
    raw.iter()
        .map(|c| {
            let (name, dir) = c
                .split_once('=')
                .ok_or_else(|| format!("malformed --cell `{c}`, expected cell=DIR"))?;
            Ok((name.parse()?, PathBuf::from(dir)))
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut overrides = Vec::new();
    if let Some(c) = &cli.corpus {
        overrides.push(format!("corpus={}", c.display()));
    }
    overrides.extend(cli.overrides.iter().cloned());
    let config = Config::resolve(cli.config.as_deref(), std::env::vars(), &overrides)?;
    let mut pipeline = Pipeline::open(&cli.run_dir, config, cli.force)?;
    let stage = match &cli.command {
        Command::Ingest => Stage::Ingest,
        Command::Split => Stage::Split,
        Command::Chunk => Stage::Chunk,
        Command::Prompts => Stage::Prompts,
        Command::Infer => Stage::Infer,
        Command::Dbl => Stage::Dbl,
        Command::Select => Stage::Select,
        Command::Judge => Stage::Judge,
        Command::Report { cells } => {
            let cells = parse_cells(cells)
                .map_err(|m| PipelineError::Config(legalqa_cli::config::ConfigError::Invalid(m)))?;
            pipeline = pipeline.with_report_cells(cells);
            Stage::Report
        }
        Command::RunAll => {
            pipeline.run_all()?;
            print!(
                "{}",
                std::fs::read_to_string(pipeline.path("report.txt")).unwrap_or_default()
            );
            return Ok(());
        }
    };
    let outcome = pipeline.run(stage)?;
    let status = &pipeline.manifest().stage_status[&stage];
    match (outcome, stage) {
        (_, Stage::Report) => print!(
            "{}",
            std::fs::read_to_string(pipeline.path("report.txt")).unwrap_or_default()
        ),
        (StageRun::Skipped, _) => println!("{stage}: already done (use --force to rerun)"),
        (StageRun::Ran, _) => println!("{stage}: {}", status.message.as_deref().unwrap_or("done")),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    init_logging(&cli.run_dir);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
