//! `dune-detect` command-line entry point.
//!
//! Exit codes: 0 on success, 2 on bad input or configuration (including
//! usage errors), 1 on runtime failures.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use output::OutFormat;

#[derive(Parser, Debug)]
#[command(name = "dune-detect", version, about = "Detection dataset, evaluation and budget tooling")]
struct Cli {
    /// Master seed; falls back to DUNE_DETECT_SEED, then to 0 (or the
    /// dataset descriptor's seed for `ingest`).
    #[arg(long, global = true, env = "DUNE_DETECT_SEED")]
    seed: Option<u64>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value = "json")]
    out_format: OutFormat,
    /// Write the report here instead of stdout; a `.meta.json` sidecar with
    /// the wall-clock timestamp is written next to it.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a raw dataset, split it and write it in the split layout.
    Ingest(commands::IngestArgs),
    /// Split a list of image ids.
    Split(commands::SplitArgs),
    /// Build an augmented dataset variant.
    Augment(commands::AugmentArgs),
    /// Score predictions against ground-truth labels.
    Eval(commands::EvalArgs),
    /// Parameter, FLOP and size budget of a model spec.
    Budget(commands::BudgetArgs),
    /// Time forward passes of a model spec.
    Bench(commands::BenchArgs),
    /// Train the toy grid detector, optionally with self-adversarial steps.
    TrainToy(commands::TrainToyArgs),
    /// Compare or aggregate report files.
    Report(commands::ReportArgs),
}

/// A failed command, by exit-code class.
#[derive(Debug)]
pub enum Failure {
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

pub trait Classify<T> {
    fn input(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Input(e.into()))
    }
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

/// What a command hands back for writing.
pub struct Outcome {
    pub result: Value,
    /// Replaces the flattened `key,value` CSV form.
    pub csv: Option<String>,
    /// Non-deterministic measurements kept out of the primary report.
    pub timing: Option<Value>,
}

impl Outcome {
    pub fn new(result: Value) -> Self {
        Self {
            result,
            csv: None,
            timing: None,
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Input(anyhow::anyhow!("--threads must be ≥ 1")));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().runtime()?;
    }
    let seed = cli.seed.unwrap_or(0);
    let (name, args, seed, outcome) = match &cli.command {
        Command::Ingest(a) => {
            let (used, o) = commands::ingest(a, cli.seed)?;
            ("ingest", output::to_value(a), used, o)
        }
        Command::Split(a) => ("split", output::to_value(a), seed, commands::split(a, seed)?),
        Command::Augment(a) => ("augment", output::to_value(a), seed, commands::augment(a, seed)?),
        Command::Eval(a) => ("eval", output::to_value(a), seed, commands::eval(a)?),
        Command::Budget(a) => ("budget", output::to_value(a), seed, commands::budget(a)?),
        Command::Bench(a) => ("bench", output::to_value(a), seed, commands::bench(a, seed)?),
        Command::TrainToy(a) => ("train-toy", output::to_value(a), seed, commands::train_toy(a, seed)?),
        Command::Report(a) => ("report", output::to_value(a), seed, commands::report(a)?),
    };
    let config = json!({ "command": name, "seed": seed, "args": args });
    let mut report = output::envelope(name, seed, config, outcome.result);

    match &cli.report {
        Some(path) => {
            let text = match cli.out_format {
                OutFormat::Json => output::json_text(&report),
                OutFormat::Csv => outcome.csv.unwrap_or_else(|| output::flat_csv(&report)),
            };
            output::write_text(path, &text).runtime()?;
            output::write_meta(path, name).runtime()?;
            if let Some(timing) = &outcome.timing {
                let side = output::sidecar_path(path, "timing.json");
                output::write_text(&side, &output::json_text(timing)).runtime()?;
            }
        }
        None => {
            if let Some(timing) = outcome.timing {
                report["timing"] = timing;
            }
            let text = match cli.out_format {
                OutFormat::Json => output::json_text(&report),
                OutFormat::Csv => outcome.csv.unwrap_or_else(|| output::flat_csv(&report)),
            };
            print!("{text}");
        }
    }
    Ok(())
}

/// Error chain joined with `: `, skipping causes already spelled out by
/// their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg = format!("{msg}: {c}");
        }
    }
    msg
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
    }
}
