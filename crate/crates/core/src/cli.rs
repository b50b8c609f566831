//! Command-line adapter over [`crate::trainer`].

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Result;
use crate::trainer::{load_job, run, JobKind, RunLog};

#[derive(Debug, Parser)]
#[command(name = "unitprompt", version, about = "Deep prompt tuning of a frozen unit-to-unit transformer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct JobArgs {
    /// JSON job config; relative paths inside it resolve against its directory.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Dotted `key=value` overrides applied after the file is parsed,
    /// e.g. `tune.steps=200` or `decode.mode="sample"`.
    #[arg(value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic task corpus (manifests plus unit files).
    GenCorpus(JobArgs),
    /// Pretrain a backbone with span denoising and save its checkpoint.
    Pretrain(JobArgs),
    /// Tune prompts against a frozen backbone and save them.
    Tune(JobArgs),
    /// Decode a corpus split into a hypotheses units file.
    Generate(JobArgs),
    /// Score hypotheses against a split and write a metric report.
    Eval(JobArgs),
    /// Aggregate metric reports into one table.
    Report(JobArgs),
}

impl Command {
    fn parts(&self) -> (JobKind, &JobArgs) {
        match self {
            Command::GenCorpus(a) => (JobKind::GenCorpus, a),
            Command::Pretrain(a) => (JobKind::Pretrain, a),
            Command::Tune(a) => (JobKind::Tune, a),
            Command::Generate(a) => (JobKind::Generate, a),
            Command::Eval(a) => (JobKind::Eval, a),
            Command::Report(a) => (JobKind::Report, a),
        }
    }
}

pub fn execute(cmd: &Command) -> Result<RunLog> {
    let (kind, args) = cmd.parts();
    let (job, source) = load_job(&args.config, &args.overrides, Some(kind))?;
    run(&job, &source)
}

/// One stable line per job: kind, final metrics and artifacts. Timings stay
/// in the run log.
pub fn summary(log: &RunLog) -> String {
    let metrics: Vec<String> = log.final_metrics.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let artifacts: Vec<String> = log.artifacts.iter().map(|p| p.display().to_string()).collect();
    format!(
        "{} ok: {} [{}]",
        log.kind.name(),
        metrics.join(" "),
        artifacts.join(", ")
    )
}

/// Full entry point; returns the process exit code.
pub fn main_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(log) => {
            let _ = writeln!(out, "{}", summary(&log));
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
