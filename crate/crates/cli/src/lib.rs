//! Command-line front end: argument parsing, configuration resolution and
//! dispatch to the core library.

pub mod config;
mod data;
mod probe;

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use config::{config_hash, FileConfig};

#[derive(Debug, Parser)]
#[command(
    name = "t3kit",
    version,
    about = "Temporal-reasoning QA synthesis, dataset mixing and probing toolkit"
)]
pub struct Cli {
    /// TOML config file; flags override it, and it overrides the environment.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: available parallelism). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a caption pool from a corpus JSONL file.
    Ingest(data::IngestArgs),
    /// Write a procedural caption corpus for offline runs.
    DemoCorpus(data::DemoCorpusArgs),
    /// Generate QA samples of one family.
    Generate(data::GenerateArgs),
    /// Check samples structurally.
    Verify(data::VerifyArgs),
    /// Per-family dataset statistics.
    Stats(data::StatsArgs),
    /// Withhold a fixed number of samples per family for validation.
    Split(data::SplitArgs),
    /// Mix JSONL sources by recipe.
    Mix(data::MixArgs),
    /// Convert samples to instruction-tuning records.
    Emit(data::EmitArgs),
    /// Score multiple-choice replies against gold samples.
    Score(data::ScoreArgs),
    /// Synthetic-video probing study.
    #[command(subcommand)]
    Probe(probe::ProbeCommand),
}

/// Common options of randomized commands.
#[derive(Debug, Clone, Args)]
pub struct SeedArg {
    /// Random seed (default: config file, then T3KIT_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
}

pub struct Ctx {
    pub file: FileConfig,
}

/// Metadata written next to every output so it can be regenerated.
#[derive(Debug, Serialize)]
pub struct Meta<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub seed: Option<u64>,
    pub config_hash: String,
    pub config: &'a Value,
    pub report: &'a Value,
}

pub fn meta_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    out.with_file_name(name)
}

/// Writes `<out>.meta.json` (or `meta.json` inside an output directory).
pub fn write_meta(out: &Path, command: &str, seed: Option<u64>, config: &Value, report: &Value) -> Result<()> {
    let meta = Meta {
        tool: "t3kit",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        config_hash: config_hash(config),
        config,
        report,
    };
    let path = if out.is_dir() {
        out.join("meta.json")
    } else {
        meta_path(out)
    };
    let text = serde_json::to_string_pretty(&meta)? + "\n";
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

/// A buffered writer to `path`, or stdout.
pub fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            Box::new(BufWriter::new(
                fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
            ))
        }
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

pub fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

/// Raised when a command ran but its checks failed.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct CheckFailed(pub String);

fn error_kind(e: &anyhow::Error) -> &'static str {
    use t3kit_core::{corpus::CorpusError, mixer::MixError, probelab::ProbeError, provider::ProviderError};
    use t3kit_core::{quality::QualityError, synth::SynthError};
    for cause in e.chain() {
        if cause.is::<CorpusError>() {
            return "corpus";
        }
        if cause.is::<SynthError>() {
            return "generate";
        }
        if cause.is::<ProviderError>() {
            return "provider";
        }
        if cause.is::<QualityError>() {
            return "quality";
        }
        if cause.is::<MixError>() {
            return "mix";
        }
        if cause.is::<ProbeError>() {
            return "probe";
        }
        if cause.is::<CheckFailed>() {
            return "check_failed";
        }
        if cause.is::<io::Error>() {
            return "io";
        }
        if cause.is::<serde_json::Error>() {
            return "format";
        }
    }
    "error"
}

pub fn execute(cli: Cli) -> Result<()> {
    // `probe train --config` names a probe training file, not the tool config.
    let probe_train = matches!(cli.command, Command::Probe(probe::ProbeCommand::Train(_)));
    let file = match &cli.config {
        Some(p) if !probe_train => FileConfig::load(p)?,
        _ => FileConfig::default(),
    };
    let jobs = cli
        .jobs
        .or(file.jobs)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building worker pool")?;
    let ctx = Ctx { file };
    pool.install(|| match cli.command {
        Command::Ingest(a) => data::ingest(&ctx, a),
        Command::DemoCorpus(a) => data::demo_corpus(&ctx, a),
        Command::Generate(a) => data::generate(&ctx, a),
        Command::Verify(a) => data::verify(&ctx, a),
        Command::Stats(a) => data::stats(&ctx, a),
        Command::Split(a) => data::split(&ctx, a),
        Command::Mix(a) => data::mix(&ctx, a),
        Command::Emit(a) => data::emit(&ctx, a),
        Command::Score(a) => data::score(&ctx, a),
        Command::Probe(c) => probe::run(&ctx, c),
    })
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 on success, 1 on domain errors (reported as JSON on stderr), 2 on
/// usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let report = json!({ "error": error_kind(&e), "message": format!("{e:#}") });
            eprintln!("{report}");
            1
        }
    }
}
