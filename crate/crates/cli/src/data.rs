//! Text-side subcommands: corpus, generation, quality and mixing.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde_json::{json, Value};
use t3kit_core::corpus::{self, CaptionPool};
use t3kit_core::demo::synthetic_corpus;
use t3kit_core::mixer::{self, MixRecipe, SftFormat};
use t3kit_core::provider::{Backend, MockProvider, PromptSet, Provider};
use t3kit_core::quality::{self, ApproxCounter, CommandCounter, TokenCounter};
use t3kit_core::synth::{self, GenerateOptions, Generator, QaSample, TaskFamily};

use crate::config::{resolve_provider, resolve_seed};
use crate::{open_out, print_json, write_meta, CheckFailed, Ctx, SeedArg};

/// Size and seed of the built-in corpus used when no pool is given.
const BUILTIN_POOL_SIZE: usize = 5000;
const BUILTIN_POOL_SEED: u64 = 0;

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Corpus JSONL: one object per line with `caption` and optional `id`.
    #[arg(long = "in", required = true)]
    pub input: Vec<PathBuf>,
    /// Pool file; `.bin` for the binary layout, anything else for JSONL.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DemoCorpusArgs {
    #[arg(long, default_value_t = BUILTIN_POOL_SIZE)]
    pub count: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Task family, e.g. order-gpt-1x, order-template-phrase, attribute-2x, referring.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Caption pool or raw corpus; defaults to a built-in procedural corpus.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// `mock`, `http`, or a provider TOML file.
    #[arg(long)]
    pub provider: Option<String>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Directory of prompt template overrides (`<kind>.txt`).
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Abort once more than this fraction of units is discarded.
    #[arg(long)]
    pub max_discard_ratio: Option<f64>,
    /// Continue an interrupted run, appending to `--out`.
    #[arg(long, requires = "out")]
    pub resume: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Pool the samples were drawn from; enables provenance text checks.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Failing samples listed in the report.
    #[arg(long, default_value_t = 20)]
    pub show: usize,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long = "in", required = true)]
    pub input: Vec<PathBuf>,
    /// Command reading one JSON string per line on stdin and printing one
    /// token count per line; without it counts are approximated from words.
    #[arg(long)]
    pub tokenizer_cmd: Option<String>,
    /// Print JSON rows instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub val_per_task: Option<usize>,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Defaults to `<in stem>.train.jsonl`.
    #[arg(long)]
    pub train_out: Option<PathBuf>,
    /// Defaults to `<in stem>.val.jsonl`.
    #[arg(long)]
    pub val_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    /// TOML or JSON recipe.
    #[arg(long)]
    pub recipe: PathBuf,
    /// Overrides the recipe's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Conversation,
    Flat,
}

#[derive(Debug, Args)]
pub struct EmitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "conversation")]
    pub format: FormatArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// JSONL replies: `{"id": ..., "answer": ...}` (`prediction` and `response` also accepted).
    #[arg(long)]
    pub answers: PathBuf,
    /// Gold samples.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn read_samples(path: &Path) -> Result<Vec<QaSample>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}: not a sample", path.display(), i + 1)))
        .collect()
}

fn load_pool(path: Option<&Path>) -> Result<(CaptionPool, Value)> {
    Ok(match path {
        Some(p) => (CaptionPool::load(p)?, json!(p)),
        None => {
            log::warn!("no --pool given; using the built-in procedural corpus");
            let pool = corpus::ingest(synthetic_corpus(BUILTIN_POOL_SIZE, BUILTIN_POOL_SEED))?.pool;
            (pool, json!(format!("builtin:{BUILTIN_POOL_SIZE}:{BUILTIN_POOL_SEED}")))
        }
    })
}

pub fn ingest(_ctx: &Ctx, a: IngestArgs) -> Result<()> {
    let mut records = Vec::new();
    for p in &a.input {
        records.extend(corpus::read_corpus_jsonl(p)?);
    }
    let read = records.len();
    let report = corpus::ingest(records)?;
    report.pool.save(&a.out)?;
    let summary = json!({
        "records": read,
        "captions": report.pool.len(),
        "skipped": report.warnings,
        "nouns": report.pool.noun_index().len(),
    });
    write_meta(&a.out, "ingest", None, &json!({ "in": a.input }), &summary)?;
    print_json(&summary)
}

pub fn demo_corpus(ctx: &Ctx, a: DemoCorpusArgs) -> Result<()> {
    let seed = resolve_seed(a.seed.seed, &ctx.file)?;
    let mut out = open_out(a.out.as_deref())?;
    for r in synthetic_corpus(a.count, seed) {
        writeln!(out, "{}", json!({ "id": r.source_id, "caption": r.caption }))?;
    }
    out.flush()?;
    if let Some(p) = &a.out {
        write_meta(
            p,
            "demo-corpus",
            Some(seed),
            &json!({ "count": a.count }),
            &json!({ "records": a.count }),
        )?;
    }
    Ok(())
}

/// Keeps the complete lines of an interrupted output and returns its samples.
fn recover_partial(path: &Path) -> Result<Vec<QaSample>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if keep < bytes.len() {
        log::warn!("dropping a truncated final line of {}", path.display());
        fs::write(path, &bytes[..keep])?;
    }
    read_samples(path)
}

pub fn generate(ctx: &Ctx, a: GenerateArgs) -> Result<()> {
    let file = &ctx.file;
    let family: TaskFamily = match a.family.or(file.section_str("generate", "family")?) {
        Some(f) => f.parse()?,
        None => bail!("--family is required"),
    };
    let count = match a.count.or(file.section_u64("generate", "count")?.map(|c| c as usize)) {
        Some(c) => c,
        None => bail!("--count is required"),
    };
    let seed = resolve_seed(a.seed.seed, file)?;
    let pool_path = a.pool.or(file.section_str("generate", "pool")?.map(PathBuf::from));
    let (pool, pool_ref) = load_pool(pool_path.as_deref())?;
    let prompts_dir = a.prompts.or(file.prompts.clone());
    let prompts = match &prompts_dir {
        Some(d) => PromptSet::with_overrides(d)?,
        None => PromptSet::builtin(),
    };
    let provider_cfg = resolve_provider(
        a.provider.as_deref(),
        a.endpoint.as_deref(),
        a.model.as_deref(),
        file,
        seed,
    )?;
    let provider: Box<dyn Provider> = match provider_cfg.backend {
        // The mock must recognise overridden templates.
        Backend::Mock => Box::new(MockProvider::with_prompts(provider_cfg.seed, prompts.clone())),
        Backend::Http => Box::new(provider_cfg.build()?),
    };
    let mut opts = GenerateOptions::new(family, count, seed);
    if let Some(r) = a.max_discard_ratio {
        if !(0.0..=1.0).contains(&r) {
            bail!("--max-discard-ratio must lie in [0, 1]");
        }
        opts.max_discard_ratio = r;
    }
    let resolved = json!({
        "family": family,
        "count": count,
        "pool": pool_ref,
        "provider": provider_cfg,
        "prompts": prompts_dir,
        "max_discard_ratio": opts.max_discard_ratio,
    });

    let mut out: Box<dyn Write> = if a.resume {
        let path = a.out.as_deref().expect("clap enforces --out");
        let existing = recover_partial(path)?;
        if let Some(bad) = existing.iter().find(|s| s.family != family) {
            bail!("cannot resume: {} holds {} samples", path.display(), bad.family);
        }
        if existing.len() >= count {
            log::info!("{} already holds {} samples", path.display(), existing.len());
            return Ok(());
        }
        opts = opts.resume_after(&existing);
        Box::new(std::io::BufWriter::new(
            fs::OpenOptions::new().append(true).create(true).open(path)?,
        ))
    } else {
        open_out(a.out.as_deref())?
    };

    let generator = Generator::new(&pool, provider.as_ref(), &prompts);
    let report = synth::generate(&generator, &opts, |s| writeln!(out, "{}", s.to_json_line()))?;
    out.flush()?;
    log::info!(
        "{family}: {} accepted, {} discarded over {} units",
        report.accepted,
        report.discarded,
        report.units
    );
    if let Some(p) = &a.out {
        write_meta(p, "generate", Some(seed), &resolved, &serde_json::to_value(&report)?)?;
    }
    Ok(())
}

pub fn verify(_ctx: &Ctx, a: VerifyArgs) -> Result<()> {
    let samples = read_samples(&a.input)?;
    let pool = a.pool.as_deref().map(CaptionPool::load).transpose()?;
    let reports: Vec<_> = {
        use rayon::prelude::*;
        samples
            .par_iter()
            .map(|s| quality::verify_sample(s, pool.as_ref()))
            .collect()
    };
    let mut check_failures: BTreeMap<&str, usize> = BTreeMap::new();
    let mut failures = Vec::new();
    for r in reports.iter().filter(|r| !r.pass) {
        for c in r.failed() {
            *check_failures.entry(c.name.as_str()).or_default() += 1;
        }
        if failures.len() < a.show {
            let failed: Vec<_> = r
                .failed()
                .map(|c| json!({ "check": c.name, "detail": c.detail }))
                .collect();
            failures.push(json!({ "id": r.sample_id, "failed": failed }));
        }
    }
    let passed = reports.iter().filter(|r| r.pass).count();
    let total = reports.len();
    print_json(&json!({
        "total": total,
        "passed": passed,
        "failed": total - passed,
        "pass_rate": if total == 0 { 1.0 } else { passed as f64 / total as f64 },
        "check_failures": check_failures,
        "failures": failures,
    }))?;
    if passed < total {
        return Err(CheckFailed(format!("{} of {total} samples failed verification", total - passed)).into());
    }
    Ok(())
}

pub fn stats(_ctx: &Ctx, a: StatsArgs) -> Result<()> {
    let mut samples = Vec::new();
    for p in &a.input {
        samples.extend(read_samples(p)?);
    }
    let counter: Box<dyn TokenCounter> = match &a.tokenizer_cmd {
        Some(c) => Box::new(CommandCounter { command: c.clone() }),
        None => Box::new(ApproxCounter),
    };
    let rows = quality::dataset_stats(&samples, counter.as_ref())?;
    if a.json {
        print_json(&rows)
    } else {
        println!("{}", quality::stats_table(&rows));
        if !counter.exact() {
            println!(
                "(~ token counts approximated as {} per word)",
                quality::APPROX_TOKENS_PER_WORD
            );
        }
        Ok(())
    }
}

/// Family of a JSONL record: a sample's `family` or an emitted record's `meta.family`.
fn family_of(line: &str) -> Result<String> {
    let v: Value = serde_json::from_str(line)?;
    v.get("family")
        .or_else(|| v.get("meta").and_then(|m| m.get("family")))
        .and_then(Value::as_str)
        .map(str::to_string)
        .context("record has neither `family` nor `meta.family`")
}

fn sibling(input: &Path, suffix: &str) -> PathBuf {
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    input.with_file_name(format!("{stem}.{suffix}.jsonl"))
}

pub fn split(ctx: &Ctx, a: SplitArgs) -> Result<()> {
    let seed = resolve_seed(a.seed.seed, &ctx.file)?;
    let per_task = a
        .val_per_task
        .or(ctx.file.section_u64("split", "val_per_task")?.map(|v| v as usize))
        .unwrap_or(500);
    let lines = mixer::read_jsonl_lines(&a.input)?;
    let tagged: Vec<(String, String)> = lines
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            Ok((
                family_of(&l).with_context(|| format!("{}:{}", a.input.display(), i + 1))?,
                l,
            ))
        })
        .collect::<Result<_>>()?;
    let parts = quality::split_validation(tagged, |(f, _)| f.clone(), per_task, seed)?;
    let train_out = a.train_out.unwrap_or_else(|| sibling(&a.input, "train"));
    let val_out = a.val_out.unwrap_or_else(|| sibling(&a.input, "val"));
    for (path, part) in [(&train_out, &parts.train), (&val_out, &parts.validation)] {
        let mut w = open_out(Some(path))?;
        for (_, l) in part {
            writeln!(w, "{l}")?;
        }
        w.flush()?;
    }
    let mut per_family: BTreeMap<&str, [usize; 2]> = BTreeMap::new();
    for (f, _) in &parts.train {
        per_family.entry(f).or_default()[0] += 1;
    }
    for (f, _) in &parts.validation {
        per_family.entry(f).or_default()[1] += 1;
    }
    let summary = json!({
        "train": parts.train.len(),
        "validation": parts.validation.len(),
        "per_family": per_family.iter().map(|(f, [t, v])| (f.to_string(), json!({"train": t, "validation": v}))).collect::<BTreeMap<_, _>>(),
    });
    let resolved = json!({ "in": a.input, "val_per_task": per_task });
    write_meta(&train_out, "split", Some(seed), &resolved, &summary)?;
    write_meta(&val_out, "split", Some(seed), &resolved, &summary)?;
    print_json(&summary)
}

pub fn mix(_ctx: &Ctx, a: MixArgs) -> Result<()> {
    let recipe = MixRecipe::load(&a.recipe)?;
    let seed = a.seed.unwrap_or(recipe.seed);
    let (lines, report) = mixer::mix(&recipe, seed)?;
    let mut out = open_out(a.out.as_deref())?;
    for l in &lines {
        writeln!(out, "{l}")?;
    }
    out.flush()?;
    if let Some(p) = &a.out {
        write_meta(
            p,
            "mix",
            Some(seed),
            &serde_json::to_value(&recipe)?,
            &serde_json::to_value(&report)?,
        )?;
    } else {
        log::info!("mixed {} records", lines.len());
    }
    Ok(())
}

pub fn emit(_ctx: &Ctx, a: EmitArgs) -> Result<()> {
    let samples = read_samples(&a.input)?;
    let format = match a.format {
        FormatArg::Conversation => SftFormat::Conversation,
        FormatArg::Flat => SftFormat::Flat,
    };
    let mut out = open_out(a.out.as_deref())?;
    let n = mixer::emit_sft(&samples, format, &mut out)?;
    out.flush()?;
    if let Some(p) = &a.out {
        write_meta(
            p,
            "emit",
            None,
            &json!({ "in": a.input, "format": format }),
            &json!({ "records": n }),
        )?;
    }
    Ok(())
}

fn read_replies(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in mixer::read_jsonl_lines(path)?.iter().enumerate() {
        let v: Value = serde_json::from_str(line)?;
        let field = |k: &str| v.get(k).and_then(Value::as_str);
        let (Some(id), Some(reply)) = (
            field("id"),
            field("answer").or(field("prediction")).or(field("response")),
        ) else {
            bail!("{}:{}: expected `id` and `answer` strings", path.display(), i + 1);
        };
        out.insert(id.to_string(), reply.to_string());
    }
    Ok(out)
}

pub fn score(_ctx: &Ctx, a: ScoreArgs) -> Result<()> {
    let replies = read_replies(&a.answers)?;
    let gold = read_samples(&a.gold)?;
    let report = quality::score_mc(&replies, &gold);
    if let Some(p) = &a.out {
        fs::write(p, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    print_json(&report)
}
