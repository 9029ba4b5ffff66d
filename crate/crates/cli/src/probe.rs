//! `t3kit probe …`: synthetic videos, probe training, evaluation and
//! gradient checking.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Value};
use t3kit_core::probelab::{
    self, build_features, eval_probe, grad_check, gradcheck_fixture, load_features, load_model, read_manifest,
    save_model, train_probe, Aspect, DatasetSpec, Fault, FeatureOptions, Geometry, ModelHeader, Split, TrainConfig,
};

use crate::config::resolve_seed;
use crate::{print_json, write_meta, CheckFailed, Ctx, SeedArg};

#[derive(Debug, Subcommand)]
pub enum ProbeCommand {
    /// Render a labelled synthetic video dataset to a directory.
    Synth(SynthArgs),
    /// Train an LSTM probe on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a trained probe.
    Eval(EvalArgs),
    /// Render, train and evaluate in memory without writing videos.
    Run(RunArgs),
    /// Compare BPTT gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GeometryArgs {
    /// Videos per class in the training split.
    #[arg(long = "train", default_value_t = 200)]
    pub train_per_class: usize,
    /// Videos per class in the test split.
    #[arg(long = "test", default_value_t = 50)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
}

impl GeometryArgs {
    fn spec(&self, aspect: Aspect, seed: u64) -> DatasetSpec {
        DatasetSpec {
            geometry: Geometry {
                frames: self.frames,
                height: self.height,
                width: self.width,
            },
            train_per_class: self.train_per_class,
            test_per_class: self.test_per_class,
            ..DatasetSpec::new(aspect, seed)
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// order2, order3, shape, brightness, referring-{begin,middle,end} or grounding-{person,cat,flower}.
    #[arg(long)]
    pub aspect: Aspect,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HyperArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Shuffle frames before featurizing (the temporal control).
    #[arg(long)]
    pub shuffle_time: bool,
    /// Skip per-patch temporal mean removal.
    #[arg(long)]
    pub no_center: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML with `data`, `out`, optional `shuffle_time`/`center_time` and a `[train]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory written by `probe synth`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Evaluate on frame-shuffled videos regardless of how the probe was trained.
    #[arg(long)]
    pub shuffle_time: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub aspect: Aspect,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FaultArg {
    None,
    /// Drop the recurrent weight gradient; the check must then fail.
    ZeroRecurrent,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 32)]
    pub input: usize,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Sequence length.
    #[arg(long, default_value_t = 12)]
    pub steps: usize,
    /// Entries checked per parameter tensor (five tensors).
    #[arg(long, default_value_t = 24)]
    pub per_tensor: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-3)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value = "none")]
    pub fault: FaultArg,
    #[command(flatten)]
    pub seed: SeedArg,
}

/// `probe train --config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    shuffle_time: Option<bool>,
    center_time: Option<bool>,
    #[serde(default)]
    train: Option<TrainConfig>,
}

impl TrainFile {
    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut file: TrainFile = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        file.data = file.data.map(|p| probelab::resolve(base, &p));
        file.out = file.out.map(|p| probelab::resolve(base, &p));
        Ok(file)
    }
}

fn apply_hyper(mut cfg: TrainConfig, mut opts: FeatureOptions, h: &HyperArgs) -> (TrainConfig, FeatureOptions) {
    if h.epochs.is_some() {
        cfg.epochs = h.epochs;
    }
    if let Some(lr) = h.lr {
        cfg.learning_rate = lr;
    }
    if let Some(b) = h.batch_size {
        cfg.batch_size = b;
    }
    if let Some(n) = h.hidden {
        cfg.hidden = n;
    }
    if h.shuffle_time {
        opts.shuffle_time = true;
    }
    if h.no_center {
        opts.center_time = false;
    }
    (cfg, opts)
}

pub fn run(ctx: &Ctx, cmd: ProbeCommand) -> Result<()> {
    match cmd {
        ProbeCommand::Synth(a) => synth(ctx, a),
        ProbeCommand::Train(a) => train(ctx, a),
        ProbeCommand::Eval(a) => eval(a),
        ProbeCommand::Run(a) => run_in_memory(ctx, a),
        ProbeCommand::Gradcheck(a) => gradcheck(ctx, a),
    }
}

fn synth(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let seed = resolve_seed(a.seed.seed, &ctx.file)?;
    let spec = a.geometry.spec(a.aspect, seed);
    let started = Instant::now();
    let manifest = probelab::write_dataset(&spec, &a.out)?;
    log::info!("rendered {} videos in {:.1?}", manifest.videos.len(), started.elapsed());
    let summary = json!({
        "aspect": spec.aspect,
        "classes": manifest.classes,
        "videos": manifest.videos.len(),
        "dir": a.out,
    });
    write_meta(
        &a.out,
        "probe synth",
        Some(seed),
        &serde_json::to_value(spec)?,
        &summary,
    )?;
    print_json(&summary)
}

/// Trains on `train`, evaluates on `test`, and returns the metrics report.
fn fit(
    aspect: Aspect,
    train: &[probelab::FeatureSequence],
    test: &[probelab::FeatureSequence],
    cfg: &TrainConfig,
) -> Result<(probelab::Params<f32>, Value)> {
    let epochs = cfg.epochs.unwrap_or_else(|| aspect.default_epochs());
    let started = Instant::now();
    let outcome = train_probe(train, aspect.class_count(), epochs, cfg)?;
    log::info!("trained {epochs} epochs in {:.1?}", started.elapsed());
    let model = outcome.model.clone().expect("training returns a model");
    let train_eval = eval_probe(&model, train)?;
    let test_eval = if test.is_empty() {
        None
    } else {
        Some(eval_probe(&model, test)?)
    };
    let report = json!({
        "aspect": aspect,
        "classes": aspect.class_names(),
        "train_videos": train.len(),
        "test_videos": test.len(),
        "training": outcome,
        "train": train_eval,
        "test": test_eval,
    });
    Ok((model, report))
}

fn train(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let file = match &a.config {
        Some(p) => TrainFile::load(p)?,
        None => TrainFile::default(),
    };
    let Some(data) = a.data.or(file.data) else {
        bail!("--data (or `data` in --config) is required")
    };
    let Some(out) = a.out.or(file.out) else {
        bail!("--out (or `out` in --config) is required")
    };
    let mut cfg = file.train.unwrap_or_default();
    cfg.seed = match a.seed.seed {
        Some(s) => s,
        None if a.config.is_some() => cfg.seed,
        None => resolve_seed(None, &ctx.file)?,
    };
    let base_opts = FeatureOptions {
        shuffle_time: file.shuffle_time.unwrap_or(false),
        center_time: file.center_time.unwrap_or(true),
        ..FeatureOptions::default()
    };
    let (cfg, opts) = apply_hyper(cfg, base_opts, &a.hyper);
    cfg.validate()?;
    let (manifest, train_data) = load_features(&data, Split::Train, opts)?;
    let (_, test_data) = load_features(&data, Split::Test, opts)?;
    let aspect = manifest.spec.aspect;
    let (model, report) = fit(aspect, &train_data, &test_data, &cfg)?;
    let header = ModelHeader {
        aspect,
        classes: manifest.classes.clone(),
        input: opts.cols,
        hidden: cfg.hidden,
        features: opts,
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_model(&out, &header, &model)?;
    let resolved = json!({ "data": data, "train": cfg, "features": opts });
    write_meta(&out, "probe train", Some(cfg.seed), &resolved, &report)?;
    print_json(&report)
}

fn eval(a: EvalArgs) -> Result<()> {
    let (header, params) = load_model(&a.model)?;
    let manifest = read_manifest(&a.data)?;
    if manifest.spec.aspect != header.aspect {
        bail!(
            "model probes {} but the dataset holds {}",
            header.aspect,
            manifest.spec.aspect
        );
    }
    let mut opts = header.features;
    opts.shuffle_time |= a.shuffle_time;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let (_, data) = load_features(&a.data, split, opts)?;
    let report = eval_probe(&params, &data)?;
    print_json(&json!({
        "aspect": header.aspect,
        "split": split.name(),
        "shuffle_time": opts.shuffle_time,
        "eval": report,
    }))
}

fn run_in_memory(ctx: &Ctx, a: RunArgs) -> Result<()> {
    let seed = resolve_seed(a.seed.seed, &ctx.file)?;
    let spec = a.geometry.spec(a.aspect, seed);
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let (cfg, opts) = apply_hyper(cfg, FeatureOptions::default(), &a.hyper);
    cfg.validate()?;
    let train = build_features(&spec, Split::Train, opts)?;
    let test = build_features(&spec, Split::Test, opts)?;
    let (_, report) = fit(a.aspect, &train, &test, &cfg)?;
    print_json(&report)
}

fn gradcheck(ctx: &Ctx, a: GradcheckArgs) -> Result<()> {
    let seed = resolve_seed(a.seed.seed, &ctx.file)?;
    if a.classes < 2 || a.steps == 0 || a.input == 0 || a.hidden == 0 || a.per_tensor == 0 {
        bail!("gradcheck needs at least 2 classes and positive sizes");
    }
    let (params, seq, label) = gradcheck_fixture(a.input, a.hidden, a.classes, a.steps, seed);
    let fault = match a.fault {
        FaultArg::None => Fault::None,
        FaultArg::ZeroRecurrent => Fault::ZeroRecurrentGradient,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let report = grad_check(&params, seq.view(), label, a.step, a.per_tensor, fault, &mut rng)?;
    let pass = report.max_relative_error <= a.threshold;
    print_json(&json!({ "report": report, "threshold": a.threshold, "pass": pass }))?;
    if !pass {
        return Err(CheckFailed(format!(
            "max relative error {:.3e} exceeds {:.1e}",
            report.max_relative_error, a.threshold
        ))
        .into());
    }
    Ok(())
}
