//! The `smeta` command-line interface.
//!
//! Subcommands: `align`, `synth`, `pretrain`, `metatrain`, `evaluate`,
//! `sweep`, `latent`. Every knob resolves as CLI flag, then config file
//! (plain `key = value` lines keyed by the long flag name), then built-in
//! default; the seed additionally falls back to the `SMETA_SEED`
//! environment variable before its default of 0.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint, TrainMeta};
use crate::dataset::{
    load_aligned, load_dataset, save_aligned, save_dataset, save_latents, save_predictions,
    save_trace,
};
use crate::error::{Error, Result};
use crate::infer::{evaluate_subjects, extract_latent, FinetuneScope, InferenceConfig, SubjectTestSet};
use crate::meta::{pretrain, MetaConfig, PretrainConfig};
use crate::model::{LossWeights, ModelBundle, ModelConfig, Variant};
use crate::pipeline::{align_dataset, AlignmentConfig};
use crate::runner::{
    init_rng, pretrain_rng, run_sweep, save_sweep, RunSettings, SweepAxis, TrainMode,
};
use crate::synth::{generate_synthetic, SynthConfig};

/// Parse and execute; returns the process exit code.
pub fn run(argv: Vec<String>) -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init()
        .ok();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders both --help output and usage errors.
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Align(args) => cmd_align(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Pretrain(args) => cmd_pretrain(args),
        Command::Metatrain(args) => cmd_metatrain(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Latent(args) => cmd_latent(args),
    }
}

#[derive(Parser)]
#[command(
    name = "smeta",
    version,
    about = "Side-aware episodic meta-learning for cross-dataset evoked-potential classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Slice, downsample, and normalize a signal CSV
    Align(AlignArgs),
    /// Generate a synthetic source/target dataset pair
    Synth(SynthArgs),
    /// Non-episodic pretraining on an aligned CSV
    Pretrain(PretrainArgs),
    /// Episodic meta-training (or the plain episodic control)
    Metatrain(MetatrainArgs),
    /// Evaluate a checkpoint on an aligned target CSV
    Evaluate(EvaluateArgs),
    /// Train and evaluate across one hyper-parameter axis
    Sweep(SweepArgs),
    /// Export encoder features for an aligned CSV
    Latent(LatentArgs),
}

/// `key = value` per line; `#` starts a comment.
struct Settings {
    map: BTreeMap<String, String>,
}

impl Settings {
    fn load(path: Option<&PathBuf>) -> Result<Settings> {
        let mut map = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            for (i, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or(Error::Parse {
                    line: i + 1,
                    message: format!("expected `key = value`, got `{line}`"),
                })?;
                map.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Settings { map })
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                Error::InvalidConfig(format!("config key `{key}`: cannot parse `{raw}`"))
            }),
        }
    }

    /// CLI flag beats config file beats default.
    fn resolve<T: FromStr>(&self, cli: Option<T>, key: &str, default: T) -> Result<T> {
        match cli {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    /// Seed precedence: flag, config, `SMETA_SEED`, then 0.
    fn resolve_seed(&self, cli: Option<u64>) -> Result<u64> {
        if let Some(seed) = cli {
            return Ok(seed);
        }
        if let Some(seed) = self.get("seed")? {
            return Ok(seed);
        }
        match std::env::var("SMETA_SEED") {
            Ok(raw) => raw
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("SMETA_SEED: cannot parse `{raw}`"))),
            Err(_) => Ok(0),
        }
    }
}

fn parse_variant(s: &str) -> Result<Variant> {
    Variant::parse(s).ok_or_else(|| Error::InvalidConfig(format!("unknown model `{s}` (ae|sae)")))
}

fn parse_mode(s: &str) -> Result<TrainMode> {
    TrainMode::parse(s)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{s}` (plain|meta|smeta)")))
}

fn parse_scope(s: &str) -> Result<FinetuneScope> {
    FinetuneScope::parse(s)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown scope `{s}` (encoder|all)")))
}

// ---------------------------------------------------------------------------
// align

#[derive(Args)]
struct AlignArgs {
    /// Raw signal CSV
    #[arg(long)]
    input: PathBuf,
    /// Aligned output CSV
    #[arg(long)]
    output: PathBuf,
    /// Normalize only (target-style data already at the aligned length)
    #[arg(long)]
    target_mode: bool,
    /// Window size in source samples
    #[arg(long)]
    window: Option<usize>,
    /// Window stride in source samples
    #[arg(long)]
    stride: Option<usize>,
    /// Aligned signal length
    #[arg(long)]
    target_points: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_align(args: AlignArgs) -> Result<()> {
    let settings = Settings::load(args.config.as_ref())?;
    let target_points = settings.resolve(args.target_points, "target-points", 131)?;
    let window = settings.resolve(args.window, "window", 400)?;
    let stride = settings.resolve(args.stride, "stride", 20)?;
    let raws = load_dataset(&args.input)?;
    let cfg = if args.target_mode {
        AlignmentConfig::new(target_points, 1, target_points)?
    } else {
        AlignmentConfig::new(window, stride, target_points)?
    };
    let aligned = align_dataset(&raws, &cfg, !args.target_mode)?;
    save_aligned(&aligned, &args.output)?;
    println!(
        "aligned {} raw signal(s) into {} signal(s) of {} points -> {}",
        raws.len(),
        aligned.len(),
        target_points,
        args.output.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// synth

#[derive(Args)]
struct SynthArgs {
    /// Output CSV for the source dataset
    #[arg(long, default_value = "source.csv")]
    out_source: PathBuf,
    /// Output CSV for the target dataset
    #[arg(long, default_value = "target.csv")]
    out_target: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    source_subjects: Option<usize>,
    #[arg(long)]
    target_subjects: Option<usize>,
    #[arg(long)]
    source_points: Option<usize>,
    #[arg(long)]
    target_points: Option<usize>,
    /// Source raw signals recorded per subject
    #[arg(long)]
    signals_per_subject: Option<usize>,
    #[arg(long)]
    class_effect: Option<f64>,
    #[arg(long)]
    side_effect: Option<f64>,
    #[arg(long)]
    subject_noise: Option<f64>,
    #[arg(long)]
    observation_noise: Option<f64>,
    #[arg(long)]
    dataset_shift: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let settings = Settings::load(args.config.as_ref())?;
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        n_subjects_source: settings.resolve(args.source_subjects, "source-subjects", defaults.n_subjects_source)?,
        n_subjects_target: settings.resolve(args.target_subjects, "target-subjects", defaults.n_subjects_target)?,
        source_points: settings.resolve(args.source_points, "source-points", defaults.source_points)?,
        target_points: settings.resolve(args.target_points, "target-points", defaults.target_points)?,
        source_signals_per_subject: settings.resolve(
            args.signals_per_subject,
            "signals-per-subject",
            defaults.source_signals_per_subject,
        )?,
        class_effect: settings.resolve(args.class_effect, "class-effect", defaults.class_effect)?,
        side_effect: settings.resolve(args.side_effect, "side-effect", defaults.side_effect)?,
        subject_noise: settings.resolve(args.subject_noise, "subject-noise", defaults.subject_noise)?,
        observation_noise: settings.resolve(
            args.observation_noise,
            "observation-noise",
            defaults.observation_noise,
        )?,
        dataset_shift: settings.resolve(args.dataset_shift, "dataset-shift", defaults.dataset_shift)?,
        seed: settings.resolve_seed(args.seed)?,
    };
    let (source, target) = generate_synthetic(&cfg)?;
    save_dataset(&source, &args.out_source)?;
    save_dataset(&target, &args.out_target)?;
    println!(
        "wrote {} source signal(s) to {} and {} target signal(s) to {}",
        source.len(),
        args.out_source.display(),
        target.len(),
        args.out_target.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// shared training knobs

#[derive(Args)]
struct ModelArgs {
    /// ae | sae
    #[arg(long, default_value = "ae")]
    model: String,
    /// Latent width
    #[arg(long)]
    latent: Option<usize>,
    /// Encoder/decoder hidden width
    #[arg(long)]
    hidden: Option<usize>,
    /// Subject-predictor hidden width
    #[arg(long)]
    subject_hidden: Option<usize>,
}

impl ModelArgs {
    fn build(&self, settings: &Settings) -> Result<ModelConfig> {
        let defaults = ModelConfig::default();
        Ok(ModelConfig {
            input_dim: defaults.input_dim, // overwritten from the data
            encoder_hidden: settings.resolve(self.hidden, "hidden", defaults.encoder_hidden)?,
            latent_dim: settings.resolve(self.latent, "latent", defaults.latent_dim)?,
            subject_hidden: settings.resolve(self.subject_hidden, "subject-hidden", defaults.subject_hidden)?,
            variant: parse_variant(&self.model)?,
        })
    }
}

#[derive(Args)]
struct WeightArgs {
    #[arg(long)]
    w_cls: Option<f64>,
    #[arg(long)]
    w_rec: Option<f64>,
    /// Defaults to 0 for plain/meta and 1 for smeta
    #[arg(long)]
    w_ear: Option<f64>,
    #[arg(long)]
    w_adv: Option<f64>,
    #[arg(long)]
    w_sub: Option<f64>,
}

impl WeightArgs {
    fn build(&self, settings: &Settings, mode: TrainMode) -> Result<LossWeights> {
        Ok(LossWeights {
            cls: settings.resolve(self.w_cls, "w-cls", 1.0)?,
            rec: settings.resolve(self.w_rec, "w-rec", 1.0)?,
            ear: settings.resolve(self.w_ear, "w-ear", mode.default_ear_weight())?,
            adv: settings.resolve(self.w_adv, "w-adv", 1.0)?,
            sub: settings.resolve(self.w_sub, "w-sub", 1.0)?,
        })
    }
}

fn config_echo(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

// ---------------------------------------------------------------------------
// pretrain

#[derive(Args)]
struct PretrainArgs {
    /// Aligned source CSV
    #[arg(long)]
    input: PathBuf,
    /// Checkpoint to write
    #[arg(long)]
    out: PathBuf,
    /// Optional trace CSV
    #[arg(long)]
    trace: Option<PathBuf>,
    /// plain | meta | smeta (controls the default side-loss weight)
    #[arg(long, default_value = "smeta")]
    variant: String,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    literal_adv: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    weights: WeightArgs,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_pretrain(args: PretrainArgs) -> Result<()> {
    let settings = Settings::load(args.config.as_ref())?;
    let mode = parse_mode(&args.variant)?;
    let seed = settings.resolve_seed(args.seed)?;
    let signals = load_aligned(&args.input)?;
    if signals.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut model_cfg = args.model.build(&settings)?;
    model_cfg.input_dim = signals[0].values.len();
    let cfg = PretrainConfig {
        epochs: settings.resolve(args.epochs, "epochs", 40)?,
        lr: settings.resolve(args.lr, "lr", 1e-2)?,
        batch_size: settings.resolve(args.batch, "batch", 16)?,
        weights: args.weights.build(&settings, mode)?,
        margin: settings.resolve(args.margin, "margin", 1.0)?,
        literal_adv: args.literal_adv,
    };
    let bundle = ModelBundle::new(&model_cfg, &mut init_rng(seed));
    let (trained, trace) = pretrain(&bundle, &signals, &cfg, &mut pretrain_rng(seed))?;
    let meta = TrainMeta {
        seed,
        epochs_trained: cfg.epochs,
        stage: format!("pretrain-{}", mode.as_str()),
        config: config_echo(&[
            ("model", model_cfg.variant.as_str().to_string()),
            ("variant", mode.as_str().to_string()),
            ("epochs", cfg.epochs.to_string()),
            ("lr", cfg.lr.to_string()),
            ("batch", cfg.batch_size.to_string()),
            ("w-ear", cfg.weights.ear.to_string()),
        ]),
    };
    save_checkpoint(&trained, &meta, &args.out)?;
    if let Some(path) = &args.trace {
        save_trace(&trace, trained.variant, path)?;
    }
    println!(
        "pretrained {} bundle for {} epoch(s) on {} signal(s) -> {}",
        trained.variant.as_str(),
        cfg.epochs,
        signals.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// metatrain

#[derive(Args)]
struct MetatrainArgs {
    /// Aligned source CSV
    #[arg(long)]
    input: PathBuf,
    /// Checkpoint to start from (omit to start from a fresh bundle)
    #[arg(long)]
    init: Option<PathBuf>,
    /// Checkpoint to write
    #[arg(long)]
    out: PathBuf,
    /// Optional trace CSV
    #[arg(long)]
    trace: Option<PathBuf>,
    /// plain | meta | smeta
    #[arg(long, default_value = "smeta")]
    variant: String,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    query: Option<usize>,
    #[arg(long)]
    inner_steps: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    literal_adv: bool,
    /// Adapt each task separately instead of the shared summed update
    #[arg(long)]
    per_task: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    weights: WeightArgs,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn build_meta_config(
    args: &MetatrainArgs,
    settings: &Settings,
    variant: Variant,
    mode: TrainMode,
    seed: u64,
) -> Result<MetaConfig> {
    let defaults = MetaConfig::for_variant(variant);
    Ok(MetaConfig {
        alpha: settings.resolve(args.alpha, "alpha", defaults.alpha)?,
        beta: settings.resolve(args.beta, "beta", defaults.beta)?,
        shots: settings.resolve(args.shots, "shots", defaults.shots)?,
        query_size: settings.resolve(args.query, "query", defaults.query_size)?,
        batch_size: settings.resolve(args.batch, "batch", defaults.batch_size)?,
        inner_steps: settings.resolve(args.inner_steps, "inner-steps", defaults.inner_steps)?,
        epochs: settings.resolve(args.epochs, "epochs", defaults.epochs)?,
        seed,
        variant,
        side_aware: mode == TrainMode::Smeta,
        weights: args.weights.build(settings, mode)?,
        margin: settings.resolve(args.margin, "margin", defaults.margin)?,
        literal_adv: args.literal_adv,
        per_task_adaptation: args.per_task,
    })
}

fn cmd_metatrain(args: MetatrainArgs) -> Result<()> {
    let settings = Settings::load(args.config.as_ref())?;
    let mode = parse_mode(&args.variant)?;
    let seed = settings.resolve_seed(args.seed)?;
    let signals = load_aligned(&args.input)?;
    if signals.is_empty() {
        return Err(Error::EmptyInput);
    }

    let bundle = match &args.init {
        Some(path) => {
            let (bundle, _) = load_checkpoint(path)?;
            let requested = parse_variant(&args.model.model)?;
            if bundle.variant != requested {
                return Err(Error::InvalidConfig(format!(
                    "checkpoint holds an {} bundle but --model {} was requested",
                    bundle.variant.as_str(),
                    requested.as_str()
                )));
            }
            bundle
        }
        None => {
            log::warn!("no --init checkpoint: meta-training from random parameters tends to under-fit");
            let mut model_cfg = args.model.build(&settings)?;
            model_cfg.input_dim = signals[0].values.len();
            ModelBundle::new(&model_cfg, &mut init_rng(seed))
        }
    };

    let cfg = build_meta_config(&args, &settings, bundle.variant, mode, seed)?;
    let pool = crate::meta::SubjectPool::from_signals(&signals);
    let (trained, trace) = match mode {
        TrainMode::Plain => crate::meta::plain_fit(&bundle, &pool, &cfg)?,
        TrainMode::Meta | TrainMode::Smeta => crate::meta::meta_fit(&bundle, &pool, &cfg)?,
    };
    let meta = TrainMeta {
        seed,
        epochs_trained: cfg.epochs,
        stage: format!("metatrain-{}", mode.as_str()),
        config: config_echo(&[
            ("model", trained.variant.as_str().to_string()),
            ("variant", mode.as_str().to_string()),
            ("alpha", cfg.alpha.to_string()),
            ("beta", cfg.beta.to_string()),
            ("shots", cfg.shots.to_string()),
            ("query", cfg.query_size.to_string()),
            ("batch", cfg.batch_size.to_string()),
            ("inner-steps", cfg.inner_steps.to_string()),
            ("epochs", cfg.epochs.to_string()),
            ("w-ear", cfg.weights.ear.to_string()),
        ]),
    };
    save_checkpoint(&trained, &meta, &args.out)?;
    if let Some(path) = &args.trace {
        save_trace(&trace, trained.variant, path)?;
    }
    println!(
        "{} training finished after {} epoch(s) -> {}",
        mode.as_str(),
        cfg.epochs,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Args)]
struct EvaluateArgs {
    /// Aligned target CSV
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Fine-tune the encoder per subject on the ear loss before predicting
    #[arg(long)]
    side_finetune: bool,
    #[arg(long)]
    finetune_steps: Option<usize>,
    #[arg(long)]
    finetune_beta: Option<f64>,
    /// encoder | all
    #[arg(long, default_value = "encoder")]
    finetune_scope: String,
    /// Write the machine-readable report (JSON) here
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write per-signal predictions here
    #[arg(long)]
    pred_out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let settings = Settings::load(args.config.as_ref())?;
    let signals = load_aligned(&args.input)?;
    if signals.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (bundle, _) = load_checkpoint(&args.checkpoint)?;
    let cfg = InferenceConfig {
        side_aware: args.side_finetune,
        finetune_beta: settings.resolve(args.finetune_beta, "finetune-beta", 1e-3)?,
        finetune_steps: settings.resolve(args.finetune_steps, "finetune-steps", 1)?,
        scope: parse_scope(&args.finetune_scope)?,
    };
    let subjects = SubjectTestSet::group(&signals);
    let (predictions, report) = evaluate_subjects(&bundle, &subjects, &cfg)?;
    print!("{}", report.render_table());
    if let Some(path) = &args.pred_out {
        save_predictions(&predictions, path)?;
    }
    if let Some(path) = &args.report {
        std::fs::write(path, report.to_json()).map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Args)]
struct SweepArgs {
    /// batch-size | inner-steps | alpha | beta
    #[arg(long)]
    axis: String,
    /// Comma-separated axis values
    #[arg(long)]
    values: String,
    /// Comma-separated seeds (default: the single resolved seed)
    #[arg(long)]
    seeds: Option<String>,
    /// Aligned source CSV
    #[arg(long)]
    source: PathBuf,
    /// Aligned target CSV
    #[arg(long)]
    target: PathBuf,
    /// Sweep table CSV to write
    #[arg(long)]
    out: PathBuf,
    /// plain | meta | smeta
    #[arg(long, default_value = "smeta")]
    variant: String,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    query: Option<usize>,
    #[arg(long)]
    inner_steps: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    literal_adv: bool,
    #[arg(long)]
    per_task: bool,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    side_finetune: bool,
    #[arg(long)]
    finetune_steps: Option<usize>,
    #[arg(long)]
    finetune_beta: Option<f64>,
    #[arg(long, default_value = "encoder")]
    finetune_scope: String,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    weights: WeightArgs,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let settings = Settings::load(args.config.as_ref())?;
    let axis = SweepAxis::parse(&args.axis)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown axis `{}`", args.axis)))?;
    let mode = parse_mode(&args.variant)?;
    let seed = settings.resolve_seed(args.seed)?;
    let values: Vec<String> = args
        .values
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    let seeds: Vec<u64> = match &args.seeds {
        None => vec![seed],
        Some(raw) => raw
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad seed `{s}`")))
            })
            .collect::<Result<_>>()?,
    };

    let source = load_aligned(&args.source)?;
    let target = load_aligned(&args.target)?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput);
    }
    let variant = parse_variant(&args.model.model)?;
    let mut model_cfg = args.model.build(&settings)?;
    model_cfg.input_dim = source[0].values.len();

    let weights = args.weights.build(&settings, mode)?;
    let defaults = MetaConfig::for_variant(variant);
    let meta = MetaConfig {
        alpha: settings.resolve(args.alpha, "alpha", defaults.alpha)?,
        beta: settings.resolve(args.beta, "beta", defaults.beta)?,
        shots: settings.resolve(args.shots, "shots", defaults.shots)?,
        query_size: settings.resolve(args.query, "query", defaults.query_size)?,
        batch_size: settings.resolve(args.batch, "batch", defaults.batch_size)?,
        inner_steps: settings.resolve(args.inner_steps, "inner-steps", defaults.inner_steps)?,
        epochs: settings.resolve(args.epochs, "epochs", defaults.epochs)?,
        seed,
        variant,
        side_aware: mode == TrainMode::Smeta,
        weights,
        margin: settings.resolve(args.margin, "margin", defaults.margin)?,
        literal_adv: args.literal_adv,
        per_task_adaptation: args.per_task,
    };
    let base = RunSettings {
        model: model_cfg,
        mode,
        pretrain: PretrainConfig {
            epochs: settings.resolve(args.pretrain_epochs, "pretrain-epochs", 40)?,
            lr: settings.resolve(args.lr, "lr", 1e-2)?,
            batch_size: 16,
            weights,
            margin: meta.margin,
            literal_adv: args.literal_adv,
        },
        meta,
        infer: InferenceConfig {
            side_aware: args.side_finetune,
            finetune_beta: settings.resolve(args.finetune_beta, "finetune-beta", 1e-3)?,
            finetune_steps: settings.resolve(args.finetune_steps, "finetune-steps", 1)?,
            scope: parse_scope(&args.finetune_scope)?,
        },
    };
    let rows = run_sweep(axis, &values, &seeds, &base, &source, &target)?;
    save_sweep(axis, &rows, &args.out)?;
    println!(
        "swept {} over {} value(s) x {} seed(s) -> {}",
        axis.as_str(),
        values.len(),
        seeds.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// latent

#[derive(Args)]
struct LatentArgs {
    /// Aligned CSV
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Latent CSV to write
    #[arg(long)]
    out: PathBuf,
}

fn cmd_latent(args: LatentArgs) -> Result<()> {
    let signals = load_aligned(&args.input)?;
    if signals.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (bundle, _) = load_checkpoint(&args.checkpoint)?;
    let rows = extract_latent(&bundle, &signals)?;
    save_latents(&rows, &args.out)?;
    println!("wrote {} latent row(s) -> {}", rows.len(), args.out.display());
    Ok(())
}

/// Convenience wrapper for tests that drive the CLI in-process.
pub fn run_args(args: &[&str]) -> i32 {
    run(args.iter().map(|s| s.to_string()).collect())
}
