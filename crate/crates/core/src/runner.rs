//! End-to-end experiment runner and the hyper-parameter sweep.
//!
//! One run is: initialize a bundle, pretrain on the aligned source set,
//! episodically train (meta or plain control), then evaluate the aligned
//! target set with or without per-subject side fine-tuning. The sweep
//! repeats a run across one hyper-parameter axis, recording the seed with
//! every row for exact replay.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{EvalReport, MetricSet, Prediction};
use crate::infer::{evaluate_subjects, InferenceConfig, SubjectTestSet};
use crate::meta::{derive_rng, meta_fit, plain_fit, pretrain, EpochTrace, MetaConfig, PretrainConfig, SubjectPool};
use crate::model::{ModelBundle, ModelConfig};
use crate::pipeline::AlignedSignal;

/// Training mode selected by `--variant`.
///
/// `Plain` runs episodic SGD on query data without the meta step (the
/// control the `alpha = 0` reduction collapses to); `Meta` is conventional
/// meta-learning with the side loss off; `Smeta` is the full side-aware
/// form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Plain,
    Meta,
    Smeta,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Plain => "plain",
            TrainMode::Meta => "meta",
            TrainMode::Smeta => "smeta",
        }
    }

    pub fn parse(s: &str) -> Option<TrainMode> {
        match s {
            "plain" => Some(TrainMode::Plain),
            "meta" => Some(TrainMode::Meta),
            "smeta" => Some(TrainMode::Smeta),
            _ => None,
        }
    }

    /// Side-loss weight implied by the mode when none is given explicitly.
    pub fn default_ear_weight(self) -> f64 {
        match self {
            TrainMode::Plain | TrainMode::Meta => 0.0,
            TrainMode::Smeta => 1.0,
        }
    }
}

/// Everything one run needs besides the data.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub model: ModelConfig,
    pub mode: TrainMode,
    pub pretrain: PretrainConfig,
    pub meta: MetaConfig,
    pub infer: InferenceConfig,
}

/// Outcome of one run.
pub struct RunOutcome {
    pub bundle: ModelBundle,
    pub pretrain_trace: Vec<EpochTrace>,
    pub fit_trace: Vec<EpochTrace>,
    pub predictions: Vec<Prediction>,
    pub report: EvalReport,
}

/// Random stream for bundle initialization.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random stream for the pretrain stage, disjoint from the per-epoch
/// episode streams.
pub fn pretrain_rng(seed: u64) -> ChaCha8Rng {
    derive_rng(seed, u64::MAX, 3)
}

/// Train on aligned source signals and evaluate aligned target signals.
/// Fully determined by (data, settings, settings.meta.seed).
pub fn train_and_evaluate(
    source: &[AlignedSignal],
    target: &[AlignedSignal],
    settings: &RunSettings,
) -> Result<RunOutcome> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput);
    }
    let seed = settings.meta.seed;
    let mut model_cfg = settings.model;
    model_cfg.input_dim = source[0].values.len();
    model_cfg.variant = settings.meta.variant;

    let bundle = ModelBundle::new(&model_cfg, &mut init_rng(seed));
    let (bundle, pretrain_trace) = if settings.pretrain.epochs > 0 {
        pretrain(&bundle, source, &settings.pretrain, &mut pretrain_rng(seed))?
    } else {
        (bundle, Vec::new())
    };

    let pool = SubjectPool::from_signals(source);
    let (bundle, fit_trace) = if settings.meta.epochs == 0 {
        (bundle, Vec::new())
    } else {
        match settings.mode {
            TrainMode::Plain => plain_fit(&bundle, &pool, &settings.meta)?,
            TrainMode::Meta | TrainMode::Smeta => meta_fit(&bundle, &pool, &settings.meta)?,
        }
    };

    let subjects = SubjectTestSet::group(target);
    let (predictions, report) = evaluate_subjects(&bundle, &subjects, &settings.infer)?;
    Ok(RunOutcome {
        bundle,
        pretrain_trace,
        fit_trace,
        predictions,
        report,
    })
}

/// The four sweepable axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    BatchSize,
    InnerSteps,
    Alpha,
    Beta,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::BatchSize => "batch-size",
            SweepAxis::InnerSteps => "inner-steps",
            SweepAxis::Alpha => "alpha",
            SweepAxis::Beta => "beta",
        }
    }

    pub fn parse(s: &str) -> Option<SweepAxis> {
        match s {
            "batch-size" => Some(SweepAxis::BatchSize),
            "inner-steps" => Some(SweepAxis::InnerSteps),
            "alpha" => Some(SweepAxis::Alpha),
            "beta" => Some(SweepAxis::Beta),
            _ => None,
        }
    }

    fn apply(self, value: &str, cfg: &mut MetaConfig) -> Result<()> {
        let bad = |axis: &str| Error::InvalidConfig(format!("bad {axis} value `{value}`"));
        match self {
            SweepAxis::BatchSize => {
                cfg.batch_size = value.parse().map_err(|_| bad("batch-size"))?
            }
            SweepAxis::InnerSteps => {
                cfg.inner_steps = value.parse().map_err(|_| bad("inner-steps"))?
            }
            SweepAxis::Alpha => cfg.alpha = value.parse().map_err(|_| bad("alpha"))?,
            SweepAxis::Beta => cfg.beta = value.parse().map_err(|_| bad("beta"))?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Run,
    Mean,
    Std,
    Best,
}

impl RowKind {
    fn as_str(self) -> &'static str {
        match self {
            RowKind::Run => "run",
            RowKind::Mean => "mean",
            RowKind::Std => "std",
            RowKind::Best => "best",
        }
    }
}

/// One sweep-table row: the five reported metrics per side slice.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: String,
    pub seed: Option<u64>,
    pub kind: RowKind,
    pub both: MetricSet,
    pub left: MetricSet,
    pub right: MetricSet,
}

/// Train and evaluate once per axis value (and per seed), one row per run.
/// With several seeds, mean, std, and best-by-accuracy rows are appended per
/// value. Rows appear in request order; a failing point aborts the sweep
/// rather than being skipped silently.
pub fn run_sweep(
    axis: SweepAxis,
    values: &[String],
    seeds: &[u64],
    base: &RunSettings,
    source: &[AlignedSignal],
    target: &[AlignedSignal],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("no sweep values given".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("no seeds given".into()));
    }
    let mut rows = Vec::new();
    for value in values {
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut settings = base.clone();
            axis.apply(value, &mut settings.meta)?;
            settings.meta.seed = seed;
            let outcome = train_and_evaluate(source, target, &settings)?;
            let row = SweepRow {
                value: value.clone(),
                seed: Some(seed),
                kind: RowKind::Run,
                both: outcome.report.both.metrics,
                left: outcome.report.left.metrics,
                right: outcome.report.right.metrics,
            };
            per_seed.push(row.clone());
            rows.push(row);
        }
        if per_seed.len() > 1 {
            rows.push(aggregate(value, &per_seed, RowKind::Mean));
            rows.push(aggregate(value, &per_seed, RowKind::Std));
            let best = per_seed
                .iter()
                .max_by(|a, b| {
                    let acc = |r: &SweepRow| r.both.acc.unwrap_or(f64::NEG_INFINITY);
                    acc(a).partial_cmp(&acc(b)).unwrap()
                })
                .unwrap();
            rows.push(SweepRow {
                kind: RowKind::Best,
                ..best.clone()
            });
        }
    }
    Ok(rows)
}

fn aggregate(value: &str, runs: &[SweepRow], kind: RowKind) -> SweepRow {
    let stat = |extract: &dyn Fn(&SweepRow) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = runs.iter().filter_map(extract).collect();
        if vals.len() != runs.len() {
            return None;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        match kind {
            RowKind::Std => {
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
                Some(var.sqrt())
            }
            _ => Some(mean),
        }
    };
    let slice_stats = |pick: fn(&SweepRow) -> MetricSet| MetricSet {
        npv: stat(&|r| pick(r).npv),
        tnr: stat(&|r| pick(r).tnr),
        n_f1: stat(&|r| pick(r).n_f1),
        ppv: stat(&|r| pick(r).ppv),
        tpr: stat(&|r| pick(r).tpr),
        p_f1: stat(&|r| pick(r).p_f1),
        acc: stat(&|r| pick(r).acc),
    };
    SweepRow {
        value: value.to_string(),
        seed: None,
        kind,
        both: slice_stats(|r| r.both),
        left: slice_stats(|r| r.left),
        right: slice_stats(|r| r.right),
    }
}

fn fmt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "NA".to_string(),
    }
}

/// Write the sweep table: one line per row, five metric columns per slice.
pub fn save_sweep(axis: SweepAxis, rows: &[SweepRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);
    writeln!(
        w,
        "axis,value,seed,kind,both_npv,both_tnr,both_ppv,both_tpr,both_acc,left_npv,left_tnr,left_ppv,left_tpr,left_acc,right_npv,right_tnr,right_ppv,right_tpr,right_acc"
    )
    .map_err(io_err)?;
    for row in rows {
        let seed = row.seed.map_or(String::new(), |s| s.to_string());
        write!(w, "{},{},{},{}", axis.as_str(), row.value, seed, row.kind.as_str()).map_err(io_err)?;
        for slice in [&row.both, &row.left, &row.right] {
            write!(
                w,
                ",{},{},{},{},{}",
                fmt(slice.npv),
                fmt(slice.tnr),
                fmt(slice.ppv),
                fmt(slice.tpr),
                fmt(slice.acc)
            )
            .map_err(io_err)?;
        }
        writeln!(w).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
