//! Seed-sweep calibration harness for the synthetic benchmark.
//!
//! Runs the plain-AE baseline against side-aware meta-training across seeds
//! and prints per-seed accuracies, the side-prediction before/after
//! comparison, and the null-effect control. Used to pick benchmark
//! constants; the acceptance suite pins the outcome.
//!
//! Run with: cargo run --release -p smeta --example calibrate

use std::time::Instant;

use smeta::infer::{predict_side_label, side_finetune, FinetuneScope, InferenceConfig, SubjectTestSet};
use smeta::meta::{MetaConfig, PretrainConfig};
use smeta::model::{LossWeights, ModelConfig, Variant};
use smeta::pipeline::{align_dataset, AlignedSignal, AlignmentConfig};
use smeta::runner::{train_and_evaluate, RunSettings, TrainMode};
use smeta::synth::{generate_synthetic, SynthConfig};

fn env_f64(key: &str, default: f64) -> f64 {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn bench_data(seed: u64, class_effect: f64) -> (Vec<AlignedSignal>, Vec<AlignedSignal>) {
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        class_effect,
        subject_noise: env_f64("SUBJ", defaults.subject_noise),
        dataset_shift: env_f64("SHIFT", defaults.dataset_shift),
        side_effect: env_f64("SIDE", defaults.side_effect),
        observation_noise: env_f64("OBS", defaults.observation_noise),
        seed,
        ..defaults
    };
    let (source, target) = generate_synthetic(&cfg).unwrap();
    let align = AlignmentConfig::new(400, 20, 131).unwrap();
    (
        align_dataset(&source, &align, true).unwrap(),
        align_dataset(&target, &align, false).unwrap(),
    )
}

fn settings(mode: TrainMode, variant: Variant, seed: u64, pretrain_epochs: usize, meta_epochs: usize) -> RunSettings {
    let lr: f64 = std::env::var("LR").ok().and_then(|v| v.parse().ok()).unwrap_or(1e-2);
    let weights = LossWeights {
        ear: mode.default_ear_weight(),
        ..LossWeights::default()
    };
    RunSettings {
        model: ModelConfig {
            variant,
            ..ModelConfig::default()
        },
        mode,
        pretrain: PretrainConfig {
            epochs: pretrain_epochs,
            lr,
            batch_size: 16,
            weights,
            margin: 1.0,
            literal_adv: false,
        },
        meta: MetaConfig {
            seed,
            epochs: meta_epochs,
            weights,
            side_aware: mode == TrainMode::Smeta,
            ..MetaConfig::for_variant(variant)
        },
        infer: InferenceConfig {
            side_aware: mode == TrainMode::Smeta,
            finetune_beta: env_f64("FT_BETA", 1e-3),
            finetune_steps: env_f64("FT_STEPS", 1.0) as usize,
            scope: FinetuneScope::Encoder,
        },
    }
}

fn accuracy(source: &[AlignedSignal], target: &[AlignedSignal], s: &RunSettings) -> f64 {
    let outcome = train_and_evaluate(source, target, s).unwrap();
    outcome.report.both.metrics.acc.unwrap()
}

fn side_accuracy(bundle: &smeta::model::ModelBundle, signals: &[AlignedSignal]) -> f64 {
    let correct = signals
        .iter()
        .filter(|s| predict_side_label(bundle, s).unwrap() == s.side)
        .count();
    correct as f64 / signals.len() as f64
}

fn main() {
    let t0 = Instant::now();
    let seeds: Vec<u64> = (0..10).collect();
    let pre_epochs: usize = std::env::var("PRE").ok().and_then(|v| v.parse().ok()).unwrap_or(40);
    let meta_epochs: usize = std::env::var("META").ok().and_then(|v| v.parse().ok()).unwrap_or(200);

    println!("pretrain {pre_epochs} epochs, meta {meta_epochs} epochs");
    println!("seed  plainAE  smetaAE  noft     diff     side_before side_after");
    let mut plain_accs = Vec::new();
    let mut smeta_accs = Vec::new();
    let mut wins = 0;
    let mut side_ok = 0;
    for &seed in &seeds {
        let (source, target) = bench_data(seed, SynthConfig::default().class_effect);

        // Both arms share the episodic budget and the per-epoch episode
        // streams; they differ in the side-aware loss, the meta update, and
        // the inference-time fine-tune.
        let plain = settings(TrainMode::Plain, Variant::Ae, seed, pre_epochs, meta_epochs);
        let acc_plain = accuracy(&source, &target, &plain);

        let smeta = settings(TrainMode::Smeta, Variant::Ae, seed, pre_epochs, meta_epochs);
        let outcome = train_and_evaluate(&source, &target, &smeta).unwrap();
        let acc_smeta = outcome.report.both.metrics.acc.unwrap();

        let mut noft = smeta.clone();
        noft.infer.side_aware = false;
        let acc_noft = accuracy(&source, &target, &noft);

        // Side prediction before/after per-subject fine-tuning.
        let ft_beta = env_f64("FT_BETA", 1e-3);
        let ft_steps = env_f64("FT_STEPS", 1.0) as usize;
        let subjects = SubjectTestSet::group(&target);
        let mut before = 0.0;
        let mut after = 0.0;
        for subject in &subjects {
            before += side_accuracy(&outcome.bundle, &subject.signals);
            let tuned = side_finetune(&outcome.bundle, subject, ft_beta, ft_steps, FinetuneScope::Encoder).unwrap();
            after += side_accuracy(&tuned, &subject.signals);
        }
        before /= subjects.len() as f64;
        after /= subjects.len() as f64;

        println!(
            "{seed:<5} {acc_plain:<8.3} {acc_smeta:<8.3} {acc_noft:<8.3} {:>+.3}   {before:<11.3} {after:<10.3}",
            acc_smeta - acc_plain
        );
        if acc_smeta > acc_plain {
            wins += 1;
        }
        if after >= before {
            side_ok += 1;
        }
        plain_accs.push(acc_plain);
        smeta_accs.push(acc_smeta);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "mean plain {:.4}  mean smeta {:.4}  strict wins {wins}/10  side>= {side_ok}/10",
        mean(&plain_accs),
        mean(&smeta_accs)
    );

    if env_f64("NULL", 1.0) == 0.0 {
        println!("elapsed {:?}", t0.elapsed());
        return;
    }
    // Null-effect control.
    let mut null_accs = [Vec::new(), Vec::new(), Vec::new()];
    for &seed in &seeds {
        let (source, target) = bench_data(seed, 0.0);
        let plain = settings(TrainMode::Plain, Variant::Ae, seed, pre_epochs, 0);
        null_accs[0].push(accuracy(&source, &target, &plain));
        let smeta = settings(TrainMode::Smeta, Variant::Ae, seed, pre_epochs, meta_epochs);
        null_accs[1].push(accuracy(&source, &target, &smeta));
        let sae = settings(TrainMode::Smeta, Variant::Sae, seed, pre_epochs, meta_epochs.min(300));
        null_accs[2].push(accuracy(&source, &target, &sae));
    }
    println!(
        "null means: plainAE {:.4}  smetaAE {:.4}  smetaSAE {:.4}",
        mean(&null_accs[0]),
        mean(&null_accs[1]),
        mean(&null_accs[2])
    );
    println!("elapsed {:?}", t0.elapsed());
}
