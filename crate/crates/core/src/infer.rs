//! Inference over target-dataset subjects.
//!
//! With side-aware mode on, every subject gets a private copy of the trained
//! bundle fine-tuned on the ear-prediction loss over that subject's own
//! signals before classification. The fine-tune path works on a view that
//! carries only values and side, so class labels cannot leak into test-time
//! adaptation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BundleGradient;
use crate::eval::{slice_report, EvalReport, Prediction};
use crate::model::ModelBundle;
use crate::nn::{backward, cross_entropy, cross_entropy_grad, forward, softmax};
use crate::pipeline::{AlignedSignal, ClassLabel, Side};

/// One target subject's signals, typically one per ear.
#[derive(Debug, Clone)]
pub struct SubjectTestSet {
    pub subject_id: String,
    pub signals: Vec<AlignedSignal>,
}

impl SubjectTestSet {
    /// Group a flat signal list into per-subject test sets, sorted by
    /// subject id.
    pub fn group(signals: &[AlignedSignal]) -> Vec<SubjectTestSet> {
        let mut sets: Vec<SubjectTestSet> = Vec::new();
        for signal in signals {
            match sets.iter_mut().find(|s| s.subject_id == signal.subject_id) {
                Some(set) => set.signals.push(signal.clone()),
                None => sets.push(SubjectTestSet {
                    subject_id: signal.subject_id.clone(),
                    signals: vec![signal.clone()],
                }),
            }
        }
        sets.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
        sets
    }
}

/// Which networks the fine-tune step may touch.
///
/// Freezing the side predictor forces the adaptation into the encoder: with
/// the head free to move, a bias shift absorbs most of the ear loss and the
/// features the classifier reads never re-center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinetuneScope {
    /// Encoder only; every head stays frozen.
    Encoder,
    /// Step everything the ear-loss gradient reaches, which is the encoder
    /// plus the side predictor (the other heads see a zero gradient).
    All,
}

impl FinetuneScope {
    pub fn as_str(self) -> &'static str {
        match self {
            FinetuneScope::Encoder => "encoder",
            FinetuneScope::All => "all",
        }
    }

    pub fn parse(s: &str) -> Option<FinetuneScope> {
        match s {
            "encoder" => Some(FinetuneScope::Encoder),
            "all" => Some(FinetuneScope::All),
            _ => None,
        }
    }
}

/// Test-time configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    pub side_aware: bool,
    pub finetune_beta: f64,
    pub finetune_steps: usize,
    pub scope: FinetuneScope,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            side_aware: false,
            finetune_beta: 1e-3,
            finetune_steps: 1,
            scope: FinetuneScope::Encoder,
        }
    }
}

/// The only fields the fine-tune path may see.
struct SideView<'a> {
    values: &'a [f64],
    side: Side,
}

/// Per-subject test-time adaptation: `steps` gradient steps of rate `beta`
/// on the ear-prediction loss alone, jointly over the subject's signals.
/// Class labels are never read; the input bundle is untouched.
pub fn side_finetune(
    bundle: &ModelBundle,
    subject: &SubjectTestSet,
    beta: f64,
    steps: usize,
    scope: FinetuneScope,
) -> Result<ModelBundle> {
    if subject.signals.is_empty() {
        return Err(Error::EmptySubject {
            subject_id: subject.subject_id.clone(),
        });
    }
    let views: Vec<SideView> = subject
        .signals
        .iter()
        .map(|s| SideView {
            values: &s.values,
            side: s.side,
        })
        .collect();
    let mut current = bundle.clone();
    let n = views.len() as f64;
    for _ in 0..steps {
        let mut grad = BundleGradient::zeros_like(&current);
        for view in &views {
            let (latent, enc_tape) = forward(&current.encoder, view.values)?;
            let (logits, side_tape) = forward(&current.side_predictor, &latent)?;
            let mut d_logits = cross_entropy_grad(&logits, view.side.index());
            d_logits.iter_mut().for_each(|g| *g /= n);
            let (g_side, d_latent) = backward(&current.side_predictor, &side_tape, &d_logits)?;
            grad.side_predictor.add_assign(&g_side);
            let (g_enc, _) = backward(&current.encoder, &enc_tape, &d_latent)?;
            grad.encoder.add_assign(&g_enc);
        }
        current = match scope {
            FinetuneScope::Encoder => ModelBundle {
                encoder: crate::nn::axpy_params(&current.encoder, beta, &grad.encoder)?,
                ..current
            },
            FinetuneScope::All => current.apply_step(beta, &grad)?,
        };
    }
    Ok(current)
}

/// Mean ear-prediction cross-entropy of a subject under a bundle.
pub fn side_loss(bundle: &ModelBundle, subject: &SubjectTestSet) -> Result<f64> {
    if subject.signals.is_empty() {
        return Err(Error::EmptySubject {
            subject_id: subject.subject_id.clone(),
        });
    }
    let mut total = 0.0;
    for signal in &subject.signals {
        let (latent, _) = forward(&bundle.encoder, &signal.values)?;
        let (logits, _) = forward(&bundle.side_predictor, &latent)?;
        total += cross_entropy(&logits, signal.side.index());
    }
    Ok(total / subject.signals.len() as f64)
}

/// Classifier probabilities, predicted label, and the tinnitus score for one
/// signal. A tie at exactly 0.5 goes to the control class.
pub fn predict(bundle: &ModelBundle, signal: &AlignedSignal) -> Result<([f64; 2], ClassLabel, f64)> {
    let (latent, _) = forward(&bundle.encoder, &signal.values)?;
    let (logits, _) = forward(&bundle.classifier, &latent)?;
    let probs = softmax(&logits);
    let label = if probs[1] > probs[0] {
        ClassLabel::Tinnitus
    } else {
        ClassLabel::Control
    };
    Ok(([probs[0], probs[1]], label, probs[1]))
}

/// Argmax side prediction for one signal.
pub fn predict_side_label(bundle: &ModelBundle, signal: &AlignedSignal) -> Result<Side> {
    let (latent, _) = forward(&bundle.encoder, &signal.values)?;
    let (logits, _) = forward(&bundle.side_predictor, &latent)?;
    Ok(if logits[1] > logits[0] { Side::Right } else { Side::Left })
}

/// Evaluate every subject: clone-finetune-predict per subject in side-aware
/// mode, shared-bundle prediction otherwise. Returns per-signal predictions
/// in subject order plus the sliced report.
pub fn evaluate_subjects(
    bundle: &ModelBundle,
    subjects: &[SubjectTestSet],
    cfg: &InferenceConfig,
) -> Result<(Vec<Prediction>, EvalReport)> {
    let mut predictions = Vec::new();
    for subject in subjects {
        let tuned;
        let active = if cfg.side_aware {
            tuned = side_finetune(bundle, subject, cfg.finetune_beta, cfg.finetune_steps, cfg.scope)?;
            &tuned
        } else {
            bundle
        };
        for signal in &subject.signals {
            let (_, label, score) = predict(active, signal)?;
            predictions.push(Prediction {
                subject_id: subject.subject_id.clone(),
                side: signal.side,
                true_label: signal.class_label,
                pred_label: label,
                score,
            });
        }
    }
    let report = slice_report(&predictions);
    Ok((predictions, report))
}

/// One exported latent feature row.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRow {
    pub subject_id: String,
    pub side: Side,
    pub class_label: ClassLabel,
    pub latent: Vec<f64>,
}

/// Encoder outputs verbatim, one row per signal. Any 2-D embedding of these
/// happens outside this crate.
pub fn extract_latent(bundle: &ModelBundle, signals: &[AlignedSignal]) -> Result<Vec<LatentRow>> {
    signals
        .iter()
        .map(|s| {
            let (latent, _) = forward(&bundle.encoder, &s.values)?;
            Ok(LatentRow {
                subject_id: s.subject_id.clone(),
                side: s.side,
                class_label: s.class_label,
                latent,
            })
        })
        .collect()
}
