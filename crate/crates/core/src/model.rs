//! The side-aware autoencoder bundle and its composite losses.
//!
//! One bundle holds five networks around a shared latent space: encoder,
//! decoder, tinnitus classifier, ear-side predictor, and (for the Siamese
//! variant) a same-subject predictor over latent pairs. The AE loss combines
//! classification, reconstruction, and side prediction; the SAE loss adds a
//! contrastive latent-distance term and the subject predictor loss over
//! half-to-half fused pairs.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    axpy_params, backward, cross_entropy, cross_entropy_grad, fd_check, forward, mse, mse_grad,
    Activation, GradientSet, LayerSpec, ParameterSet,
};
use crate::pipeline::AlignedSignal;

/// Plain autoencoder bundle or the Siamese extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Ae,
    Sae,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Ae => "ae",
            Variant::Sae => "sae",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        match s {
            "ae" => Some(Variant::Ae),
            "sae" => Some(Variant::Sae),
            _ => None,
        }
    }
}

/// Network dimensions. The defaults are the smallest stack that exercises
/// every loss path at desk scale; all of them are configurable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub encoder_hidden: usize,
    pub latent_dim: usize,
    pub subject_hidden: usize,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 131,
            encoder_hidden: 64,
            latent_dim: 32,
            subject_hidden: 16,
            variant: Variant::Ae,
        }
    }
}

/// Encoder, decoder, and the three heads as one parameterized unit.
///
/// The subject predictor is always present so checkpoints have a single
/// layout, but it only enters the loss for the Siamese variant.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub encoder: ParameterSet,
    pub decoder: ParameterSet,
    pub classifier: ParameterSet,
    pub side_predictor: ParameterSet,
    pub subject_predictor: ParameterSet,
    pub variant: Variant,
}

impl ModelBundle {
    pub fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> ModelBundle {
        let encoder = ParameterSet::init(
            &[
                ("enc_hidden", LayerSpec::new(cfg.input_dim, cfg.encoder_hidden, Activation::Tanh)),
                ("enc_latent", LayerSpec::new(cfg.encoder_hidden, cfg.latent_dim, Activation::Identity)),
            ],
            rng,
        );
        // Sigmoid output keeps reconstructions in [0, 1] like the
        // normalized signals they target.
        let decoder = ParameterSet::init(
            &[
                ("dec_hidden", LayerSpec::new(cfg.latent_dim, cfg.encoder_hidden, Activation::Tanh)),
                ("dec_out", LayerSpec::new(cfg.encoder_hidden, cfg.input_dim, Activation::Sigmoid)),
            ],
            rng,
        );
        let classifier = ParameterSet::init(
            &[("cls_logits", LayerSpec::new(cfg.latent_dim, 2, Activation::Identity))],
            rng,
        );
        let side_predictor = ParameterSet::init(
            &[("side_logits", LayerSpec::new(cfg.latent_dim, 2, Activation::Identity))],
            rng,
        );
        let subject_predictor = ParameterSet::init(
            &[
                ("sub_hidden", LayerSpec::new(2 * cfg.latent_dim, cfg.subject_hidden, Activation::Relu)),
                ("sub_logits", LayerSpec::new(cfg.subject_hidden, 2, Activation::Identity)),
            ],
            rng,
        );
        ModelBundle {
            encoder,
            decoder,
            classifier,
            side_predictor,
            subject_predictor,
            variant: cfg.variant,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.encoder.parameter_count()
            + self.decoder.parameter_count()
            + self.classifier.parameter_count()
            + self.side_predictor.parameter_count()
            + self.subject_predictor.parameter_count()
    }

    /// `self - scale * grad` over all five networks; inputs untouched.
    pub fn apply_step(&self, scale: f64, grad: &BundleGradient) -> Result<ModelBundle> {
        Ok(ModelBundle {
            encoder: axpy_params(&self.encoder, scale, &grad.encoder)?,
            decoder: axpy_params(&self.decoder, scale, &grad.decoder)?,
            classifier: axpy_params(&self.classifier, scale, &grad.classifier)?,
            side_predictor: axpy_params(&self.side_predictor, scale, &grad.side_predictor)?,
            subject_predictor: axpy_params(&self.subject_predictor, scale, &grad.subject_predictor)?,
            variant: self.variant,
        })
    }
}

/// Gradients for every sub-network of a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleGradient {
    pub encoder: GradientSet,
    pub decoder: GradientSet,
    pub classifier: GradientSet,
    pub side_predictor: GradientSet,
    pub subject_predictor: GradientSet,
}

impl BundleGradient {
    pub fn zeros_like(bundle: &ModelBundle) -> BundleGradient {
        BundleGradient {
            encoder: GradientSet::zeros_like(&bundle.encoder),
            decoder: GradientSet::zeros_like(&bundle.decoder),
            classifier: GradientSet::zeros_like(&bundle.classifier),
            side_predictor: GradientSet::zeros_like(&bundle.side_predictor),
            subject_predictor: GradientSet::zeros_like(&bundle.subject_predictor),
        }
    }

    pub fn add_assign(&mut self, other: &BundleGradient) {
        self.encoder.add_assign(&other.encoder);
        self.decoder.add_assign(&other.decoder);
        self.classifier.add_assign(&other.classifier);
        self.side_predictor.add_assign(&other.side_predictor);
        self.subject_predictor.add_assign(&other.subject_predictor);
    }

    pub fn scale(&mut self, factor: f64) {
        self.encoder.scale(factor);
        self.decoder.scale(factor);
        self.classifier.scale(factor);
        self.side_predictor.scale(factor);
        self.subject_predictor.scale(factor);
    }
}

/// Per-term loss weights. Unit weights reproduce the plain unweighted sums;
/// they are exposed for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    pub rec: f64,
    pub ear: f64,
    pub adv: f64,
    pub sub: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cls: 1.0,
            rec: 1.0,
            ear: 1.0,
            adv: 1.0,
            sub: 1.0,
        }
    }
}

/// Unweighted per-term means. `adv` and `sub` are zero for the AE loss.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub cls: f64,
    pub rec: f64,
    pub ear: f64,
    pub adv: f64,
    pub sub: f64,
}

/// Scalar loss, its unweighted components, and the exact gradient of the
/// weighted total.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub total: f64,
    pub components: LossComponents,
    pub grad: BundleGradient,
}

/// A batch of latent-space signal pairs with same-subject flags.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalPair {
    pub a: AlignedSignal,
    pub b: AlignedSignal,
    pub same_subject: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairBatch {
    pub pairs: Vec<SignalPair>,
}

/// Composite AE loss: classification + reconstruction + side prediction,
/// each a mean over the batch, combined with the given weights. The returned
/// gradient is exact for the weighted total.
pub fn loss_smeta_ae(
    bundle: &ModelBundle,
    batch: &[AlignedSignal],
    weights: &LossWeights,
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = batch.len() as f64;
    let mut grad = BundleGradient::zeros_like(bundle);
    let mut components = LossComponents::default();
    for signal in batch {
        accumulate_ae_terms(bundle, signal, weights, 1.0 / n, &mut components, &mut grad, None)?;
    }
    let total =
        weights.cls * components.cls + weights.rec * components.rec + weights.ear * components.ear;
    Ok(LossOutput {
        total,
        components,
        grad,
    })
}

/// Shared AE-term accumulation for one signal. When `extra_latent_grad` is
/// given (the SAE pair terms' contribution to this signal's latent), it is
/// added before the encoder backward pass so the encoder is traversed once
/// per distinct signal.
fn accumulate_ae_terms(
    bundle: &ModelBundle,
    signal: &AlignedSignal,
    weights: &LossWeights,
    inv_n: f64,
    components: &mut LossComponents,
    grad: &mut BundleGradient,
    extra_latent_grad: Option<&[f64]>,
) -> Result<()> {
    let x = &signal.values;
    let (latent, enc_tape) = forward(&bundle.encoder, x)?;
    let (recon, dec_tape) = forward(&bundle.decoder, &latent)?;
    let (cls_logits, cls_tape) = forward(&bundle.classifier, &latent)?;
    let (side_logits, side_tape) = forward(&bundle.side_predictor, &latent)?;

    components.cls += cross_entropy(&cls_logits, signal.class_label.index()) * inv_n;
    components.rec += mse(&recon, x)? * inv_n;
    components.ear += cross_entropy(&side_logits, signal.side.index()) * inv_n;

    let mut latent_grad = vec![0.0; latent.len()];

    let mut d_cls = cross_entropy_grad(&cls_logits, signal.class_label.index());
    d_cls.iter_mut().for_each(|g| *g *= weights.cls * inv_n);
    let (g_cls, d_latent) = backward(&bundle.classifier, &cls_tape, &d_cls)?;
    grad.classifier.add_assign(&g_cls);
    add_in_place(&mut latent_grad, &d_latent);

    let mut d_rec = mse_grad(&recon, x);
    d_rec.iter_mut().for_each(|g| *g *= weights.rec * inv_n);
    let (g_dec, d_latent) = backward(&bundle.decoder, &dec_tape, &d_rec)?;
    grad.decoder.add_assign(&g_dec);
    add_in_place(&mut latent_grad, &d_latent);

    let mut d_side = cross_entropy_grad(&side_logits, signal.side.index());
    d_side.iter_mut().for_each(|g| *g *= weights.ear * inv_n);
    let (g_side, d_latent) = backward(&bundle.side_predictor, &side_tape, &d_side)?;
    grad.side_predictor.add_assign(&g_side);
    add_in_place(&mut latent_grad, &d_latent);

    if let Some(extra) = extra_latent_grad {
        add_in_place(&mut latent_grad, extra);
    }

    let (g_enc, _) = backward(&bundle.encoder, &enc_tape, &latent_grad)?;
    grad.encoder.add_assign(&g_enc);
    Ok(())
}

fn add_in_place(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Build a pair batch from two subject-tasks: `ceil(n/2)` same-subject pairs
/// drawn within one task each, `floor(n/2)` cross-subject pairs with one
/// element from each task, `n = min(|a|, |b|)`. Pair order is shuffled.
pub fn fuse_half_to_half<R: Rng>(
    task_a: &[AlignedSignal],
    task_b: &[AlignedSignal],
    rng: &mut R,
) -> Result<PairBatch> {
    if task_a.is_empty() || task_b.is_empty() {
        return Err(Error::EmptyTask);
    }
    let n = task_a.len().min(task_b.len());
    let n_same = n.div_ceil(2);
    let n_cross = n / 2;
    let mut pairs = Vec::with_capacity(n);
    for t in 0..n_same {
        // Alternate which task contributes the unfused pair.
        let set = if t % 2 == 0 { task_a } else { task_b };
        let (i, j) = draw_two(set.len(), rng);
        pairs.push(make_pair(set[i].clone(), set[j].clone()));
    }
    for _ in 0..n_cross {
        let a = &task_a[rng.random_range(0..task_a.len())];
        let b = &task_b[rng.random_range(0..task_b.len())];
        pairs.push(make_pair(a.clone(), b.clone()));
    }
    pairs.shuffle(rng);
    Ok(PairBatch { pairs })
}

fn make_pair(a: AlignedSignal, b: AlignedSignal) -> SignalPair {
    let same_subject = a.subject_id == b.subject_id;
    SignalPair { a, b, same_subject }
}

/// Two indices from `0..len`, distinct whenever `len >= 2`. A single-element
/// set pairs the element with itself.
fn draw_two<R: Rng>(len: usize, rng: &mut R) -> (usize, usize) {
    if len < 2 {
        return (0, 0);
    }
    let i = rng.random_range(0..len);
    let mut j = rng.random_range(0..len - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

/// Siamese composite loss over a pair batch.
///
/// The AE terms run once per distinct signal appearing in the batch. Per
/// pair, the contrastive term adds `+MSE(e_i, e_j)` for same-subject pairs;
/// for different subjects it is the literal `-MSE(e_i, e_j)` when
/// `literal_adv` is set (unbounded below; kept for fidelity experiments) and
/// the hinge `max(0, margin - MSE(e_i, e_j))` otherwise. The subject
/// predictor sees the concatenated latents with a same-subject target.
pub fn loss_smeta_sae(
    bundle: &ModelBundle,
    pairs: &PairBatch,
    margin: f64,
    literal_adv: bool,
    weights: &LossWeights,
) -> Result<LossOutput> {
    if bundle.variant != Variant::Sae {
        return Err(Error::VariantMismatch {
            found: bundle.variant.as_str().to_string(),
        });
    }
    if pairs.pairs.is_empty() {
        return Err(Error::EmptyBatch);
    }

    // Deduplicate signals so each one contributes the AE terms exactly once.
    let mut distinct: Vec<&AlignedSignal> = Vec::new();
    let mut pair_indices = Vec::with_capacity(pairs.pairs.len());
    for pair in &pairs.pairs {
        let i = intern(&mut distinct, &pair.a);
        let j = intern(&mut distinct, &pair.b);
        pair_indices.push((i, j, pair.same_subject));
    }

    let latent_dim = bundle.latent_dim();
    let n = distinct.len() as f64;
    let p = pairs.pairs.len() as f64;
    let mut grad = BundleGradient::zeros_like(bundle);
    let mut components = LossComponents::default();

    let mut latents = Vec::with_capacity(distinct.len());
    for signal in &distinct {
        let (latent, _) = forward(&bundle.encoder, &signal.values)?;
        latents.push(latent);
    }

    // Pair terms accumulate into per-signal latent gradients first.
    let mut latent_grads = vec![vec![0.0; latent_dim]; distinct.len()];
    for &(i, j, same) in &pair_indices {
        let (e_i, e_j) = (&latents[i], &latents[j]);
        let dist = mse(e_i, e_j)?;
        let (adv, active) = if same {
            (dist, 1.0)
        } else if literal_adv {
            (-dist, -1.0)
        } else if dist < margin {
            (margin - dist, -1.0)
        } else {
            (0.0, 0.0)
        };
        components.adv += adv / p;
        if active != 0.0 {
            let coeff = weights.adv * active / p;
            for k in 0..latent_dim {
                let d = 2.0 * (e_i[k] - e_j[k]) / latent_dim as f64;
                latent_grads[i][k] += coeff * d;
                latent_grads[j][k] -= coeff * d;
            }
        }

        let joined: Vec<f64> = e_i.iter().chain(e_j.iter()).cloned().collect();
        let (sub_logits, sub_tape) = forward(&bundle.subject_predictor, &joined)?;
        let target = usize::from(same);
        components.sub += cross_entropy(&sub_logits, target) / p;
        let mut d_sub = cross_entropy_grad(&sub_logits, target);
        d_sub.iter_mut().for_each(|g| *g *= weights.sub / p);
        let (g_sub, d_joined) = backward(&bundle.subject_predictor, &sub_tape, &d_sub)?;
        grad.subject_predictor.add_assign(&g_sub);
        add_in_place(&mut latent_grads[i], &d_joined[..latent_dim]);
        add_in_place(&mut latent_grads[j], &d_joined[latent_dim..]);
    }

    for (idx, signal) in distinct.iter().enumerate() {
        accumulate_ae_terms(
            bundle,
            signal,
            weights,
            1.0 / n,
            &mut components,
            &mut grad,
            Some(&latent_grads[idx]),
        )?;
    }

    let total = weights.cls * components.cls
        + weights.rec * components.rec
        + weights.ear * components.ear
        + weights.adv * components.adv
        + weights.sub * components.sub;
    Ok(LossOutput {
        total,
        components,
        grad,
    })
}

fn intern<'a>(distinct: &mut Vec<&'a AlignedSignal>, signal: &'a AlignedSignal) -> usize {
    match distinct.iter().position(|s| *s == signal) {
        Some(i) => i,
        None => {
            distinct.push(signal);
            distinct.len() - 1
        }
    }
}

/// Latent feature of one signal.
pub fn encode(bundle: &ModelBundle, signal: &AlignedSignal) -> Result<Vec<f64>> {
    Ok(forward(&bundle.encoder, &signal.values)?.0)
}

/// Tinnitus/control logits.
pub fn classify(bundle: &ModelBundle, signal: &AlignedSignal) -> Result<Vec<f64>> {
    let latent = encode(bundle, signal)?;
    Ok(forward(&bundle.classifier, &latent)?.0)
}

/// Left/right logits.
pub fn predict_side(bundle: &ModelBundle, signal: &AlignedSignal) -> Result<Vec<f64>> {
    let latent = encode(bundle, signal)?;
    Ok(forward(&bundle.side_predictor, &latent)?.0)
}

/// Decoder estimate of the (normalized) input signal.
pub fn reconstruct(bundle: &ModelBundle, signal: &AlignedSignal) -> Result<Vec<f64>> {
    let latent = encode(bundle, signal)?;
    Ok(forward(&bundle.decoder, &latent)?.0)
}

/// Worst finite-difference relative error over all five sub-networks of a
/// bundle, probing each network while the others stay fixed.
pub fn fd_check_bundle<F>(bundle: &ModelBundle, loss_and_grad: F, step: f64) -> f64
where
    F: Fn(&ModelBundle) -> (f64, BundleGradient),
{
    let mut worst: f64 = 0.0;
    for net in [
        SubNet::Encoder,
        SubNet::Decoder,
        SubNet::Classifier,
        SubNet::SidePredictor,
        SubNet::SubjectPredictor,
    ] {
        let err = fd_check(
            net.params(bundle),
            |p| {
                let mut probe = bundle.clone();
                *net.params_mut(&mut probe) = p.clone();
                let (loss, grad) = loss_and_grad(&probe);
                (loss, net.grad(grad))
            },
            step,
        );
        worst = worst.max(err);
    }
    worst
}

#[derive(Clone, Copy)]
enum SubNet {
    Encoder,
    Decoder,
    Classifier,
    SidePredictor,
    SubjectPredictor,
}

impl SubNet {
    fn params(self, b: &ModelBundle) -> &ParameterSet {
        match self {
            SubNet::Encoder => &b.encoder,
            SubNet::Decoder => &b.decoder,
            SubNet::Classifier => &b.classifier,
            SubNet::SidePredictor => &b.side_predictor,
            SubNet::SubjectPredictor => &b.subject_predictor,
        }
    }

    fn params_mut(self, b: &mut ModelBundle) -> &mut ParameterSet {
        match self {
            SubNet::Encoder => &mut b.encoder,
            SubNet::Decoder => &mut b.decoder,
            SubNet::Classifier => &mut b.classifier,
            SubNet::SidePredictor => &mut b.side_predictor,
            SubNet::SubjectPredictor => &mut b.subject_predictor,
        }
    }

    fn grad(self, g: BundleGradient) -> GradientSet {
        match self {
            SubNet::Encoder => g.encoder,
            SubNet::Decoder => g.decoder,
            SubNet::Classifier => g.classifier,
            SubNet::SidePredictor => g.side_predictor,
            SubNet::SubjectPredictor => g.subject_predictor,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{ClassLabel, Side};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg(variant: Variant) -> ModelConfig {
        ModelConfig {
            input_dim: 13,
            encoder_hidden: 8,
            latent_dim: 5,
            subject_hidden: 6,
            variant,
        }
    }

    fn signal<R: Rng>(subject: &str, side: Side, class: ClassLabel, dim: usize, rng: &mut R) -> AlignedSignal {
        AlignedSignal {
            values: (0..dim).map(|_| rng.random_range(0.0..1.0)).collect(),
            subject_id: subject.to_string(),
            side,
            class_label: class,
            dataset_id: "synth".to_string(),
            parent_offset: 0,
        }
    }

    fn batch_of(n: usize, dim: usize, seed: u64) -> Vec<AlignedSignal> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let side = if i % 2 == 0 { Side::Left } else { Side::Right };
                let class = if i < n / 2 { ClassLabel::Control } else { ClassLabel::Tinnitus };
                signal(&format!("s{i}"), side, class, dim, &mut rng)
            })
            .collect()
    }

    #[test]
    fn zero_heads_give_ln2_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut bundle = ModelBundle::new(&small_cfg(Variant::Ae), &mut rng);
        bundle.classifier.zero();
        bundle.side_predictor.zero();
        let batch = batch_of(4, 13, 2);
        let out = loss_smeta_ae(&bundle, &batch, &LossWeights::default()).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert_relative_eq!(out.components.cls, ln2, epsilon = 1e-12);
        assert_relative_eq!(out.components.ear, ln2, epsilon = 1e-12);
    }

    #[test]
    fn total_is_weighted_component_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bundle = ModelBundle::new(&small_cfg(Variant::Ae), &mut rng);
        let batch = batch_of(4, 13, 5);
        let weights = LossWeights {
            cls: 0.7,
            rec: 2.0,
            ear: 0.3,
            adv: 1.0,
            sub: 1.0,
        };
        let out = loss_smeta_ae(&bundle, &batch, &weights).unwrap();
        let expected = 0.7 * out.components.cls + 2.0 * out.components.rec + 0.3 * out.components.ear;
        assert!((out.total - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bundle = ModelBundle::new(&small_cfg(Variant::Ae), &mut rng);
        assert!(matches!(
            loss_smeta_ae(&bundle, &[], &LossWeights::default()),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn ae_gradient_passes_fd() {
        for seed in 0..3u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let bundle = ModelBundle::new(&small_cfg(Variant::Ae), &mut rng);
            let batch = batch_of(4, 13, 200 + seed);
            let weights = LossWeights::default();
            let err = fd_check_bundle(
                &bundle,
                |b| {
                    let out = loss_smeta_ae(b, &batch, &weights).unwrap();
                    (out.total, out.grad)
                },
                1e-5,
            );
            assert!(err < 1e-4, "seed {seed}: fd error {err}");
        }
    }

    #[test]
    fn sae_gradient_passes_fd_hinge_and_literal() {
        for &literal in &[false, true] {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let bundle = ModelBundle::new(&small_cfg(Variant::Sae), &mut rng);
            let task_a = batch_of(3, 13, 8);
            let mut task_b = batch_of(3, 13, 9);
            for s in &mut task_b {
                s.subject_id = format!("b_{}", s.subject_id);
            }
            let pairs = fuse_half_to_half(&task_a, &task_b, &mut rng).unwrap();
            let weights = LossWeights::default();
            let err = fd_check_bundle(
                &bundle,
                |b| {
                    let out = loss_smeta_sae(b, &pairs, 1.0, literal, &weights).unwrap();
                    (out.total, out.grad)
                },
                1e-5,
            );
            assert!(err < 1e-4, "literal={literal}: fd error {err}");
        }
    }

    #[test]
    fn sae_requires_sae_variant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bundle = ModelBundle::new(&small_cfg(Variant::Ae), &mut rng);
        let batch = batch_of(2, 13, 3);
        let pairs = PairBatch {
            pairs: vec![SignalPair {
                a: batch[0].clone(),
                b: batch[1].clone(),
                same_subject: false,
            }],
        };
        assert!(matches!(
            loss_smeta_sae(&bundle, &pairs, 1.0, false, &LossWeights::default()),
            Err(Error::VariantMismatch { .. })
        ));
    }

    #[test]
    fn adv_term_zero_for_identical_latents() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let bundle = ModelBundle::new(&small_cfg(Variant::Sae), &mut rng);
        let a = batch_of(1, 13, 21).pop().unwrap();
        // Same signal twice: e_i == e_j, same subject.
        let pairs = PairBatch {
            pairs: vec![SignalPair {
                a: a.clone(),
                b: a.clone(),
                same_subject: true,
            }],
        };
        let out = loss_smeta_sae(&bundle, &pairs, 1.0, false, &LossWeights::default()).unwrap();
        assert_eq!(out.components.adv, 0.0);
    }

    #[test]
    fn hinge_saturates_beyond_margin() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let bundle = ModelBundle::new(&small_cfg(Variant::Sae), &mut rng);
        let mut batch = batch_of(2, 13, 22);
        batch[1].subject_id = "other".into();
        let pairs = PairBatch {
            pairs: vec![SignalPair {
                a: batch[0].clone(),
                b: batch[1].clone(),
                same_subject: false,
            }],
        };
        // Tiny margin guarantees MSE(e_i, e_j) >= margin.
        let out = loss_smeta_sae(&bundle, &pairs, 1e-15, false, &LossWeights::default()).unwrap();
        assert_eq!(out.components.adv, 0.0);
    }

    #[test]
    fn zero_subject_head_gives_ln2_sub() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut bundle = ModelBundle::new(&small_cfg(Variant::Sae), &mut rng);
        bundle.subject_predictor.zero();
        let mut batch = batch_of(2, 13, 23);
        batch[1].subject_id = "other".into();
        let pairs = PairBatch {
            pairs: vec![SignalPair {
                a: batch[0].clone(),
                b: batch[1].clone(),
                same_subject: false,
            }],
        };
        let out = loss_smeta_sae(&bundle, &pairs, 1.0, false, &LossWeights::default()).unwrap();
        assert_relative_eq!(out.components.sub, std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn adv_symmetric_under_pair_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let bundle = ModelBundle::new(&small_cfg(Variant::Sae), &mut rng);
        let mut batch = batch_of(2, 13, 31);
        batch[1].subject_id = "other".into();
        let forward_pair = PairBatch {
            pairs: vec![SignalPair {
                a: batch[0].clone(),
                b: batch[1].clone(),
                same_subject: false,
            }],
        };
        let swapped = PairBatch {
            pairs: vec![SignalPair {
                a: batch[1].clone(),
                b: batch[0].clone(),
                same_subject: false,
            }],
        };
        let weights = LossWeights::default();
        let out_a = loss_smeta_sae(&bundle, &forward_pair, 1.0, false, &weights).unwrap();
        let out_b = loss_smeta_sae(&bundle, &swapped, 1.0, false, &weights).unwrap();
        assert_eq!(out_a.components.adv, out_b.components.adv);
    }

    #[test]
    fn fuse_half_to_half_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let task_a = batch_of(4, 13, 41)
            .into_iter()
            .map(|mut s| {
                s.subject_id = "subA".into();
                s
            })
            .collect::<Vec<_>>();
        let task_b = batch_of(4, 13, 43)
            .into_iter()
            .map(|mut s| {
                s.subject_id = "subB".into();
                s
            })
            .collect::<Vec<_>>();
        let pairs = fuse_half_to_half(&task_a, &task_b, &mut rng).unwrap();
        assert_eq!(pairs.pairs.len(), 4);
        let same = pairs.pairs.iter().filter(|p| p.same_subject).count();
        assert_eq!(same, 2);
        for p in &pairs.pairs {
            assert_eq!(p.same_subject, p.a.subject_id == p.b.subject_id);
        }
    }

    #[test]
    fn fuse_single_element_tasks() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let mut a = batch_of(1, 13, 51);
        a[0].subject_id = "one".into();
        let mut b = batch_of(1, 13, 53);
        b[0].subject_id = "two".into();
        let pairs = fuse_half_to_half(&a, &b, &mut rng).unwrap();
        assert_eq!(pairs.pairs.len(), 1);
        assert!(pairs.pairs[0].same_subject);
    }

    #[test]
    fn fuse_rejects_empty_task() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = batch_of(2, 13, 1);
        assert!(matches!(fuse_half_to_half(&a, &[], &mut rng), Err(Error::EmptyTask)));
    }

    #[test]
    fn zero_ear_weight_detaches_side_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let bundle_a = ModelBundle::new(&small_cfg(Variant::Ae), &mut rng);
        let mut bundle_b = bundle_a.clone();
        // Different side head, all else identical.
        let mut rng2 = ChaCha8Rng::seed_from_u64(61);
        bundle_b.side_predictor = ParameterSet::init(
            &[("side_logits", LayerSpec::new(5, 2, Activation::Identity))],
            &mut rng2,
        );
        let batch = batch_of(3, 13, 67);
        let weights = LossWeights {
            ear: 0.0,
            ..LossWeights::default()
        };
        let out_a = loss_smeta_ae(&bundle_a, &batch, &weights).unwrap();
        let out_b = loss_smeta_ae(&bundle_b, &batch, &weights).unwrap();
        assert_eq!(out_a.grad.encoder, out_b.grad.encoder);
        assert_eq!(out_a.grad.decoder, out_b.grad.decoder);
        assert_eq!(out_a.grad.classifier, out_b.grad.classifier);
        assert!(out_a
            .grad
            .side_predictor
            .layers
            .iter()
            .all(|l| l.weights.iter().all(|&w| w == 0.0) && l.biases.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn head_evaluations_are_deterministic_and_shaped() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let cfg = small_cfg(Variant::Ae);
        let bundle = ModelBundle::new(&cfg, &mut rng);
        let s = batch_of(1, 13, 73).pop().unwrap();
        assert_eq!(encode(&bundle, &s).unwrap(), encode(&bundle, &s).unwrap());
        assert_eq!(reconstruct(&bundle, &s).unwrap().len(), cfg.input_dim);
        assert_eq!(classify(&bundle, &s).unwrap().len(), 2);
        assert_eq!(predict_side(&bundle, &s).unwrap().len(), 2);
    }

    #[test]
    fn classify_argmax_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let bundle = ModelBundle::new(&small_cfg(Variant::Ae), &mut rng);
        let s = batch_of(1, 13, 83).pop().unwrap();
        let logits = classify(&bundle, &s).unwrap();
        let argmax = |v: &[f64]| if v[1] > v[0] { 1 } else { 0 };
        let shifted: Vec<f64> = logits.iter().map(|z| z + 123.5).collect();
        assert_eq!(argmax(&logits), argmax(&shifted));
    }
}
