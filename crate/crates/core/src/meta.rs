//! Subject-as-task episodic training.
//!
//! Each subject is one task. An episode samples `batch_size` tasks (pairs of
//! tasks for the Siamese variant), splits every task into disjoint support
//! and query sets, virtually adapts the model on the summed support
//! gradients at rate `alpha`, and then applies the query gradients taken at
//! the adapted parameters back onto the original parameters at rate `beta`
//! (first-order update). Task gradients are summed, not averaged, so the
//! update scales with batch size exactly as the summed-task form is written.
//!
//! Randomness is derived per (seed, epoch, phase), so the `alpha = 0`
//! reduction matches plain SGD on query data bit for bit: the plain loop
//! consumes the same episode and query-fusion streams without touching the
//! support-fusion stream.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{
    fuse_half_to_half, loss_smeta_ae, loss_smeta_sae, BundleGradient, LossComponents, LossOutput,
    LossWeights, ModelBundle, PairBatch, Variant,
};
use crate::pipeline::AlignedSignal;

/// One subject's episode slice: disjoint support and query sets.
#[derive(Debug, Clone)]
pub struct TaskSplit {
    pub subject_id: String,
    pub support: Vec<AlignedSignal>,
    pub query: Vec<AlignedSignal>,
}

/// A sampled batch of tasks. The Siamese variant draws disjoint task pairs.
#[derive(Debug, Clone)]
pub enum Episode {
    Single(Vec<TaskSplit>),
    Paired(Vec<(TaskSplit, TaskSplit)>),
}

impl Episode {
    pub fn task_count(&self) -> usize {
        match self {
            Episode::Single(tasks) => tasks.len(),
            Episode::Paired(pairs) => pairs.len(),
        }
    }

    /// Every task in the episode, pair members flattened.
    pub fn splits(&self) -> Vec<&TaskSplit> {
        match self {
            Episode::Single(tasks) => tasks.iter().collect(),
            Episode::Paired(pairs) => pairs.iter().flat_map(|(a, b)| [a, b]).collect(),
        }
    }
}

/// Meta-training hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaConfig {
    pub alpha: f64,
    pub beta: f64,
    pub shots: usize,
    pub query_size: usize,
    pub batch_size: usize,
    pub inner_steps: usize,
    pub epochs: usize,
    pub seed: u64,
    pub variant: Variant,
    pub side_aware: bool,
    pub weights: LossWeights,
    pub margin: f64,
    pub literal_adv: bool,
    /// Adapt every task separately instead of the one shared virtual update
    /// summed over tasks (the default follows the summed form literally).
    pub per_task_adaptation: bool,
}

impl MetaConfig {
    /// Defaults per variant: batch size 16 and 200 epochs for the plain
    /// autoencoder, batch size 5 and 1000 epochs for the Siamese one.
    pub fn for_variant(variant: Variant) -> MetaConfig {
        let (batch_size, epochs) = match variant {
            Variant::Ae => (16, 200),
            Variant::Sae => (5, 1000),
        };
        MetaConfig {
            alpha: 1e-3,
            beta: 1e-3,
            shots: 2,
            query_size: 8,
            batch_size,
            inner_steps: 1,
            epochs,
            seed: 0,
            variant,
            side_aware: true,
            weights: LossWeights::default(),
            margin: 1.0,
            literal_adv: false,
            per_task_adaptation: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::InvalidConfig("learning rates must be >= 0".into()));
        }
        if self.shots < 1 || self.query_size < 1 || self.batch_size < 1 || self.inner_steps < 1 {
            return Err(Error::InvalidConfig(
                "shots, query size, batch size, and inner steps must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Signals grouped by subject, in sorted subject order so episode sampling
/// is a pure function of the dataset content and the seed.
#[derive(Debug, Clone, Default)]
pub struct SubjectPool {
    pub subjects: Vec<(String, Vec<AlignedSignal>)>,
}

impl SubjectPool {
    pub fn from_signals(signals: &[AlignedSignal]) -> SubjectPool {
        let mut subjects: Vec<(String, Vec<AlignedSignal>)> = Vec::new();
        for signal in signals {
            match subjects.iter_mut().find(|(id, _)| *id == signal.subject_id) {
                Some((_, bucket)) => bucket.push(signal.clone()),
                None => subjects.push((signal.subject_id.clone(), vec![signal.clone()])),
            }
        }
        subjects.sort_by(|a, b| a.0.cmp(&b.0));
        SubjectPool { subjects }
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn signals(&self) -> impl Iterator<Item = &AlignedSignal> {
        self.subjects.iter().flat_map(|(_, s)| s.iter())
    }
}

/// Draw one episode: `batch_size` distinct subjects (twice that for the
/// Siamese variant, paired off disjointly), each with `shots + query_size`
/// distinct signals split into support and query. Subjects with too few
/// signals are dropped from the draw pool up front and logged.
pub fn sample_episode<R: Rng>(pool: &SubjectPool, cfg: &MetaConfig, rng: &mut R) -> Result<Episode> {
    let min_signals = cfg.shots + cfg.query_size;
    let mut eligible: Vec<usize> = Vec::with_capacity(pool.len());
    let mut excluded: Vec<&str> = Vec::new();
    for (i, (id, signals)) in pool.subjects.iter().enumerate() {
        if signals.len() >= min_signals {
            eligible.push(i);
        } else {
            excluded.push(id);
        }
    }
    if !excluded.is_empty() {
        log::debug!(
            "excluded {} subject(s) with fewer than {min_signals} signals: {excluded:?}",
            excluded.len()
        );
    }
    if eligible.is_empty() {
        return Err(Error::InsufficientSignals {
            subject_id: excluded.first().unwrap_or(&"").to_string(),
        });
    }
    let needed = match cfg.variant {
        Variant::Ae => cfg.batch_size,
        Variant::Sae => 2 * cfg.batch_size,
    };
    if eligible.len() < needed {
        return Err(Error::InsufficientSubjects {
            needed,
            available: eligible.len(),
        });
    }
    eligible.shuffle(rng);
    let mut tasks = Vec::with_capacity(needed);
    for &subject_idx in &eligible[..needed] {
        let (id, signals) = &pool.subjects[subject_idx];
        let mut order: Vec<usize> = (0..signals.len()).collect();
        order.shuffle(rng);
        let support = order[..cfg.shots].iter().map(|&k| signals[k].clone()).collect();
        let query = order[cfg.shots..min_signals]
            .iter()
            .map(|&k| signals[k].clone())
            .collect();
        tasks.push(TaskSplit {
            subject_id: id.clone(),
            support,
            query,
        });
    }
    Ok(match cfg.variant {
        Variant::Ae => Episode::Single(tasks),
        Variant::Sae => {
            let mut pairs = Vec::with_capacity(cfg.batch_size);
            let mut iter = tasks.into_iter();
            while let (Some(a), Some(b)) = (iter.next(), iter.next()) {
                pairs.push((a, b));
            }
            Episode::Paired(pairs)
        }
    })
}

/// Per-task training data after pair fusion (Siamese) or as-is (plain).
#[derive(Debug, Clone)]
enum TaskData {
    Single(Vec<AlignedSignal>),
    Pairs(PairBatch),
}

fn task_loss(bundle: &ModelBundle, data: &TaskData, cfg: &MetaConfig) -> Result<LossOutput> {
    match data {
        TaskData::Single(batch) => loss_smeta_ae(bundle, batch, &cfg.weights),
        TaskData::Pairs(pairs) => {
            loss_smeta_sae(bundle, pairs, cfg.margin, cfg.literal_adv, &cfg.weights)
        }
    }
}

fn prepare_tasks<R: Rng>(
    episode: &Episode,
    support: bool,
    rng: &mut R,
) -> Result<Vec<TaskData>> {
    let pick = |t: &TaskSplit| if support { t.support.clone() } else { t.query.clone() };
    match episode {
        Episode::Single(tasks) => Ok(tasks.iter().map(|t| TaskData::Single(pick(t))).collect()),
        Episode::Paired(pairs) => pairs
            .iter()
            .map(|(a, b)| Ok(TaskData::Pairs(fuse_half_to_half(&pick(a), &pick(b), rng)?)))
            .collect(),
    }
}

/// Summed task gradients plus the mean task loss and mean components.
fn episode_gradient(
    bundle: &ModelBundle,
    tasks: &[TaskData],
    cfg: &MetaConfig,
) -> Result<(BundleGradient, f64, LossComponents)> {
    let mut sum = BundleGradient::zeros_like(bundle);
    let mut loss_sum = 0.0;
    let mut comps = LossComponents::default();
    for data in tasks {
        let out = task_loss(bundle, data, cfg)?;
        sum.add_assign(&out.grad);
        loss_sum += out.total;
        comps.cls += out.components.cls;
        comps.rec += out.components.rec;
        comps.ear += out.components.ear;
        comps.adv += out.components.adv;
        comps.sub += out.components.sub;
    }
    let n = tasks.len() as f64;
    comps.cls /= n;
    comps.rec /= n;
    comps.ear /= n;
    comps.adv /= n;
    comps.sub /= n;
    Ok((sum, loss_sum / n, comps))
}

fn inner_from_data(
    bundle: &ModelBundle,
    tasks: &[TaskData],
    cfg: &MetaConfig,
) -> Result<(ModelBundle, f64)> {
    let mut current = bundle.clone();
    let mut initial_loss = 0.0;
    for step in 0..cfg.inner_steps.max(1) {
        let (grad, mean_loss, _) = episode_gradient(&current, tasks, cfg)?;
        if step == 0 {
            initial_loss = mean_loss;
        }
        current = current.apply_step(cfg.alpha, &grad)?;
    }
    Ok((current, initial_loss))
}

fn outer_from_data(
    original: &ModelBundle,
    adapted: &ModelBundle,
    tasks: &[TaskData],
    cfg: &MetaConfig,
) -> Result<(ModelBundle, f64, LossComponents)> {
    let (grad, mean_loss, comps) = episode_gradient(adapted, tasks, cfg)?;
    let updated = original.apply_step(cfg.beta, &grad)?;
    Ok((updated, mean_loss, comps))
}

/// Meta-train step: `inner_steps` virtual updates at rate `alpha` on the
/// summed support gradients, re-evaluated at the current virtual parameters.
/// The input bundle is untouched; the returned loss is the mean support loss
/// at the original parameters.
pub fn meta_train_inner<R: Rng>(
    bundle: &ModelBundle,
    episode: &Episode,
    cfg: &MetaConfig,
    rng: &mut R,
) -> Result<(ModelBundle, f64)> {
    let tasks = prepare_tasks(episode, true, rng)?;
    inner_from_data(bundle, &tasks, cfg)
}

/// Meta-test step: query gradients evaluated at the virtual parameters are
/// applied to the original parameters at rate `beta` (first-order update,
/// no differentiation through the inner step).
pub fn meta_test_outer<R: Rng>(
    bundle: &ModelBundle,
    virtual_bundle: &ModelBundle,
    episode: &Episode,
    cfg: &MetaConfig,
    rng: &mut R,
) -> Result<(ModelBundle, f64, LossComponents)> {
    let tasks = prepare_tasks(episode, false, rng)?;
    outer_from_data(bundle, virtual_bundle, &tasks, cfg)
}

/// Per-epoch record written to the training-trace file.
#[derive(Debug, Clone, Copy)]
pub struct EpochTrace {
    pub epoch: usize,
    pub mean_support_loss: f64,
    pub mean_query_loss: f64,
    pub components: LossComponents,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent random stream for one (seed, epoch, phase) triple. Phase 0
/// drives episode sampling, phase 1 support-pair fusion, phase 2 query-pair
/// fusion.
pub fn derive_rng(seed: u64, epoch: u64, phase: u64) -> ChaCha8Rng {
    let mixed = splitmix64(seed ^ splitmix64(epoch.wrapping_mul(4).wrapping_add(phase + 1)));
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Full episodic loop: sample, meta-train, meta-test, once per epoch.
pub fn meta_fit(
    bundle: &ModelBundle,
    pool: &SubjectPool,
    cfg: &MetaConfig,
) -> Result<(ModelBundle, Vec<EpochTrace>)> {
    cfg.validate()?;
    let mut current = bundle.clone();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng_sample = derive_rng(cfg.seed, epoch as u64, 0);
        let episode = sample_episode(pool, cfg, &mut rng_sample)?;
        let mut rng_support = derive_rng(cfg.seed, epoch as u64, 1);
        let mut rng_query = derive_rng(cfg.seed, epoch as u64, 2);
        let support = prepare_tasks(&episode, true, &mut rng_support)?;
        let query = prepare_tasks(&episode, false, &mut rng_query)?;

        let (next, support_loss, query_loss, comps) = if cfg.per_task_adaptation {
            let mut grad_sum = BundleGradient::zeros_like(&current);
            let mut support_sum = 0.0;
            let mut query_sum = 0.0;
            let mut comps = LossComponents::default();
            for (s_data, q_data) in support.iter().zip(&query) {
                let (adapted, s_loss) =
                    inner_from_data(&current, std::slice::from_ref(s_data), cfg)?;
                let out = task_loss(&adapted, q_data, cfg)?;
                grad_sum.add_assign(&out.grad);
                support_sum += s_loss;
                query_sum += out.total;
                comps.cls += out.components.cls;
                comps.rec += out.components.rec;
                comps.ear += out.components.ear;
                comps.adv += out.components.adv;
                comps.sub += out.components.sub;
            }
            let n = support.len() as f64;
            comps.cls /= n;
            comps.rec /= n;
            comps.ear /= n;
            comps.adv /= n;
            comps.sub /= n;
            let next = current.apply_step(cfg.beta, &grad_sum)?;
            (next, support_sum / n, query_sum / n, comps)
        } else {
            let (adapted, support_loss) = inner_from_data(&current, &support, cfg)?;
            let (next, query_loss, comps) = outer_from_data(&current, &adapted, &query, cfg)?;
            (next, support_loss, query_loss, comps)
        };
        current = next;
        trace.push(EpochTrace {
            epoch,
            mean_support_loss: support_loss,
            mean_query_loss: query_loss,
            components: comps,
        });
    }
    Ok((current, trace))
}

/// Episodic control without the meta step: plain SGD at rate `beta` on the
/// query data of the same episodes `meta_fit` would draw. With `alpha = 0`
/// the meta loop reduces to this loop exactly.
pub fn plain_fit(
    bundle: &ModelBundle,
    pool: &SubjectPool,
    cfg: &MetaConfig,
) -> Result<(ModelBundle, Vec<EpochTrace>)> {
    cfg.validate()?;
    let mut current = bundle.clone();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng_sample = derive_rng(cfg.seed, epoch as u64, 0);
        let episode = sample_episode(pool, cfg, &mut rng_sample)?;
        let mut rng_query = derive_rng(cfg.seed, epoch as u64, 2);
        let query = prepare_tasks(&episode, false, &mut rng_query)?;
        let (grad, query_loss, comps) = episode_gradient(&current, &query, cfg)?;
        current = current.apply_step(cfg.beta, &grad)?;
        trace.push(EpochTrace {
            epoch,
            mean_support_loss: f64::NAN,
            mean_query_loss: query_loss,
            components: comps,
        });
    }
    Ok((current, trace))
}

/// Non-episodic pretraining configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub margin: f64,
    pub literal_adv: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 40,
            lr: 1e-2,
            batch_size: 16,
            weights: LossWeights::default(),
            margin: 1.0,
            literal_adv: false,
        }
    }
}

/// Plain mini-batch SGD over the whole dataset, no episode structure. For
/// the Siamese variant, batches are randomly fused pairs: alternating
/// same-subject and cross-subject draws. Returns the trained bundle used to
/// initialize meta-learning, plus an epoch-mean loss trace.
pub fn pretrain<R: Rng>(
    bundle: &ModelBundle,
    signals: &[AlignedSignal],
    cfg: &PretrainConfig,
    rng: &mut R,
) -> Result<(ModelBundle, Vec<EpochTrace>)> {
    if signals.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if cfg.batch_size < 1 {
        return Err(Error::InvalidConfig("batch size must be >= 1".into()));
    }
    let pool = match bundle.variant {
        Variant::Sae => Some(SubjectPool::from_signals(signals)),
        Variant::Ae => None,
    };
    let mut current = bundle.clone();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut comp_sum = LossComponents::default();
        let mut batches = 0usize;
        match bundle.variant {
            Variant::Ae => {
                let mut order: Vec<usize> = (0..signals.len()).collect();
                order.shuffle(rng);
                for chunk in order.chunks(cfg.batch_size) {
                    let batch: Vec<AlignedSignal> =
                        chunk.iter().map(|&i| signals[i].clone()).collect();
                    let out = loss_smeta_ae(&current, &batch, &cfg.weights)?;
                    current = current.apply_step(cfg.lr, &out.grad)?;
                    loss_sum += out.total;
                    accumulate(&mut comp_sum, &out.components);
                    batches += 1;
                }
            }
            Variant::Sae => {
                let pool = pool.as_ref().unwrap();
                let n_pairs = (signals.len() / 2).max(1);
                let pairs = random_pairs(pool, n_pairs, rng);
                for chunk in pairs.chunks(cfg.batch_size) {
                    let batch = PairBatch {
                        pairs: chunk.to_vec(),
                    };
                    let out =
                        loss_smeta_sae(&current, &batch, cfg.margin, cfg.literal_adv, &cfg.weights)?;
                    current = current.apply_step(cfg.lr, &out.grad)?;
                    loss_sum += out.total;
                    accumulate(&mut comp_sum, &out.components);
                    batches += 1;
                }
            }
        }
        let n = batches.max(1) as f64;
        comp_sum.cls /= n;
        comp_sum.rec /= n;
        comp_sum.ear /= n;
        comp_sum.adv /= n;
        comp_sum.sub /= n;
        trace.push(EpochTrace {
            epoch,
            mean_support_loss: f64::NAN,
            mean_query_loss: loss_sum / n,
            components: comp_sum,
        });
    }
    Ok((current, trace))
}

fn accumulate(dst: &mut LossComponents, src: &LossComponents) {
    dst.cls += src.cls;
    dst.rec += src.rec;
    dst.ear += src.ear;
    dst.adv += src.adv;
    dst.sub += src.sub;
}

/// Alternating same-subject / cross-subject pair draws over the whole pool.
fn random_pairs<R: Rng>(
    pool: &SubjectPool,
    n_pairs: usize,
    rng: &mut R,
) -> Vec<crate::model::SignalPair> {
    use crate::model::SignalPair;
    let mut pairs = Vec::with_capacity(n_pairs);
    for p in 0..n_pairs {
        if p % 2 == 0 || pool.len() < 2 {
            let (_, signals) = &pool.subjects[rng.random_range(0..pool.len())];
            let i = rng.random_range(0..signals.len());
            let j = if signals.len() >= 2 {
                let mut j = rng.random_range(0..signals.len() - 1);
                if j >= i {
                    j += 1;
                }
                j
            } else {
                i
            };
            pairs.push(SignalPair {
                a: signals[i].clone(),
                b: signals[j].clone(),
                same_subject: true,
            });
        } else {
            let si = rng.random_range(0..pool.len());
            let mut sj = rng.random_range(0..pool.len() - 1);
            if sj >= si {
                sj += 1;
            }
            let (_, sig_i) = &pool.subjects[si];
            let (_, sig_j) = &pool.subjects[sj];
            pairs.push(SignalPair {
                a: sig_i[rng.random_range(0..sig_i.len())].clone(),
                b: sig_j[rng.random_range(0..sig_j.len())].clone(),
                same_subject: false,
            });
        }
    }
    pairs
}
