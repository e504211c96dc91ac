//! Training loop for Householder anonymizers.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anonymizer::selection::mix_seed;
use crate::anonymizer::{container, init_stack, AnonymizerModel, Form, LohReduction, Variant};
use crate::error::{Error, Result};
use crate::linalg::{cosine, norm, Whitening, REFLECTION_FLOOR};
use crate::losses::{combined_objective, Batch, ClassifierHead, LossConfig, LossVariant};
use crate::pool::{pool_stats, EmbeddingPool, Record, Split};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// How `build_batch` picks original samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampler {
    /// Uniform over utterances, with replacement.
    #[default]
    Uniform,
    /// Uniform speaker, then uniform utterance of that speaker.
    SpeakerBalanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub iterations: usize,
    pub cycle_length: usize,
    pub lr_min: f64,
    pub lr_max: f64,
    pub loss_variant: LossVariant,
    pub loss: LossConfig,
    pub optimizer: Optimizer,
    pub sampler: Sampler,
    /// 0 disables snapshots.
    pub snapshot_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 50,
            batch_size: 64,
            iterations: 2000,
            cycle_length: 2000,
            lr_min: 1e-8,
            lr_max: 1e-3,
            loss_variant: LossVariant::Waam,
            loss: LossConfig::default(),
            optimizer: Optimizer::default(),
            sampler: Sampler::Uniform,
            snapshot_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return bad(format!("batch_size {} must be even and >= 2", self.batch_size));
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if self.cycle_length < 2 {
            return bad("cycle_length must be >= 2".into());
        }
        if !(self.lr_min >= 0.0 && self.lr_min < self.lr_max && self.lr_max.is_finite()) {
            return bad(format!("need 0 <= lr_min < lr_max, got {} / {}", self.lr_min, self.lr_max));
        }
        self.loss.validate()
    }
}

/// Shape of the anonymizer to train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StackSpec {
    pub variant: Variant,
    pub layers: usize,
    pub reflections_per_layer: usize,
    pub reduction: LohReduction,
    pub form: Form,
}

impl Default for StackSpec {
    fn default() -> Self {
        StackSpec {
            variant: Variant::Roh,
            layers: 4,
            reflections_per_layer: 8,
            reduction: LohReduction::MeanPool,
            form: Form::Simplified,
        }
    }
}

impl StackSpec {
    pub fn layer_sizes(&self) -> Vec<usize> {
        vec![self.reflections_per_layer; self.layers]
    }
}

/// Triangular schedule: `lr_min → lr_max` over the first half-cycle and back
/// over the second.
pub fn cyclical_lr(iter: usize, cfg: &TrainConfig) -> f64 {
    let cycle = cfg.cycle_length.max(2) as f64;
    let half = cycle / 2.0;
    let pos = (iter as f64) % cycle;
    let frac = if pos <= half { pos / half } else { (cycle - pos) / half };
    cfg.lr_min + (cfg.lr_max - cfg.lr_min) * frac
}

/// Labeled original samples; labels index the sorted speaker ids.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub speakers: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    by_label: Vec<Vec<usize>>,
}

impl TrainingSet {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a Record>) -> Result<Self> {
        let records: Vec<&Record> = records.into_iter().collect();
        if records.is_empty() {
            return Err(Error::EmptyPool("no training records".into()));
        }
        let mut speakers: Vec<String> = records.iter().map(|r| r.speaker.clone()).collect();
        speakers.sort();
        speakers.dedup();
        let mut by_label = vec![Vec::new(); speakers.len()];
        let mut vectors = Vec::with_capacity(records.len());
        let mut labels = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            let label = speakers.binary_search(&r.speaker).expect("speaker listed");
            vectors.push(r.vector.clone());
            labels.push(label);
            by_label[label].push(i);
        }
        Ok(TrainingSet { speakers, vectors, labels, by_label })
    }

    /// The train split of `pool`.
    pub fn from_pool(pool: &EmbeddingPool) -> Result<Self> {
        if !pool.has_split(Split::Train) {
            return Err(Error::SplitMissing("pool has no train split".into()));
        }
        Self::from_records(pool.split_records(Split::Train))
    }

    pub fn num_speakers(&self) -> usize {
        self.speakers.len()
    }

    fn sample(&self, rng: &mut ChaCha8Rng, sampler: Sampler) -> usize {
        match sampler {
            Sampler::Uniform => rng.random_range(0..self.vectors.len()),
            Sampler::SpeakerBalanced => {
                let s = rng.random_range(0..self.by_label.len());
                let utts = &self.by_label[s];
                utts[rng.random_range(0..utts.len())]
            }
        }
    }
}

/// Forward state for one batch: originals, their stack inputs/outputs, and the
/// assembled loss batch.
struct Forward {
    batch: Batch,
    stack_outputs: Vec<Vec<f64>>,
}

fn forward(model: &AnonymizerModel, originals: &[&[f64]], labels: &[usize], num_original: usize) -> Result<Forward> {
    let half = originals.len();
    let mut vectors: Vec<Vec<f64>> = originals.iter().map(|x| x.to_vec()).collect();
    let mut stack_outputs = Vec::with_capacity(half);
    for x in originals {
        let z = model.stack_input(x)?;
        let r = model.stack.apply_conditioned(x, &z)?;
        vectors.push(model.finish(&r)?);
        stack_outputs.push(r);
    }
    let mut all_labels = labels.to_vec();
    all_labels.extend(labels.iter().map(|l| l + num_original));
    Ok(Forward { batch: Batch::new(vectors, all_labels, num_original)?, stack_outputs })
}

/// Loss, stack-parameter gradient and head gradient for a set of originals.
pub struct ObjectiveEval {
    pub loss: f64,
    pub stack_grad: Vec<f64>,
    pub head_grad: Vec<f64>,
    /// Hinge activity per pair; finite differences that flip an entry cross a kink.
    pub hinge_active: Vec<bool>,
}

pub fn evaluate_objective(
    model: &AnonymizerModel,
    head: &ClassifierHead,
    originals: &[&[f64]],
    labels: &[usize],
    cfg: &LossConfig,
    variant: LossVariant,
) -> Result<ObjectiveEval> {
    let fwd = forward(model, originals, labels, head.num_original())?;
    let out = combined_objective(&fwd.batch, head, cfg, variant)?;
    let half = originals.len();
    let mut stack_grad = vec![0.0; model.stack.params().len()];
    for i in 0..half {
        let g = model.grad_to_stack_output(&out.grad_vectors[i + half])?;
        model.stack.backward(originals[i], &fwd.stack_outputs[i], &g, &mut stack_grad)?;
    }
    let hinge_active = (0..half)
        .map(|i| Ok(cosine(&fwd.batch.vectors[i], &fwd.batch.vectors[i + half])? > cfg.cos_margin))
        .collect::<Result<Vec<_>>>()?;
    Ok(ObjectiveEval { loss: out.loss, stack_grad, head_grad: out.grad_head, hinge_active })
}

/// Draws `n/2` originals from the train split of `pool` and pairs them with
/// their anonymized counterparts under labels `y + C`.
pub fn build_batch(pool: &EmbeddingPool, model: &AnonymizerModel, n: usize, rng: &mut ChaCha8Rng) -> Result<Batch> {
    let set = TrainingSet::from_pool(pool)?;
    build_batch_from(&set, model, n, rng, Sampler::Uniform)
}

pub fn build_batch_from(
    set: &TrainingSet,
    model: &AnonymizerModel,
    n: usize,
    rng: &mut ChaCha8Rng,
    sampler: Sampler,
) -> Result<Batch> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::InvalidShape(format!("batch size {n} must be even and >= 2")));
    }
    let idx: Vec<usize> = (0..n / 2).map(|_| set.sample(rng, sampler)).collect();
    let originals: Vec<&[f64]> = idx.iter().map(|&i| set.vectors[i].as_slice()).collect();
    let labels: Vec<usize> = idx.iter().map(|&i| set.labels[i]).collect();
    Ok(forward(model, &originals, &labels, set.num_speakers())?.batch)
}

struct OptState {
    kind: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptState {
    fn new(kind: Optimizer, n: usize) -> Self {
        OptState { kind, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Updates `params` in place; `offset` locates them in the joint state.
    fn step(&mut self, lr: f64, offset: usize, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.t);
                let bc2 = 1.0 - beta2.powi(self.t);
                for (k, (p, g)) in params.iter_mut().zip(grad).enumerate() {
                    let m = &mut self.m[offset + k];
                    let v = &mut self.v[offset + k];
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub loss_variant: LossVariant,
    pub config: TrainConfig,
    pub stack: StackSpec,
    pub num_speakers: usize,
    pub loss_trace: Vec<f64>,
    /// Mean `cos(x, anonymize(x))` over held-out (non-train) records, or over
    /// the train split when the pool has nothing else.
    pub final_mean_pair_cosine: f64,
    pub model_sha256: String,
    /// Excluded from the JSON so reports stay byte-reproducible.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub struct TrainOutput {
    pub model: AnonymizerModel,
    pub head: ClassifierHead,
    pub report: TrainReport,
}

/// Builds the initial model: seeded stack plus frozen pool statistics.
pub fn initial_model(pool: &EmbeddingPool, spec: &StackSpec, seed: u64) -> Result<AnonymizerModel> {
    let stats = pool_stats(pool)?;
    let stack = init_stack(spec.variant, pool.dim(), &spec.layer_sizes(), seed, spec.reduction)?;
    let whitening = match spec.form {
        Form::Simplified => None,
        Form::GeneralWhitened => Some(Whitening::from_covariance(&stats.covariance)?),
    };
    AnonymizerModel::new(stack, stats.mean, whitening, spec.form, seed)
}

pub fn train(pool: &EmbeddingPool, spec: &StackSpec, cfg: &TrainConfig) -> Result<TrainOutput> {
    train_with_snapshots(pool, spec, cfg, |_, _| Ok(()))
}

/// As [`train`], calling `snapshot(iteration, model)` every
/// `cfg.snapshot_every` iterations.
pub fn train_with_snapshots<F>(
    pool: &EmbeddingPool,
    spec: &StackSpec,
    cfg: &TrainConfig,
    mut snapshot: F,
) -> Result<TrainOutput>
where
    F: FnMut(usize, &AnonymizerModel) -> Result<()>,
{
    let started = Instant::now();
    cfg.validate()?;
    let set = TrainingSet::from_pool(pool)?;
    if set.num_speakers() < 2 {
        return Err(Error::PoolTooSmall { available: set.num_speakers(), required: 2 });
    }
    let mut model = initial_model(pool, spec, cfg.seed)?;
    let mut head = ClassifierHead::init(pool.dim(), set.num_speakers(), mix_seed(cfg.seed, "head"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, "batches"));
    let n_stack = model.stack.params().len();
    let mut opt = OptState::new(cfg.optimizer, n_stack + head.weights().len());
    let mut trace = Vec::with_capacity(cfg.iterations);
    let half = cfg.batch_size / 2;

    for iter in 0..cfg.iterations {
        let lr = cyclical_lr(iter, cfg);
        let idx: Vec<usize> = (0..half).map(|_| set.sample(&mut rng, cfg.sampler)).collect();
        let originals: Vec<&[f64]> = idx.iter().map(|&i| set.vectors[i].as_slice()).collect();
        let labels: Vec<usize> = idx.iter().map(|&i| set.labels[i]).collect();
        let eval = evaluate_objective(&model, &head, &originals, &labels, &cfg.loss, cfg.loss_variant)?;
        if !eval.loss.is_finite() || eval.stack_grad.iter().chain(&eval.head_grad).any(|g| !g.is_finite()) {
            return Err(Error::DivergenceDetected { iteration: iter, loss: eval.loss });
        }
        trace.push(eval.loss);
        opt.t += 1;
        opt.step(lr, 0, model.stack.params_mut(), &eval.stack_grad);
        opt.step(lr, n_stack, head.weights_mut(), &eval.head_grad);
        if model.stack.variant() == Variant::Roh {
            let bl = model.stack.block_len();
            if let Some(n) = model.stack.params().chunks(bl).map(norm).find(|n| !(*n >= REFLECTION_FLOOR)) {
                return Err(Error::ZeroReflectionVector { norm: n, floor: REFLECTION_FLOOR });
            }
        }
        if cfg.snapshot_every > 0 && (iter + 1) % cfg.snapshot_every == 0 {
            snapshot(iter + 1, &model)?;
        }
    }

    let held_out: Vec<&Record> = pool.records().iter().filter(|r| r.split != Split::Train).collect();
    let eval_set: Vec<&Record> =
        if held_out.is_empty() { pool.split_records(Split::Train).collect() } else { held_out };
    let mut cos_sum = 0.0;
    for r in &eval_set {
        cos_sum += cosine(&r.vector, &model.anonymize(&r.vector)?)?;
    }
    let report = TrainReport {
        seed: cfg.seed,
        loss_variant: cfg.loss_variant,
        config: cfg.clone(),
        stack: spec.clone(),
        num_speakers: set.num_speakers(),
        loss_trace: trace,
        final_mean_pair_cosine: cos_sum / eval_set.len() as f64,
        model_sha256: container::model_hash(&model),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutput { model, head, report })
}

/// Relative error with an absolute floor on the denominator, so gradients
/// that are zero up to rounding do not dominate.
pub const GRAD_CHECK_FLOOR: f64 = 1e-3;
pub const GRAD_CHECK_STEP: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters whose finite difference straddled a hinge kink.
    pub skipped: usize,
}

/// Central finite differences over every stack and head parameter of the
/// combined objective.
pub fn gradient_check(
    model: &AnonymizerModel,
    head: &ClassifierHead,
    originals: &[&[f64]],
    labels: &[usize],
    cfg: &LossConfig,
    variant: LossVariant,
) -> Result<GradCheck> {
    let base = evaluate_objective(model, head, originals, labels, cfg, variant)?;
    let eps = GRAD_CHECK_STEP;
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut skipped = 0;
    let n_stack = model.stack.params().len();
    for k in 0..n_stack + head.weights().len() {
        let eval_at = |delta: f64| -> Result<ObjectiveEval> {
            let mut m = model.clone();
            let mut h = head.clone();
            if k < n_stack {
                m.stack.params_mut()[k] += delta;
            } else {
                h.weights_mut()[k - n_stack] += delta;
            }
            evaluate_objective(&m, &h, originals, labels, cfg, variant)
        };
        let plus = eval_at(eps)?;
        let minus = eval_at(-eps)?;
        if plus.hinge_active != base.hinge_active || minus.hinge_active != base.hinge_active {
            skipped += 1;
            continue;
        }
        let numeric = (plus.loss - minus.loss) / (2.0 * eps);
        let analytic = if k < n_stack { base.stack_grad[k] } else { base.head_grad[k - n_stack] };
        worst = worst.max(relative_error(analytic, numeric));
        checked += 1;
    }
    Ok(GradCheck { max_rel_error: worst, checked, skipped })
}
