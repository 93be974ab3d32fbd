//! Training loops: pre-training on the coarse corpus, non-linear
//! fine-tuning of encoder weights, and linearized fine-tuning that trains a
//! task vector against the tangent model while only ever evaluating the
//! network at the base point.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, LossFn, NodeId, ParametricFn, Sample, Tape, Target};
use crate::error::{CoreError, Result};
use crate::layout::ParamVector;
use crate::linearize::LinearizedModel;
use crate::models::{init_random, InitMode, Model, ModelSpec};
use crate::rng;
use crate::taskvec::{make_task_vector, OriginTag, TaskVector};
use crate::tasks::{self, Dataset, SuiteConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    AdamW,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub schedule: Schedule,
    pub weight_decay: f64,
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 500,
            batch_size: 64,
            lr: 1e-3,
            warmup_steps: 50,
            schedule: Schedule::Cosine,
            weight_decay: 0.01,
            loss: LossKind::CrossEntropy,
            optimizer: OptimizerKind::AdamW,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations > 0 && self.iterations <= self.warmup_steps {
            return Err(CoreError::Config(format!(
                "iterations ({}) must exceed warmup_steps ({})",
                self.iterations, self.warmup_steps
            )));
        }
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(CoreError::Config(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(CoreError::Config("weight_decay must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Linear warmup from zero to `lr` over `warmup_steps`, then cosine decay
/// to zero at `iterations`.
pub fn lr_schedule(step: usize, cfg: &TrainConfig) -> Result<f64> {
    if step >= cfg.iterations {
        return Err(CoreError::Contract(format!(
            "step {step} out of range for {} iterations",
            cfg.iterations
        )));
    }
    if step < cfg.warmup_steps {
        return Ok(cfg.lr * step as f64 / cfg.warmup_steps as f64);
    }
    match cfg.schedule {
        Schedule::Cosine => {
            let span = (cfg.iterations - cfg.warmup_steps) as f64;
            let progress = (step - cfg.warmup_steps) as f64 / span;
            Ok(cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
        }
    }
}

/// First and second moments for AdamW; SGD ignores them.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl OptimizerState {
    pub fn new(kind: OptimizerKind, len: usize) -> Self {
        OptimizerState { kind, m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    /// One update with decoupled weight decay: the decay term scales the
    /// parameter directly and never enters the moments.
    pub fn update(&mut self, params: &mut ParamVector, grad: &ParamVector, lr: f64, weight_decay: f64) -> Result<()> {
        params.check_same_layout(grad)?;
        if params.values().len() != self.m.len() {
            return Err(CoreError::Layout("optimizer state length mismatch".into()));
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::AdamW => {
                let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
                let p = params.values_mut();
                for i in 0..p.len() {
                    let g = grad.values()[i];
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let mhat = self.m[i] / bc1;
                    let vhat = self.v[i] / bc2;
                    p[i] -= lr * (mhat / (vhat.sqrt() + ADAM_EPS) + weight_decay * p[i]);
                }
            }
            OptimizerKind::Sgd => {
                let p = params.values_mut();
                for i in 0..p.len() {
                    p[i] -= lr * (grad.values()[i] + weight_decay * p[i]);
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LogEntry {
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

pub struct FinetuneOutcome {
    pub model: Model,
    pub tau: TaskVector,
    pub log: TrainLog,
}

pub struct LinearizedOutcome {
    pub model: LinearizedModel,
    pub tau: TaskVector,
    pub log: TrainLog,
}

/// Mean batch loss of a model, expressed on the tape.
struct ModelLoss<'a> {
    model: &'a Model,
    kind: LossKind,
}

impl LossFn for ModelLoss<'_> {
    fn layout(&self) -> &std::sync::Arc<crate::layout::ParamLayout> {
        self.model.layout()
    }

    fn trace_loss(&self, tape: &mut Tape, batch: &[Sample]) -> Result<NodeId> {
        let mut total: Option<NodeId> = None;
        for sample in batch {
            let x = tape.constant(sample.input.clone())?;
            let logits = self.model.trace(tape, x)?;
            let loss = trace_sample_loss(tape, logits, self.kind, &sample.target, self.model.spec.num_classes)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, loss)?,
                None => loss,
            });
        }
        let total = total.ok_or_else(|| CoreError::Contract("empty batch".into()))?;
        let scale = tape.constant(Tensor::scalar(1.0 / batch.len() as f64)?)?;
        tape.mul(total, scale)
    }
}

fn trace_sample_loss(tape: &mut Tape, logits: NodeId, kind: LossKind, target: &Target, classes: usize) -> Result<NodeId> {
    match (kind, target) {
        (LossKind::CrossEntropy, Target::Class(y)) => tape.cross_entropy(logits, *y),
        (LossKind::CrossEntropy, Target::Values(_)) => {
            Err(CoreError::Contract("cross-entropy needs class targets".into()))
        }
        (LossKind::Mse, Target::Class(y)) => {
            let onehot = tape.constant(one_hot(*y, classes)?)?;
            tape.squared_error(logits, onehot)
        }
        (LossKind::Mse, Target::Values(t)) => {
            let t = tape.constant(t.clone())?;
            tape.squared_error(logits, t)
        }
    }
}

fn one_hot(class: usize, classes: usize) -> Result<Tensor> {
    if class >= classes {
        return Err(CoreError::Contract(format!("class {class} out of range for {classes} classes")));
    }
    let mut data = vec![0.0; classes];
    data[class] = 1.0;
    Tensor::new(vec![classes], data)
}

/// Loss value and its gradient with respect to the logits, in closed form.
fn loss_output_grad(kind: LossKind, logits: &Tensor, target: &Target, classes: usize) -> Result<(f64, Tensor)> {
    match (kind, target) {
        (LossKind::CrossEntropy, Target::Class(y)) => {
            let z = logits.data();
            if *y >= z.len() {
                return Err(CoreError::Contract(format!("class {y} out of range")));
            }
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let loss = m + sum.ln() - z[*y];
            let mut grad: Vec<f64> = exps.into_iter().map(|e| e / sum).collect();
            grad[*y] -= 1.0;
            Ok((loss, Tensor::new(vec![z.len()], grad)?))
        }
        (LossKind::Mse, target) => {
            let t = match target {
                Target::Values(t) => t.clone(),
                Target::Class(y) => one_hot(*y, classes)?,
            };
            if t.shape() != logits.shape() {
                return Err(CoreError::Contract("mse target shape mismatch".into()));
            }
            let n = logits.len() as f64;
            let loss = logits
                .data()
                .iter()
                .zip(t.data())
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                / n;
            let grad: Vec<f64> =
                logits.data().iter().zip(t.data()).map(|(p, q)| 2.0 * (p - q) / n).collect();
            Ok((loss, Tensor::new(logits.shape().to_vec(), grad)?))
        }
        (LossKind::CrossEntropy, Target::Values(_)) => {
            Err(CoreError::Contract("cross-entropy needs class targets".into()))
        }
    }
}

/// Epoch-shuffled batch order. Epochs reshuffle with the same stream;
/// a trailing partial epoch chunk is dropped.
struct BatchCursor {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: rand_chacha::ChaCha8Rng,
}

impl BatchCursor {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        BatchCursor {
            order: (0..n).collect(),
            pos: usize::MAX,
            batch: batch.min(n),
            rng: rng::stream(seed, "batches"),
        }
    }

    fn next(&mut self) -> Vec<usize> {
        if self.pos == usize::MAX || self.pos + self.batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let slice = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        slice
    }
}

fn dataset_samples(data: &Dataset) -> Vec<Sample> {
    data.inputs
        .iter()
        .zip(&data.labels)
        .map(|(x, &y)| Sample { input: x.clone(), target: Target::Class(y) })
        .collect()
}

/// Gradient-descent training of the raw network weights.
fn train_model(model: &Model, samples: &[Sample], cfg: &TrainConfig) -> Result<(ParamVector, TrainLog)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(CoreError::Contract("training on an empty dataset".into()));
    }
    let mut params = model.params.clone();
    let mut opt = OptimizerState::new(cfg.optimizer, params.values().len());
    let mut cursor = BatchCursor::new(samples.len(), cfg.batch_size, cfg.seed);
    let loss_fn = ModelLoss { model, kind: cfg.loss };
    let mut log = TrainLog::default();
    for step in 0..cfg.iterations {
        let lr = lr_schedule(step, cfg)?;
        let batch: Vec<Sample> = cursor.next().into_iter().map(|i| samples[i].clone()).collect();
        let (loss, grad) = autodiff::loss_and_grad(&loss_fn, &params, &batch)?;
        opt.update(&mut params, &grad, lr, cfg.weight_decay)?;
        log.entries.push(LogEntry { iteration: step, lr, loss });
    }
    Ok((params, log))
}

/// Pre-train a randomly initialized model on the coarse corpus.
pub fn pretrain(spec: &ModelSpec, corpus: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainLog)> {
    let model = init_random(spec, cfg.seed)?;
    let samples = dataset_samples(corpus);
    let (params, log) = train_model(&model, &samples, cfg)?;
    Ok((model.with_params(params)?, log))
}

/// The default pre-trained base: default suite geometry, a 2048-point
/// coarse corpus, and the default pre-training configuration, all seeded
/// from `seed`. Used by `models::init_params(PretrainedSurrogate)`.
pub fn pretrain_surrogate(spec: &ModelSpec, seed: u64) -> Result<Model> {
    let suite_cfg = SuiteConfig { seed: rng::child_seed(seed, "surrogate-suite"), ..SuiteConfig::default() };
    let specs = tasks::gen_disjoint_suite(&suite_cfg)?;
    let corpus = tasks::pretrain_corpus(&specs, 2048, rng::child_seed(seed, "surrogate-corpus"))?;
    let cfg = default_pretrain_config(seed);
    pretrain(spec, &corpus, &cfg).map(|(m, _)| m)
}

pub fn default_pretrain_config(seed: u64) -> TrainConfig {
    TrainConfig {
        iterations: 3000,
        weight_decay: 0.0,
        seed: rng::child_seed(seed, "pretrain"),
        ..TrainConfig::default()
    }
}

pub fn default_finetune_config(seed: u64) -> TrainConfig {
    TrainConfig { seed: rng::child_seed(seed, "finetune"), ..TrainConfig::default() }
}

/// Fine-tune the raw network on one task's training split. The frozen head
/// is untouched by construction; the result carries `theta_star` and the
/// task vector `theta_star - theta0`.
pub fn finetune_nonlinear(base: &Model, data: &Dataset, cfg: &TrainConfig) -> Result<FinetuneOutcome> {
    let samples = dataset_samples(data);
    let (params, log) = train_model(base, &samples, cfg)?;
    let tau = make_task_vector(&base.params, &params, OriginTag::Nonlinear)?;
    Ok(FinetuneOutcome { model: base.with_params(params)?, tau, log })
}

/// Fine-tune the tangent model: predictions are `f(x; theta0) + J tau`,
/// and every network evaluation (value, directional derivative, gradient
/// pullback) happens at `theta0`.
pub fn finetune_linearized(base: &Model, data: &Dataset, cfg: &TrainConfig) -> Result<LinearizedOutcome> {
    let samples = dataset_samples(data);
    train_linearized(base, &samples, cfg)
}

/// Linearized training against explicit regression targets in logit
/// space; requires the MSE loss.
pub fn finetune_linearized_regression(
    base: &Model,
    inputs: &[Tensor],
    targets: &[Tensor],
    cfg: &TrainConfig,
) -> Result<LinearizedOutcome> {
    if cfg.loss != LossKind::Mse {
        return Err(CoreError::Config("regression fine-tuning requires the mse loss".into()));
    }
    if inputs.len() != targets.len() {
        return Err(CoreError::Contract("inputs and targets differ in length".into()));
    }
    let samples: Vec<Sample> = inputs
        .iter()
        .zip(targets)
        .map(|(x, t)| Sample { input: x.clone(), target: Target::Values(t.clone()) })
        .collect();
    train_linearized(base, &samples, cfg)
}

fn train_linearized(base: &Model, samples: &[Sample], cfg: &TrainConfig) -> Result<LinearizedOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(CoreError::Contract("training on an empty dataset".into()));
    }
    let theta0 = &base.params;
    let mut tau = ParamVector::zeros(theta0.layout().clone());
    let mut opt = OptimizerState::new(cfg.optimizer, tau.values().len());
    let mut cursor = BatchCursor::new(samples.len(), cfg.batch_size, cfg.seed);
    let mut log = TrainLog::default();
    let classes = base.spec.num_classes;
    for step in 0..cfg.iterations {
        let lr = lr_schedule(step, cfg)?;
        let idx = cursor.next();
        let mut loss_sum = 0.0;
        let mut grad = ParamVector::zeros(theta0.layout().clone());
        for &i in &idx {
            let sample = &samples[i];
            let (primal, delta) = autodiff::forward_jvp(base, theta0, &tau, &sample.input)?;
            let pred = Tensor::new(
                primal.shape().to_vec(),
                primal.data().iter().zip(delta.data()).map(|(a, b)| a + b).collect(),
            )?;
            let (loss, out_grad) = loss_output_grad(cfg.loss, &pred, &sample.target, classes)?;
            loss_sum += loss;
            let g = autodiff::vjp(base, theta0, &sample.input, &out_grad)?;
            grad.axpy(1.0, &g)?;
        }
        let scale = 1.0 / idx.len() as f64;
        let grad = grad.scale(scale);
        let loss = loss_sum * scale;
        if !loss.is_finite() {
            return Err(CoreError::Numeric(format!("non-finite linearized loss at step {step}")));
        }
        opt.update(&mut tau, &grad, lr, cfg.weight_decay)?;
        log.entries.push(LogEntry { iteration: step, lr, loss });
    }
    let tau = TaskVector::new(tau, OriginTag::Linearized);
    let model = LinearizedModel::new(base.clone(), tau.clone())?;
    Ok(LinearizedOutcome { model, tau, log })
}

/// Convenience for `models::init_params`: dispatch on the init mode.
pub fn init_model(spec: &ModelSpec, seed: u64, mode: InitMode) -> Result<Model> {
    crate::models::init_params(spec, seed, mode)
}
