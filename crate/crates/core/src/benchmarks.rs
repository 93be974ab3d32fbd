//! Task-arithmetic editing benchmarks: multi-task addition scored by
//! normalized accuracy, targeted forgetting by negation under a control
//! accuracy floor, and the random-initialization control that separates
//! genuine pre-trained structure from pipeline artifacts.

use crate::error::{CoreError, Result};
use crate::linearize::LinearizedModel;
use crate::models::{init_params, InitMode, Model, ModelSpec, Predictor};
use crate::rng;
use crate::taskvec::{
    alpha_search, combine, negate, AlphaEval, MixingConfig, OriginTag, SearchMode, TaskVector,
};
use crate::tasks::{accuracy, Suite};
use crate::training::{self, TrainConfig};

/// How task vectors are produced and how edits are applied.
///
/// `Nonlinear` trains and edits raw weights. `Posthoc` trains raw weights
/// but applies the resulting vectors through the tangent model.
/// `Linearized` trains in the tangent space and applies there too.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Nonlinear,
    Posthoc,
    Linearized,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Nonlinear => "nonlinear",
            Method::Posthoc => "posthoc",
            Method::Linearized => "linearized",
        }
    }

    /// The origin tag the method's task vectors must carry.
    pub fn expected_origin(&self) -> OriginTag {
        match self {
            Method::Nonlinear | Method::Posthoc => OriginTag::Nonlinear,
            Method::Linearized => OriginTag::Linearized,
        }
    }
}

/// Predictor for the base edited by a single (already combined) task
/// vector under the method's application rule.
pub fn edited_predictor(base: &Model, tau: &TaskVector, method: Method) -> Result<Box<dyn Predictor>> {
    if tau.origin() != method.expected_origin() {
        return Err(CoreError::Contract(format!(
            "{} editing got a task vector of origin {}",
            method.as_str(),
            tau.origin().as_str()
        )));
    }
    match method {
        Method::Nonlinear => {
            let params = crate::taskvec::apply(&base.params, tau)?;
            Ok(Box::new(base.with_params(params)?))
        }
        Method::Posthoc | Method::Linearized => {
            Ok(Box::new(LinearizedModel::new(base.clone(), tau.clone())?))
        }
    }
}

/// One task vector by the method's training route. `cfg.seed` should
/// already be task-specific; `finetune_suite` derives it from a parent.
pub fn finetune_task(
    base: &Model,
    task: &crate::tasks::TaskData,
    method: Method,
    cfg: &TrainConfig,
) -> Result<(TaskVector, crate::training::TrainLog)> {
    match method {
        Method::Nonlinear | Method::Posthoc => {
            let out = training::finetune_nonlinear(base, &task.train, cfg)?;
            Ok((out.tau, out.log))
        }
        Method::Linearized => {
            let out = training::finetune_linearized(base, &task.train, cfg)?;
            Ok((out.tau, out.log))
        }
    }
}

/// One task vector per suite task, produced by the method's own training
/// route with per-task seeds derived from `seed`.
pub fn finetune_suite(base: &Model, suite: &Suite, method: Method, seed: u64) -> Result<Vec<TaskVector>> {
    let mut taus = Vec::with_capacity(suite.num_tasks());
    for task in &suite.tasks {
        let cfg = TrainConfig {
            seed: rng::child_seed(seed, &format!("finetune-task-{}", task.spec.id)),
            ..TrainConfig::default()
        };
        taus.push(finetune_task(base, task, method, &cfg)?.0);
    }
    Ok(taus)
}

/// Mean ratio of multi-task to single-task accuracy. Each denominator is
/// the same method's own single-task accuracy and must be positive.
pub fn normalized_addition_accuracy(multi: &[f64], single: &[f64]) -> Result<f64> {
    if multi.is_empty() || multi.len() != single.len() {
        return Err(CoreError::Contract("normalized accuracy needs matched per-task lists".into()));
    }
    let mut total = 0.0;
    for (t, (&m, &s)) in multi.iter().zip(single).enumerate() {
        if s <= 0.0 {
            return Err(CoreError::Contract(format!(
                "task {t} single-task accuracy is {s}; cannot normalize"
            )));
        }
        total += m / s;
    }
    Ok(total / multi.len() as f64)
}

#[derive(Debug, Clone)]
pub struct AdditionResult {
    pub method: Method,
    /// Mixing coefficient chosen on held-out data.
    pub alpha: f64,
    /// Objective value at the chosen coefficient.
    pub normalized_heldout: f64,
    /// Normalized accuracy on the test splits at the chosen coefficient.
    pub normalized_test: f64,
    pub per_task_test: Vec<f64>,
    pub single_task_test: Vec<f64>,
    pub single_task_heldout: Vec<f64>,
}

/// Multi-task addition: edit the base with `alpha * sum_t tau_t`, pick
/// `alpha` by normalized held-out accuracy, report test metrics there.
pub fn task_addition(
    base: &Model,
    taus: &[TaskVector],
    suite: &Suite,
    mixing: &MixingConfig,
    method: Method,
) -> Result<AdditionResult> {
    if taus.len() != suite.num_tasks() {
        return Err(CoreError::Contract(format!(
            "{} task vectors for a {}-task suite",
            taus.len(),
            suite.num_tasks()
        )));
    }
    let mut single_task_heldout = Vec::with_capacity(taus.len());
    let mut single_task_test = Vec::with_capacity(taus.len());
    for (tau, task) in taus.iter().zip(&suite.tasks) {
        let single = edited_predictor(base, tau, method)?;
        single_task_heldout.push(accuracy(single.as_ref(), &task.heldout)?);
        single_task_test.push(accuracy(single.as_ref(), &task.test)?);
    }
    let sum = combine(taus, &vec![1.0; taus.len()])?;
    let outcome = alpha_search(mixing, SearchMode::Maximize, |alpha| {
        let scaled = combine(std::slice::from_ref(&sum), &[alpha])?;
        let edited = edited_predictor(base, &scaled, method)?;
        let mut per_task = Vec::with_capacity(suite.num_tasks());
        for task in &suite.tasks {
            per_task.push(accuracy(edited.as_ref(), &task.heldout)?);
        }
        let score = normalized_addition_accuracy(&per_task, &single_task_heldout)?;
        Ok(AlphaEval { score, feasible: true })
    })?;
    let scaled = combine(std::slice::from_ref(&sum), &[outcome.alpha])?;
    let edited = edited_predictor(base, &scaled, method)?;
    let mut per_task_test = Vec::with_capacity(suite.num_tasks());
    for task in &suite.tasks {
        per_task_test.push(accuracy(edited.as_ref(), &task.test)?);
    }
    let normalized_test = normalized_addition_accuracy(&per_task_test, &single_task_test)?;
    Ok(AdditionResult {
        method,
        alpha: outcome.alpha,
        normalized_heldout: outcome.score,
        normalized_test,
        per_task_test,
        single_task_test,
        single_task_heldout,
    })
}

/// The control floor for negation: the edited model must keep at least
/// this fraction of the pre-trained model's control-task accuracy.
pub const CONTROL_RETENTION: f64 = 0.95;

pub fn feasibility_threshold(pretrained_control_accuracy: f64) -> f64 {
    CONTROL_RETENTION * pretrained_control_accuracy
}

#[derive(Debug, Clone)]
pub struct NegationResult {
    pub method: Method,
    /// Scaling of the negated target vector chosen on held-out data;
    /// zero with `feasible = false` when no grid point kept the control
    /// accuracy above the floor.
    pub alpha: f64,
    pub feasible: bool,
    pub target_heldout: f64,
    pub control_heldout: f64,
    pub target_test: f64,
    pub control_test: f64,
    /// `CONTROL_RETENTION` times the pre-trained control held-out accuracy.
    pub control_floor: f64,
}

/// Targeted forgetting: edit with `-alpha * tau_target`, minimizing the
/// target task's held-out accuracy subject to the control floor.
pub fn task_negation(
    base: &Model,
    tau_target: &TaskVector,
    target: usize,
    control: usize,
    suite: &Suite,
    mixing: &MixingConfig,
    method: Method,
) -> Result<NegationResult> {
    if target >= suite.num_tasks() || control >= suite.num_tasks() {
        return Err(CoreError::Contract(format!(
            "target {target} / control {control} out of range for {} tasks",
            suite.num_tasks()
        )));
    }
    if target == control {
        return Err(CoreError::Contract("target and control task must differ".into()));
    }
    let target_task = &suite.tasks[target];
    let control_task = &suite.tasks[control];
    let control_floor = feasibility_threshold(accuracy(base, &control_task.heldout)?);
    let negated = negate(tau_target);
    let outcome = alpha_search(mixing, SearchMode::ConstrainedMinimize, |alpha| {
        let scaled = combine(std::slice::from_ref(&negated), &[alpha])?;
        let edited = edited_predictor(base, &scaled, method)?;
        let score = accuracy(edited.as_ref(), &target_task.heldout)?;
        let control_acc = accuracy(edited.as_ref(), &control_task.heldout)?;
        Ok(AlphaEval { score, feasible: control_acc >= control_floor })
    })?;
    let scaled = combine(std::slice::from_ref(&negated), &[outcome.alpha])?;
    let edited = edited_predictor(base, &scaled, method)?;
    Ok(NegationResult {
        method,
        alpha: outcome.alpha,
        feasible: outcome.feasible,
        target_heldout: outcome.score,
        control_heldout: accuracy(edited.as_ref(), &control_task.heldout)?,
        target_test: accuracy(edited.as_ref(), &target_task.test)?,
        control_test: accuracy(edited.as_ref(), &control_task.test)?,
        control_floor,
    })
}

/// Run the full addition pipeline from a randomly initialized base
/// instead of a pre-trained one. Single-task accuracies stay high (each
/// fine-tune still learns its task) but the summed edit has no shared
/// structure to exploit, so multi-task accuracy collapses toward chance.
pub fn random_init_control(
    spec: &ModelSpec,
    suite: &Suite,
    method: Method,
    mixing: &MixingConfig,
    seed: u64,
) -> Result<AdditionResult> {
    let base = init_params(spec, rng::child_seed(seed, "random-base"), InitMode::Random)?;
    let taus = finetune_suite(&base, suite, method, rng::child_seed(seed, "random-finetune"))?;
    task_addition(&base, &taus, suite, mixing, method)
}
