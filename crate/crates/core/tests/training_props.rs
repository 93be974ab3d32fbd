//! Behavioral guarantees of the training loops: determinism, the
//! stay-at-base-point invariant of linearized training, loss descent for
//! both optimizers, and task solvability of the generated suite.

mod common;

use common::*;
use tta_core::autodiff::{fingerprint, with_eval_probe};
use tta_core::models::ModelSpec;
use tta_core::rng::child_seed;
use tta_core::tasks::{accuracy, build_suite, pretrain_corpus, SuiteConfig};
use tta_core::training::{
    default_pretrain_config, finetune_linearized, finetune_nonlinear, lr_schedule, pretrain,
    OptimizerKind, TrainConfig,
};

fn suite_model() -> ModelSpec {
    ModelSpec::default()
}

fn quick_cfg(iterations: usize, seed: u64) -> TrainConfig {
    TrainConfig { iterations, warmup_steps: iterations / 10, seed, ..TrainConfig::default() }
}

#[test]
fn schedule_stays_within_the_peak_rate() {
    let cfg = TrainConfig { iterations: 400, warmup_steps: 40, lr: 3e-3, ..TrainConfig::default() };
    for step in 0..400 {
        let lr = lr_schedule(step, &cfg).unwrap();
        assert!(lr >= 0.0 && lr <= cfg.lr + 1e-18, "step {step}: lr {lr} outside [0, {}]", cfg.lr);
    }
    assert_eq!(lr_schedule(40, &cfg).unwrap(), cfg.lr);
}

#[test]
fn same_seed_training_is_bit_identical_and_seeds_separate() {
    let suite = build_suite(&SuiteConfig::default()).unwrap();
    let base = random_model(&suite_model(), 70);
    let run = |seed: u64| {
        let out = finetune_nonlinear(&base, &suite.tasks[0].train, &quick_cfg(60, seed)).unwrap();
        bits(out.model.params.values())
    };
    assert_eq!(run(5), run(5), "same seed must reproduce parameters bit for bit");
    assert_ne!(run(5), run(6), "different seeds must shuffle batches differently");
}

#[test]
fn linearized_training_never_leaves_the_base_point() {
    let suite = build_suite(&SuiteConfig::default()).unwrap();
    let base = random_model(&suite_model(), 71);
    let base_fp = fingerprint(&base.params);
    let (outcome, sites) = with_eval_probe(|| finetune_linearized(&base, &suite.tasks[0].train, &quick_cfg(40, 9)));
    let outcome = outcome.unwrap();
    assert!(!sites.is_empty());
    assert!(sites.iter().all(|&s| s == base_fp), "a network evaluation left the base point");
    assert!(outcome.tau.norm() > 0.0, "training should have moved the displacement");
}

#[test]
fn nonlinear_training_does_leave_the_base_point() {
    let suite = build_suite(&SuiteConfig::default()).unwrap();
    let base = random_model(&suite_model(), 72);
    let base_fp = fingerprint(&base.params);
    let (outcome, sites) = with_eval_probe(|| finetune_nonlinear(&base, &suite.tasks[0].train, &quick_cfg(40, 9)));
    outcome.unwrap();
    assert!(sites.iter().any(|&s| s != base_fp), "weight training must evaluate at updated parameters");
}

#[test]
fn both_optimizers_descend_on_the_training_loss() {
    let suite = build_suite(&SuiteConfig::default()).unwrap();
    let base = random_model(&suite_model(), 73);
    for kind in [OptimizerKind::AdamW, OptimizerKind::Sgd] {
        let cfg = TrainConfig {
            optimizer: kind,
            lr: if kind == OptimizerKind::Sgd { 0.05 } else { 1e-3 },
            ..quick_cfg(200, 3)
        };
        let out = finetune_nonlinear(&base, &suite.tasks[1].train, &cfg).unwrap();
        let first: f64 =
            out.log.entries[..10].iter().map(|e| e.loss).sum::<f64>() / 10.0;
        let last: f64 =
            out.log.entries[out.log.entries.len() - 10..].iter().map(|e| e.loss).sum::<f64>() / 10.0;
        println!("optimizer {kind:?}: loss {first:.4} -> {last:.4}");
        assert!(last < first, "{kind:?} failed to reduce the loss: {first} -> {last}");
    }
}

#[test]
fn every_suite_task_is_solvable_by_direct_training() {
    let suite = build_suite(&SuiteConfig::default()).unwrap();
    let specs: Vec<_> = suite.tasks.iter().map(|t| t.spec.clone()).collect();
    let corpus = pretrain_corpus(&specs, 2048, child_seed(0, "corpus")).unwrap();
    let (base, _) = pretrain(&suite_model(), &corpus, &default_pretrain_config(0)).unwrap();
    for task in &suite.tasks {
        let cfg = TrainConfig { seed: 1000 + task.spec.id as u64, ..TrainConfig::default() };
        let out = finetune_nonlinear(&base, &task.train, &cfg).unwrap();
        let acc = accuracy(&out.model, &task.heldout).unwrap();
        println!("task {} held-out accuracy after direct training: {acc:.4}", task.spec.id);
        assert!(acc >= 0.9, "task {} reached only {acc}", task.spec.id);
    }
}

#[test]
fn linearized_training_learns_the_task_too() {
    let suite = build_suite(&SuiteConfig::default()).unwrap();
    let base = random_model(&suite_model(), 75);
    let task = &suite.tasks[2];
    let cfg = TrainConfig { seed: 11, ..TrainConfig::default() };
    let out = finetune_linearized(&base, &task.train, &cfg).unwrap();
    let acc = accuracy(&out.model, &task.heldout).unwrap();
    let chance = suite.chance_accuracy();
    println!("linearized held-out accuracy: {acc:.4} (chance {chance:.4})");
    assert!(acc > 3.0 * chance, "linearized training stayed near chance: {acc}");
}
