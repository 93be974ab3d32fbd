//! Independent checks of the dual-number and reverse passes against
//! central finite differences, plus the structural identities (duality,
//! linearity in the direction, determinism) the engine must satisfy.

mod common;

use std::sync::Arc;

use common::*;
use tta_core::autodiff::{self, LossFn, NodeId, ParametricFn, Sample, Tape, Target};
use tta_core::layout::ParamLayout;
use tta_core::models::{Activation, Model, ModelSpec};
use tta_core::tensor::Tensor;
use tta_core::training::LossKind;

fn families() -> Vec<(&'static str, ModelSpec)> {
    vec![
        ("relu", mlp_spec(Activation::Relu)),
        ("tanh", mlp_spec(Activation::Tanh)),
        ("gelu", mlp_spec(Activation::Gelu)),
        ("attention", attention_spec()),
    ]
}

#[test]
fn jvp_matches_central_differences_for_every_primitive_family() {
    for (name, spec) in families() {
        for seed in 0..3u64 {
            let model = random_model(&spec, 100 + seed);
            let x = random_input(seed, &format!("x-{name}"), spec.input_dim);
            let d = unit_direction(model.params.layout(), seed, &format!("dir-{name}"));
            let (_, jvp) = autodiff::forward_jvp(&model, &model.params, &d, &x).unwrap();
            let fd = autodiff::finite_diff_directional(&model, &model.params, &d, &x, 1e-6).unwrap();
            let err = max_rel_err(&jvp, &fd);
            assert!(err <= 1e-5, "{name} seed {seed}: jvp vs fd deviation {err:e}");
        }
    }
}

#[test]
fn jvp_and_vjp_satisfy_the_duality_identity() {
    for (name, spec) in families() {
        for seed in 0..3u64 {
            let model = random_model(&spec, 200 + seed);
            let x = random_input(seed, &format!("dx-{name}"), spec.input_dim);
            let v = unit_direction(model.params.layout(), seed, &format!("dv-{name}"));
            let u = random_input(seed, &format!("du-{name}"), spec.num_classes);
            let (_, jv) = autodiff::forward_jvp(&model, &model.params, &v, &x).unwrap();
            let lhs: f64 = u.data().iter().zip(jv.data()).map(|(a, b)| a * b).sum();
            let jtu = autodiff::vjp(&model, &model.params, &x, &u).unwrap();
            let rhs = jtu.dot(&v).unwrap();
            let err = (lhs - rhs).abs() / lhs.abs().max(1.0);
            assert!(err <= 1e-8, "{name} seed {seed}: duality gap {err:e}");
        }
    }
}

#[test]
fn fd_error_shrinks_with_the_step_then_hits_the_roundoff_floor() {
    let spec = mlp_spec(Activation::Tanh);
    let model = random_model(&spec, 7);
    let x = random_input(0, "sweep-x", 2);
    let d = unit_direction(model.params.layout(), 0, "sweep-d");
    let (_, jvp) = autodiff::forward_jvp(&model, &model.params, &d, &x).unwrap();
    let err = |h: f64| {
        let fd = autodiff::finite_diff_directional(&model, &model.params, &d, &x, h).unwrap();
        max_rel_err(&jvp, &fd)
    };
    let coarse = err(1e-2);
    let mid = err(1e-4);
    let fine = err(1e-6);
    assert!(mid < coarse, "halving the step must help: {coarse:e} -> {mid:e}");
    assert!(fine <= 1e-7, "fine step should sit on the roundoff floor, got {fine:e}");
}

#[test]
fn jvp_is_exactly_linear_in_the_direction() {
    for (name, spec) in families() {
        let model = random_model(&spec, 11);
        let x = random_input(3, &format!("lin-x-{name}"), spec.input_dim);
        let layout = model.params.layout();
        let v1 = gaussian_direction(layout, 5, "lin-v1");
        let v2 = gaussian_direction(layout, 6, "lin-v2");
        let (a, b) = (0.37, -1.25);
        let mut mix = v1.scale(a);
        mix.axpy(b, &v2).unwrap();
        let (_, j1) = autodiff::forward_jvp(&model, &model.params, &v1, &x).unwrap();
        let (_, j2) = autodiff::forward_jvp(&model, &model.params, &v2, &x).unwrap();
        let (_, jm) = autodiff::forward_jvp(&model, &model.params, &mix, &x).unwrap();
        let expect = Tensor::new(
            jm.shape().to_vec(),
            j1.data().iter().zip(j2.data()).map(|(p, q)| a * p + b * q).collect(),
        )
        .unwrap();
        let err = max_rel_err(&expect, &jm);
        assert!(err <= 1e-10, "{name}: linearity deviation {err:e}");
    }
}

struct TestLoss<'a> {
    model: &'a Model,
    kind: LossKind,
}

impl LossFn for TestLoss<'_> {
    fn layout(&self) -> &Arc<ParamLayout> {
        self.model.layout()
    }

    fn trace_loss(&self, tape: &mut Tape, batch: &[Sample]) -> tta_core::Result<NodeId> {
        let mut total: Option<NodeId> = None;
        for sample in batch {
            let x = tape.constant(sample.input.clone())?;
            let logits = self.model.trace(tape, x)?;
            let term = match (&self.kind, &sample.target) {
                (LossKind::CrossEntropy, Target::Class(y)) => tape.cross_entropy(logits, *y)?,
                (LossKind::Mse, Target::Values(t)) => {
                    let t = tape.constant(t.clone())?;
                    tape.squared_error(logits, t)?
                }
                _ => panic!("fixture mismatch"),
            };
            total = Some(match total {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        let scale = tape.constant(Tensor::scalar(1.0 / batch.len() as f64).unwrap())?;
        tape.mul(total.unwrap(), scale)
    }
}

#[test]
fn reverse_gradients_match_finite_differences_for_both_losses() {
    let spec = mlp_spec(Activation::Gelu);
    let model = random_model(&spec, 21);
    let ce_batch: Vec<Sample> = (0..5)
        .map(|i| Sample { input: random_input(i, "ce-x", 2), target: Target::Class((i % 3) as usize) })
        .collect();
    let mse_batch: Vec<Sample> = (0..5)
        .map(|i| Sample {
            input: random_input(i, "mse-x", 2),
            target: Target::Values(random_input(i, "mse-t", 3)),
        })
        .collect();
    for (kind, batch) in [(LossKind::CrossEntropy, ce_batch), (LossKind::Mse, mse_batch)] {
        let loss_fn = TestLoss { model: &model, kind };
        let (_, grad) = autodiff::loss_and_grad(&loss_fn, &model.params, &batch).unwrap();
        let d = unit_direction(model.params.layout(), 9, "loss-dir");
        let analytic = grad.dot(&d).unwrap();
        let h = 1e-6;
        let mut plus = model.params.clone();
        plus.axpy(h, &d).unwrap();
        let mut minus = model.params.clone();
        minus.axpy(-h, &d).unwrap();
        let (lp, _) = autodiff::loss_and_grad(&loss_fn, &plus, &batch).unwrap();
        let (lm, _) = autodiff::loss_and_grad(&loss_fn, &minus, &batch).unwrap();
        let fd = (lp - lm) / (2.0 * h);
        let err = (analytic - fd).abs() / analytic.abs().max(1.0);
        assert!(err <= 1e-5, "{kind:?}: grad vs fd deviation {err:e}");
    }
}

#[test]
fn full_gradient_agrees_with_per_class_pullbacks() {
    let spec = attention_spec();
    let model = random_model(&spec, 33);
    let x = random_input(4, "pb-x", 2);
    let u = random_input(4, "pb-u", 3);
    let direct = autodiff::vjp(&model, &model.params, &x, &u).unwrap();
    let mut assembled = tta_core::layout::ParamVector::zeros(model.params.layout().clone());
    for j in 0..3 {
        let mut e = vec![0.0; 3];
        e[j] = 1.0;
        let g = autodiff::vjp(&model, &model.params, &x, &Tensor::vector(e).unwrap()).unwrap();
        assembled.axpy(u.data()[j], &g).unwrap();
    }
    let worst = direct
        .values()
        .iter()
        .zip(assembled.values())
        .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max);
    assert!(worst <= 1e-12, "pullback additivity deviation {worst:e}");
}

#[test]
fn engine_runs_are_bitwise_reproducible() {
    let spec = attention_spec();
    let run = || {
        let model = random_model(&spec, 55);
        let x = random_input(8, "det-x", 2);
        let d = unit_direction(model.params.layout(), 8, "det-d");
        let (val, jvp) = autodiff::forward_jvp(&model, &model.params, &d, &x).unwrap();
        let grad = autodiff::vjp(&model, &model.params, &x, &random_input(8, "det-u", 3)).unwrap();
        (bits(val.data()), bits(jvp.data()), bits(grad.values()))
    };
    assert_eq!(run(), run());
}
