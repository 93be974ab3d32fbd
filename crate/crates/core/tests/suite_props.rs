//! Property tests for task-vector algebra, the coefficient search, and
//! the statistical shape of model initialization and random-model
//! predictions.

mod common;

use std::sync::Arc;

use common::*;
use proptest::prelude::*;
use tta_core::layout::{LayoutBuilder, ParamLayout, ParamVector};
use tta_core::models::{ModelSpec, Predictor};
use tta_core::taskvec::{alpha_search, combine, AlphaEval, MixingConfig, OriginTag, SearchMode, TaskVector};
use tta_core::tasks::{build_suite, SuiteConfig};

fn tiny_layout() -> Arc<ParamLayout> {
    let mut b = LayoutBuilder::new();
    b.add("w", &[4]).unwrap();
    b.build()
}

fn tv(layout: &Arc<ParamLayout>, values: Vec<f64>) -> TaskVector {
    TaskVector::new(ParamVector::from_values(layout.clone(), values).unwrap(), OriginTag::Nonlinear)
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn combine_is_the_entrywise_weighted_sum(
        v1 in prop::collection::vec(-10.0f64..10.0, 4),
        v2 in prop::collection::vec(-10.0f64..10.0, 4),
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
    ) {
        let layout = tiny_layout();
        let out = combine(&[tv(&layout, v1.clone()), tv(&layout, v2.clone())], &[a, b]).unwrap();
        for i in 0..4 {
            let expect = a * v1[i] + b * v2[i];
            prop_assert!((out.values().values()[i] - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn combine_is_permutation_invariant(
        v1 in prop::collection::vec(-10.0f64..10.0, 4),
        v2 in prop::collection::vec(-10.0f64..10.0, 4),
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
    ) {
        let layout = tiny_layout();
        let fwd = combine(&[tv(&layout, v1.clone()), tv(&layout, v2.clone())], &[a, b]).unwrap();
        let rev = combine(&[tv(&layout, v2), tv(&layout, v1)], &[b, a]).unwrap();
        for i in 0..4 {
            let x = fwd.values().values()[i];
            let y = rev.values().values()[i];
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn maximize_matches_a_brute_force_scan(
        scores in prop::collection::vec(-100.0f64..100.0, 1..16),
    ) {
        let grid = MixingConfig { alphas: (0..scores.len()).map(|k| k as f64).collect() };
        let outcome = alpha_search(&grid, SearchMode::Maximize, |alpha| {
            Ok(AlphaEval { score: scores[alpha as usize], feasible: true })
        }).unwrap();
        let mut best = 0usize;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = i;
            }
        }
        prop_assert_eq!(outcome.alpha, best as f64);
        prop_assert_eq!(outcome.score, scores[best]);
        prop_assert!(outcome.feasible);
    }

    #[test]
    fn constrained_minimize_matches_a_brute_force_scan(
        evals in prop::collection::vec((-100.0f64..100.0, prop::bool::ANY), 1..16),
    ) {
        let grid = MixingConfig { alphas: (0..evals.len()).map(|k| k as f64).collect() };
        let outcome = alpha_search(&grid, SearchMode::ConstrainedMinimize, |alpha| {
            let (score, feasible) = evals[alpha as usize];
            Ok(AlphaEval { score, feasible })
        }).unwrap();
        let mut best: Option<usize> = None;
        for (i, (s, f)) in evals.iter().enumerate() {
            if *f && best.map_or(true, |b| *s < evals[b].0) {
                best = Some(i);
            }
        }
        match best {
            Some(i) => {
                prop_assert!(outcome.feasible);
                prop_assert_eq!(outcome.alpha, i as f64);
                prop_assert_eq!(outcome.score, evals[i].0);
            }
            None => {
                prop_assert!(!outcome.feasible);
                prop_assert_eq!(outcome.alpha, 0.0);
            }
        }
    }

    #[test]
    fn maximize_is_invariant_under_monotone_transforms(
        scores in prop::collection::vec(-50.0f64..50.0, 1..12),
    ) {
        let grid = MixingConfig { alphas: (0..scores.len()).map(|k| k as f64).collect() };
        let plain = alpha_search(&grid, SearchMode::Maximize, |alpha| {
            Ok(AlphaEval { score: scores[alpha as usize], feasible: true })
        }).unwrap();
        let warped = alpha_search(&grid, SearchMode::Maximize, |alpha| {
            Ok(AlphaEval { score: (scores[alpha as usize] * 0.1).exp(), feasible: true })
        }).unwrap();
        prop_assert_eq!(plain.alpha, warped.alpha);
    }
}

#[test]
fn weights_follow_fan_in_scaling_and_biases_start_at_zero() {
    let spec = ModelSpec::default();
    let mut pooled: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for seed in 0..5u64 {
        let model = random_model(&spec, 300 + seed);
        for entry in model.params.layout().entries() {
            let vals = model.params.entry_slice(&entry.name).unwrap();
            pooled.entry(entry.name.clone()).or_default().extend_from_slice(vals);
        }
    }
    let layout = random_model(&spec, 300).params.layout().clone();
    for entry in layout.entries() {
        let vals = &pooled[&entry.name];
        if entry.shape.len() < 2 {
            assert!(vals.iter().all(|v| *v == 0.0), "{}: biases should init zero", entry.name);
            continue;
        }
        let fan_in = entry.shape[1];
        let expect = 1.0 / (fan_in as f64).sqrt();
        let std = (vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64).sqrt();
        println!("{}: sample std {std:.5}, target {expect:.5} ({} draws)", entry.name, vals.len());
        let band = if vals.len() < 1000 { 0.25 } else { 0.1 };
        assert!(
            (std - expect).abs() <= band * expect,
            "{}: std {std} strays from {expect}",
            entry.name
        );
    }
}

#[test]
fn random_models_predict_near_chance_on_the_suite() {
    let suite = build_suite(&SuiteConfig::default()).unwrap();
    let mut accs = Vec::new();
    for seed in 0..20u64 {
        let model = random_model(&ModelSpec::default(), 400 + seed);
        let mut correct = 0usize;
        let mut total = 0usize;
        for task in &suite.tasks {
            for (x, y) in task.test.inputs.iter().zip(&task.test.labels) {
                if model.predict(x).unwrap() == *y {
                    correct += 1;
                }
                total += 1;
            }
        }
        accs.push(correct as f64 / total as f64);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    println!("mean random-model accuracy over 20 seeds: {mean:.4}");
    assert!(
        (mean - 0.125).abs() <= 0.05,
        "random models should sit near 1/8 accuracy, got {mean}"
    );
}
