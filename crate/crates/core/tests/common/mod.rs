//! Shared fixtures for the integration suites.

#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use tta_core::layout::{ParamLayout, ParamVector};
use tta_core::models::{init_params, Activation, InitMode, Model, ModelSpec};
use tta_core::rng;
use tta_core::tensor::Tensor;

pub fn random_model(spec: &ModelSpec, seed: u64) -> Model {
    init_params(spec, seed, InitMode::Random).unwrap()
}

pub fn mlp_spec(activation: Activation) -> ModelSpec {
    ModelSpec {
        input_dim: 2,
        hidden: vec![16, 8],
        activation,
        use_attention_block: false,
        embed_dim: 8,
        num_classes: 3,
        normalize_output: false,
    }
}

pub fn attention_spec() -> ModelSpec {
    ModelSpec {
        input_dim: 2,
        hidden: vec![8],
        activation: Activation::Tanh,
        use_attention_block: true,
        embed_dim: 8,
        num_classes: 3,
        normalize_output: true,
    }
}

pub fn gaussian_direction(layout: &Arc<ParamLayout>, seed: u64, tag: &str) -> ParamVector {
    let mut r = rng::stream(seed, tag);
    let values: Vec<f64> = (0..layout.total_len()).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    ParamVector::from_values(layout.clone(), values).unwrap()
}

pub fn unit_direction(layout: &Arc<ParamLayout>, seed: u64, tag: &str) -> ParamVector {
    let d = gaussian_direction(layout, seed, tag);
    let n = d.norm();
    d.scale(1.0 / n)
}

pub fn random_input(seed: u64, tag: &str, dim: usize) -> Tensor {
    let mut r = rng::stream(seed, tag);
    Tensor::vector((0..dim).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Largest entrywise deviation, relative to the reference scale (floored
/// at 1 so near-zero entries are compared absolutely).
pub fn max_rel_err(reference: &Tensor, candidate: &Tensor) -> f64 {
    assert_eq!(reference.shape(), candidate.shape());
    reference
        .data()
        .iter()
        .zip(candidate.data())
        .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}
