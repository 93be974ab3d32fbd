//! Desk-scale classifiers: an MLP encoder (optionally with a single-head
//! self-attention block over a length-4 token reshaping of the input)
//! followed by a frozen, seeded, row-orthonormal class head. The head never
//! appears in the parameter layout, so fine-tuning cannot touch it and all
//! movement happens in encoder weights.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, NodeId, ParametricFn, Tape};
use crate::error::{CoreError, Result};
use crate::layout::{LayoutBuilder, ParamLayout, ParamVector};
use crate::rng;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Gelu,
}

/// Architecture of the encoder and head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub use_attention_block: bool,
    pub embed_dim: usize,
    pub num_classes: usize,
    /// L2-normalize the embedding before the head inner product.
    #[serde(default)]
    pub normalize_output: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            input_dim: 2,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            use_attention_block: false,
            embed_dim: 16,
            num_classes: 8,
            normalize_output: false,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embed_dim == 0 || self.num_classes == 0 {
            return Err(CoreError::Config("input_dim, embed_dim, num_classes must be positive".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(CoreError::Config("hidden widths must be positive".into()));
        }
        if self.num_classes > self.embed_dim {
            return Err(CoreError::Config(format!(
                "num_classes {} exceeds embed_dim {}; orthonormal head rows need num_classes <= embed_dim",
                self.num_classes, self.embed_dim
            )));
        }
        if self.use_attention_block {
            let h0 = *self.hidden.first().ok_or_else(|| {
                CoreError::Config("attention block needs at least one hidden layer".into())
            })?;
            if h0 % 4 != 0 {
                return Err(CoreError::Config(format!(
                    "attention block reshapes hidden[0] into 4 tokens; {h0} is not divisible by 4"
                )));
            }
        }
        Ok(())
    }

    /// The encoder parameter layout implied by this spec. Deterministic:
    /// entries appear in network order with fixed names.
    pub fn layout(&self) -> Result<Arc<ParamLayout>> {
        self.validate()?;
        let mut b = LayoutBuilder::new();
        let mut width = self.input_dim;
        let mut layers = self.hidden.iter().enumerate();
        if self.use_attention_block {
            let (_, &h0) = layers.next().expect("validated non-empty hidden");
            let tok = h0 / 4;
            b.add("attn.embed.w", &[h0, width])?;
            b.add("attn.embed.b", &[h0])?;
            for gate in ["q", "k", "v", "o"] {
                b.add(&format!("attn.{gate}.w"), &[tok, tok])?;
                b.add(&format!("attn.{gate}.b"), &[tok])?;
            }
            width = h0;
        }
        for (i, &h) in layers {
            b.add(&format!("enc.l{i}.w"), &[h, width])?;
            b.add(&format!("enc.l{i}.b"), &[h])?;
            width = h;
        }
        b.add("enc.out.w", &[self.embed_dim, width])?;
        b.add("enc.out.b", &[self.embed_dim])?;
        Ok(b.build())
    }
}

/// Class embeddings with pairwise-orthogonal unit rows, fixed at
/// construction from a seed and never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenHead {
    num_classes: usize,
    embed_dim: usize,
    rows: Vec<f64>,
}

impl FrozenHead {
    /// Orthonormalize seeded Gaussian rows (QR via modified Gram-Schmidt).
    pub fn new(num_classes: usize, embed_dim: usize, seed: u64) -> Result<Self> {
        if num_classes > embed_dim {
            return Err(CoreError::Config(format!(
                "cannot build {num_classes} orthonormal rows in dimension {embed_dim}"
            )));
        }
        let mut rng = rng::stream(seed, "frozen-head");
        let mut rows: Vec<f64> = Vec::with_capacity(num_classes * embed_dim);
        for _ in 0..num_classes {
            loop {
                let mut v: Vec<f64> = (0..embed_dim).map(|_| rng.sample(StandardNormal)).collect();
                for prev in rows.chunks_exact(embed_dim) {
                    let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
                    for (vi, pi) in v.iter_mut().zip(prev) {
                        *vi -= dot * pi;
                    }
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-8 {
                    rows.extend(v.into_iter().map(|x| x / norm));
                    break;
                }
            }
        }
        Ok(FrozenHead { num_classes, embed_dim, rows })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn matrix(&self) -> Tensor {
        Tensor::new(vec![self.num_classes, self.embed_dim], self.rows.clone())
            .expect("head rows are finite by construction")
    }
}

/// How to obtain initial parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Random,
    /// Pre-train on the default coarse-label corpus and return that model.
    PretrainedSurrogate,
}

/// A spec, a frozen head, and a concrete encoder parameter vector.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub head: FrozenHead,
    pub params: ParamVector,
}

impl Model {
    /// Replace the parameter vector, keeping spec and head.
    pub fn with_params(&self, params: ParamVector) -> Result<Model> {
        self.params.check_same_layout(&params)?;
        Ok(Model { spec: self.spec.clone(), head: self.head.clone(), params })
    }

    fn trace_encoder(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        let mut layers = self.spec.hidden.iter().enumerate();
        if self.spec.use_attention_block {
            let (_, &h0) = layers.next().expect("validated non-empty hidden");
            h = self.trace_attention(tape, h, h0)?;
            h = self.trace_activation(tape, h)?;
        }
        for (i, _) in layers {
            let w = tape.param(&format!("enc.l{i}.w"))?;
            let b = tape.param(&format!("enc.l{i}.b"))?;
            h = tape.affine(w, b, h)?;
            h = self.trace_activation(tape, h)?;
        }
        let w = tape.param("enc.out.w")?;
        let b = tape.param("enc.out.b")?;
        let mut emb = tape.affine(w, b, h)?;
        if self.spec.normalize_output {
            emb = tape.l2_normalize(emb)?;
        }
        Ok(emb)
    }

    fn trace_activation(&self, tape: &mut Tape, h: NodeId) -> Result<NodeId> {
        match self.spec.activation {
            Activation::Relu => tape.relu(h),
            Activation::Tanh => tape.tanh(h),
            Activation::Gelu => tape.gelu(h),
        }
    }

    /// Single-head self-attention over 4 tokens carved from an embedded
    /// input, with a residual connection and layer norm.
    fn trace_attention(&self, tape: &mut Tape, x: NodeId, h0: usize) -> Result<NodeId> {
        let tok = h0 / 4;
        let we = tape.param("attn.embed.w")?;
        let be = tape.param("attn.embed.b")?;
        let embedded = tape.affine(we, be, x)?;
        let tokens: Vec<NodeId> = (0..4)
            .map(|i| tape.slice(embedded, i * tok, tok))
            .collect::<Result<_>>()?;

        let proj = |gate: &str, t: &Vec<NodeId>, tape: &mut Tape| -> Result<Vec<NodeId>> {
            let w = tape.param(&format!("attn.{gate}.w"))?;
            let b = tape.param(&format!("attn.{gate}.b"))?;
            t.iter().map(|&tid| tape.affine(w, b, tid)).collect()
        };
        let q = proj("q", &tokens, tape)?;
        let k = proj("k", &tokens, tape)?;
        let v = proj("v", &tokens, tape)?;

        // score(i, j) = <q_i, k_j> / sqrt(tok); mean * tok / sqrt(tok) = mean * sqrt(tok)
        let scale = tape.constant(Tensor::scalar((tok as f64).sqrt())?)?;
        let mut heads: Vec<NodeId> = Vec::with_capacity(4);
        for i in 0..4 {
            let mut scores = Vec::with_capacity(4);
            for j in 0..4 {
                let prod = tape.mul(q[i], k[j])?;
                let m = tape.mean(prod)?;
                scores.push(tape.mul(m, scale)?);
            }
            let row = tape.concat(&scores)?;
            let attn = tape.softmax(row)?;
            let mut mixed: Option<NodeId> = None;
            for j in 0..4 {
                let wj = tape.slice(attn, j, 1)?;
                let term = tape.mul(wj, v[j])?;
                mixed = Some(match mixed {
                    Some(acc) => tape.add(acc, term)?,
                    None => term,
                });
            }
            let wo = tape.param("attn.o.w")?;
            let bo = tape.param("attn.o.b")?;
            heads.push(tape.affine(wo, bo, mixed.expect("4 tokens"))?);
        }
        let mixed = tape.concat(&heads)?;
        let residual = tape.add(mixed, embedded)?;
        tape.layer_norm(residual, LAYER_NORM_EPS)
    }

    /// Embedding of `x`, honoring the output-normalization flag.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape() != [self.spec.input_dim] {
            return Err(CoreError::Contract(format!(
                "input shape {:?} does not match expected [{}]",
                x.shape(),
                self.spec.input_dim
            )));
        }
        let mut tape = Tape::new(self.params.layout(), self.params.values());
        let xid = tape.constant(x.clone())?;
        let emb = self.trace_encoder(&mut tape, xid)?;
        Ok(tape.value(emb).clone())
    }
}

impl ParametricFn for Model {
    fn layout(&self) -> &Arc<ParamLayout> {
        self.params.layout()
    }

    fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    fn output_dim(&self) -> usize {
        self.spec.num_classes
    }

    fn trace(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let emb = self.trace_encoder(tape, x)?;
        let head = tape.constant(self.head.matrix())?;
        let zero = tape.constant(Tensor::zeros(vec![self.spec.num_classes]))?;
        tape.affine(head, zero, emb)
    }
}

/// Anything that maps inputs to class logits. Argmax prediction with ties
/// broken toward the lowest class index.
pub trait Predictor: Sync {
    fn num_classes(&self) -> usize;
    fn logits(&self, x: &Tensor) -> Result<Tensor>;

    fn predict(&self, x: &Tensor) -> Result<usize> {
        let l = self.logits(x)?;
        if l.len() != self.num_classes() {
            return Err(CoreError::Contract(format!(
                "logits length {} does not match {} classes",
                l.len(),
                self.num_classes()
            )));
        }
        Ok(l.argmax())
    }
}

impl Predictor for Model {
    fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        autodiff::forward_eval(self, &self.params, x)
    }
}

/// Build a model with parameters from the given mode. Weight entries use
/// fan-in-scaled Gaussians (std `1/sqrt(fan_in)`); biases start at zero.
pub fn init_params(spec: &ModelSpec, seed: u64, mode: InitMode) -> Result<Model> {
    spec.validate()?;
    match mode {
        InitMode::Random => init_random(spec, seed),
        InitMode::PretrainedSurrogate => crate::training::pretrain_surrogate(spec, seed),
    }
}

pub(crate) fn init_random(spec: &ModelSpec, seed: u64) -> Result<Model> {
    let layout = spec.layout()?;
    let mut values = vec![0.0; layout.total_len()];
    let mut rng = rng::stream(seed, "init");
    for entry in layout.entries() {
        if entry.shape.len() == 2 {
            let fan_in = entry.shape[1];
            let std = 1.0 / (fan_in as f64).sqrt();
            let dst = &mut values[entry.offset..entry.offset + entry.len()];
            for v in dst.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = std * z;
            }
        }
        // rank-1 entries are biases, left at zero: early training must grow
        // any input-threshold feature from scratch
    }
    let params = ParamVector::from_values(layout, values)?;
    let head = FrozenHead::new(spec.num_classes, spec.embed_dim, rng::child_seed(seed, "head"))?;
    Ok(Model { spec: spec.clone(), head, params })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_rows_orthonormal() {
        let head = FrozenHead::new(8, 16, 3).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let ri = &head.rows()[i * 16..(i + 1) * 16];
                let rj = &head.rows()[j * 16..(j + 1) * 16];
                let dot: f64 = ri.iter().zip(rj).map(|(a, b)| a * b).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12, "head rows not orthonormal: <{i},{j}> = {dot}");
            }
        }
    }

    #[test]
    fn head_too_wide_rejected() {
        assert!(FrozenHead::new(9, 8, 0).is_err());
    }

    #[test]
    fn layout_is_deterministic_and_ordered() {
        let spec = ModelSpec::default();
        let a = spec.layout().unwrap();
        let b = spec.layout().unwrap();
        assert_eq!(*a, *b);
        let names: Vec<&str> = a.entries().iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, vec!["enc.l0.w", "enc.l0.b", "enc.l1.w", "enc.l1.b", "enc.out.w", "enc.out.b"]);
        assert_eq!(a.total_len(), 2 * 64 + 64 + 64 * 64 + 64 + 64 * 16 + 16);
    }

    #[test]
    fn forward_matches_hand_computation() {
        // 1 hidden relu layer, tiny dims, params set by hand
        let spec = ModelSpec {
            input_dim: 2,
            hidden: vec![2],
            activation: Activation::Relu,
            use_attention_block: false,
            embed_dim: 2,
            num_classes: 2,
            normalize_output: false,
        };
        let mut model = init_random(&spec, 0).unwrap();
        let v = model.params.values_mut();
        // enc.l0.w = [[1, -1], [2, 0]], enc.l0.b = [0.5, -3]
        v[0] = 1.0;
        v[1] = -1.0;
        v[2] = 2.0;
        v[3] = 0.0;
        v[4] = 0.5;
        v[5] = -3.0;
        // enc.out.w = [[1, 1], [0, 1]], enc.out.b = [0, 0.25]
        v[6] = 1.0;
        v[7] = 1.0;
        v[8] = 0.0;
        v[9] = 1.0;
        v[10] = 0.0;
        v[11] = 0.25;
        let x = Tensor::vector(vec![1.0, 2.0]).unwrap();
        // pre-act: [1*1 - 1*2 + 0.5, 2*1 - 3] = [-0.5, -1]; relu -> [0, 0]
        // embed: [0 + 0, 0 + 0.25] = [0, 0.25]
        let emb = model.encode(&x).unwrap();
        assert_eq!(emb.data(), &[0.0, 0.25]);
        // logits = head @ embed
        let h = model.head.rows().to_vec();
        let logits = model.logits(&x).unwrap();
        let expect = [h[1] * 0.25, h[3] * 0.25];
        assert!((logits.data()[0] - expect[0]).abs() < 1e-15);
        assert!((logits.data()[1] - expect[1]).abs() < 1e-15);
    }

    #[test]
    fn tie_breaks_to_lowest_class() {
        let spec = ModelSpec { hidden: vec![4], ..ModelSpec::default() };
        let mut model = init_random(&spec, 1).unwrap();
        // zero all params: embedding is zero, all logits zero, tie
        for v in model.params.values_mut() {
            *v = 0.0;
        }
        let x = Tensor::vector(vec![0.3, -0.7]).unwrap();
        assert_eq!(model.predict(&x).unwrap(), 0);
    }

    #[test]
    fn attention_spec_validation() {
        let spec = ModelSpec {
            use_attention_block: true,
            hidden: vec![30, 16],
            ..ModelSpec::default()
        };
        assert!(spec.validate().is_err());
        let ok = ModelSpec { use_attention_block: true, hidden: vec![32, 16], ..ModelSpec::default() };
        ok.validate().unwrap();
        let model = init_random(&ok, 5).unwrap();
        let x = Tensor::vector(vec![0.2, 0.4]).unwrap();
        let logits = model.logits(&x).unwrap();
        assert_eq!(logits.len(), 8);
    }
}
