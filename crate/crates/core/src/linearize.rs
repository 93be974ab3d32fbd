//! Tangent-space models: first-order expansion of a network around its
//! base parameters, per-class tangent kernels, and kernel ridge fits that
//! reproduce linearized training in function space.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::autodiff;
use crate::error::{CoreError, Result};
use crate::layout::ParamVector;
use crate::models::{Model, Predictor};
use crate::taskvec::TaskVector;
use crate::tensor::Tensor;

/// Hard cap on Gram assembly width; larger problems need a different
/// solver and are refused rather than silently ground through.
pub const MAX_GRAM_COLS: usize = 1024;

/// `f(x; theta0) + J(x) tau`: the network's first-order expansion around
/// its base parameters, evaluated without ever leaving the base point.
#[derive(Debug, Clone)]
pub struct LinearizedModel {
    base: Model,
    tau: TaskVector,
}

impl LinearizedModel {
    pub fn new(base: Model, tau: TaskVector) -> Result<Self> {
        base.params.check_same_layout(tau.values())?;
        Ok(LinearizedModel { base, tau })
    }

    pub fn base(&self) -> &Model {
        &self.base
    }

    pub fn tau(&self) -> &TaskVector {
        &self.tau
    }

    /// Same base point, different tangent displacement.
    pub fn with_tau(&self, tau: TaskVector) -> Result<Self> {
        LinearizedModel::new(self.base.clone(), tau)
    }
}

impl Predictor for LinearizedModel {
    fn num_classes(&self) -> usize {
        self.base.num_classes()
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let (primal, delta) = autodiff::forward_jvp(&self.base, &self.base.params, self.tau.values(), x)?;
        Tensor::new(
            primal.shape().to_vec(),
            primal.data().iter().zip(delta.data()).map(|(a, b)| a + b).collect(),
        )
    }
}

/// Reinterpret an already-trained displacement through the tangent model.
pub fn posthoc_linearize(base: &Model, tau: &TaskVector) -> Result<LinearizedModel> {
    LinearizedModel::new(base.clone(), tau.clone())
}

/// Per-class parameter gradients of the logits at the base point, one
/// vector per output class.
pub fn logit_gradients(base: &Model, x: &Tensor) -> Result<Vec<ParamVector>> {
    let c = base.num_classes();
    let mut grads = Vec::with_capacity(c);
    for j in 0..c {
        let mut e = vec![0.0; c];
        e[j] = 1.0;
        let cotangent = Tensor::new(vec![c], e)?;
        grads.push(autodiff::vjp(base, &base.params, x, &cotangent)?);
    }
    Ok(grads)
}

/// Per-class tangent kernel values `k_j(x, x') = <grad_j f(x), grad_j f(x')>`.
pub fn ntk_kernel(base: &Model, x: &Tensor, x_other: &Tensor) -> Result<Vec<f64>> {
    let gx = logit_gradients(base, x)?;
    let gy = logit_gradients(base, x_other)?;
    gx.iter().zip(&gy).map(|(a, b)| a.dot(b)).collect()
}

/// Per-class Gram matrices `[rows.len(), cols.len()]` of the tangent
/// kernel. Refuses more than `MAX_GRAM_COLS` columns.
pub fn gram_matrix(base: &Model, rows: &[Tensor], cols: &[Tensor]) -> Result<Vec<Tensor>> {
    if cols.len() > MAX_GRAM_COLS {
        return Err(CoreError::Contract(format!(
            "gram matrix with {} columns exceeds the {} column cap",
            cols.len(),
            MAX_GRAM_COLS
        )));
    }
    if rows.is_empty() || cols.is_empty() {
        return Err(CoreError::Contract("gram matrix needs at least one row and one column".into()));
    }
    let c = base.num_classes();
    let row_feats = features(base, rows)?;
    let same = cols.len() == rows.len()
        && rows.iter().zip(cols).all(|(a, b)| a.shape() == b.shape() && a.data() == b.data());
    let col_feats = if same { row_feats.clone() } else { features(base, cols)? };
    let mut grams = Vec::with_capacity(c);
    for j in 0..c {
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for rf in &row_feats {
            for cf in &col_feats {
                data.push(rf[j].dot(&cf[j])?);
            }
        }
        grams.push(Tensor::new(vec![rows.len(), cols.len()], data)?);
    }
    Ok(grams)
}

fn features(base: &Model, points: &[Tensor]) -> Result<Vec<Vec<ParamVector>>> {
    points.par_iter().map(|x| logit_gradients(base, x)).collect()
}

/// Kernel ridge regression in the tangent kernel, one independent fit per
/// class: `(K_j + ridge I) beta_j = y_j - f_j(theta0)`.
#[derive(Debug, Clone)]
pub struct KernelPredictor {
    base: Model,
    support: Vec<Tensor>,
    beta: Vec<Vec<f64>>,
}

pub fn kernel_fit(base: &Model, inputs: &[Tensor], targets: &[Tensor], ridge: f64) -> Result<KernelPredictor> {
    if inputs.is_empty() {
        return Err(CoreError::Contract("kernel fit needs at least one point".into()));
    }
    if inputs.len() != targets.len() {
        return Err(CoreError::Contract("kernel fit inputs and targets differ in length".into()));
    }
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(CoreError::Config("ridge must be finite and non-negative".into()));
    }
    let c = base.num_classes();
    for t in targets {
        if t.shape() != [c] {
            return Err(CoreError::Contract(format!(
                "kernel fit target shape {:?} does not match {} classes",
                t.shape(),
                c
            )));
        }
    }
    let n = inputs.len();
    let grams = gram_matrix(base, inputs, inputs)?;
    let base_logits: Vec<Tensor> = inputs
        .iter()
        .map(|x| autodiff::forward_eval(base, &base.params, x))
        .collect::<Result<_>>()?;
    let mut beta = Vec::with_capacity(c);
    for (j, gram) in grams.iter().enumerate() {
        let k = DMatrix::from_fn(n, n, |r, cidx| {
            gram.data()[r * n + cidx] + if r == cidx { ridge } else { 0.0 }
        });
        let rhs = nalgebra::DVector::from_fn(n, |i, _| targets[i].data()[j] - base_logits[i].data()[j]);
        let chol = k.cholesky().ok_or_else(|| {
            CoreError::Numeric(format!(
                "tangent kernel matrix for class {j} is not positive definite (ridge = {ridge:e}); \
                 increase the ridge"
            ))
        })?;
        let sol = chol.solve(&rhs);
        beta.push(sol.iter().cloned().collect());
    }
    Ok(KernelPredictor { base: base.clone(), support: inputs.to_vec(), beta })
}

impl KernelPredictor {
    pub fn support(&self) -> &[Tensor] {
        &self.support
    }
}

impl Predictor for KernelPredictor {
    fn num_classes(&self) -> usize {
        self.base.num_classes()
    }

    /// `f_j(x; theta0) + sum_i beta_ij k_j(x, x_i)` per class.
    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.base.num_classes();
        let gx = logit_gradients(&self.base, x)?;
        let f0 = autodiff::forward_eval(&self.base, &self.base.params, x)?;
        let mut out = f0.data().to_vec();
        for (i, s) in self.support.iter().enumerate() {
            let gs = logit_gradients(&self.base, s)?;
            for j in 0..c {
                out[j] += self.beta[j][i] * gx[j].dot(&gs[j])?;
            }
        }
        Tensor::new(vec![c], out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_random, ModelSpec};

    fn small_model(seed: u64) -> Model {
        let spec = ModelSpec { hidden: vec![8], embed_dim: 8, num_classes: 3, ..ModelSpec::default() };
        init_random(&spec, seed).unwrap()
    }

    #[test]
    fn zero_tau_matches_base_exactly() {
        let m = small_model(1);
        let tau = TaskVector::new(
            ParamVector::zeros(m.params.layout().clone()),
            crate::taskvec::OriginTag::Linearized,
        );
        let lin = LinearizedModel::new(m.clone(), tau).unwrap();
        let x = Tensor::vector(vec![0.3, -0.7]).unwrap();
        let a = m.logits(&x).unwrap();
        let b = lin.logits(&x).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn kernel_entries_match_explicit_gradient_dots() {
        let m = small_model(2);
        let x = Tensor::vector(vec![0.1, 0.4]).unwrap();
        let y = Tensor::vector(vec![-0.2, 0.9]).unwrap();
        let k = ntk_kernel(&m, &x, &y).unwrap();
        let gx = logit_gradients(&m, &x).unwrap();
        let gy = logit_gradients(&m, &y).unwrap();
        for j in 0..3 {
            assert!((k[j] - gx[j].dot(&gy[j]).unwrap()).abs() <= 1e-12 * k[j].abs().max(1.0));
        }
    }

    #[test]
    fn gram_rejects_too_many_columns() {
        let m = small_model(3);
        let cols: Vec<Tensor> = (0..1025).map(|i| Tensor::vector(vec![i as f64 * 1e-3, 0.0]).unwrap()).collect();
        let rows = vec![Tensor::vector(vec![0.0, 0.0]).unwrap()];
        let err = gram_matrix(&m, &rows, &cols).unwrap_err();
        assert!(err.to_string().contains("1024"));
    }

    #[test]
    fn ridgeless_fit_on_duplicated_points_reports_singularity() {
        let m = small_model(4);
        let x = Tensor::vector(vec![0.2, 0.2]).unwrap();
        let inputs = vec![x.clone(), x];
        let targets = vec![
            Tensor::vector(vec![1.0, 0.0, 0.0]).unwrap(),
            Tensor::vector(vec![1.0, 0.0, 0.0]).unwrap(),
        ];
        let err = kernel_fit(&m, &inputs, &targets, 0.0).unwrap_err();
        assert!(err.to_string().contains("class 0"));
    }
}
