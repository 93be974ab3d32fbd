//! Weight disentanglement: how much two task edits interfere when applied
//! jointly, measured as prediction disagreement between the jointly edited
//! model and each singly edited model on that task's own input region.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linearize::LinearizedModel;
use crate::models::{Model, Predictor};
use crate::taskvec::TaskVector;
use crate::tensor::Tensor;

/// Square grid of scaling coefficients, left-closed: the k-th value is
/// `min + k (max - min) / steps`, so the default 20-step grid over
/// [-3, 3) steps by 0.3 and contains 0 exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { min: -3.0, max: 3.0, steps: 20 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(CoreError::Config("grid needs at least one step".into()));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(CoreError::Config(format!(
                "grid range [{}, {}) is not a finite non-empty interval",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.steps)
            .map(|k| self.min + (self.max - self.min) * k as f64 / self.steps as f64)
            .collect()
    }
}

/// Whether edits are applied to the weights themselves or through the
/// first-order (tangent) model around the base point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditSpace {
    Weights,
    Tangent,
}

/// Row-major over (alpha1, alpha2): index `i * steps + j` holds
/// `xi(values[i], values[j])`.
#[derive(Debug, Clone)]
pub struct DisentanglementGrid {
    pub spec: GridSpec,
    pub xi: Vec<f64>,
}

impl DisentanglementGrid {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.xi[i * self.spec.steps + j]
    }

    /// `(alpha1, alpha2, xi)` triples in row-major order.
    pub fn rows(&self) -> Vec<(f64, f64, f64)> {
        let vals = self.spec.values();
        let mut out = Vec::with_capacity(self.xi.len());
        for (i, &a1) in vals.iter().enumerate() {
            for (j, &a2) in vals.iter().enumerate() {
                out.push((a1, a2, self.value(i, j)));
            }
        }
        out
    }

    /// Fraction of grid cells with disentanglement error below `threshold`.
    pub fn fraction_below(&self, threshold: f64) -> f64 {
        let hits = self.xi.iter().filter(|&&v| v < threshold).count();
        hits as f64 / self.xi.len() as f64
    }
}

fn predictions(pred: &dyn Predictor, xs: &[Tensor]) -> Result<Vec<usize>> {
    xs.iter().map(|x| pred.predict(x)).collect()
}

/// Mean indicator of prediction disagreement.
fn disagreement(a: &[usize], b: &[usize]) -> f64 {
    let misses = a.iter().zip(b).filter(|(x, y)| x != y).count();
    misses as f64 / a.len() as f64
}

/// Disentanglement error of one (alpha1, alpha2) cell from explicit
/// predictors: disagreement between the joint edit and each single edit,
/// each measured on that task's own points. Lands in [0, 2].
pub fn disentanglement_error(
    joint: &dyn Predictor,
    single1: &dyn Predictor,
    single2: &dyn Predictor,
    points1: &[Tensor],
    points2: &[Tensor],
) -> Result<f64> {
    if points1.is_empty() || points2.is_empty() {
        return Err(CoreError::Contract("disentanglement needs points for both tasks".into()));
    }
    let j1 = predictions(joint, points1)?;
    let j2 = predictions(joint, points2)?;
    let s1 = predictions(single1, points1)?;
    let s2 = predictions(single2, points2)?;
    Ok(disagreement(&j1, &s1) + disagreement(&j2, &s2))
}

/// Scan the full coefficient grid for a pair of task vectors.
///
/// Single-edit predictions are cached per axis value; in the tangent
/// space the scan reduces to combining three precomputed logit
/// contributions per point, so the whole grid costs two directional
/// passes per point.
pub fn grid_scan(
    base: &Model,
    tau1: &TaskVector,
    tau2: &TaskVector,
    points1: &[Tensor],
    points2: &[Tensor],
    spec: &GridSpec,
    space: EditSpace,
) -> Result<DisentanglementGrid> {
    spec.validate()?;
    if points1.is_empty() || points2.is_empty() {
        return Err(CoreError::Contract("disentanglement needs points for both tasks".into()));
    }
    base.params.check_same_layout(tau1.values())?;
    base.params.check_same_layout(tau2.values())?;
    if tau1.origin() != tau2.origin() {
        return Err(CoreError::Contract(format!(
            "grid scan mixes task vector origins {} and {}",
            tau1.origin().as_str(),
            tau2.origin().as_str()
        )));
    }
    match space {
        EditSpace::Weights => grid_scan_weights(base, tau1, tau2, points1, points2, spec),
        EditSpace::Tangent => grid_scan_tangent(base, tau1, tau2, points1, points2, spec),
    }
}

fn grid_scan_weights(
    base: &Model,
    tau1: &TaskVector,
    tau2: &TaskVector,
    points1: &[Tensor],
    points2: &[Tensor],
    spec: &GridSpec,
) -> Result<DisentanglementGrid> {
    let vals = spec.values();
    let single1: Vec<Vec<usize>> = vals
        .par_iter()
        .map(|&a| {
            let mut p = base.params.clone();
            p.axpy(a, tau1.values())?;
            predictions(&base.with_params(p)?, points1)
        })
        .collect::<Result<_>>()?;
    let single2: Vec<Vec<usize>> = vals
        .par_iter()
        .map(|&a| {
            let mut p = base.params.clone();
            p.axpy(a, tau2.values())?;
            predictions(&base.with_params(p)?, points2)
        })
        .collect::<Result<_>>()?;
    let n = spec.steps;
    let xi: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|cell| {
            let (i, j) = (cell / n, cell % n);
            let mut p = base.params.clone();
            p.axpy(vals[i], tau1.values())?;
            p.axpy(vals[j], tau2.values())?;
            let joint = base.with_params(p)?;
            let j1 = predictions(&joint, points1)?;
            let j2 = predictions(&joint, points2)?;
            Ok(disagreement(&j1, &single1[i]) + disagreement(&j2, &single2[j]))
        })
        .collect::<Result<_>>()?;
    Ok(DisentanglementGrid { spec: *spec, xi })
}

/// Per-point logit decomposition `f0 + a1 d1 + a2 d2` for the tangent scan.
struct TangentPoint {
    f0: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

fn tangent_points(base: &Model, tau1: &TaskVector, tau2: &TaskVector, xs: &[Tensor]) -> Result<Vec<TangentPoint>> {
    xs.par_iter()
        .map(|x| {
            let (f0, d1) = crate::autodiff::forward_jvp(base, &base.params, tau1.values(), x)?;
            let (_, d2) = crate::autodiff::forward_jvp(base, &base.params, tau2.values(), x)?;
            Ok(TangentPoint { f0: f0.data().to_vec(), d1: d1.data().to_vec(), d2: d2.data().to_vec() })
        })
        .collect()
}

fn tangent_argmax(p: &TangentPoint, a1: f64, a2: f64) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for k in 0..p.f0.len() {
        let v = p.f0[k] + a1 * p.d1[k] + a2 * p.d2[k];
        if v > best_v {
            best_v = v;
            best = k;
        }
    }
    best
}

fn grid_scan_tangent(
    base: &Model,
    tau1: &TaskVector,
    tau2: &TaskVector,
    points1: &[Tensor],
    points2: &[Tensor],
    spec: &GridSpec,
) -> Result<DisentanglementGrid> {
    let vals = spec.values();
    let t1 = tangent_points(base, tau1, tau2, points1)?;
    let t2 = tangent_points(base, tau1, tau2, points2)?;
    let single1: Vec<Vec<usize>> = vals
        .iter()
        .map(|&a| t1.iter().map(|p| tangent_argmax(p, a, 0.0)).collect())
        .collect();
    let single2: Vec<Vec<usize>> = vals
        .iter()
        .map(|&a| t2.iter().map(|p| tangent_argmax(p, 0.0, a)).collect())
        .collect();
    let n = spec.steps;
    let xi: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|cell| {
            let (i, j) = (cell / n, cell % n);
            let (a1, a2) = (vals[i], vals[j]);
            let j1: Vec<usize> = t1.iter().map(|p| tangent_argmax(p, a1, a2)).collect();
            let j2: Vec<usize> = t2.iter().map(|p| tangent_argmax(p, a1, a2)).collect();
            disagreement(&j1, &single1[i]) + disagreement(&j2, &single2[j])
        })
        .collect();
    Ok(DisentanglementGrid { spec: *spec, xi })
}

/// The tangent scan applied to a linearized model's own base and a second
/// displacement, for callers that already hold a `LinearizedModel`.
pub fn grid_scan_linearized(
    model: &LinearizedModel,
    tau2: &TaskVector,
    points1: &[Tensor],
    points2: &[Tensor],
    spec: &GridSpec,
) -> Result<DisentanglementGrid> {
    grid_scan(model.base(), model.tau(), tau2, points1, points2, spec, EditSpace::Tangent)
}
