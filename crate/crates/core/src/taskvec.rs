//! Task vectors: parameter-space displacements produced by fine-tuning,
//! plus the algebra used to edit models (scaled sums, negation) and the
//! grid search for the shared mixing coefficient.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::layout::ParamVector;

/// Where a task vector came from. Vectors of different origins are never
/// mixed in one arithmetic operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginTag {
    Nonlinear,
    Linearized,
    Random,
}

impl OriginTag {
    pub fn as_str(self) -> &'static str {
        match self {
            OriginTag::Nonlinear => "nonlinear",
            OriginTag::Linearized => "linearized",
            OriginTag::Random => "random",
        }
    }
}

/// The difference between fine-tuned and base parameters, tied to the base
/// layout.
#[derive(Debug, Clone)]
pub struct TaskVector {
    values: ParamVector,
    origin: OriginTag,
}

impl TaskVector {
    pub fn new(values: ParamVector, origin: OriginTag) -> Self {
        TaskVector { values, origin }
    }

    pub fn values(&self) -> &ParamVector {
        &self.values
    }

    pub fn origin(&self) -> OriginTag {
        self.origin
    }

    pub fn norm(&self) -> f64 {
        self.values.norm()
    }
}

/// `theta_star - theta0`, tagged with its origin.
pub fn make_task_vector(theta0: &ParamVector, theta_star: &ParamVector, origin: OriginTag) -> Result<TaskVector> {
    let values = theta_star.sub(theta0)?;
    Ok(TaskVector { values, origin })
}

/// Weighted sum of task vectors sharing one origin and layout.
pub fn combine(taus: &[TaskVector], alphas: &[f64]) -> Result<TaskVector> {
    if taus.is_empty() {
        return Err(CoreError::Contract("combine needs at least one task vector".into()));
    }
    if taus.len() != alphas.len() {
        return Err(CoreError::Contract(format!(
            "{} task vectors but {} coefficients",
            taus.len(),
            alphas.len()
        )));
    }
    if !alphas.iter().all(|a| a.is_finite()) {
        return Err(CoreError::Contract("non-finite mixing coefficient".into()));
    }
    let origin = taus[0].origin;
    if taus.iter().any(|t| t.origin != origin) {
        return Err(CoreError::Contract(
            "task vectors of different origins cannot be combined".into(),
        ));
    }
    let mut acc = ParamVector::zeros(taus[0].values.layout().clone());
    for (tau, &a) in taus.iter().zip(alphas) {
        acc.axpy(a, &tau.values)?;
    }
    Ok(TaskVector { values: acc, origin })
}

/// Flip a task vector for forgetting-by-negation.
pub fn negate(tau: &TaskVector) -> TaskVector {
    TaskVector { values: tau.values.scale(-1.0), origin: tau.origin }
}

/// `theta0 + tau`, the edited parameter vector.
pub fn apply(theta0: &ParamVector, tau: &TaskVector) -> Result<ParamVector> {
    theta0.add(&tau.values)
}

/// The grid of candidate mixing coefficients. Default: 0.0 to 1.0 in steps
/// of 0.05.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixingConfig {
    pub alphas: Vec<f64>,
}

impl Default for MixingConfig {
    fn default() -> Self {
        MixingConfig { alphas: (0..=20).map(|k| k as f64 * 0.05).collect() }
    }
}

impl MixingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(CoreError::Config("mixing grid is empty".into()));
        }
        if !self.alphas.iter().all(|a| a.is_finite()) {
            return Err(CoreError::Config("mixing grid contains non-finite values".into()));
        }
        if self.alphas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::Config("mixing grid must be strictly increasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    Maximize,
    /// Minimize the score over the feasible grid points.
    ConstrainedMinimize,
}

/// One grid point's evaluation: the objective and whether the point
/// satisfies the constraint (always `true` for unconstrained searches).
#[derive(Debug, Clone, Copy)]
pub struct AlphaEval {
    pub score: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOutcome {
    pub alpha: f64,
    pub score: f64,
    /// `false` only when a constrained search found no feasible point; the
    /// outcome then reports alpha = 0 with the score evaluated there.
    pub feasible: bool,
}

/// Scan the grid in order, evaluating each candidate once. Ties break
/// toward the smallest alpha because the scan keeps the first optimum.
pub fn alpha_search(
    grid: &MixingConfig,
    mode: SearchMode,
    mut evaluate: impl FnMut(f64) -> Result<AlphaEval>,
) -> Result<SearchOutcome> {
    grid.validate()?;
    let mut best: Option<SearchOutcome> = None;
    let mut at_zero: Option<f64> = None;
    for &alpha in &grid.alphas {
        let eval = evaluate(alpha).map_err(|e| e.context(&format!("evaluating alpha={alpha}")))?;
        if !eval.score.is_finite() {
            return Err(CoreError::Numeric(format!("non-finite score at alpha={alpha}")));
        }
        if alpha == 0.0 {
            at_zero = Some(eval.score);
        }
        let candidate = match mode {
            SearchMode::Maximize => eval.feasible,
            SearchMode::ConstrainedMinimize => eval.feasible,
        };
        if !candidate {
            continue;
        }
        let better = match (&best, mode) {
            (None, _) => true,
            (Some(b), SearchMode::Maximize) => eval.score > b.score,
            (Some(b), SearchMode::ConstrainedMinimize) => eval.score < b.score,
        };
        if better {
            best = Some(SearchOutcome { alpha, score: eval.score, feasible: true });
        }
    }
    match best {
        Some(b) => Ok(b),
        None => {
            let score = match at_zero {
                Some(s) => s,
                None => {
                    let eval = evaluate(0.0).map_err(|e| e.context("evaluating alpha=0"))?;
                    eval.score
                }
            };
            Ok(SearchOutcome { alpha: 0.0, score, feasible: false })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::LayoutBuilder;

    fn vec3(values: [f64; 3], origin: OriginTag) -> TaskVector {
        let mut b = LayoutBuilder::new();
        b.add("w", &[3]).unwrap();
        let pv = ParamVector::from_values(b.build(), values.to_vec()).unwrap();
        TaskVector::new(pv, origin)
    }

    #[test]
    fn default_grid_is_the_21_point_ramp() {
        let g = MixingConfig::default();
        assert_eq!(g.alphas.len(), 21);
        assert_eq!(g.alphas[0], 0.0);
        assert!((g.alphas[1] - 0.05).abs() < 1e-15);
        assert!((g.alphas[20] - 1.0).abs() < 1e-15);
        g.validate().unwrap();
    }

    #[test]
    fn mixed_origins_rejected() {
        let a = vec3([1.0, 0.0, 0.0], OriginTag::Nonlinear);
        let b = vec3([0.0, 1.0, 0.0], OriginTag::Linearized);
        let err = combine(&[a, b], &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, CoreError::Contract(_)));
    }

    #[test]
    fn negate_then_apply_cancels() {
        let mut b = LayoutBuilder::new();
        b.add("w", &[3]).unwrap();
        let layout = b.build();
        let theta0 = ParamVector::from_values(layout.clone(), vec![1.0, 2.0, 3.0]).unwrap();
        let theta1 = ParamVector::from_values(layout, vec![2.0, 1.0, 5.0]).unwrap();
        let tau = make_task_vector(&theta0, &theta1, OriginTag::Nonlinear).unwrap();
        let forward = apply(&theta0, &tau).unwrap();
        assert_eq!(forward.values(), theta1.values());
        let back = apply(&forward, &negate(&tau)).unwrap();
        assert_eq!(back.values(), theta0.values());
    }

    #[test]
    fn maximize_prefers_smallest_alpha_on_ties() {
        let grid = MixingConfig::default();
        let out = alpha_search(&grid, SearchMode::Maximize, |_| {
            Ok(AlphaEval { score: 0.5, feasible: true })
        })
        .unwrap();
        assert_eq!(out.alpha, 0.0);
        assert!(out.feasible);
    }

    #[test]
    fn infeasible_search_reports_alpha_zero() {
        let grid = MixingConfig::default();
        let out = alpha_search(&grid, SearchMode::ConstrainedMinimize, |a| {
            Ok(AlphaEval { score: a, feasible: false })
        })
        .unwrap();
        assert_eq!(out.alpha, 0.0);
        assert!(!out.feasible);
        assert_eq!(out.score, 0.0);
    }

    #[test]
    fn evaluator_failure_names_the_alpha() {
        let grid = MixingConfig::default();
        let err = alpha_search(&grid, SearchMode::Maximize, |a| {
            if a > 0.2 {
                Err(CoreError::Numeric("boom".into()))
            } else {
                Ok(AlphaEval { score: a, feasible: true })
            }
        })
        .unwrap_err();
        assert!(err.to_string().contains("alpha=0.25"), "got: {err}");
    }
}
