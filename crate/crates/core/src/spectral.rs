//! Spectral diagnostics: eigenfunctions of the per-class tangent kernel
//! restricted to a task's points, localization energies that say where on
//! the input space those eigenfunctions live, and exactly representable
//! sampled bases on a ring used to probe when localization can and cannot
//! hold.

use nalgebra::DMatrix;

use crate::error::{CoreError, Result};
use crate::linearize;
use crate::models::Model;
use crate::tensor::Tensor;

/// Eigen-decomposition of one class's rectangular Gram block
/// `K[i, j] = k(train_i, all_j)` via thin SVD. Returns singular values in
/// descending order and one component row per retained direction, each of
/// length `all_points`. The entry of largest magnitude in every component
/// is made positive (ties broken toward the lowest index) so signs are
/// reproducible across runs.
pub fn eigen_components(gram: &Tensor) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let shape = gram.shape();
    if shape.len() != 2 {
        return Err(CoreError::Contract(format!("gram block must be rank 2, got {shape:?}")));
    }
    let (rows, cols) = (shape[0], shape[1]);
    if rows == 0 || cols == 0 || rows > cols {
        return Err(CoreError::Contract(format!(
            "gram block of shape {rows}x{cols} needs 1 <= rows <= cols"
        )));
    }
    let m = DMatrix::from_fn(rows, cols, |r, c| gram.data()[r * cols + c]);
    let svd = m.svd(true, true);
    let v_t = svd.v_t.ok_or_else(|| CoreError::Numeric("svd did not produce right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut lambdas = Vec::with_capacity(order.len());
    let mut components = Vec::with_capacity(order.len());
    for &idx in &order {
        lambdas.push(svd.singular_values[idx]);
        let mut row: Vec<f64> = (0..cols).map(|j| v_t[(idx, j)]).collect();
        let mut pivot = 0;
        for (j, v) in row.iter().enumerate() {
            if v.abs() > row[pivot].abs() {
                pivot = j;
            }
        }
        if row[pivot] < 0.0 {
            for v in &mut row {
                *v = -*v;
            }
        }
        components.push(row);
    }
    Ok((lambdas, components))
}

/// Localization energy per point: the squared mass each point receives
/// across all retained components, `E(x_j) = sum_rho phi_rho(x_j)^2`.
pub fn local_energy(components: &[Vec<f64>]) -> Vec<f64> {
    let cols = components.first().map_or(0, |c| c.len());
    let mut energy = vec![0.0; cols];
    for comp in components {
        for (e, v) in energy.iter_mut().zip(comp) {
            *e += v * v;
        }
    }
    energy
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Control,
}

impl Partition {
    pub fn as_str(&self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Control => "control",
        }
    }
}

/// Where the tangent kernel's eigenfunctions concentrate: per-class
/// spectra, per-point localization energies over train and control
/// points, and the train/control concentration ratio.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub lambdas: Vec<Vec<f64>>,
    pub energies: Vec<Vec<f64>>,
    pub partitions: Vec<Partition>,
    pub ratios: Vec<f64>,
    pub mean_ratio: f64,
    /// Control energies vanished for some class, making its ratio infinite.
    pub degenerate_control: bool,
}

const DEGENERATE_ENERGY: f64 = 1e-12;

/// Build the per-class Gram blocks `k(train_i, (train ++ control)_j)`,
/// decompose each, and compare mean localization energy on the train
/// partition against the control partition.
pub fn localization_report(base: &Model, train: &[Tensor], control: &[Tensor]) -> Result<SpectralReport> {
    if train.is_empty() || control.is_empty() {
        return Err(CoreError::Contract("localization needs train and control points".into()));
    }
    let mut all = train.to_vec();
    all.extend_from_slice(control);
    let grams = linearize::gram_matrix(base, train, &all)?;
    let mut partitions = vec![Partition::Train; train.len()];
    partitions.extend(vec![Partition::Control; control.len()]);
    let mut lambdas = Vec::with_capacity(grams.len());
    let mut energies = Vec::with_capacity(grams.len());
    let mut ratios = Vec::with_capacity(grams.len());
    let mut degenerate = false;
    for gram in &grams {
        let (l, comps) = eigen_components(gram)?;
        let energy = local_energy(&comps);
        let mean_train = energy[..train.len()].iter().sum::<f64>() / train.len() as f64;
        let mean_control = energy[train.len()..].iter().sum::<f64>() / control.len() as f64;
        let ratio = if mean_control <= DEGENERATE_ENERGY {
            degenerate = true;
            f64::INFINITY
        } else {
            mean_train / mean_control
        };
        lambdas.push(l);
        energies.push(energy);
        ratios.push(ratio);
    }
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    Ok(SpectralReport { lambdas, energies, partitions, ratios, mean_ratio, degenerate_control: degenerate })
}

/// A function basis sampled on quadrature points: `sum_i weights[i] *
/// values[a][i] * values[b][i]` is the inner product between basis
/// functions `a` and `b`.
#[derive(Debug, Clone)]
pub struct SampledBasis {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl SampledBasis {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn inner(&self, a: usize, b: usize) -> f64 {
        self.values[a]
            .iter()
            .zip(&self.values[b])
            .zip(&self.weights)
            .map(|((x, y), w)| w * x * y)
            .sum()
    }

    /// Largest deviation of the quadrature Gram from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..self.len() {
            for b in 0..self.len() {
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((self.inner(a, b) - target).abs());
            }
        }
        worst
    }

    /// Evaluate a coefficient vector at every quadrature point.
    pub fn synthesize(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.len() {
            return Err(CoreError::Contract(format!(
                "{} coefficients for a {}-function basis",
                coeffs.len(),
                self.len()
            )));
        }
        let n = self.points.len();
        let mut out = vec![0.0; n];
        for (c, row) in coeffs.iter().zip(&self.values) {
            if *c == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(row) {
                *o += c * v;
            }
        }
        Ok(out)
    }
}

/// Uniform quadrature points on the circle: `theta_i = 2 pi i / n`,
/// each with weight `2 pi / n`.
pub fn ring_points(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 2 {
        return Err(CoreError::Config("ring needs at least 2 points".into()));
    }
    let w = 2.0 * std::f64::consts::PI / n as f64;
    let points = (0..n).map(|i| w * i as f64).collect();
    Ok((points, vec![w; n]))
}

/// Disjoint indicator bumps: the circle is cut into `n_bumps` contiguous
/// chunks and each basis function is the normalized indicator of one
/// chunk. Exactly orthonormal, and exactly localized.
pub fn make_bump_basis(n_points: usize, n_bumps: usize) -> Result<SampledBasis> {
    if n_bumps == 0 || n_points % n_bumps != 0 {
        return Err(CoreError::Config(format!(
            "{n_points} ring points do not split into {n_bumps} equal chunks"
        )));
    }
    let (points, weights) = ring_points(n_points)?;
    let chunk = n_points / n_bumps;
    let height = 1.0 / (weights[0] * chunk as f64).sqrt();
    let values = (0..n_bumps)
        .map(|b| {
            let mut row = vec![0.0; n_points];
            for v in &mut row[b * chunk..(b + 1) * chunk] {
                *v = height;
            }
            row
        })
        .collect();
    Ok(SampledBasis { points, weights, values })
}

/// Truncated Fourier basis on the ring: the constant plus
/// `cos(m theta), sin(m theta)` for `m = 1..n_freqs`, each normalized to
/// unit quadrature norm. Orthonormal on the uniform grid, and globally
/// supported: no member vanishes on any arc.
pub fn make_fourier_ring_basis(n_points: usize, n_freqs: usize) -> Result<SampledBasis> {
    if n_freqs == 0 {
        return Err(CoreError::Config("fourier basis needs at least one frequency".into()));
    }
    if n_points < 4 * n_freqs {
        return Err(CoreError::Config(format!(
            "{n_points} ring points cannot resolve {n_freqs} frequencies"
        )));
    }
    let (points, weights) = ring_points(n_points)?;
    let c0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let cm = 1.0 / std::f64::consts::PI.sqrt();
    let mut values = vec![vec![c0; n_points]];
    for m in 1..=n_freqs {
        values.push(points.iter().map(|t| cm * (m as f64 * t).cos()).collect());
        values.push(points.iter().map(|t| cm * (m as f64 * t).sin()).collect());
    }
    Ok(SampledBasis { points, weights, values })
}

/// Basis index of `cos(m theta)` in a Fourier ring basis.
pub fn fourier_cos_index(m: usize) -> usize {
    2 * m - 1
}

/// Basis index of `sin(m theta)` in a Fourier ring basis.
pub fn fourier_sin_index(m: usize) -> usize {
    2 * m
}

/// A task's function expressed in basis coefficients.
#[derive(Debug, Clone)]
pub struct TaskCoefficients {
    pub coeffs: Vec<f64>,
}

impl TaskCoefficients {
    /// A single-atom task: weight on one basis function.
    pub fn atom(basis_len: usize, index: usize, weight: f64) -> Result<Self> {
        if index >= basis_len {
            return Err(CoreError::Contract(format!(
                "atom index {index} out of range for a {basis_len}-function basis"
            )));
        }
        let mut coeffs = vec![0.0; basis_len];
        coeffs[index] = weight;
        Ok(TaskCoefficients { coeffs })
    }
}

/// Point mask of the arc `lo <= theta < hi`.
pub fn arc_mask(points: &[f64], lo: f64, hi: f64) -> Vec<bool> {
    points.iter().map(|&t| t >= lo && t < hi).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct ResidualCheck {
    /// Quadrature energy the task function places on other tasks' regions.
    pub raw: f64,
    /// The same, normalized by the task function's total energy.
    pub normalized: f64,
}

fn check_masks(n_points: usize, tasks: usize, masks: &[Vec<bool>]) -> Result<()> {
    if masks.len() != tasks {
        return Err(CoreError::Contract("one mask per task required".into()));
    }
    for m in masks {
        if m.len() != n_points {
            return Err(CoreError::Contract("mask length must match the quadrature grid".into()));
        }
    }
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            if masks[i].iter().zip(&masks[j]).any(|(a, b)| *a && *b) {
                return Err(CoreError::Contract(format!("task regions {i} and {j} overlap")));
            }
        }
    }
    Ok(())
}

/// For each task, how much of its function's energy falls on the other
/// tasks' regions. Exact localization of every task function on its own
/// region means every residual is zero; any leakage onto another task's
/// region shows up here and breaks clean composition of edits.
pub fn proposition_residuals(
    basis: &SampledBasis,
    tasks: &[TaskCoefficients],
    masks: &[Vec<bool>],
) -> Result<Vec<ResidualCheck>> {
    check_masks(basis.points.len(), tasks.len(), masks)?;
    let mut out = Vec::with_capacity(tasks.len());
    for (t, task) in tasks.iter().enumerate() {
        let g = basis.synthesize(&task.coeffs)?;
        let total: f64 = g.iter().zip(&basis.weights).map(|(v, w)| w * v * v).sum();
        if total <= 0.0 {
            return Err(CoreError::Contract(format!("task {t} has a zero function")));
        }
        let mut raw = 0.0;
        for (other, mask) in masks.iter().enumerate() {
            if other == t {
                continue;
            }
            for ((v, w), on) in g.iter().zip(&basis.weights).zip(mask) {
                if *on {
                    raw += w * v * v;
                }
            }
        }
        out.push(ResidualCheck { raw, normalized: raw / total });
    }
    Ok(out)
}

/// For each task, the worst pointwise gap on its own region between the
/// summed edit function and the task's own function. Zero when every
/// other task's function vanishes there.
pub fn pointwise_sum_deviation(
    basis: &SampledBasis,
    tasks: &[TaskCoefficients],
    masks: &[Vec<bool>],
) -> Result<Vec<f64>> {
    check_masks(basis.points.len(), tasks.len(), masks)?;
    let funcs: Vec<Vec<f64>> = tasks.iter().map(|t| basis.synthesize(&t.coeffs)).collect::<Result<_>>()?;
    let n = basis.points.len();
    let mut sum = vec![0.0; n];
    for f in &funcs {
        for (s, v) in sum.iter_mut().zip(f) {
            *s += v;
        }
    }
    Ok(funcs
        .iter()
        .zip(masks)
        .map(|(f, mask)| {
            let mut worst: f64 = 0.0;
            for i in 0..n {
                if mask[i] {
                    worst = worst.max((sum[i] - f[i]).abs());
                }
            }
            worst
        })
        .collect())
}

/// Smallest singular value of the Gram of selected basis functions
/// restricted to a region. Positive means the functions stay linearly
/// independent there even if they are not localized there.
pub fn restricted_gram_min_singular(basis: &SampledBasis, atoms: &[usize], mask: &[bool]) -> Result<f64> {
    if atoms.is_empty() {
        return Err(CoreError::Contract("restriction needs at least one basis function".into()));
    }
    if mask.len() != basis.points.len() {
        return Err(CoreError::Contract("mask length must match the quadrature grid".into()));
    }
    for &a in atoms {
        if a >= basis.len() {
            return Err(CoreError::Contract(format!("basis index {a} out of range")));
        }
    }
    let k = atoms.len();
    let g = DMatrix::from_fn(k, k, |r, c| {
        basis.values[atoms[r]]
            .iter()
            .zip(&basis.values[atoms[c]])
            .zip(&basis.weights)
            .zip(mask)
            .map(|(((x, y), w), on)| if *on { w * x * y } else { 0.0 })
            .sum::<f64>()
    });
    let svd = g.svd(false, false);
    Ok(svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min))
}
