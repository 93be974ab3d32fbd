//! Subcommand drivers: each one rebuilds the deterministic pipeline from
//! the resolved config, reads whatever checkpoints it composes with, and
//! emits CSV artifacts plus a manifest.

use anyhow::{anyhow, Result};
use tta_cli::checkpoint::{encode, read_params};
use tta_cli::config::Resolved;
use tta_cli::csvout::{csv_bytes, format_float};
use tta_cli::manifest::Emitter;
use tta_cli::ConfigError;
use tta_core::benchmarks::{finetune_task, task_addition, task_negation, Method};
use tta_core::disentangle::{grid_scan, EditSpace};
use tta_core::models::{init_params, InitMode, Model};
use tta_core::rng::child_seed;
use tta_core::spectral::{
    arc_mask, localization_report, make_bump_basis, make_fourier_ring_basis,
    pointwise_sum_deviation, proposition_residuals, restricted_gram_min_singular,
    fourier_cos_index, fourier_sin_index, SampledBasis, TaskCoefficients,
};
use tta_core::taskvec::{apply, OriginTag, TaskVector};
use tta_core::tasks::{build_suite, gen_disjoint_suite, pretrain_corpus, sample_dataset, Split, Suite};
use tta_core::training::{pretrain, TrainConfig, TrainLog};

/// Points in the coarse pre-training corpus.
pub const CORPUS_POINTS: usize = 2048;
/// Points per task shared across all disentanglement grid cells.
pub const GRID_POINTS: usize = 512;
/// Points per partition in the kernel localization run.
pub const SPECTRAL_POINTS: usize = 200;

pub fn theta0_name() -> String {
    "theta0.tta".to_string()
}

pub fn tau_name(origin: OriginTag, task: usize) -> String {
    format!("tau_{}_task{}.tta", origin.as_str(), task)
}

fn suite_of(resolved: &Resolved) -> Result<Suite> {
    Ok(build_suite(&resolved.suite)?)
}

fn check_task(resolved: &Resolved, label: &str, task: usize) -> Result<()> {
    if task >= resolved.suite.num_tasks {
        return Err(ConfigError(format!(
            "{label} task {task} out of range for {} tasks",
            resolved.suite.num_tasks
        ))
        .into());
    }
    Ok(())
}

/// Rebuild the pre-trained base from its checkpoint: the frozen head and
/// layout are derived from the spec and the pre-training seed, the
/// encoder parameters come from disk.
fn load_theta0(resolved: &Resolved) -> Result<Model> {
    let params = read_params(&resolved.output_dir.join(theta0_name()))?;
    let scaffold = init_params(&resolved.model, resolved.pretrain.seed, InitMode::Random)?;
    Ok(scaffold.with_params(params)?)
}

fn load_tau(resolved: &Resolved, origin: OriginTag, task: usize) -> Result<TaskVector> {
    let params = read_params(&resolved.output_dir.join(tau_name(origin, task)))?;
    Ok(TaskVector::new(params, origin))
}

fn training_csv(log: &TrainLog) -> Vec<u8> {
    let rows: Vec<String> = log
        .entries
        .iter()
        .map(|e| format!("{},{},{}", e.iteration, format_float(e.lr), format_float(e.loss)))
        .collect();
    csv_bytes("iteration,lr,loss", &rows)
}

pub fn run_pretrain(resolved: &Resolved) -> Result<()> {
    let mut emitter = Emitter::new("pretrain", resolved)?;
    let specs = gen_disjoint_suite(&resolved.suite)?;
    let corpus = pretrain_corpus(&specs, CORPUS_POINTS, child_seed(resolved.seed, "corpus"))?;
    let (model, log) = pretrain(&resolved.model, &corpus, &resolved.pretrain)?;
    emitter.emit(&theta0_name(), &encode(&model.params))?;
    emitter.emit("pretrain_metrics.csv", &training_csv(&log))?;
    emitter.finish()?;
    Ok(())
}

pub fn run_finetune(resolved: &Resolved, task: usize, method: Method) -> Result<()> {
    check_task(resolved, "finetune", task)?;
    let origin = method.expected_origin();
    let mut emitter = Emitter::new(&format!("finetune_{}_task{}", origin.as_str(), task), resolved)?;
    let suite = suite_of(resolved)?;
    let base = load_theta0(resolved)?;
    let cfg = TrainConfig {
        seed: child_seed(resolved.seed, &format!("finetune-task-{task}")),
        ..resolved.finetune.clone()
    };
    let (tau, log) = finetune_task(&base, &suite.tasks[task], method, &cfg)?;
    emitter.emit(&tau_name(origin, task), &encode(tau.values()))?;
    emitter.emit(&format!("finetune_{}_task{}_metrics.csv", origin.as_str(), task), &training_csv(&log))?;
    emitter.finish()?;
    Ok(())
}

pub fn run_addition(resolved: &Resolved, method: Method) -> Result<()> {
    let mut emitter = Emitter::new(&format!("addition_{}", method.as_str()), resolved)?;
    let suite = suite_of(resolved)?;
    let base = load_theta0(resolved)?;
    let origin = method.expected_origin();
    let taus: Vec<TaskVector> = (0..suite.num_tasks())
        .map(|t| load_tau(resolved, origin, t))
        .collect::<Result<_>>()?;
    let result = task_addition(&base, &taus, &suite, &resolved.mixing, method)?;
    let rows: Vec<String> = (0..suite.num_tasks())
        .map(|t| {
            format!(
                "{},{},{t},{},{},{},{},{}",
                method.as_str(),
                format_float(result.alpha),
                format_float(result.per_task_test[t]),
                format_float(result.single_task_test[t]),
                format_float(result.single_task_heldout[t]),
                format_float(result.normalized_test),
                format_float(result.normalized_heldout),
            )
        })
        .collect();
    let header = "method,alpha,task,multi_task_test,single_task_test,single_task_heldout,normalized_test,normalized_heldout";
    emitter.emit(&format!("addition_{}.csv", method.as_str()), &csv_bytes(header, &rows))?;
    emitter.finish()?;
    println!(
        "addition {}: alpha {:.2}, normalized heldout {:.4}, normalized test {:.4}",
        method.as_str(),
        result.alpha,
        result.normalized_heldout,
        result.normalized_test
    );
    Ok(())
}

pub fn run_negation(resolved: &Resolved, method: Method, target: usize) -> Result<()> {
    check_task(resolved, "negation target", target)?;
    let control = resolved.suite.control_task_id;
    if target == control {
        return Err(ConfigError(format!(
            "negation target {target} equals the control task; pick another target or control_task_id"
        ))
        .into());
    }
    let mut emitter = Emitter::new(&format!("negation_{}_task{}", method.as_str(), target), resolved)?;
    let suite = suite_of(resolved)?;
    let base = load_theta0(resolved)?;
    let tau = load_tau(resolved, method.expected_origin(), target)?;
    let result = task_negation(&base, &tau, target, control, &suite, &resolved.mixing, method)?;
    let header = "method,task,alpha,feasible,target_test,target_heldout,control_test,control_heldout,control_floor";
    let row = format!(
        "{},{target},{},{},{},{},{},{},{}",
        method.as_str(),
        format_float(result.alpha),
        result.feasible,
        format_float(result.target_test),
        format_float(result.target_heldout),
        format_float(result.control_test),
        format_float(result.control_heldout),
        format_float(result.control_floor),
    );
    emitter.emit(&format!("negation_{}_task{}.csv", method.as_str(), target), &csv_bytes(header, &[row]))?;
    emitter.finish()?;
    println!(
        "negation {} task {target}: alpha {:.2}, feasible {}, target test {:.4}, control test {:.4}",
        method.as_str(),
        result.alpha,
        result.feasible,
        result.target_test,
        result.control_test
    );
    Ok(())
}

pub fn run_disentangle(resolved: &Resolved, first: usize, second: usize, method: Method) -> Result<()> {
    check_task(resolved, "disentangle", first)?;
    check_task(resolved, "disentangle", second)?;
    if first == second {
        return Err(ConfigError("disentangle needs two distinct tasks".into()).into());
    }
    let mut emitter =
        Emitter::new(&format!("disentangle_{}_task{}_{}", method.as_str(), first, second), resolved)?;
    let suite = suite_of(resolved)?;
    let base = load_theta0(resolved)?;
    let origin = method.expected_origin();
    let tau1 = load_tau(resolved, origin, first)?;
    let tau2 = load_tau(resolved, origin, second)?;
    let space = match method {
        Method::Nonlinear => EditSpace::Weights,
        Method::Posthoc | Method::Linearized => EditSpace::Tangent,
    };
    let seed = child_seed(resolved.seed, "xi");
    let pts1 = sample_dataset(&suite.tasks[first].spec, GRID_POINTS, Split::Test, seed).inputs;
    let pts2 = sample_dataset(&suite.tasks[second].spec, GRID_POINTS, Split::Test, seed).inputs;
    let grid = grid_scan(&base, &tau1, &tau2, &pts1, &pts2, &resolved.grid, space)?;
    let rows: Vec<String> = grid
        .rows()
        .into_iter()
        .map(|(a1, a2, xi)| format!("{},{},{}", format_float(a1), format_float(a2), format_float(xi)))
        .collect();
    emitter.emit(
        &format!("disentangle_{}_task{}_{}.csv", method.as_str(), first, second),
        &csv_bytes("alpha1,alpha2,xi", &rows),
    )?;
    emitter.finish()?;
    println!(
        "disentangle {} tasks ({first},{second}): fraction below 0.05 = {:.4}",
        method.as_str(),
        grid.fraction_below(0.05)
    );
    Ok(())
}

pub fn run_ntk(resolved: &Resolved, train_task: usize, control_task: usize, at_theta0: bool) -> Result<()> {
    check_task(resolved, "ntk train", train_task)?;
    check_task(resolved, "ntk control", control_task)?;
    if train_task == control_task {
        return Err(ConfigError("ntk needs distinct train and control tasks".into()).into());
    }
    let variant = if at_theta0 { "theta0" } else { "tuned" };
    let mut emitter =
        Emitter::new(&format!("ntk_{}_task{}_{}", variant, train_task, control_task), resolved)?;
    let suite = suite_of(resolved)?;
    let base = load_theta0(resolved)?;
    let model = if at_theta0 {
        base
    } else {
        let tau = load_tau(resolved, OriginTag::Nonlinear, train_task)?;
        let params = apply(&base.params, &tau)?;
        base.with_params(params)?
    };
    let train_pts = sample_dataset(
        &suite.tasks[train_task].spec,
        SPECTRAL_POINTS,
        Split::Test,
        child_seed(resolved.seed, "ntk-train"),
    )
    .inputs;
    let control_pts = sample_dataset(
        &suite.tasks[control_task].spec,
        SPECTRAL_POINTS,
        Split::Test,
        child_seed(resolved.seed, "ntk-control"),
    )
    .inputs;
    let report = localization_report(&model, &train_pts, &control_pts)?;
    let mut rows = Vec::with_capacity(report.partitions.len() * report.energies.len());
    for (i, partition) in report.partitions.iter().enumerate() {
        for (class, energy) in report.energies.iter().enumerate() {
            rows.push(format!("{i},{},{class},{}", partition.as_str(), format_float(energy[i])));
        }
    }
    emitter.emit(
        &format!("ntk_{}_task{}_{}.csv", variant, train_task, control_task),
        &csv_bytes("point_index,partition,class,local_energy", &rows),
    )?;
    emitter.finish()?;
    println!(
        "ntk {variant} train {train_task} control {control_task}: mean energy ratio {:.3}{}",
        report.mean_ratio,
        if report.degenerate_control { " (degenerate control)" } else { "" }
    );
    Ok(())
}

pub enum Basis {
    Bump,
    Fourier,
}

const RING_POINTS: usize = 256;

fn residual_rows(
    basis_name: &str,
    basis: &SampledBasis,
    tasks: &[TaskCoefficients],
    masks: &[Vec<bool>],
) -> Result<(Vec<String>, Vec<f64>, Vec<f64>)> {
    let residuals = proposition_residuals(basis, tasks, masks)?;
    let deviations = pointwise_sum_deviation(basis, tasks, masks)?;
    let rows = residuals
        .iter()
        .zip(&deviations)
        .enumerate()
        .map(|(t, (r, d))| {
            format!(
                "{basis_name},{t},{},{},{}",
                format_float(r.raw),
                format_float(r.normalized),
                format_float(*d)
            )
        })
        .collect();
    let normalized = residuals.iter().map(|r| r.normalized).collect();
    Ok((rows, normalized, deviations))
}

/// Check the two ring constructions: disjoint bump supports must compose
/// exactly, globally supported Fourier atoms must leak. Exit is Ok only
/// when the expected outcome holds for the chosen basis.
pub fn run_verify_spectral(resolved: &Resolved, basis: Basis) -> Result<()> {
    let masks = |points: &[f64]| -> Vec<Vec<bool>> {
        let pi = std::f64::consts::PI;
        vec![arc_mask(points, 0.0, pi / 2.0), arc_mask(points, pi, 1.5 * pi)]
    };
    let header = "basis,task,raw_residual,normalized_residual,pointwise_deviation";
    match basis {
        Basis::Bump => {
            let mut emitter = Emitter::new("verify_spectral_bump", resolved)?;
            let b = make_bump_basis(RING_POINTS, 8)?;
            let m = masks(&b.points);
            let mut c1 = vec![0.0; 8];
            c1[0] = 1.0;
            c1[1] = 0.7;
            let mut c2 = vec![0.0; 8];
            c2[4] = 0.9;
            c2[5] = -1.2;
            let tasks = vec![TaskCoefficients { coeffs: c1 }, TaskCoefficients { coeffs: c2 }];
            let (rows, normalized, deviations) = residual_rows("bump", &b, &tasks, &m)?;
            emitter.emit("spectral_check_bump.csv", &csv_bytes(header, &rows))?;
            emitter.finish()?;
            let ok = normalized.iter().all(|r| *r <= 1e-10) && deviations.iter().all(|d| *d <= 1e-10);
            if !ok {
                return Err(anyhow!(
                    "bump construction failed to compose: residuals {normalized:?}, deviations {deviations:?}"
                ));
            }
            println!("bump basis composes exactly: residuals and pointwise deviations all at most 1e-10");
        }
        Basis::Fourier => {
            let mut emitter = Emitter::new("verify_spectral_fourier", resolved)?;
            let b = make_fourier_ring_basis(RING_POINTS, 4)?;
            let m = masks(&b.points);
            let atoms = [fourier_cos_index(1), fourier_sin_index(1)];
            let tasks = vec![
                TaskCoefficients::atom(b.len(), atoms[0], 1.0)?,
                TaskCoefficients::atom(b.len(), atoms[1], 1.0)?,
            ];
            let (rows, normalized, deviations) = residual_rows("fourier", &b, &tasks, &m)?;
            let min_sv = restricted_gram_min_singular(&b, &atoms, &m[0])?;
            emitter.emit("spectral_check_fourier.csv", &csv_bytes(header, &rows))?;
            emitter.finish()?;
            let leaks = normalized.iter().all(|r| *r > 0.1) && deviations.iter().all(|d| *d > 1e-3);
            if !leaks {
                return Err(anyhow!(
                    "fourier atoms unexpectedly composed: residuals {normalized:?}, deviations {deviations:?}"
                ));
            }
            if min_sv <= 0.05 {
                return Err(anyhow!(
                    "fourier atoms lost linear independence on the arc: min singular {min_sv}"
                ));
            }
            println!(
                "fourier atoms leak as expected: normalized residuals {normalized:?}, min singular on arc {min_sv:.4}"
            );
        }
    }
    Ok(())
}

/// Resolve the thread count: flag first, then TTA_THREADS, else leave the
/// pool at its default.
pub fn configure_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("TTA_THREADS") {
            Ok(s) => Some(
                s.parse::<usize>()
                    .map_err(|_| ConfigError(format!("TTA_THREADS is not a thread count: {s:?}")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(ConfigError("thread count must be at least 1".into()).into());
        }
        // A second initialization in the same process is harmless: the
        // pool keeps its first configuration.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

