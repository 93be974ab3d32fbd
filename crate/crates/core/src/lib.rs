//! Task-vector editing on small differentiable models: a reverse/forward
//! autodiff tape over a fixed primitive set, frozen-head classifiers,
//! disjoint-support task suites, linearized (tangent-space) training and
//! kernels, weight-disentanglement grids, eigenfunction localization
//! diagnostics, and the addition/negation editing benchmarks.

pub mod autodiff;
pub mod benchmarks;
pub mod disentangle;
pub mod error;
pub mod layout;
pub mod linearize;
pub mod models;
pub mod rng;
pub mod spectral;
pub mod taskvec;
pub mod tasks;
pub mod tensor;
pub mod training;

pub use benchmarks::{
    normalized_addition_accuracy, random_init_control, task_addition, task_negation, AdditionResult,
    Method, NegationResult,
};
pub use disentangle::{disentanglement_error, grid_scan, DisentanglementGrid, EditSpace, GridSpec};
pub use error::{CoreError, Result};
pub use layout::{LayoutBuilder, LayoutEntry, ParamLayout, ParamVector};
pub use linearize::{gram_matrix, kernel_fit, ntk_kernel, posthoc_linearize, KernelPredictor, LinearizedModel};
pub use models::{init_params, Activation, FrozenHead, InitMode, Model, ModelSpec, Predictor};
pub use taskvec::{alpha_search, combine, make_task_vector, MixingConfig, OriginTag, SearchMode, TaskVector};
pub use spectral::{localization_report, make_bump_basis, make_fourier_ring_basis, SampledBasis, SpectralReport};
pub use tasks::{accuracy, build_suite, pretrain_corpus, Dataset, Split, Suite, SuiteConfig, TaskSpec};
pub use tensor::Tensor;
pub use training::{
    finetune_linearized, finetune_nonlinear, lr_schedule, pretrain, LossKind, OptimizerKind, Schedule,
    TrainConfig,
};
