//! Fixtures shared by the criterion benches: a default-sized model, a
//! fixed-direction task vector, and low-discrepancy point clouds. Nothing
//! here draws from an RNG, so the benches measure core code and nothing
//! else.

use tta_core::{init_params, InitMode, Model, ModelSpec, OriginTag, ParamVector, TaskVector, Tensor};

/// The default two-input, eight-class model every bench runs against.
pub fn bench_model() -> Model {
    init_params(&ModelSpec::default(), 7, InitMode::Random).expect("default spec is valid")
}

/// `n` low-discrepancy points in `[-0.5, 0.5]^2`.
pub fn bench_points(n: usize) -> Vec<Tensor> {
    (0..n)
        .map(|i| {
            let u = ((i + 1) as f64 * 0.754_877_666_2).fract();
            let v = ((i + 1) as f64 * 0.569_840_290_9).fract();
            Tensor::vector(vec![u - 0.5, v - 0.5]).expect("coordinates are finite")
        })
        .collect()
}

/// A fixed direction in the model's parameter space with norm 0.5, tagged
/// with the given origin.
pub fn bench_tau(model: &Model, origin: OriginTag) -> TaskVector {
    let layout = model.params.layout().clone();
    let raw: Vec<f64> =
        (0..layout.total_len()).map(|j| ((j + 1) as f64 * 0.618_033_988_7).fract() - 0.5).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let values = raw.into_iter().map(|v| 0.5 * v / norm).collect();
    let params = ParamVector::from_values(layout, values).expect("values match the layout");
    TaskVector::new(params, origin)
}
