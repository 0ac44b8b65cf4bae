use rand::Rng;

use crate::tensor::Tensor;

/// Parameter drawn from `U(−1/√fan_in, 1/√fan_in)`.
pub(crate) fn uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::param(shape, data).expect("shape product matches")
}

pub(crate) fn zeros_param(shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::param(shape, vec![0.0; n]).expect("shape product matches")
}
