use rand::Rng;

use crate::tensor::Tensor;

/// Xavier/Glorot uniform `[fan_out, fan_in]` matrix, bound `√(6/(fan_in+fan_out))`.
pub fn xavier_uniform<R: Rng>(rng: &mut R, fan_out: usize, fan_in: usize) -> Tensor {
    let bound = xavier_bound(fan_in, fan_out);
    let data = (0..fan_out * fan_in)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::new(vec![fan_out, fan_in], data)
        .expect("shape matches data")
        .trainable()
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn zeros_param(shape: &[usize]) -> Tensor {
    Tensor::zeros(shape).trainable()
}

pub fn ones_param(shape: &[usize]) -> Tensor {
    Tensor::filled(shape, 1.0).trainable()
}
