use super::{Scalar, SeededRng, Tensor};

/// Gaussian weights with std `sqrt(2 / fan_in)`.
pub fn he_normal<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut SeededRng) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| T::of(rng.normal() * std)).collect();
    Tensor::new(shape, data).expect("shape and buffer agree by construction")
}

pub fn zeros_like_shape<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(shape)
}
