//! Weight initializers. All draws come from the caller's [`Rng`] in registration order.

use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// He (Kaiming) normal: `N(0, 2 / fan_in)`.
pub fn he_normal<S: Scalar>(shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> Tensor<S> {
    let std = (2.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| S::from_f64_lossy(rng.normal(0.0, std))).collect();
    Tensor::new(shape, data).expect("initializer shape")
}

/// Xavier (Glorot) uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<S: Scalar>(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor<S> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| S::from_f64_lossy(rng.uniform_range(-a, a))).collect();
    Tensor::new(shape, data).expect("initializer shape")
}

pub fn normal<S: Scalar>(shape: Vec<usize>, std: f64, rng: &mut Rng) -> Tensor<S> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| S::from_f64_lossy(rng.normal(0.0, std))).collect();
    Tensor::new(shape, data).expect("initializer shape")
}
