//! Parameter initializers.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::Matrix;

/// Uniform in ±√(6 / (fan_in + fan_out)).
pub fn xavier_uniform(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, (fan_in, fan_out), -a, a)
}

pub fn uniform(rng: &mut impl Rng, shape: (usize, usize), lo: f64, hi: f64) -> Matrix {
    let dist = Uniform::new(lo, hi).expect("lo < hi");
    Array2::from_shape_simple_fn(shape, || dist.sample(rng))
}

pub fn normal(rng: &mut impl Rng, shape: (usize, usize), std: f64) -> Matrix {
    let dist = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn(shape, || dist.sample(rng))
}
