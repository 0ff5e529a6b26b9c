//! Seeded parameter initialisers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::error::Result;

/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
pub fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::param(data, shape)
}

pub fn normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Result<Tensor> {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::param(data, shape)
}

pub fn constant(shape: &[usize], value: f64) -> Result<Tensor> {
    Tensor::param(vec![value; shape.iter().product()], shape)
}
