use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::Result;
use crate::layers::{ParamSet, ParamSpec};

/// Uniform Xavier/Glorot sample in `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    assert!(fan_in > 0 && fan_out > 0, "Xavier fans must be positive");
    let bound = xavier_bound(fan_in, fan_out);
    Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Xavier-initialized weights and zero biases, drawn in spec order.
pub fn init_params<R: Rng + ?Sized>(specs: &[ParamSpec], rng: &mut R) -> Result<ParamSet> {
    ParamSet::from_specs(specs, |spec| match spec.fans {
        Some((fan_in, fan_out)) => xavier_init(&spec.shape, fan_in, fan_out, rng),
        None => Tensor::zeros(&spec.shape),
    })
}
