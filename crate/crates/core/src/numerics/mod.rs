//! Deterministic `f64` differentiable-computation backbone: tensors, a
//! single-use reverse-mode tape, 2D (de)convolution, Adam, and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
pub mod kernels;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use gradcheck::{check_graph, gradient_check, gradient_check_piecewise, GradCheckConfig, GradCheckReport};
pub use params::{Gradients, ParamSet};
pub use tape::{conv_out_extent, deconv_out_extent, Tape, Var};
pub use tensor::Tensor;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// He-style normal initialization with the given fan-in.
pub fn he_normal(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}
