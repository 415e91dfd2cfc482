//! Mesh convolutions: isotropic Chebyshev filters and anisotropic spirals.

mod cheb;
mod spiral;

pub use cheb::ChebLayer;
pub use spiral::{spiral_length, spiral_sequences, SpiralLayer, SpiralTable};

use rand::Rng;

use crate::autodiff::Tensor;
use crate::scalar::Real;

/// Glorot-uniform `fan_in × fan_out` weights.
pub(crate) fn glorot<T: Real, R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(&[fan_in, fan_out], -limit, limit, rng)
}
