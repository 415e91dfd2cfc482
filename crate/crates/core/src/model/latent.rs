use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{dim_err, Result};
use crate::scalar::Real;

use super::autoencoder::Autoencoder;

fn affine<T: Real>(op: &'static str, z1: &[T], z2: &[T], alpha: T) -> Result<Vec<T>> {
    if z1.len() != z2.len() {
        return dim_err(op, format!("latent sizes {} and {}", z1.len(), z2.len()));
    }
    let beta = T::one() - alpha;
    Ok(z1.iter().zip(z2).map(|(&a, &b)| alpha * a + beta * b).collect())
}

/// `α·z1 + (1 − α)·z2`, intended for `α ∈ (0, 1)`.
pub fn latent_interpolate<T: Real>(z1: &[T], z2: &[T], alpha: T) -> Result<Vec<T>> {
    affine("latent_interpolate", z1, z2, alpha)
}

/// Same formula as [`latent_interpolate`], intended for `α ∉ [0, 1]`.
pub fn latent_extrapolate<T: Real>(z1: &[T], z2: &[T], alpha: T) -> Result<Vec<T>> {
    affine("latent_extrapolate", z1, z2, alpha)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    /// `forward(T0 + (S1 − S0))`.
    VertexSpace,
    /// `decode(z(T0) + z(S1) − z(S0))`.
    LatentSpace,
}

/// Applies the deformation `S0 → S1` to `T0`.
pub fn deformation_transfer<T: Real>(
    model: &Autoencoder<T>,
    s0: &Tensor<T>,
    s1: &Tensor<T>,
    t0: &Tensor<T>,
    mode: TransferMode,
) -> Result<Tensor<T>> {
    if s0.shape() != s1.shape() || s0.shape() != t0.shape() {
        return dim_err(
            "deformation_transfer",
            format!("{:?}, {:?}, {:?}", s0.shape(), s1.shape(), t0.shape()),
        );
    }
    match mode {
        TransferMode::VertexSpace => {
            let delta = s1.zip_map(s0, |a, b| a - b);
            let t1 = t0.zip_map(&delta, |a, d| a + d);
            model.forward(&t1)
        }
        TransferMode::LatentSpace => {
            let (zs0, zs1, zt0) = (model.encode(s0)?, model.encode(s1)?, model.encode(t0)?);
            let z: Vec<T> = zt0.iter().zip(&zs1).zip(&zs0).map(|((&t, &a), &b)| t + (a - b)).collect();
            model.decode(&z)
        }
    }
}
