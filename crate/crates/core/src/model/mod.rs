//! Encoder/decoder assembly, parameter accounting and latent arithmetic.

mod autoencoder;
mod config;
mod latent;

pub use autoencoder::{Autoencoder, Bound, Direction, MappingRecord};
pub use config::{AggregationKind, ConvKind, ModelConfig};
pub use latent::{deformation_transfer, latent_extrapolate, latent_interpolate, TransferMode};
