//! Mesh autoencoders (deep 3D morphable models) with learnable,
//! attention-generated mapping matrices for hierarchical down- and upsampling.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the `*64` aliases
//! below are the double-precision instantiations used by the CLI and tests.

pub mod aggregation;
pub mod autodiff;
pub mod conv;
pub mod decimation;
pub mod error;
pub mod mesh;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod sparse;

pub use error::{Error, Result};
pub use scalar::Real;

pub type TriMesh64 = mesh::TriMesh<f64>;
pub type TriMesh32 = mesh::TriMesh<f32>;
pub type SparseMatrix64 = sparse::SparseMatrix<f64>;
pub type SparseMatrix32 = sparse::SparseMatrix<f32>;
pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Dataset64 = mesh::MeshSequenceDataset<f64>;
pub type Hierarchy64 = decimation::MeshHierarchy<f64>;
pub type Autoencoder64 = model::Autoencoder<f64>;
