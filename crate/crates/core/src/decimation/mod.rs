//! Quadric-error simplification and the level hierarchy built from it.

mod geom;
mod hierarchy;
mod mapping;
mod qem;
mod quadric;

pub use hierarchy::{build_hierarchy, build_hierarchy_with_counts, MeshHierarchy};
pub use mapping::{downsample_matrix, upsample_matrix};
pub use qem::{qem_decimate, Collapse, Decimation};
pub use quadric::{vertex_quadrics, Quadric, VertexQuadrics};
