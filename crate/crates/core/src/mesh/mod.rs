//! Fixed-topology triangle meshes, file formats, graph operators and datasets.

mod dataset;
mod graph;
mod io;
mod synth;

pub use dataset::{MeshSequenceDataset, Normalization, Split, STD_FLOOR};
pub use graph::{build_adjacency, normalized_laplacian};
pub use io::{parse_obj, parse_ply, ramp_color, serialize_obj, serialize_ply};
pub use synth::{generate_synthetic_dataset, icosahedron, icosphere, grid_patch, real_spherical_harmonics, SynthConfig};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Triangle mesh with counterclockwise faces.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh<T> {
    positions: Vec<[T; 3]>,
    faces: Vec<[usize; 3]>,
}

impl<T: Real> TriMesh<T> {
    /// Validates that every face references existing, distinct vertices.
    pub fn new(positions: Vec<[T; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = positions.len();
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&i| i >= n) {
                return Err(Error::Structure(format!(
                    "face {fi} references vertex {bad} but the mesh has {n} vertices"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Structure(format!("face {fi} is degenerate: {f:?}")));
            }
        }
        Ok(Self { positions, faces })
    }

    pub fn num_vertices(&self) -> usize {
        self.positions.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn positions(&self) -> &[[T; 3]] {
        &self.positions
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Same faces, new vertex positions.
    pub fn with_positions(&self, positions: Vec<[T; 3]>) -> Result<Self> {
        if positions.len() != self.positions.len() {
            return Err(Error::Dimension {
                op: "with_positions",
                detail: format!("{} positions for {} vertices", positions.len(), self.positions.len()),
            });
        }
        Ok(Self {
            positions,
            faces: self.faces.clone(),
        })
    }

    /// Flattened `n×3` row-major coordinates.
    pub fn flat_positions(&self) -> Vec<T> {
        self.positions.iter().flatten().copied().collect()
    }

    pub fn cast<U: Real>(&self) -> TriMesh<U> {
        TriMesh {
            positions: self
                .positions
                .iter()
                .map(|p| p.map(|v| U::lit(v.to_f64_lossy())))
                .collect(),
            faces: self.faces.clone(),
        }
    }
}

/// Packs `n×3` row-major coordinates back into points.
pub fn unflatten_positions<T: Copy>(flat: &[T]) -> Vec<[T; 3]> {
    flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_faces() {
        let p = vec![[0.0f64; 3]; 3];
        assert!(TriMesh::new(p.clone(), vec![[0, 1, 3]]).is_err());
        assert!(TriMesh::new(p.clone(), vec![[0, 1, 1]]).is_err());
        assert!(TriMesh::new(p, vec![[0, 1, 2]]).is_ok());
    }
}
