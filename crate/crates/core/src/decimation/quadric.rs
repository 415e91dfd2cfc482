use crate::mesh::TriMesh;
use crate::scalar::Real;

use super::geom::{cross, dot, sub};

/// Symmetric 4×4 quadric stored as its upper triangle:
///
/// ```text
/// | q0 q1 q2 q3 |
/// | q1 q4 q5 q6 |
/// | q2 q5 q7 q8 |
/// | q3 q6 q8 q9 |
/// ```
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadric<T> {
    q: [T; 10],
}

impl<T: Real> Quadric<T> {
    pub fn zero() -> Self {
        Self { q: [T::zero(); 10] }
    }

    /// Outer product `[a b c d][a b c d]ᵀ` of the plane `ax + by + cz + d = 0`.
    pub fn from_plane(a: T, b: T, c: T, d: T) -> Self {
        Self {
            q: [a * a, a * b, a * c, a * d, b * b, b * c, b * d, c * c, c * d, d * d],
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut q = self.q;
        for (a, &b) in q.iter_mut().zip(&other.q) {
            *a += b;
        }
        Self { q }
    }

    /// `vᵀ Q v` with `v = [x y z 1]`.
    pub fn evaluate(&self, p: [T; 3]) -> T {
        let q = &self.q;
        let two = T::lit(2.0);
        let [x, y, z] = p;
        q[0] * x * x
            + two * q[1] * x * y
            + two * q[2] * x * z
            + two * q[3] * x
            + q[4] * y * y
            + two * q[5] * y * z
            + two * q[6] * y
            + q[7] * z * z
            + two * q[8] * z
            + q[9]
    }

    pub fn to_matrix(&self) -> [[T; 4]; 4] {
        let q = &self.q;
        [
            [q[0], q[1], q[2], q[3]],
            [q[1], q[4], q[5], q[6]],
            [q[2], q[5], q[7], q[8]],
            [q[3], q[6], q[8], q[9]],
        ]
    }
}

/// Per-vertex quadrics summed over incident face planes.
#[derive(Clone, Debug)]
pub struct VertexQuadrics<T> {
    pub quadrics: Vec<Quadric<T>>,
    /// Faces with zero area, which contribute nothing.
    pub skipped_faces: usize,
}

pub fn vertex_quadrics<T: Real>(mesh: &TriMesh<T>) -> VertexQuadrics<T> {
    let pos = mesh.positions();
    let mut quadrics = vec![Quadric::zero(); mesh.num_vertices()];
    let mut skipped_faces = 0;
    for f in mesh.faces() {
        let n = cross(sub(pos[f[1]], pos[f[0]]), sub(pos[f[2]], pos[f[0]]));
        let len = dot(n, n).sqrt();
        if !(len > T::min_positive_value()) || !len.is_finite() {
            skipped_faces += 1;
            continue;
        }
        let n = n.map(|v| v / len);
        let d = -dot(n, pos[f[0]]);
        let plane = Quadric::from_plane(n[0], n[1], n[2], d);
        for &v in f {
            quadrics[v] = quadrics[v].add(&plane);
        }
    }
    if skipped_faces > 0 {
        log::warn!("skipped {skipped_faces} zero-area faces while accumulating quadrics");
    }
    VertexQuadrics {
        quadrics,
        skipped_faces,
    }
}
