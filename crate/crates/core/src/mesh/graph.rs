use crate::scalar::Real;
use crate::sparse::SparseMatrix;

use super::TriMesh;

/// Symmetric binary vertex adjacency of the face edges.
pub fn build_adjacency<T: Real>(mesh: &TriMesh<T>) -> SparseMatrix<T> {
    let n = mesh.num_vertices();
    let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for f in mesh.faces() {
        for e in 0..3 {
            let (a, b) = (f[e], f[(e + 1) % 3]);
            nbrs[a].push(b);
            nbrs[b].push(a);
        }
    }
    let rows = nbrs
        .into_iter()
        .map(|mut r| {
            r.sort_unstable();
            r.dedup();
            r.into_iter().map(|c| (c, T::one())).collect()
        })
        .collect();
    SparseMatrix::from_sorted_rows(n, rows)
}

/// Chebyshev-ready operator `L − I = −D^{-1/2} A D^{-1/2}` (largest eigenvalue taken as 2).
///
/// Rows of isolated vertices are empty.
pub fn normalized_laplacian<T: Real>(adj: &SparseMatrix<T>) -> SparseMatrix<T> {
    let deg: Vec<T> = adj.row_sums();
    let inv_sqrt: Vec<T> = deg
        .iter()
        .map(|&d| if d > T::zero() { T::one() / d.sqrt() } else { T::zero() })
        .collect();
    let rows = (0..adj.rows())
        .map(|r| {
            adj.row(r)
                .filter(|&(c, a)| c != r && a != T::zero())
                .map(|(c, a)| (c, -(a * inv_sqrt[r] * inv_sqrt[c])))
                .collect()
        })
        .collect();
    SparseMatrix::from_sorted_rows(adj.cols(), rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosahedron;

    fn triangle() -> TriMesh<f64> {
        TriMesh::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]]).unwrap()
    }

    #[test]
    fn single_triangle_adjacency() {
        let a = build_adjacency(&triangle());
        assert_eq!(a.nnz(), 6);
        for i in 0..3 {
            assert_eq!(a.get(i, i), 0.0);
        }
        assert!(a.is_symmetric());
    }

    #[test]
    fn shared_edge_degrees() {
        let m = TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]],
            vec![[0, 1, 2], [1, 3, 2]],
        )
        .unwrap();
        let a = build_adjacency(&m);
        assert_eq!(a.row_nnz(1), 3);
        assert_eq!(a.row_nnz(2), 3);
        assert_eq!(a.row_nnz(0), 2);
    }

    #[test]
    fn icosahedron_is_five_regular() {
        let a = build_adjacency(&icosahedron::<f64>());
        for i in 0..12 {
            assert_eq!(a.row_nnz(i), 5);
        }
    }

    #[test]
    fn triangle_laplacian_entries() {
        let l = normalized_laplacian(&build_adjacency(&triangle()));
        for i in 0..3 {
            assert_eq!(l.get(i, i), 0.0);
            for j in 0..3 {
                if i != j {
                    assert!((l.get(i, j) + 0.5).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn edgeless_laplacian_is_zero() {
        let adj = SparseMatrix::<f64>::zeros(4, 4);
        assert_eq!(normalized_laplacian(&adj).nnz(), 0);
    }
}
