//! Precomputed mapping matrices between consecutive hierarchy levels.

use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::scalar::Real;
use crate::sparse::SparseMatrix;

use super::geom::{closest_point_weights, dot, sub};

/// `|kept| × n_fine` selection matrix: row `r` picks fine vertex `kept[r]`.
pub fn downsample_matrix<T: Real>(n_fine: usize, kept: &[usize]) -> Result<SparseMatrix<T>> {
    for (r, &k) in kept.iter().enumerate() {
        if k >= n_fine {
            return Err(Error::Index {
                op: "downsample_matrix",
                index: k as i64,
                bound: n_fine,
            });
        }
        if r > 0 && kept[r - 1] >= k {
            return Err(Error::Index {
                op: "downsample_matrix",
                index: k as i64,
                bound: n_fine,
            });
        }
    }
    let rows = kept.iter().map(|&k| vec![(k, T::one())]).collect();
    Ok(SparseMatrix::from_sorted_rows(n_fine, rows))
}

/// `n_fine × n_coarse` barycentric interpolation.
///
/// Kept vertices copy their coarse counterpart; every other fine vertex takes
/// the barycentric weights of its closest point on the closest coarse triangle
/// (lowest face index on ties), clamped to the triangle and renormalized.
pub fn upsample_matrix<T: Real>(
    fine: &TriMesh<T>,
    coarse: &TriMesh<T>,
    kept: &[usize],
) -> Result<SparseMatrix<T>> {
    if coarse.num_faces() == 0 {
        return Err(Error::Structure("coarse mesh has no faces to project onto".into()));
    }
    if kept.len() != coarse.num_vertices() {
        return Err(Error::Dimension {
            op: "upsample_matrix",
            detail: format!("{} kept indices for {} coarse vertices", kept.len(), coarse.num_vertices()),
        });
    }
    let n_fine = fine.num_vertices();
    let mut coarse_of = vec![None; n_fine];
    for (r, &k) in kept.iter().enumerate() {
        if k >= n_fine {
            return Err(Error::Index {
                op: "upsample_matrix",
                index: k as i64,
                bound: n_fine,
            });
        }
        coarse_of[k] = Some(r);
    }
    let cpos = coarse.positions();
    let rows = fine
        .positions()
        .iter()
        .enumerate()
        .map(|(i, &p)| match coarse_of[i] {
            Some(r) => vec![(r, T::one())],
            None => project_row(p, cpos, coarse.faces()),
        })
        .collect();
    Ok(SparseMatrix::from_sorted_rows(coarse.num_vertices(), rows))
}

fn project_row<T: Real>(p: [T; 3], cpos: &[[T; 3]], faces: &[[usize; 3]]) -> Vec<(usize, T)> {
    let mut best: Option<(T, usize, [T; 3])> = None;
    for (fi, f) in faces.iter().enumerate() {
        let (a, b, c) = (cpos[f[0]], cpos[f[1]], cpos[f[2]]);
        let w = closest_point_weights(p, a, b, c);
        let q = [0, 1, 2].map(|k| w[0] * a[k] + w[1] * b[k] + w[2] * c[k]);
        let d = sub(p, q);
        let dist = dot(d, d);
        if best.map_or(true, |(bd, _, _)| dist < bd) {
            best = Some((dist, fi, w));
        }
    }
    let (_, fi, w) = best.expect("at least one face");
    let w = w.map(|v| v.max(T::zero()));
    let total = w[0] + w[1] + w[2];
    let mut row: Vec<(usize, T)> = faces[fi]
        .iter()
        .zip(w)
        .filter(|(_, v)| *v > T::zero())
        .map(|(&c, v)| (c, v / total))
        .collect();
    row.sort_by_key(|e| e.0);
    row
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_matrices() {
        let d = downsample_matrix::<f64>(3, &[0, 1, 2]).unwrap();
        assert_eq!(d, SparseMatrix::identity(3));
        let d = downsample_matrix::<f64>(4, &[2]).unwrap();
        assert_eq!(d.to_dense(), vec![0.0, 0.0, 1.0, 0.0]);
        assert!(downsample_matrix::<f64>(4, &[1, 1]).is_err());
        assert!(downsample_matrix::<f64>(4, &[4]).is_err());
    }

    #[test]
    fn discarded_vertex_on_coarse_vertex() {
        let coarse = TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        // fine vertex 3 duplicates coarse vertex 1's position
        let fine = TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]],
            vec![[0, 1, 2], [0, 3, 2]],
        )
        .unwrap();
        let u = upsample_matrix(&fine, &coarse, &[0, 1, 2]).unwrap();
        assert_eq!(u.row(3).collect::<Vec<_>>(), vec![(1, 1.0)]);
    }

    #[test]
    fn empty_coarse_faces_is_structure_error() {
        let coarse = TriMesh::<f64>::new(vec![[0.0; 3]], vec![]).unwrap();
        let fine = crate::mesh::icosahedron::<f64>();
        assert!(matches!(upsample_matrix(&fine, &coarse, &[0]), Err(Error::Structure(_))));
    }
}
