//! Compressed-row sparse matrices.
//!
//! Every mapping matrix (selection, barycentric, exported attention) and the
//! graph operators (adjacency, scaled Laplacian) are stored in this format.
//! Iteration order is row-major with ascending column inside each row.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix<T> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> SparseMatrix<T> {
    /// Builds a matrix from `(row, col, value)` triplets in any order.
    ///
    /// Explicit zero values are kept; duplicates are rejected.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, T)>,
    ) -> Result<Self> {
        for &(r, c, _) in &triplets {
            if r >= rows {
                return Err(Error::Index {
                    op: "sparse_from_triplets",
                    index: r as i64,
                    bound: rows,
                });
            }
            if c >= cols {
                return Err(Error::Index {
                    op: "sparse_from_triplets",
                    index: c as i64,
                    bound: cols,
                });
            }
        }
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        if let Some(w) = triplets
            .windows(2)
            .find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1))
        {
            return Err(Error::Contract(format!(
                "duplicate sparse entry at ({}, {})",
                w[0].0, w[0].1
            )));
        }
        let mut indptr = vec![0; rows + 1];
        for &(r, _, _) in &triplets {
            indptr[r + 1] += 1;
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        let indices = triplets.iter().map(|t| t.1).collect();
        let values = triplets.iter().map(|t| t.2).collect();
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    /// Builds a matrix from per-row `(col, value)` lists, already sorted by column.
    pub(crate) fn from_sorted_rows(cols: usize, rows: Vec<Vec<(usize, T)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in &rows {
            for &(c, v) in row {
                debug_assert!(c < cols);
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    /// Keeps the nonzero entries of a row-major dense matrix.
    pub fn from_dense(rows: usize, cols: usize, data: &[T]) -> Self {
        assert_eq!(data.len(), rows * cols);
        let per_row = (0..rows)
            .map(|r| {
                data[r * cols..(r + 1) * cols]
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != T::zero())
                    .map(|(c, v)| (c, *v))
                    .collect()
            })
            .collect();
        Self::from_sorted_rows(cols, per_row)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    /// Entries of row `r` as `(col, value)` in ascending column order.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_indices(&self, r: usize) -> &[usize] {
        &self.indices[self.indptr[r]..self.indptr[r + 1]]
    }

    pub fn row_values(&self, r: usize) -> &[T] {
        &self.values[self.indptr[r]..self.indptr[r + 1]]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Same sparsity pattern, new values (one per stored entry).
    pub fn with_values(&self, values: Vec<T>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self {
            values,
            ..self.clone()
        }
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let idx = self.row_indices(r);
        match idx.binary_search(&c) {
            Ok(p) => self.values[self.indptr[r] + p],
            Err(_) => T::zero(),
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.rows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.rows)
            .map(|r| self.row_values(r).iter().copied().sum())
            .collect()
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows * self.cols];
        for (r, c, v) in self.triplets() {
            out[r * self.cols + c] = v;
        }
        out
    }

    pub fn dense_row(&self, r: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for (c, v) in self.row(r) {
            out[c] = v;
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut per_col: Vec<Vec<(usize, T)>> = vec![Vec::new(); self.cols];
        for (r, c, v) in self.triplets() {
            per_col[c].push((r, v));
        }
        Self::from_sorted_rows(self.rows, per_col)
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && self.transpose() == *self
    }

    /// `S·X` for a row-major dense `X` with `d` columns.
    pub fn matmul_dense(&self, x: &[T], d: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows * d];
        self.matmul_dense_into(x, d, &mut out);
        out
    }

    /// Accumulates `S·X` into `out`.
    pub fn matmul_dense_into(&self, x: &[T], d: usize, out: &mut [T]) {
        assert_eq!(x.len(), self.cols * d, "sparse matmul: rhs shape");
        assert_eq!(out.len(), self.rows * d, "sparse matmul: output shape");
        for r in 0..self.rows {
            let orow = &mut out[r * d..(r + 1) * d];
            for (c, v) in self.row(r) {
                for (o, &xv) in orow.iter_mut().zip(&x[c * d..(c + 1) * d]) {
                    *o += v * xv;
                }
            }
        }
    }

    /// Accumulates `Sᵀ·G` into `out` (`G` has `rows` rows).
    pub fn transpose_matmul_dense_into(&self, g: &[T], d: usize, out: &mut [T]) {
        assert_eq!(g.len(), self.rows * d);
        assert_eq!(out.len(), self.cols * d);
        for r in 0..self.rows {
            let grow = &g[r * d..(r + 1) * d];
            for (c, v) in self.row(r) {
                for (o, &gv) in out[c * d..(c + 1) * d].iter_mut().zip(grow) {
                    *o += v * gv;
                }
            }
        }
    }

    /// Writes `row,col,value` lines (with header) in row-major order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "row,col,value")?;
        for (r, c, v) in self.triplets() {
            writeln!(w, "{r},{c},{v}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(reader: R, rows: usize, cols: usize) -> Result<Self> {
        let mut triplets = Vec::new();
        for (no, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if no == 0 && line.starts_with("row") || line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Parse {
                line: no + 1,
                msg: msg.to_string(),
            };
            let mut parts = line.split(',');
            let r = parts
                .next()
                .and_then(|s| s.trim().parse::<usize>().ok())
                .ok_or_else(|| bad("bad row index"))?;
            let c = parts
                .next()
                .and_then(|s| s.trim().parse::<usize>().ok())
                .ok_or_else(|| bad("bad column index"))?;
            let v = parts
                .next()
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| bad("bad value"))?;
            triplets.push((r, c, T::lit(v)));
        }
        Self::from_triplets(rows, cols, triplets)
    }
}
