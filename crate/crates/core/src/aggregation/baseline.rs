use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::scalar::Real;
use crate::sparse::SparseMatrix;

/// Freely learned dense `n_next × n_prev` mapping, uniform on `(−0.01, 0.01)`.
pub fn baseline_full_mapping<T: Real>(n_next: usize, n_prev: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(&[n_next, n_prev], -0.01, 0.01, &mut rng)
}

/// Same support as `mp`, with every row's weights made equal.
pub fn baseline_average<T: Real>(mp: &SparseMatrix<T>) -> SparseMatrix<T> {
    let mut values = Vec::with_capacity(mp.nnz());
    for r in 0..mp.rows() {
        let n = mp.row_nnz(r);
        let w = T::one() / T::from_usize(n.max(1)).unwrap();
        values.extend(std::iter::repeat(w).take(n));
    }
    mp.with_values(values)
}

/// Fixed pattern of `mp` and its values as the `1 × nnz` trainable starting point.
pub fn baseline_variant_weight<T: Real>(mp: &SparseMatrix<T>) -> (Arc<SparseMatrix<T>>, Tensor<T>) {
    let values = Tensor::matrix(1, mp.nnz(), mp.values().to_vec()).expect("row vector");
    (Arc::new(mp.clone()), values)
}

/// Rescales each row of `values` (laid out on `pattern`) to sum to one.
///
/// Rows summing to zero are left alone.
pub fn renormalize_variant<T: Real>(pattern: &SparseMatrix<T>, values: &mut Tensor<T>) {
    let v = values.data_mut();
    for w in pattern.indptr().windows(2) {
        let row = &mut v[w[0]..w[1]];
        let s: T = row.iter().copied().sum();
        if s != T::zero() && s.is_finite() {
            row.iter_mut().for_each(|x| *x /= s);
        }
    }
}
