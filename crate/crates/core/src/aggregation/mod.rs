//! Mapping matrices between hierarchy levels: the learned attention head,
//! its fusion with the precomputed matrix, and the baseline aggregators.

mod attention;
mod baseline;
mod mapping;

pub use attention::{
    compatibility_scores, fuse, init_params, normalize_masked, topk_mask, AttentionAggregator,
    AttentionParams, InitScheme, EPS_DENOM, EPS_NORM,
};
pub use baseline::{baseline_average, baseline_full_mapping, baseline_variant_weight, renormalize_variant};
pub use mapping::{receptive_field, MappingMatrix, MappingSidecar, Provenance};

use std::sync::Arc;

use crate::autodiff::{Tape, Var};
use crate::error::{dim_err, Result};
use crate::scalar::Real;
use crate::sparse::SparseMatrix;

/// A mapping matrix as it appears on a tape.
#[derive(Clone, Debug)]
pub enum LiveMap<T> {
    /// Constant sparse matrix (precomputed, averaged or exported).
    Fixed(Arc<SparseMatrix<T>>),
    /// Dense variable, used in full.
    Dense(Var),
    /// Dense variable whose entries vanish outside `support`.
    Supported { m: Var, support: Arc<SparseMatrix<T>> },
    /// Trainable values on a fixed sparse pattern.
    Values { pattern: Arc<SparseMatrix<T>>, values: Var },
}

/// `m · X`.
pub fn aggregate<T: Real>(tape: &mut Tape<T>, m: &LiveMap<T>, x: Var) -> Result<Var> {
    match m {
        LiveMap::Fixed(s) => tape.spmm(Arc::clone(s), x),
        LiveMap::Dense(v) => tape.matmul(*v, x),
        LiveMap::Supported { m, support } => tape.support_matmul(*m, Arc::clone(support), x),
        LiveMap::Values { pattern, values } => tape.spmm_values(Arc::clone(pattern), *values, x),
    }
}

/// Current value of a live map as a sparse matrix (dense maps keep every entry).
pub fn materialize<T: Real>(tape: &Tape<T>, m: &LiveMap<T>) -> Result<SparseMatrix<T>> {
    Ok(match m {
        LiveMap::Fixed(s) => (**s).clone(),
        LiveMap::Dense(v) => {
            let (r, c) = tape.value(*v).dims2("materialize")?;
            let data = tape.value(*v).data();
            let rows = (0..r).map(|i| (0..c).map(|j| (j, data[i * c + j])).collect()).collect();
            SparseMatrix::from_sorted_rows(c, rows)
        }
        LiveMap::Supported { m, support } => {
            let (r, c) = tape.value(*m).dims2("materialize")?;
            if (r, c) != (support.rows(), support.cols()) {
                return dim_err("materialize", "support shape differs from the map");
            }
            let data = tape.value(*m).data();
            let rows = (0..r)
                .map(|i| support.row_indices(i).iter().map(|&j| (j, data[i * c + j])).collect())
                .collect();
            SparseMatrix::from_sorted_rows(c, rows)
        }
        LiveMap::Values { pattern, values } => pattern.with_values(tape.value(*values).data().to_vec()),
    })
}
