use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{dim_err, Error, Result};
use crate::scalar::Real;
use crate::sparse::SparseMatrix;

use super::mapping::{MappingMatrix, Provenance};
use super::{materialize, LiveMap};

/// Floor on key/query norms in the cosine score.
pub const EPS_NORM: f64 = 1e-12;
/// Added to each masked row sum before normalizing.
pub const EPS_DENOM: f64 = 1e-8;

/// `s[i, j] = cos(q_i, k_j)`, `n_next × n_prev`.
pub fn compatibility_scores<T: Real>(tape: &mut Tape<T>, queries: Var, keys: Var) -> Result<Var> {
    let qn = tape.row_normalize(queries, T::lit(EPS_NORM))?;
    let kn = tape.row_normalize(keys, T::lit(EPS_NORM))?;
    tape.matmul_bt(qn, kn)
}

/// Column indices of the `k` largest entries of each row, ascending; ties
/// favour the smaller column. `k ≥ cols` keeps every column.
fn topk_indices<T: Real>(scores: &Tensor<T>, k: usize) -> Result<Vec<Vec<usize>>> {
    let (r, c) = scores.dims2("topk_mask")?;
    let k = k.min(c);
    let mut out = Vec::with_capacity(r);
    for i in 0..r {
        let row = scores.row(i);
        let mut idx: Vec<usize> = (0..c).collect();
        if k < c {
            let by_rank = |&a: &usize, &b: &usize| {
                row[b]
                    .partial_cmp(&row[a])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            };
            if k > 0 {
                idx.select_nth_unstable_by(k - 1, by_rank);
            }
            idx.truncate(k);
            idx.sort_unstable();
        }
        out.push(idx);
    }
    Ok(out)
}

/// Binary mask of the per-row top-`k` scores.
pub fn topk_mask<T: Real>(scores: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let (r, c) = scores.dims2("topk_mask")?;
    let mut data = vec![T::zero(); r * c];
    for (i, cols) in topk_indices(scores, k)?.into_iter().enumerate() {
        for j in cols {
            data[i * c + j] = T::one();
        }
    }
    Tensor::matrix(r, c, data)
}

/// Masks `scores` and divides each row by its sum plus [`EPS_DENOM`].
///
/// Also returns how many rows had a masked sum `≤ 0`; those rows are emitted unchanged
/// by the formula rather than clamped.
pub fn normalize_masked<T: Real>(tape: &mut Tape<T>, scores: Var, mask: &Tensor<T>) -> Result<(Var, usize)> {
    let mv = tape.constant(mask.clone());
    let sm = tape.mul(scores, mv)?;
    let (r, c) = tape.value(sm).dims2("normalize_masked")?;
    let data = tape.value(sm).data();
    let degenerate = (0..r)
        .filter(|&i| data[i * c..(i + 1) * c].iter().copied().sum::<T>() <= T::zero())
        .count();
    if degenerate > 0 {
        log::warn!("{degenerate} attention rows have a non-positive masked score sum");
    }
    Ok((tape.row_stochastic(sm, T::lit(EPS_DENOM))?, degenerate))
}

/// `w·m_a + (1 − w)·m_p`.
pub fn fuse<T: Real>(tape: &mut Tape<T>, ma: Var, mp: &SparseMatrix<T>, w: Var) -> Result<Var> {
    let (r, c) = tape.value(ma).dims2("fuse")?;
    if (r, c) != (mp.rows(), mp.cols()) {
        return dim_err("fuse", format!("attention {r}x{c} vs precomputed {}x{}", mp.rows(), mp.cols()));
    }
    let mpd = tape.constant(Tensor::matrix(r, c, mp.to_dense())?);
    tape.blend(ma, mpd, w)
}

/// How keys and queries are initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Every column standard normal.
    Normal,
    /// Every column uniform on `(−1, 1)`.
    Uniform,
    /// Vertex positions in the first three columns, uniform `(−0.1, 0.1)` elsewhere.
    Precomputed,
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Self::Normal),
            "uniform" => Ok(Self::Uniform),
            "precomputed" => Ok(Self::Precomputed),
            other => Err(Error::Config(format!("unknown init scheme {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    /// `n_prev × c`.
    pub keys: Tensor<T>,
    /// `n_next × c`.
    pub queries: Tensor<T>,
    pub w_a: T,
}

fn init_block<T: Real>(pos: &[[T; 3]], c: usize, scheme: InitScheme, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n = pos.len();
    let mut data = Vec::with_capacity(n * c);
    for p in pos {
        for j in 0..c {
            let v = match scheme {
                InitScheme::Precomputed if j < 3 => p[j],
                InitScheme::Precomputed => T::lit(rand::Rng::gen_range(rng, -0.1..0.1)),
                InitScheme::Uniform => T::lit(rand::Rng::gen_range(rng, -1.0..1.0)),
                InitScheme::Normal => T::lit(StandardNormal.sample(rng)),
            };
            data.push(v);
        }
    }
    Tensor::matrix(n, c, data).expect("block shape")
}

/// Keys from the preceding level, queries from the succeeding one.
pub fn init_params<T: Real>(
    prev_positions: &[[T; 3]],
    next_positions: &[[T; 3]],
    c: usize,
    scheme: InitScheme,
    w_a_init: f64,
    seed: u64,
) -> Result<AttentionParams<T>> {
    if c < 2 || (scheme == InitScheme::Precomputed && c < 3) {
        return Err(Error::Config(format!("key dimension {c} too small for {scheme:?} initialization")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys = init_block(prev_positions, c, scheme, &mut rng);
    let queries = init_block(next_positions, c, scheme, &mut rng);
    Ok(AttentionParams {
        keys,
        queries,
        w_a: T::lit(w_a_init),
    })
}

/// Static configuration of one learned mapping between two levels.
#[derive(Clone, Debug)]
pub struct AttentionAggregator<T> {
    precomputed: Arc<SparseMatrix<T>>,
    c: usize,
    k: usize,
    masking: bool,
    fusion: bool,
}

impl<T: Real> AttentionAggregator<T> {
    /// `k` larger than the preceding level is clamped to it.
    pub fn new(precomputed: Arc<SparseMatrix<T>>, c: usize, k: usize, masking: bool, fusion: bool) -> Result<Self> {
        if c < 2 || k < 1 {
            return Err(Error::Config(format!("need c ≥ 2 and k ≥ 1 (got c={c}, k={k})")));
        }
        for (i, s) in precomputed.row_sums().into_iter().enumerate() {
            if (s.to_f64_lossy() - 1.0).abs() > 1e-12 {
                return Err(Error::Contract(format!("precomputed row {i} sums to {s}")));
            }
        }
        let k = k.min(precomputed.cols());
        Ok(Self {
            precomputed,
            c,
            k,
            masking,
            fusion,
        })
    }

    pub fn n_prev(&self) -> usize {
        self.precomputed.cols()
    }

    pub fn n_next(&self) -> usize {
        self.precomputed.rows()
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn masking(&self) -> bool {
        self.masking
    }

    pub fn fusion(&self) -> bool {
        self.fusion
    }

    pub fn precomputed(&self) -> &Arc<SparseMatrix<T>> {
        &self.precomputed
    }

    /// Keys, queries and (with fusion) the fusion weight.
    pub fn num_params(&self) -> usize {
        self.c * (self.n_prev() + self.n_next()) + usize::from(self.fusion)
    }

    /// Records the mapping on `tape`; also returns the degenerate-row count.
    pub fn live(&self, tape: &mut Tape<T>, keys: Var, queries: Var, w_a: Option<Var>) -> Result<(LiveMap<T>, usize)> {
        let shape_ok = tape.value(keys).shape() == [self.n_prev(), self.c]
            && tape.value(queries).shape() == [self.n_next(), self.c];
        if !shape_ok {
            return dim_err(
                "attention",
                format!(
                    "keys {:?} / queries {:?} for a {}x{} mapping with c={}",
                    tape.value(keys).shape(),
                    tape.value(queries).shape(),
                    self.n_next(),
                    self.n_prev(),
                    self.c
                ),
            );
        }
        let s = compatibility_scores(tape, queries, keys)?;
        let kept = if self.masking {
            topk_indices(tape.value(s), self.k)?
        } else {
            vec![(0..self.n_prev()).collect(); self.n_next()]
        };
        let (r, c) = (self.n_next(), self.n_prev());
        let mut mask = vec![T::zero(); r * c];
        for (i, cols) in kept.iter().enumerate() {
            for &j in cols {
                mask[i * c + j] = T::one();
            }
        }
        let (ma, degenerate) = normalize_masked(tape, s, &Tensor::matrix(r, c, mask)?)?;
        let m = if self.fusion {
            let w = w_a.ok_or_else(|| Error::Contract("fused attention needs a fusion weight".into()))?;
            fuse(tape, ma, &self.precomputed, w)?
        } else {
            ma
        };
        if !self.masking {
            return Ok((LiveMap::Dense(m), degenerate));
        }
        let rows = kept
            .into_iter()
            .enumerate()
            .map(|(i, mut cols)| {
                if self.fusion {
                    cols.extend_from_slice(self.precomputed.row_indices(i));
                    cols.sort_unstable();
                    cols.dedup();
                }
                cols.into_iter().map(|j| (j, T::one())).collect()
            })
            .collect();
        let support = Arc::new(SparseMatrix::from_sorted_rows(c, rows));
        Ok((LiveMap::Supported { m, support }, degenerate))
    }

    /// Smallest gap between the `k`-th and `(k+1)`-th score over all rows;
    /// infinite when masking keeps every column.
    pub fn topk_margin(&self, params: &AttentionParams<T>) -> Result<f64> {
        if !self.masking || self.k >= self.n_prev() {
            return Ok(f64::INFINITY);
        }
        let mut tape = Tape::new();
        let k = tape.constant(params.keys.clone());
        let q = tape.constant(params.queries.clone());
        let s = compatibility_scores(&mut tape, q, k)?;
        let scores = tape.value(s);
        let mut margin = f64::INFINITY;
        for i in 0..self.n_next() {
            let mut row: Vec<f64> = scores.row(i).iter().map(|v| v.to_f64_lossy()).collect();
            row.sort_unstable_by(|a, b| b.total_cmp(a));
            margin = margin.min(row[self.k - 1] - row[self.k]);
        }
        Ok(margin)
    }

    /// The normalized attention head alone, before fusion; zeros dropped.
    pub fn head(&self, params: &AttentionParams<T>) -> Result<SparseMatrix<T>> {
        let mut tape = Tape::new();
        let k = tape.constant(params.keys.clone());
        let q = tape.constant(params.queries.clone());
        let s = compatibility_scores(&mut tape, q, k)?;
        let mask = if self.masking {
            topk_mask(tape.value(s), self.k)?
        } else {
            Tensor::filled(&[self.n_next(), self.n_prev()], T::one())
        };
        let (ma, _) = normalize_masked(&mut tape, s, &mask)?;
        Ok(SparseMatrix::from_dense(self.n_next(), self.n_prev(), tape.value(ma).data()))
    }

    /// Evaluates the mapping once and freezes it as a constant.
    pub fn export_fixed(&self, params: &AttentionParams<T>) -> Result<MappingMatrix<T>> {
        let mut tape = Tape::new();
        let k = tape.constant(params.keys.clone());
        let q = tape.constant(params.queries.clone());
        let w = tape.constant(Tensor::scalar(params.w_a));
        let (live, _) = self.live(&mut tape, k, q, Some(w))?;
        Ok(MappingMatrix::new(materialize(&tape, &live)?, Provenance::Exported))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::aggregate;
    use crate::autodiff::check_gradients;
    use crate::decimation::{downsample_matrix, qem_decimate, upsample_matrix};
    use crate::mesh::icosahedron;

    fn scores(q: &[f64], k: &[f64], c: usize) -> Tensor<f64> {
        let mut tape = Tape::new();
        let qv = tape.constant(Tensor::matrix(q.len() / c, c, q.to_vec()).unwrap());
        let kv = tape.constant(Tensor::matrix(k.len() / c, c, k.to_vec()).unwrap());
        let s = compatibility_scores(&mut tape, qv, kv).unwrap();
        tape.value(s).clone()
    }

    #[test]
    fn cosine_scores() {
        assert!((scores(&[0.3, -2.0], &[0.3, -2.0], 2).item() - 1.0).abs() < 1e-15);
        assert_eq!(scores(&[1.0, 0.0], &[0.0, 4.0], 2).item(), 0.0);
        assert!((scores(&[1.0, 0.0], &[1.0, 1.0], 2).item() - 0.5f64.sqrt()).abs() < 1e-15);
        // zero vectors stay finite
        assert_eq!(scores(&[0.0, 0.0], &[1.0, 1.0], 2).item(), 0.0);
    }

    #[test]
    fn topk_examples() {
        let t = |row: Vec<f64>, k| topk_mask(&Tensor::matrix(1, row.len(), row).unwrap(), k).unwrap().into_data();
        assert_eq!(t(vec![0.9, 0.1, 0.5, 0.7], 2), vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(t(vec![0.9, 0.1, 0.5, 0.7], 4), vec![1.0; 4]);
        assert_eq!(t(vec![0.5, 0.5, 0.1], 1), vec![1.0, 0.0, 0.0]);
        assert_eq!(t(vec![0.1, 0.5, 0.5, 0.5], 2), vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn masked_normalization() {
        let mut tape = Tape::<f64>::new();
        let s = tape.constant(Tensor::matrix(1, 4, vec![0.5, 0.3, 0.9, -0.2]).unwrap());
        let mask = Tensor::matrix(1, 4, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let (m, deg) = normalize_masked(&mut tape, s, &mask).unwrap();
        assert_eq!(deg, 0);
        let v = tape.value(m).data();
        assert!((v[0] - 0.625).abs() < 1e-7 && (v[1] - 0.375).abs() < 1e-7);
        assert_eq!(&v[2..], &[0.0, 0.0]);

        let s = tape.constant(Tensor::matrix(1, 2, vec![-0.5, -0.3]).unwrap());
        let (_, deg) = normalize_masked(&mut tape, s, &Tensor::filled(&[1, 2], 1.0)).unwrap();
        assert_eq!(deg, 1);
    }

    #[test]
    fn random_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tape = Tape::new();
        let s = Tensor::<f64>::uniform(&[30, 20], 0.01, 1.0, &mut rng);
        let mask = topk_mask(&s, 5).unwrap();
        let sv = tape.constant(s);
        let (m, _) = normalize_masked(&mut tape, sv, &mask).unwrap();
        for i in 0..30 {
            let row = tape.value(m).row(i);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().filter(|&&v| v != 0.0).count() <= 5);
        }
    }

    #[test]
    fn fusion_endpoints() {
        let mut tape = Tape::new();
        let ma = tape.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
        let mp = SparseMatrix::from_triplets(1, 2, vec![(0, 0, 0.5), (0, 1, 0.5)]).unwrap();
        let check = |tape: &mut Tape<f64>, w: f64| {
            let wv = tape.constant(Tensor::scalar(w));
            let f = fuse(tape, ma, &mp, wv).unwrap();
            tape.value(f).data().to_vec()
        };
        assert_eq!(check(&mut tape, 0.0), vec![0.5, 0.5]);
        assert_eq!(check(&mut tape, 1.0), vec![1.0, 0.0]);
        let v = check(&mut tape, 0.2);
        assert!((v[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn init_seeds_positions() {
        let ico = icosahedron::<f64>();
        let pos = ico.positions();
        let p = init_params(pos, &pos[..4], 3, InitScheme::Precomputed, 0.2, 9).unwrap();
        assert_eq!(p.keys.data(), ico.flat_positions().as_slice());
        assert_eq!(p.w_a, 0.2);
        let a = init_params(pos, &pos[..4], 21, InitScheme::Precomputed, 0.2, 9).unwrap();
        let b = init_params(pos, &pos[..4], 21, InitScheme::Precomputed, 0.2, 9).unwrap();
        assert_eq!(a, b);
        for i in 0..4 {
            assert_eq!(&a.queries.row(i)[..3], &pos[i]);
            assert!(a.queries.row(i)[3..].iter().all(|v| v.abs() < 0.1));
        }
        assert!(init_params(pos, pos, 2, InitScheme::Precomputed, 0.2, 0).is_err());
        assert!(init_params(pos, pos, 2, InitScheme::Normal, 0.2, 0).is_ok());
    }

    fn level_pair() -> (Arc<SparseMatrix<f64>>, Arc<SparseMatrix<f64>>, Vec<[f64; 3]>, Vec<[f64; 3]>) {
        let fine = crate::mesh::icosphere::<f64>(1);
        let d = qem_decimate(&fine, 12).unwrap();
        let down = downsample_matrix(fine.num_vertices(), &d.kept).unwrap();
        let up = upsample_matrix(&fine, &d.mesh, &d.kept).unwrap();
        (Arc::new(down), Arc::new(up), fine.positions().to_vec(), d.mesh.positions().to_vec())
    }

    #[test]
    fn exported_rows_respect_support_bound() {
        let (_, up, fine, coarse) = level_pair();
        let agg = AttentionAggregator::new(Arc::clone(&up), 21, 4, true, true).unwrap();
        assert_eq!(agg.num_params(), 21 * (12 + 42) + 1);
        let p = init_params(&coarse, &fine, 21, InitScheme::Precomputed, 0.2, 3).unwrap();
        let m = agg.export_fixed(&p).unwrap();
        for i in 0..agg.n_next() {
            let mut union: Vec<usize> = up.row_indices(i).to_vec();
            assert!(m.matrix.row_nnz(i) <= 4 + union.len());
            union.dedup();
            let s: f64 = m.matrix.row_values(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn export_matches_live_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (down, _, fine, coarse) = level_pair();
        let agg = AttentionAggregator::new(down, 8, 2, true, true).unwrap();
        let p = init_params(&fine, &coarse, 8, InitScheme::Precomputed, 0.2, 4).unwrap();
        let x = Tensor::<f64>::uniform(&[42, 5], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let k = tape.param(p.keys.clone());
        let q = tape.param(p.queries.clone());
        let w = tape.param(Tensor::scalar(p.w_a));
        let xv = tape.constant(x.clone());
        let (live, _) = agg.live(&mut tape, k, q, Some(w)).unwrap();
        let y = aggregate(&mut tape, &live, xv).unwrap();
        let fixed = agg.export_fixed(&p).unwrap();
        let z = fixed.matrix.matmul_dense(x.data(), 5);
        assert_eq!(tape.value(y).data(), z.as_slice());
    }

    #[test]
    fn zero_weight_reproduces_precomputed() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (_, up, fine, coarse) = level_pair();
        let agg = AttentionAggregator::new(Arc::clone(&up), 21, 32, true, true).unwrap();
        assert_eq!(agg.k(), 12);
        let mut p = init_params(&coarse, &fine, 21, InitScheme::Precomputed, 0.2, 5).unwrap();
        p.w_a = 0.0;
        let x = Tensor::<f64>::uniform(&[12, 4], -1.0, 1.0, &mut rng);
        let m = agg.export_fixed(&p).unwrap();
        assert_eq!(m.matrix.matmul_dense(x.data(), 4), up.matmul_dense(x.data(), 4));
    }

    #[test]
    fn gradients_reach_keys_queries_and_weight() {
        let (_, up, fine, coarse) = level_pair();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let agg = AttentionAggregator::new(up, 6, 3, true, true).unwrap();
        let p = init_params(&coarse, &fine, 6, InitScheme::Precomputed, 0.2, 6).unwrap();
        let x = Tensor::<f64>::uniform(&[12, 3], -1.0, 1.0, &mut rng);
        let point = vec![p.keys.clone(), p.queries.clone(), Tensor::scalar(p.w_a)];
        let report = check_gradients(
            |tape, v| {
                let (live, _) = agg.live(tape, v[0], v[1], Some(v[2]))?;
                let xv = tape.constant(x.clone());
                let y = aggregate(tape, &live, xv)?;
                let sq = tape.mul(y, y)?;
                Ok(tape.sum(sq))
            },
            &point,
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn unmasked_attention_is_dense() {
        let (down, _, fine, coarse) = level_pair();
        let agg = AttentionAggregator::new(down, 4, 2, false, false).unwrap();
        assert_eq!(agg.num_params(), 4 * 54);
        let p = init_params(&fine, &coarse, 4, InitScheme::Precomputed, 0.2, 7).unwrap();
        let m = agg.export_fixed(&p).unwrap();
        assert_eq!(m.matrix.nnz(), 12 * 42);
    }
}
