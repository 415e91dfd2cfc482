use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{dim_err, Result};
use crate::scalar::Real;
use crate::sparse::SparseMatrix;

/// Shape of a truncated Chebyshev filter `Σ_k T_k(L̃) X θ_k`.
///
/// The weights are stored stacked as a `(K·d_in) × d_out` matrix, `θ_0` first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChebLayer {
    pub order: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub bias: bool,
}

impl ChebLayer {
    pub fn new(order: usize, d_in: usize, d_out: usize, bias: bool) -> Self {
        Self {
            order,
            d_in,
            d_out,
            bias,
        }
    }

    pub fn weight_shape(&self) -> [usize; 2] {
        [self.order * self.d_in, self.d_out]
    }

    pub fn num_params(&self) -> usize {
        self.order * self.d_in * self.d_out + if self.bias { self.d_out } else { 0 }
    }

    pub fn init_weight<T: Real, R: Rng>(&self, rng: &mut R) -> Tensor<T> {
        super::glorot(self.order * self.d_in, self.d_out, rng)
    }

    /// `lap` is the scaled Laplacian `L̃` of the level `x` lives on.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        lap: &Arc<SparseMatrix<T>>,
        weight: Var,
        bias: Option<Var>,
    ) -> Result<Var> {
        if self.order == 0 {
            return dim_err("cheb_conv", "polynomial order must be at least 1");
        }
        let (n, d) = tape.value(x).dims2("cheb_conv")?;
        if d != self.d_in || lap.rows() != n || lap.cols() != n {
            return dim_err(
                "cheb_conv",
                format!("features {n}x{d}, laplacian {}x{}, layer expects d_in {}", lap.rows(), lap.cols(), self.d_in),
            );
        }
        if tape.value(weight).shape() != self.weight_shape() {
            return dim_err("cheb_conv", format!("weight shape {:?}, expected {:?}", tape.value(weight).shape(), self.weight_shape()));
        }
        let mut terms = vec![x];
        if self.order > 1 {
            terms.push(tape.spmm(Arc::clone(lap), x)?);
        }
        for k in 2..self.order {
            let lt = tape.spmm(Arc::clone(lap), terms[k - 1])?;
            let twice = tape.scale(lt, T::lit(2.0));
            terms.push(tape.sub(twice, terms[k - 2])?);
        }
        let stacked = if terms.len() == 1 { x } else { tape.concat_cols(&terms)? };
        let y = tape.matmul(stacked, weight)?;
        match (self.bias, bias) {
            (true, Some(b)) => tape.add_bias(y, b),
            (false, None) => Ok(y),
            (expected, _) => dim_err("cheb_conv", format!("layer bias flag is {expected} but bias argument disagrees")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_gradients;
    use crate::mesh::{build_adjacency, icosahedron, normalized_laplacian, TriMesh};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(layer: ChebLayer, x: &Tensor<f64>, lap: &Arc<SparseMatrix<f64>>, w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Tensor<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w.clone());
        let bv = b.map(|b| tape.constant(b.clone()));
        let y = layer.forward(&mut tape, xv, lap, wv, bv).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn order_one_ignores_laplacian() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lap = Arc::new(normalized_laplacian(&build_adjacency(&icosahedron::<f64>())));
        let layer = ChebLayer::new(1, 2, 3, true);
        let x = Tensor::uniform(&[12, 2], -1.0, 1.0, &mut rng);
        let w = layer.init_weight(&mut rng);
        let b = Tensor::uniform(&[1, 3], -1.0, 1.0, &mut rng);
        let y = run(layer, &x, &lap, &w, Some(&b));
        let y0 = run(layer, &x, &Arc::new(SparseMatrix::zeros(12, 12)), &w, Some(&b));
        assert_eq!(y, y0);
        let expect = x.matmul(&w).unwrap();
        for r in 0..12 {
            for c in 0..3 {
                assert!((y.get(r, c) - expect.get(r, c) - b.data()[c]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn edgeless_order_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = ChebLayer::new(3, 2, 2, false);
        let x = Tensor::uniform(&[4, 2], -1.0, 1.0, &mut rng);
        let w: Tensor<f64> = layer.init_weight(&mut rng);
        let y = run(layer, &x, &Arc::new(SparseMatrix::zeros(4, 4)), &w, None);
        let t0 = Tensor::matrix(2, 2, w.data()[0..4].to_vec()).unwrap();
        let t2 = Tensor::matrix(2, 2, w.data()[8..12].to_vec()).unwrap();
        let expect = x.matmul(&t0).unwrap().zip_map(&x.matmul(&t2).unwrap(), |a, b| a - b);
        assert!(y.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn single_triangle_by_hand() {
        let m = TriMesh::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        let lap = Arc::new(normalized_laplacian(&build_adjacency(&m)));
        let layer = ChebLayer::new(2, 1, 1, false);
        let x = Tensor::matrix(3, 1, vec![1.0, 0.0, 0.0]).unwrap();
        let w = Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap();
        let y = run(layer, &x, &lap, &w, None);
        let expect = Tensor::matrix(3, 1, vec![1.0, -0.5, -0.5]).unwrap();
        assert!(y.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mesh = icosahedron::<f64>();
        let lap = normalized_laplacian(&build_adjacency(&mesh));
        let mut perm: Vec<usize> = (0..12).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        // (P L Pᵀ)[a, b] = L[perm[a], perm[b]]
        let mut inv = vec![0; 12];
        for (a, &p) in perm.iter().enumerate() {
            inv[p] = a;
        }
        let triplets: Vec<_> = lap.triplets().map(|(r, c, v)| (inv[r], inv[c], v)).collect();
        let plap = SparseMatrix::from_triplets(12, 12, triplets).unwrap();
        let layer = ChebLayer::new(6, 3, 4, true);
        let x = Tensor::uniform(&[12, 3], -1.0, 1.0, &mut rng);
        let px = Tensor::matrix(12, 3, perm.iter().flat_map(|&p| x.row(p).to_vec()).collect()).unwrap();
        let w = layer.init_weight(&mut rng);
        let b = Tensor::uniform(&[1, 4], -1.0, 1.0, &mut rng);
        let y = run(layer, &x, &Arc::new(lap), &w, Some(&b));
        let py = run(layer, &px, &Arc::new(plap), &w, Some(&b));
        for (a, &p) in perm.iter().enumerate() {
            for c in 0..4 {
                assert!((py.get(a, c) - y.get(p, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lap = Arc::new(normalized_laplacian(&build_adjacency(&icosahedron::<f64>())));
        let layer = ChebLayer::new(4, 3, 2, true);
        let point = vec![
            Tensor::uniform(&[12, 3], -1.0, 1.0, &mut rng),
            layer.init_weight(&mut rng),
            Tensor::uniform(&[1, 2], -1.0, 1.0, &mut rng),
        ];
        let target = Tensor::uniform(&[12, 2], -3.0, 3.0, &mut rng);
        let report = check_gradients(
            |tape, v| {
                let y = layer.forward(tape, v[0], &lap, v[1], Some(v[2]))?;
                let t = tape.constant(target.clone());
                let d = tape.sub(y, t)?;
                let sq = tape.mul(d, d)?;
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
    fn parameter_count() {
        assert_eq!(ChebLayer::new(6, 3, 16, true).num_params(), 304);
    }
}
