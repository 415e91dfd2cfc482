//! Tape-based reverse-mode differentiation.
//!
//! Every forward op appends one node holding its value and enough context to
//! run its adjoint. Nodes are only ever appended, so recording order is a
//! valid topological order and `backward` is a single reverse sweep.

use std::sync::Arc;

use crate::error::{dim_err, Error, Result};
use crate::scalar::Real;
use crate::sparse::SparseMatrix;

use super::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    SpMM { s: Arc<SparseMatrix<T>>, x: Var },
    SupportMatMul { m: Var, support: Arc<SparseMatrix<T>>, x: Var },
    SpMMValues { pattern: Arc<SparseMatrix<T>>, values: Var, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    Mul(Var, Var),
    AddBias { x: Var, bias: Var },
    Blend { a: Var, b: Var, w: Var },
    Gather { x: Var, index: Arc<Vec<i64>> },
    Relu(Var),
    RowNorm(Var),
    RowNormalize { x: Var, eps: T },
    RowStochastic { x: Var, eps: T },
    Sum(Var),
    Mean(Var),
    L1 { a: Var, b: Var },
    Reshape(Var),
    ConcatCols(Vec<Var>),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of one forward evaluation.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `v`; zeros when `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return dim_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        if cfg!(debug_assertions)
            && inputs.iter().all(|v| self.nodes[v.0].value.all_finite())
            && !value.all_finite()
        {
            panic!("non-finite output from {op:?} on finite inputs");
        }
        let requires_grad = self.needs(inputs);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf (a parameter or an input we want gradients for).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiated leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `A·Bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (br, bc) = self.value(b).dims2("matmul")?;
        let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != k2 {
            return dim_err(
                "matmul",
                format!("{m}x{k} times {k2}x{n} (rhs transposed: {trans_b})"),
            );
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            trans_b,
            &mut out,
            false,
        );
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(value, Op::MatMul { a, b, trans_b }, &[a, b]))
    }

    /// Constant sparse matrix times a dense variable.
    pub fn spmm(&mut self, s: Arc<SparseMatrix<T>>, x: Var) -> Result<Var> {
        let (r, d) = self.value(x).dims2("spmm")?;
        if s.cols() != r {
            return dim_err(
                "spmm",
                format!("sparse {}x{} times dense {r}x{d}", s.rows(), s.cols()),
            );
        }
        let value = Tensor::matrix(s.rows(), d, s.matmul_dense(self.value(x).data(), d))?;
        Ok(self.push(value, Op::SpMM { s, x }, &[x]))
    }

    /// Dense variable `M` times `X`, summing only over the stored pattern of
    /// `support` (entries of `M` outside it must be zero for this to equal `M·X`).
    pub fn support_matmul(
        &mut self,
        m: Var,
        support: Arc<SparseMatrix<T>>,
        x: Var,
    ) -> Result<Var> {
        let (mr, mc) = self.value(m).dims2("support_matmul")?;
        let (xr, d) = self.value(x).dims2("support_matmul")?;
        if mr != support.rows() || mc != support.cols() || xr != mc {
            return dim_err(
                "support_matmul",
                format!(
                    "map {mr}x{mc}, support {}x{}, features {xr}x{d}",
                    support.rows(),
                    support.cols()
                ),
            );
        }
        let mv = self.value(m).data();
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); mr * d];
        for r in 0..mr {
            let orow = &mut out[r * d..(r + 1) * d];
            for &c in support.row_indices(r) {
                let w = mv[r * mc + c];
                for (o, &xe) in orow.iter_mut().zip(&xv[c * d..(c + 1) * d]) {
                    *o += w * xe;
                }
            }
        }
        let value = Tensor::matrix(mr, d, out)?;
        Ok(self.push(value, Op::SupportMatMul { m, support, x }, &[m, x]))
    }

    /// Sparse matrix with fixed `pattern` and trainable stored `values` (`1×nnz`) times `X`.
    pub fn spmm_values(
        &mut self,
        pattern: Arc<SparseMatrix<T>>,
        values: Var,
        x: Var,
    ) -> Result<Var> {
        if self.value(values).len() != pattern.nnz() {
            return dim_err(
                "spmm_values",
                format!(
                    "{} values for a pattern with {} entries",
                    self.value(values).len(),
                    pattern.nnz()
                ),
            );
        }
        let (xr, d) = self.value(x).dims2("spmm_values")?;
        if xr != pattern.cols() {
            return dim_err("spmm_values", format!("pattern cols {} vs rows {xr}", pattern.cols()));
        }
        let s = pattern.with_values(self.value(values).data().to_vec());
        let value = Tensor::matrix(s.rows(), d, s.matmul_dense(self.value(x).data(), d))?;
        Ok(self.push(value, Op::SpMMValues { pattern, values, x }, &[values, x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::Scale(a, c), &[a])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a `1×d` (or length-`d`) bias to every row of an `n×d` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, d) = self.value(x).dims2("add_bias")?;
        if self.value(bias).len() != d {
            return dim_err(
                "add_bias",
                format!("bias of {} values for {d} columns", self.value(bias).len()),
            );
        }
        let b = self.value(bias).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(d.max(1)) {
            for (v, &bv) in row.iter_mut().zip(&b) {
                *v += bv;
            }
        }
        let value = Tensor::matrix(n, d, data)?;
        Ok(self.push(value, Op::AddBias { x, bias }, &[x, bias]))
    }

    /// `w·a + (1 − w)·b` with a scalar variable `w`.
    pub fn blend(&mut self, a: Var, b: Var, w: Var) -> Result<Var> {
        same_shape("blend", self.value(a), self.value(b))?;
        if !self.value(w).is_scalar() {
            return dim_err("blend", format!("weight shape {:?}", self.value(w).shape()));
        }
        let wv = self.value(w).item();
        let one_minus = T::one() - wv;
        let value = self
            .value(a)
            .zip_map(self.value(b), |x, y| wv * x + one_minus * y);
        Ok(self.push(value, Op::Blend { a, b, w }, &[a, b, w]))
    }

    /// Row gather; index `-1` yields a zero row.
    pub fn gather_rows(&mut self, x: Var, index: Arc<Vec<i64>>) -> Result<Var> {
        let (n, d) = self.value(x).dims2("gather_rows")?;
        let src = self.value(x).data();
        let mut data = vec![T::zero(); index.len() * d];
        for (r, &i) in index.iter().enumerate() {
            if i < -1 || i >= n as i64 {
                return Err(Error::Index {
                    op: "gather_rows",
                    index: i,
                    bound: n,
                });
            }
            if i >= 0 {
                let i = i as usize;
                data[r * d..(r + 1) * d].copy_from_slice(&src[i * d..(i + 1) * d]);
            }
        }
        let value = Tensor::matrix(index.len(), d, data)?;
        Ok(self.push(value, Op::Gather { x, index }, &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu(x), &[x])
    }

    /// Row-wise Euclidean norm, `n×d → n×1`.
    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.value(x).dims2("row_norm")?;
        let src = self.value(x).data();
        let data = (0..n)
            .map(|r| src[r * d..(r + 1) * d].iter().map(|&v| v * v).sum::<T>().sqrt())
            .collect();
        let value = Tensor::matrix(n, 1, data)?;
        Ok(self.push(value, Op::RowNorm(x), &[x]))
    }

    /// Divides each row by `max(‖row‖, eps)`.
    pub fn row_normalize(&mut self, x: Var, eps: T) -> Result<Var> {
        let (n, d) = self.value(x).dims2("row_normalize")?;
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(d.max(1)).take(n) {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(eps);
            row.iter_mut().for_each(|v| *v /= norm);
        }
        let value = Tensor::matrix(n, d, data)?;
        Ok(self.push(value, Op::RowNormalize { x, eps }, &[x]))
    }

    /// `y_ij = x_ij / (Σ_j x_ij + eps)`.
    pub fn row_stochastic(&mut self, x: Var, eps: T) -> Result<Var> {
        let (n, d) = self.value(x).dims2("row_stochastic")?;
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(d.max(1)).take(n) {
            let denom = row.iter().copied().sum::<T>() + eps;
            row.iter_mut().for_each(|v| *v /= denom);
        }
        let value = Tensor::matrix(n, d, data)?;
        Ok(self.push(value, Op::RowStochastic { x, eps }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<T>() / T::from_usize(t.len()).unwrap();
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Mean absolute difference.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("l1_loss", self.value(a), self.value(b))?;
        let ta = self.value(a);
        let tb = self.value(b);
        let s = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| (x - y).abs())
            .sum::<T>()
            / T::from_usize(ta.len()).unwrap();
        Ok(self.push(Tensor::scalar(s), Op::L1 { a, b }, &[a, b]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return dim_err("concat_cols", "no inputs");
        }
        let n = self.value(parts[0]).dims2("concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2("concat_cols")?;
            if r != n {
                return dim_err("concat_cols", format!("row counts {n} vs {r}"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let value = Tensor::matrix(n, total, data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, delta: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot => *slot = Some(delta),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.rows(), av.cols());
                let n = g.cols();
                if self.nodes[a.0].requires_grad {
                    // dA = G·Bᵀ (B stored k×n) or G·B (B stored n×k)
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(m, n, k, gd, false, bv.data(), !trans_b, &mut da, false);
                    acc(*a, Tensor::matrix(m, k, da).unwrap());
                }
                if self.nodes[b.0].requires_grad {
                    if *trans_b {
                        // dB (n×k) = Gᵀ·A
                        let mut db = vec![T::zero(); n * k];
                        T::gemm(n, m, k, gd, true, av.data(), false, &mut db, false);
                        acc(*b, Tensor::matrix(n, k, db).unwrap());
                    } else {
                        let mut db = vec![T::zero(); k * n];
                        T::gemm(k, m, n, av.data(), true, gd, false, &mut db, false);
                        acc(*b, Tensor::matrix(k, n, db).unwrap());
                    }
                }
            }
            Op::SpMM { s, x } => {
                let d = g.cols();
                let mut dx = vec![T::zero(); s.cols() * d];
                s.transpose_matmul_dense_into(gd, d, &mut dx);
                acc(*x, Tensor::matrix(s.cols(), d, dx).unwrap());
            }
            Op::SupportMatMul { m, support, x } => {
                let d = g.cols();
                let (mr, mc) = (support.rows(), support.cols());
                let xv = self.value(*x).data();
                if self.nodes[m.0].requires_grad {
                    let mut dm = vec![T::zero(); mr * mc];
                    for r in 0..mr {
                        let grow = &gd[r * d..(r + 1) * d];
                        for &c in support.row_indices(r) {
                            dm[r * mc + c] = grow
                                .iter()
                                .zip(&xv[c * d..(c + 1) * d])
                                .map(|(&a, &b)| a * b)
                                .sum();
                        }
                    }
                    acc(*m, Tensor::matrix(mr, mc, dm).unwrap());
                }
                if self.nodes[x.0].requires_grad {
                    let mv = self.value(*m).data();
                    let mut dx = vec![T::zero(); mc * d];
                    for r in 0..mr {
                        let grow = &gd[r * d..(r + 1) * d];
                        for &c in support.row_indices(r) {
                            let w = mv[r * mc + c];
                            for (o, &ge) in dx[c * d..(c + 1) * d].iter_mut().zip(grow) {
                                *o += w * ge;
                            }
                        }
                    }
                    acc(*x, Tensor::matrix(mc, d, dx).unwrap());
                }
            }
            Op::SpMMValues { pattern, values, x } => {
                let d = g.cols();
                let xv = self.value(*x).data();
                let vals = self.value(*values);
                if self.nodes[values.0].requires_grad {
                    let mut dv = Vec::with_capacity(pattern.nnz());
                    for r in 0..pattern.rows() {
                        let grow = &gd[r * d..(r + 1) * d];
                        for &c in pattern.row_indices(r) {
                            dv.push(
                                grow.iter()
                                    .zip(&xv[c * d..(c + 1) * d])
                                    .map(|(&a, &b)| a * b)
                                    .sum(),
                            );
                        }
                    }
                    acc(*values, Tensor::new(vals.shape().to_vec(), dv).unwrap());
                }
                if self.nodes[x.0].requires_grad {
                    let s = pattern.with_values(vals.data().to_vec());
                    let mut dx = vec![T::zero(); s.cols() * d];
                    s.transpose_matmul_dense_into(gd, d, &mut dx);
                    acc(*x, Tensor::matrix(s.cols(), d, dx).unwrap());
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Scale(a, c) => acc(*a, g.map(|v| v * *c)),
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::AddBias { x, bias } => {
                acc(*x, g.clone());
                let d = g.cols();
                let mut db = vec![T::zero(); d];
                for row in gd.chunks(d.max(1)) {
                    for (o, &v) in db.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                let shape = self.value(*bias).shape().to_vec();
                acc(*bias, Tensor::new(shape, db).unwrap());
            }
            Op::Blend { a, b, w } => {
                let wv = self.value(*w).item();
                acc(*a, g.map(|v| v * wv));
                acc(*b, g.map(|v| v * (T::one() - wv)));
                if self.nodes[w.0].requires_grad {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let dw = gd
                        .iter()
                        .zip(av.iter().zip(bv))
                        .map(|(&gv, (&x, &y))| gv * (x - y))
                        .sum();
                    let shape = self.value(*w).shape().to_vec();
                    acc(*w, Tensor::new(shape, vec![dw]).unwrap());
                }
            }
            Op::Gather { x, index } => {
                let xv = self.value(*x);
                let (n, d) = (xv.rows(), xv.cols());
                let mut dx = vec![T::zero(); n * d];
                for (r, &i) in index.iter().enumerate() {
                    if i >= 0 {
                        let i = i as usize;
                        for (o, &gv) in dx[i * d..(i + 1) * d].iter_mut().zip(&gd[r * d..(r + 1) * d]) {
                            *o += gv;
                        }
                    }
                }
                acc(*x, Tensor::matrix(n, d, dx).unwrap());
            }
            Op::Relu(x) => {
                acc(
                    *x,
                    g.zip_map(self.value(*x), |gv, xv| if xv > T::zero() { gv } else { T::zero() }),
                );
            }
            Op::RowNorm(x) => {
                let xv = self.value(*x);
                let d = xv.cols();
                let norms = node.value.data();
                let mut dx = xv.data().to_vec();
                for (r, row) in dx.chunks_mut(d.max(1)).enumerate() {
                    let nrm = norms[r];
                    let scale = if nrm > T::zero() { gd[r] / nrm } else { T::zero() };
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                acc(*x, Tensor::new(xv.shape().to_vec(), dx).unwrap());
            }
            Op::RowNormalize { x, eps } => {
                let xv = self.value(*x);
                let y = node.value.data();
                let d = xv.cols();
                let mut dx = vec![T::zero(); xv.len()];
                for r in 0..xv.rows() {
                    let span = r * d..(r + 1) * d;
                    let xr = &xv.data()[span.clone()];
                    let yr = &y[span.clone()];
                    let gr = &gd[span.clone()];
                    let norm = xr.iter().map(|&v| v * v).sum::<T>().sqrt();
                    let out = &mut dx[span];
                    if norm > *eps {
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((o, &gv), &yv) in out.iter_mut().zip(gr).zip(yr) {
                            *o = (gv - yv * dot) / norm;
                        }
                    } else {
                        for (o, &gv) in out.iter_mut().zip(gr) {
                            *o = gv / *eps;
                        }
                    }
                }
                acc(*x, Tensor::new(xv.shape().to_vec(), dx).unwrap());
            }
            Op::RowStochastic { x, eps } => {
                let xv = self.value(*x);
                let y = node.value.data();
                let d = xv.cols();
                let mut dx = vec![T::zero(); xv.len()];
                for r in 0..xv.rows() {
                    let span = r * d..(r + 1) * d;
                    let denom = xv.data()[span.clone()].iter().copied().sum::<T>() + *eps;
                    let gr = &gd[span.clone()];
                    let dot: T = gr.iter().zip(&y[span.clone()]).map(|(&a, &b)| a * b).sum();
                    for (o, &gv) in dx[span].iter_mut().zip(gr) {
                        *o = (gv - dot) / denom;
                    }
                }
                acc(*x, Tensor::new(xv.shape().to_vec(), dx).unwrap());
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape().to_vec();
                acc(*x, Tensor::filled(&shape, gd[0]));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let n = T::from_usize(xv.len()).unwrap();
                acc(*x, Tensor::filled(xv.shape(), gd[0] / n));
            }
            Op::L1 { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let n = T::from_usize(av.len()).unwrap();
                let scale = gd[0] / n;
                let da = av.zip_map(bv, |x, y| {
                    if x > y {
                        scale
                    } else if x < y {
                        -scale
                    } else {
                        T::zero()
                    }
                });
                acc(*b, da.map(|v| -v));
                acc(*a, da);
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                acc(*x, g.clone().reshaped(&shape).unwrap());
            }
            Op::ConcatCols(parts) => {
                let n = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut dp = Vec::with_capacity(n * w);
                    for r in 0..n {
                        dp.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                    }
                    acc(p, Tensor::matrix(n, w, dp).unwrap());
                    offset += w;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(r: usize, c: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::matrix(r, c, v.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul_is_passthrough() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::identity(3));
        let x = tape.param(mat(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = tape.matmul(i, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn gather_sentinel_yields_zero_row() {
        let mut tape = Tape::new();
        let x = tape.param(mat(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = tape.gather_rows(x, Arc::new(vec![1, -1])).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0, 5.0, 6.0, 0.0, 0.0, 0.0]);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap().get(x);
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn gather_out_of_range_is_index_error() {
        let mut tape = Tape::new();
        let x = tape.param(mat(2, 1, &[1.0, 2.0]));
        let err = tape.gather_rows(x, Arc::new(vec![2])).unwrap_err();
        assert!(matches!(err, Error::Index { op: "gather_rows", .. }));
    }

    #[test]
    fn l1_of_identical_inputs_is_zero() {
        let mut tape = Tape::new();
        let x = tape.param(mat(2, 2, &[1.0, -2.0, 3.0, 0.5]));
        let l = tape.l1_loss(x, x).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::new();
        let x = tape.param(mat(1, 4, &[0.3, -1.0, 2.0, 7.0]));
        let s = tape.sum(x);
        assert_eq!(tape.backward(s).unwrap().get(x).data(), &[1.0; 4]);
    }

    #[test]
    fn l1_gradient_sign_analysis() {
        let a = 2.5;
        let mut tape = Tape::new();
        let x = tape.param(mat(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let ax = tape.scale(x, a);
        let l = tape.l1_loss(ax, b).unwrap();
        let g = tape.backward(l).unwrap().get(x);
        for &v in g.data() {
            assert!((v - a / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(mat(1, 2, &[1.0, 2.0]));
        let unused = tape.param(mat(2, 2, &[1.0; 4]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap().get(unused);
        assert_eq!(g, Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(mat(1, 2, &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_mismatch_names_the_op() {
        let mut tape = Tape::new();
        let a = tape.param(mat(2, 3, &[0.0; 6]));
        let b = tape.param(mat(2, 3, &[0.0; 6]));
        match tape.matmul(a, b) {
            Err(Error::Dimension { op, .. }) => assert_eq!(op, "matmul"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
