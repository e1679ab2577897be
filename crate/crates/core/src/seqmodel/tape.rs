//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding
//! its output value. [`Tape::backward`] walks the nodes in reverse and
//! accumulates vector-Jacobian products into a [`Gradients`] table.
//!
//! The tape is append-only and single-owner: one forward pass, one tape.
//! Parallel workers each build their own tape and the caller reduces the
//! resulting gradients in a fixed order.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{gemm_into, Real, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

/// Which score entries an attention softmax may attend to.
#[derive(Clone, Debug, PartialEq)]
pub enum AttnMask {
    None,
    /// `allowed[j]` is false for padded key positions.
    Keys(Vec<bool>),
    /// Query `i` may see keys `0..=i` that are also allowed.
    Causal(Vec<bool>),
}

impl AttnMask {
    #[inline]
    pub fn allows(&self, i: usize, j: usize) -> bool {
        match self {
            AttnMask::None => true,
            AttnMask::Keys(k) => k[j],
            AttnMask::Causal(k) => j <= i && k[j],
        }
    }
}

enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    MatMulNT(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    AddRow(usize, usize),
    Hadamard(usize, usize),
    MulConst(usize, Tensor<T>),
    Scale(usize, T),
    ScaleBy(usize, usize),
    Relu(usize),
    Sqrt(usize),
    Recip(usize),
    MinConst(usize, Vec<bool>),
    Sum(usize),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    ConcatCols(Vec<usize>),
    RepeatRows(usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Tensor<T>,
        rstd: Vec<T>,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<Option<usize>>,
        probs: Tensor<T>,
        count: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T: Real> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    fn idx(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        v.idx
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn ng(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[self.idx(v)].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[self.idx(v)].needs_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let out = self.nodes[ia].value.matmul(&self.nodes[ib].value);
        let ng = self.ng(ia) || self.ng(ib);
        self.push(out, Op::MatMul(ia, ib), ng)
    }

    /// `a * bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let out = self.nodes[ia].value.matmul_nt(&self.nodes[ib].value);
        let ng = self.ng(ia) || self.ng(ib);
        self.push(out, Op::MatMulNT(ia, ib), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let mut out = self.nodes[ia].value.clone();
        out.add_assign(&self.nodes[ib].value);
        let ng = self.ng(ia) || self.ng(ib);
        self.push(out, Op::Add(ia, ib), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let bv = &self.nodes[ib].value;
        assert_eq!(self.nodes[ia].value.shape(), bv.shape());
        let out = Tensor::from_vec(
            bv.rows(),
            bv.cols(),
            self.nodes[ia]
                .value
                .data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| x - y)
                .collect(),
        );
        let ng = self.ng(ia) || self.ng(ib);
        self.push(out, Op::Sub(ia, ib), ng)
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(row));
        let bias = &self.nodes[ib].value;
        let mut out = self.nodes[ia].value.clone();
        assert_eq!(bias.shape(), (1, out.cols()), "bias shape mismatch");
        for r in 0..out.rows() {
            for (x, &b) in out.row_mut(r).iter_mut().zip(bias.data()) {
                *x = *x + b;
            }
        }
        let ng = self.ng(ia) || self.ng(ib);
        self.push(out, Op::AddRow(ia, ib), ng)
    }

    /// Elementwise product.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let bv = &self.nodes[ib].value;
        assert_eq!(self.nodes[ia].value.shape(), bv.shape());
        let out = Tensor::from_vec(
            bv.rows(),
            bv.cols(),
            self.nodes[ia]
                .value
                .data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| x * y)
                .collect(),
        );
        let ng = self.ng(ia) || self.ng(ib);
        self.push(out, Op::Hadamard(ia, ib), ng)
    }

    /// Elementwise product with a constant tensor (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Tensor<T>) -> Var {
        let ia = self.idx(a);
        let av = &self.nodes[ia].value;
        assert_eq!(av.shape(), c.shape());
        let out = Tensor::from_vec(
            av.rows(),
            av.cols(),
            av.data().iter().zip(c.data()).map(|(&x, &y)| x * y).collect(),
        );
        let ng = self.ng(ia);
        self.push(out, Op::MulConst(ia, c), ng)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let ia = self.idx(a);
        let out = self.nodes[ia].value.map(|x| x * s);
        let ng = self.ng(ia);
        self.push(out, Op::Scale(ia, s), ng)
    }

    /// Multiplies every entry of `a` by the `1 × 1` value `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let (ia, is) = (self.idx(a), self.idx(s));
        let sv = self.nodes[is].value.item();
        let out = self.nodes[ia].value.map(|x| x * sv);
        let ng = self.ng(ia) || self.ng(is);
        self.push(out, Op::ScaleBy(ia, is), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let out = self.nodes[ia].value.map(|x| x.max(T::zero()));
        let ng = self.ng(ia);
        self.push(out, Op::Relu(ia), ng)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let out = self.nodes[ia].value.map(|x| x.sqrt());
        let ng = self.ng(ia);
        self.push(out, Op::Sqrt(ia), ng)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let out = self.nodes[ia].value.map(|x| x.recip());
        let ng = self.ng(ia);
        self.push(out, Op::Recip(ia), ng)
    }

    /// Elementwise `min(a, cap)`; clipped entries pass no gradient.
    pub fn min_const(&mut self, a: Var, cap: T) -> Var {
        let ia = self.idx(a);
        let av = &self.nodes[ia].value;
        let clipped: Vec<bool> = av.data().iter().map(|&x| x > cap).collect();
        let out = av.map(|x| x.min(cap));
        let ng = self.ng(ia);
        self.push(out, Op::MinConst(ia, clipped), ng)
    }

    /// Sum of all entries, as a `1 × 1` value.
    pub fn sum(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let out = Tensor::scalar(self.nodes[ia].value.sum());
        let ng = self.ng(ia);
        self.push(out, Op::Sum(ia), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ia = self.idx(a);
        let av = &self.nodes[ia].value;
        assert!(start + len <= av.cols(), "column slice out of range");
        let mut out = Tensor::zeros(av.rows(), len);
        for r in 0..av.rows() {
            out.row_mut(r)
                .copy_from_slice(&av.row(r)[start..start + len]);
        }
        let ng = self.ng(ia);
        self.push(out, Op::SliceCols(ia, start), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ia = self.idx(a);
        let av = &self.nodes[ia].value;
        assert!(start + len <= av.rows(), "row slice out of range");
        let c = av.cols();
        let out = Tensor::from_vec(len, c, av.data()[start * c..(start + len) * c].to_vec());
        let ng = self.ng(ia);
        self.push(out, Op::SliceRows(ia, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let idxs: Vec<usize> = parts.iter().map(|&v| self.idx(v)).collect();
        let rows = self.nodes[idxs[0]].value.rows();
        let cols: usize = idxs.iter().map(|&i| self.nodes[i].value.cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &i in &idxs {
                let v = &self.nodes[i].value;
                assert_eq!(v.rows(), rows, "concat_cols row mismatch");
                out.row_mut(r)[off..off + v.cols()].copy_from_slice(v.row(r));
                off += v.cols();
            }
        }
        let ng = idxs.iter().any(|&i| self.ng(i));
        self.push(out, Op::ConcatCols(idxs), ng)
    }

    /// Stacks a `1 × c` value `n` times.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Var {
        let ia = self.idx(a);
        let av = &self.nodes[ia].value;
        assert_eq!(av.rows(), 1, "repeat_rows expects a row vector");
        let mut out = Tensor::zeros(n, av.cols());
        for r in 0..n {
            out.row_mut(r).copy_from_slice(av.data());
        }
        let ng = self.ng(ia);
        self.push(out, Op::RepeatRows(ia), ng)
    }

    /// Row-wise softmax; entries the mask forbids get probability zero.
    pub fn masked_softmax(&mut self, a: Var, mask: &AttnMask) -> Var {
        let ia = self.idx(a);
        let av = &self.nodes[ia].value;
        let mut out = Tensor::zeros(av.rows(), av.cols());
        for i in 0..av.rows() {
            let row = av.row(i);
            let mut max = T::neg_infinity();
            for (j, &x) in row.iter().enumerate() {
                if mask.allows(i, j) && x > max {
                    max = x;
                }
            }
            if max == T::neg_infinity() {
                continue;
            }
            let orow = out.row_mut(i);
            let mut total = T::zero();
            for (j, &x) in row.iter().enumerate() {
                if mask.allows(i, j) {
                    let e = (x - max).exp();
                    orow[j] = e;
                    total = total + e;
                }
            }
            let inv = total.recip();
            for y in orow.iter_mut() {
                *y = *y * inv;
            }
        }
        let ng = self.ng(ia);
        self.push(out, Op::Softmax(ia), ng)
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (ix, ig, ib) = (self.idx(x), self.idx(gamma), self.idx(beta));
        let xv = &self.nodes[ix].value;
        let (rows, cols) = xv.shape();
        let g = self.nodes[ig].value.data();
        let b = self.nodes[ib].value.data();
        assert_eq!(g.len(), cols);
        assert_eq!(b.len(), cols);
        let n = T::from_f64(cols as f64);
        let eps = T::from_f64(eps);
        let mut xhat = Tensor::zeros(rows, cols);
        let mut out = Tensor::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = (var + eps).sqrt().recip();
            rstd.push(rs);
            let hrow = xhat.row_mut(r);
            for (h, &v) in hrow.iter_mut().zip(row) {
                *h = (v - mean) * rs;
            }
            let hrow = xhat.row(r).to_vec();
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = hrow[c] * g[c] + b[c];
            }
        }
        let ng = self.ng(ix) || self.ng(ig) || self.ng(ib);
        self.push(
            out,
            Op::LayerNorm {
                x: ix,
                gamma: ig,
                beta: ib,
                xhat,
                rstd,
            },
            ng,
        )
    }

    /// Mean cross-entropy over rows that carry a target; `None` rows
    /// (padding) are excluded from both the sum and the count.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let il = self.idx(logits);
        let lv = &self.nodes[il].value;
        assert_eq!(lv.rows(), targets.len(), "one target per logit row");
        let mut probs = Tensor::zeros(lv.rows(), lv.cols());
        let mut total = T::zero();
        let mut count = 0usize;
        for (r, t) in targets.iter().enumerate() {
            let row = lv.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (p, &x) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (x - max).exp();
                z = z + *p;
            }
            let inv = z.recip();
            for p in probs.row_mut(r) {
                *p = *p * inv;
            }
            if let Some(t) = *t {
                total = total + (max + z.ln() - row[t]);
                count += 1;
            }
        }
        let loss = if count == 0 {
            T::zero()
        } else {
            total / T::from_f64(count as f64)
        };
        let ng = self.ng(il);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: il,
                targets: targets.to_vec(),
                probs,
                count,
            },
            ng,
        )
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if loss.tape != self.id || loss.idx >= self.nodes.len() {
            return Err(Error::GraphNotRecorded);
        }
        if self.nodes[loss.idx].value.shape() != (1, 1) {
            return Err(Error::Config("backward needs a 1 x 1 loss".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.idx] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |i: usize| &self.nodes[i].value;
        let acc = |i: usize, d: Tensor<T>, grads: &mut [Option<Tensor<T>>]| {
            if !self.nodes[i].needs_grad {
                return;
            }
            match &mut grads[i] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        };
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    let mut da = Tensor::zeros(val(*a).rows(), val(*a).cols());
                    gemm_into(T::one(), g, false, val(*b), true, T::zero(), &mut da);
                    acc(*a, da, grads);
                }
                if self.ng(*b) {
                    let mut db = Tensor::zeros(val(*b).rows(), val(*b).cols());
                    gemm_into(T::one(), val(*a), true, g, false, T::zero(), &mut db);
                    acc(*b, db, grads);
                }
            }
            Op::MatMulNT(a, b) => {
                // out = a bᵀ: da = g b, db = gᵀ a
                if self.ng(*a) {
                    let mut da = Tensor::zeros(val(*a).rows(), val(*a).cols());
                    gemm_into(T::one(), g, false, val(*b), false, T::zero(), &mut da);
                    acc(*a, da, grads);
                }
                if self.ng(*b) {
                    let mut db = Tensor::zeros(val(*b).rows(), val(*b).cols());
                    gemm_into(T::one(), g, true, val(*a), false, T::zero(), &mut db);
                    acc(*b, db, grads);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.clone(), grads);
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.map(|x| -x), grads);
            }
            Op::AddRow(a, b) => {
                acc(*a, g.clone(), grads);
                if self.ng(*b) {
                    let mut db = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, &x) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *d = *d + x;
                        }
                    }
                    acc(*b, db, grads);
                }
            }
            Op::Hadamard(a, b) => {
                if self.ng(*a) {
                    acc(*a, zip_map(g, val(*b), |x, y| x * y), grads);
                }
                if self.ng(*b) {
                    acc(*b, zip_map(g, val(*a), |x, y| x * y), grads);
                }
            }
            Op::MulConst(a, c) => acc(*a, zip_map(g, c, |x, y| x * y), grads),
            Op::Scale(a, s) => acc(*a, g.map(|x| x * *s), grads),
            Op::ScaleBy(a, s) => {
                let sv = val(*s).item();
                if self.ng(*a) {
                    acc(*a, g.map(|x| x * sv), grads);
                }
                if self.ng(*s) {
                    let d = g.data().iter().zip(val(*a).data()).map(|(&x, &y)| x * y).sum();
                    acc(*s, Tensor::scalar(d), grads);
                }
            }
            Op::Relu(a) => acc(
                *a,
                zip_map(g, val(*a), |x, y| if y > T::zero() { x } else { T::zero() }),
                grads,
            ),
            Op::Sqrt(a) => {
                let half = T::from_f64(0.5);
                acc(*a, zip_map(g, out, |x, y| x * half / y), grads)
            }
            Op::Recip(a) => acc(*a, zip_map(g, out, |x, y| -x * y * y), grads),
            Op::MinConst(a, clipped) => {
                let d = Tensor::from_vec(
                    g.rows(),
                    g.cols(),
                    g.data()
                        .iter()
                        .zip(clipped)
                        .map(|(&x, &c)| if c { T::zero() } else { x })
                        .collect(),
                );
                acc(*a, d, grads)
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Tensor::filled(r, c, g.item()), grads)
            }
            Op::SliceCols(a, start) => {
                let (r, c) = val(*a).shape();
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    d.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                acc(*a, d, grads)
            }
            Op::SliceRows(a, start) => {
                let (r, c) = val(*a).shape();
                let mut d = Tensor::zeros(r, c);
                d.data_mut()[*start * c..*start * c + g.len()].copy_from_slice(g.data());
                acc(*a, d, grads)
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = val(p).shape();
                    if self.ng(p) {
                        let mut d = Tensor::zeros(r, c);
                        for i in 0..r {
                            d.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                        }
                        acc(p, d, grads);
                    }
                    off += c;
                }
            }
            Op::RepeatRows(a) => {
                let mut d = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (x, &y) in d.data_mut().iter_mut().zip(g.row(r)) {
                        *x = *x + y;
                    }
                }
                acc(*a, d, grads)
            }
            Op::Softmax(a) => {
                let mut d = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gy = g.row(r);
                    let dot: T = y.iter().zip(gy).map(|(&p, &q)| p * q).sum();
                    for ((dx, &p), &q) in d.row_mut(r).iter_mut().zip(y).zip(gy) {
                        *dx = p * (q - dot);
                    }
                }
                acc(*a, d, grads)
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gam = val(*gamma).data();
                let (rows, cols) = xhat.shape();
                if self.ng(*x) {
                    let n = T::from_f64(cols as f64);
                    let mut dx = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        let gy = g.row(r);
                        let xh = xhat.row(r);
                        let dxhat: Vec<T> = gy.iter().zip(gam).map(|(&a, &b)| a * b).collect();
                        let s1: T = dxhat.iter().copied().sum();
                        let s2: T = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum();
                        let k = rstd[r] / n;
                        for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                            *d = k * (n * dxhat[c] - s1 - xh[c] * s2);
                        }
                    }
                    acc(*x, dx, grads);
                }
                if self.ng(*gamma) || self.ng(*beta) {
                    let mut dg = Tensor::zeros(1, cols);
                    let mut db = Tensor::zeros(1, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            let gv = g.get(r, c);
                            dg.data_mut()[c] = dg.data()[c] + gv * xhat.get(r, c);
                            db.data_mut()[c] = db.data()[c] + gv;
                        }
                    }
                    acc(*gamma, dg, grads);
                    acc(*beta, db, grads);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let scale = g.item() / T::from_f64(*count as f64);
                let mut d = Tensor::zeros(probs.rows(), probs.cols());
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    for (dx, &p) in d.row_mut(r).iter_mut().zip(probs.row(r)) {
                        *dx = p * scale;
                    }
                    let row = d.row_mut(r);
                    row[t] = row[t] - scale;
                }
                acc(*logits, d, grads)
            }
        }
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    assert_eq!(a.shape(), b.shape());
    Tensor::from_vec(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

/// Gradients produced by one reverse pass.
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `v`; `None` for values that do
    /// not depend on any parameter (constants) or do not reach the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        assert_eq!(v.tape, self.tape, "variable belongs to a different tape");
        self.grads.get(v.idx).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        assert_eq!(v.tape, self.tape, "variable belongs to a different tape");
        self.grads.get_mut(v.idx).and_then(|g| g.take())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(rows, cols, data)
    }

    /// Central differences of `f` around `x`.
    fn numeric_grad(x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) -> Tensor<f64> {
        let h = 1e-6;
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            out.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        out
    }

    fn assert_close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            let scale = x.abs().max(y.abs()).max(1e-3);
            assert!((x - y).abs() / scale < tol, "{x} vs {y}");
        }
    }

    /// Builds a small graph touching every op and returns the loss.
    fn exercise(tape: &mut Tape<f64>, x: Var) -> Var {
        let w = tape.constant(t(3, 4, &[0.3, -0.2, 0.5, 0.1, 0.7, 0.4, -0.6, 0.2, -0.1, 0.9, 0.3, -0.5]));
        let bias = tape.constant(t(1, 4, &[0.1, 0.0, -0.1, 0.2]));
        let h = tape.matmul(x, w);
        let h = tape.add_row(h, bias);
        let gamma = tape.constant(t(1, 4, &[1.0, 0.5, 1.5, 1.0]));
        let beta = tape.constant(t(1, 4, &[0.0, 0.1, 0.0, -0.1]));
        let h = tape.layer_norm(h, gamma, beta, 1e-5);
        let r = tape.relu(h);
        let h = tape.add(h, r);
        let a = tape.slice_cols(h, 0, 2);
        let b = tape.slice_cols(h, 2, 2);
        let scores = tape.matmul_nt(a, b);
        let scores = tape.scale(scores, 0.7);
        let p = tape.masked_softmax(scores, &AttnMask::Causal(vec![true, true]));
        let mixed = tape.matmul(p, b);
        let hp = tape.hadamard(mixed, a);
        let diff = tape.sub(hp, a);
        let sq = tape.hadamard(diff, diff);
        let s = tape.sum(sq);
        let s1 = tape.scale(s, 1.0);
        let offset = tape.constant(Tensor::scalar(0.5));
        let s1 = tape.add(s1, offset);
        let root = tape.sqrt(s1);
        let inv = tape.recip(root);
        let row0 = tape.slice_cols(h, 1, 3);
        let last = tape.slice_rows(row0, 1, 1);
        let last = tape_repeat(tape, last);
        let row0 = tape.concat_cols(&[row0, last]);
        let row0 = tape.slice_cols(row0, 0, 3);
        let rep = tape.repeat_rows(inv, 2);
        let cat = tape.concat_cols(&[row0, rep]);
        let capped = tape.min_const(cat, 0.8);
        let scaled = tape.scale_by(capped, inv);
        let dropped = tape.mul_const(scaled, t(2, 4, &[1.0, 0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 2.0]));
        tape.cross_entropy(dropped, &[Some(2), None])
    }

    fn tape_repeat(tape: &mut Tape<f64>, v: Var) -> Var {
        tape.repeat_rows(v, 2)
    }

    #[test]
    fn every_op_matches_central_differences() {
        let x0 = t(2, 3, &[0.5, -1.2, 0.3, 0.8, 0.1, -0.4]);
        let mut tape = Tape::new();
        let x = tape.param(x0.clone());
        let loss = exercise(&mut tape, x);
        let grads = tape.backward(loss).unwrap();
        let analytic = grads.get(x).unwrap().clone();
        let numeric = numeric_grad(&x0, |xv| {
            let mut tape = Tape::new();
            let x = tape.param(xv.clone());
            let l = exercise(&mut tape, x);
            tape.value(l).item()
        });
        assert_close(&analytic, &numeric, 1e-5);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(t(1, 2, &[1.0, 2.0]));
        let p = tape.param(t(1, 2, &[3.0, 4.0]));
        let prod = tape.hadamard(c, p);
        let s = tape.sum(prod);
        let grads = tape.backward(s).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn foreign_variable_is_not_recorded() {
        let mut a = Tape::<f64>::new();
        let b = Tape::<f64>::new();
        let x = a.param(Tensor::scalar(1.0));
        assert!(matches!(b.backward(x), Err(Error::GraphNotRecorded)));
    }

    #[test]
    fn masked_entries_get_zero_probability() {
        let mut tape = Tape::<f64>::new();
        let s = tape.constant(t(2, 3, &[1.0, 2.0, 3.0, 0.5, 0.5, 9.0]));
        let p = tape.masked_softmax(s, &AttnMask::Keys(vec![true, true, false]));
        let v = tape.value(p);
        assert_eq!(v.get(0, 2), 0.0);
        assert_eq!(v.get(1, 2), 0.0);
        assert!((v.get(1, 0) - 0.5).abs() < 1e-15);
        for r in 0..2 {
            assert!((v.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_vocab() {
        let mut tape = Tape::<f64>::new();
        let l = tape.constant(Tensor::zeros(3, 7));
        let loss = tape.cross_entropy(l, &[Some(0), Some(6), None]);
        assert!((tape.value(loss).item() - 7f64.ln()).abs() < 1e-12);
    }
}
