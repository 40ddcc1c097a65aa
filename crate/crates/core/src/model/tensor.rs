//! Tape-based reverse-mode autodiff over 2-D `f64` tensors.
//!
//! A [`Graph`] records every operation as a node; [`Graph::backward`] walks
//! the tape in reverse and accumulates gradients into nodes that depend on a
//! parameter. Nodes built only from constants carry no gradient.

use std::sync::Arc;

use crate::correspond::fuse_rows;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Sentinel gather index producing a constant zero.
pub const GATHER_ZERO: usize = usize::MAX;

const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Square(Var),
    Gather(Var, Arc<Vec<usize>>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    MeanRows(Var),
    Mean(Var),
    NormalizeRows(Var),
    RowDot(Var, Var),
    MaskedL1(Var, Arc<Vec<f64>>, Arc<Vec<bool>>),
    Bce(Var, Arc<Vec<f64>>),
    Fuse(Var, Var, Arc<Vec<Option<usize>>>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

#[allow(clippy::too_many_arguments)]
fn dgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    // SAFETY: strides describe in-bounds layouts of the given slices; all
    // callers pass dense row-major buffers of the stated shapes or their
    // transposed views.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A trainable leaf; its gradient is reported under `id`.
    pub fn param(&mut self, id: usize, t: Tensor) -> Var {
        self.push(t, Op::Param(id), true)
    }

    /// Same value, cut from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.cols, tb.rows, "matmul inner dimensions");
        let (m, k, n) = (ta.rows, ta.cols, tb.cols);
        let mut out = Tensor::zeros(m, n);
        dgemm(
            m,
            k,
            n,
            &ta.data,
            (k as isize, 1),
            &tb.data,
            (n as isize, 1),
            0.0,
            &mut out.data,
        );
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    fn zip_same(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!((ta.rows, ta.cols), (tb.rows, tb.cols), "elementwise shapes");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor {
            rows: ta.rows,
            cols: ta.cols,
            data,
        };
        let ng = self.needs(a) || self.needs(b);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a + b` with the `1 × cols` row `b` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!((tb.rows, tb.cols), (1, ta.cols), "row broadcast shape");
        let mut out = ta.clone();
        for r in 0..out.rows {
            for (o, x) in out.data[r * out.cols..(r + 1) * out.cols].iter_mut().zip(&tb.data) {
                *o += x;
            }
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::AddRow(a, b), ng)
    }

    /// `a * b` with the `rows × 1` column `b` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!((tb.rows, tb.cols), (ta.rows, 1), "column broadcast shape");
        let mut out = ta.clone();
        for r in 0..out.rows {
            let s = tb.data[r];
            for o in &mut out.data[r * out.cols..(r + 1) * out.cols] {
                *o *= s;
            }
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MulCol(a, b), ng)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let out = Tensor {
            rows: ta.rows,
            cols: ta.cols,
            data: ta.data.iter().map(|x| f(*x)).collect(),
        };
        let ng = self.needs(a);
        self.push(out, op, ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    /// `out.data[i] = a.data[idx[i]]` (flat indices), zero for [`GATHER_ZERO`].
    pub fn gather(&mut self, a: Var, idx: Arc<Vec<usize>>, rows: usize, cols: usize) -> Var {
        assert_eq!(idx.len(), rows * cols, "gather index length");
        let ta = self.value(a);
        let data = idx
            .iter()
            .map(|&i| if i == GATHER_ZERO { 0.0 } else { ta.data[i] })
            .collect();
        let ng = self.needs(a);
        self.push(Tensor { rows, cols, data }, Op::Gather(a, idx), ng)
    }

    /// Rows `rows` of `a`, in order (repeats allowed).
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let cols = self.value(a).cols;
        let idx: Vec<usize> = rows
            .iter()
            .flat_map(|&r| (0..cols).map(move |c| r * cols + c))
            .collect();
        self.gather(a, Arc::new(idx), rows.len(), cols)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows, rows, "concat rows");
            for r in 0..rows {
                out.data[r * cols + off..r * cols + off + t.cols].copy_from_slice(t.row(r));
            }
            off += t.cols;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ta = self.value(a);
        assert!(start + len <= ta.cols, "slice bounds");
        let mut out = Tensor::zeros(ta.rows, len);
        for r in 0..ta.rows {
            out.data[r * len..(r + 1) * len].copy_from_slice(&ta.row(r)[start..start + len]);
        }
        let ng = self.needs(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut out = Tensor::zeros(1, ta.cols);
        for r in 0..ta.rows {
            for (o, x) in out.data.iter_mut().zip(ta.row(r)) {
                *o += x;
            }
        }
        let inv = 1.0 / ta.rows as f64;
        out.data.iter_mut().for_each(|v| *v *= inv);
        let ng = self.needs(a);
        self.push(out, Op::MeanRows(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let m = ta.data.iter().sum::<f64>() / ta.len() as f64;
        let ng = self.needs(a);
        self.push(Tensor::scalar(m), Op::Mean(a), ng)
    }

    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            let row = &mut out.data[r * out.cols..(r + 1) * out.cols];
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.iter_mut().for_each(|x| *x /= n);
        }
        let ng = self.needs(a);
        self.push(out, Op::NormalizeRows(a), ng)
    }

    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!((ta.rows, ta.cols), (tb.rows, tb.cols), "row dot shapes");
        let data = (0..ta.rows)
            .map(|r| ta.row(r).iter().zip(tb.row(r)).map(|(x, y)| x * y).sum())
            .collect();
        let ng = self.needs(a) || self.needs(b);
        self.push(
            Tensor {
                rows: ta.rows,
                cols: 1,
                data,
            },
            Op::RowDot(a, b),
            ng,
        )
    }

    /// Mean absolute error over entries where `mask` holds; zero when the
    /// mask is empty.
    pub fn masked_l1(&mut self, pred: Var, target: Arc<Vec<f64>>, mask: Arc<Vec<bool>>) -> Var {
        let tp = self.value(pred);
        assert_eq!(tp.len(), target.len(), "l1 target length");
        assert_eq!(tp.len(), mask.len(), "l1 mask length");
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..tp.len() {
            if mask[i] {
                sum += (tp.data[i] - target[i]).abs();
                count += 1;
            }
        }
        let v = if count == 0 { 0.0 } else { sum / count as f64 };
        let ng = self.needs(pred);
        self.push(Tensor::scalar(v), Op::MaskedL1(pred, target, mask), ng)
    }

    /// Mean binary cross-entropy with probabilities clamped to `[1e-7, 1 − 1e-7]`.
    pub fn bce(&mut self, pred: Var, labels: Arc<Vec<f64>>) -> Var {
        let tp = self.value(pred);
        assert_eq!(tp.len(), labels.len(), "bce label length");
        let v = tp
            .data
            .iter()
            .zip(labels.iter())
            .map(|(&a, &y)| {
                let a = a.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(y * a.ln() + (1.0 - y) * (1.0 - a).ln())
            })
            .sum::<f64>()
            / tp.len() as f64;
        let ng = self.needs(pred);
        self.push(Tensor::scalar(v), Op::Bce(pred, labels), ng)
    }

    /// Rows of `a` averaged with their matched row of `b`; see [`fuse_rows`].
    pub fn fuse(&mut self, a: Var, b: Var, map: Arc<Vec<Option<usize>>>) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.cols, tb.cols, "fuse channels");
        assert_eq!(map.len(), ta.rows, "fuse map length");
        let data = fuse_rows(&ta.data, &tb.data, ta.cols, &map);
        let out = Tensor {
            rows: ta.rows,
            cols: ta.cols,
            data,
        };
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Fuse(a, b, map), ng)
    }

    /// Reverse pass from scalar `root`. Returns gradients keyed by parameter id.
    pub fn backward(&self, root: Var) -> Vec<(usize, Tensor)> {
        let n = root.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        let rv = self.value(root);
        grads[root.0] = Some(Tensor {
            rows: rv.rows,
            cols: rv.cols,
            data: vec![1.0; rv.len()],
        });
        let mut out = Vec::new();
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let acc = |v: Var, t: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !self.needs(v) {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&t),
                    slot => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.push((*id, g)),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, nn) = (ta.rows, ta.cols, tb.cols);
                    if self.needs(*a) {
                        // dA = G · Bᵀ
                        let mut da = Tensor::zeros(m, k);
                        dgemm(
                            m,
                            nn,
                            k,
                            &g.data,
                            (nn as isize, 1),
                            &tb.data,
                            (1, nn as isize),
                            0.0,
                            &mut da.data,
                        );
                        acc(*a, da, &mut grads);
                    }
                    if self.needs(*b) {
                        // dB = Aᵀ · G
                        let mut db = Tensor::zeros(k, nn);
                        dgemm(
                            k,
                            m,
                            nn,
                            &ta.data,
                            (1, k as isize),
                            &g.data,
                            (nn as isize, 1),
                            0.0,
                            &mut db.data,
                        );
                        acc(*b, db, &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    let neg = Tensor {
                        data: g.data.iter().map(|x| -x).collect(),
                        ..g
                    };
                    acc(*b, neg, &mut grads);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        let d = g.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
                        acc(*a, Tensor { data: d, ..g.clone() }, &mut grads);
                    }
                    if self.needs(*b) {
                        let d = g.data.iter().zip(&ta.data).map(|(x, y)| x * y).collect();
                        acc(*b, Tensor { data: d, ..g.clone() }, &mut grads);
                    }
                }
                Op::AddRow(a, b) => {
                    if self.needs(*b) {
                        let mut db = Tensor::zeros(1, g.cols);
                        for r in 0..g.rows {
                            for (o, x) in db.data.iter_mut().zip(g.row(r)) {
                                *o += x;
                            }
                        }
                        acc(*b, db, &mut grads);
                    }
                    acc(*a, g, &mut grads);
                }
                Op::MulCol(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if self.needs(*b) {
                        let d = (0..g.rows)
                            .map(|r| g.row(r).iter().zip(ta.row(r)).map(|(x, y)| x * y).sum())
                            .collect();
                        acc(
                            *b,
                            Tensor {
                                rows: g.rows,
                                cols: 1,
                                data: d,
                            },
                            &mut grads,
                        );
                    }
                    if self.needs(*a) {
                        let mut da = g;
                        for r in 0..da.rows {
                            let s = tb.data[r];
                            for o in &mut da.data[r * da.cols..(r + 1) * da.cols] {
                                *o *= s;
                            }
                        }
                        acc(*a, da, &mut grads);
                    }
                }
                Op::Scale(a, s) => {
                    let d = g.data.iter().map(|x| x * s).collect();
                    acc(*a, Tensor { data: d, ..g }, &mut grads);
                }
                Op::Tanh(a) => {
                    let d = g
                        .data
                        .iter()
                        .zip(&node.value.data)
                        .map(|(x, y)| x * (1.0 - y * y))
                        .collect();
                    acc(*a, Tensor { data: d, ..g }, &mut grads);
                }
                Op::Sigmoid(a) => {
                    let d = g
                        .data
                        .iter()
                        .zip(&node.value.data)
                        .map(|(x, y)| x * y * (1.0 - y))
                        .collect();
                    acc(*a, Tensor { data: d, ..g }, &mut grads);
                }
                Op::Square(a) => {
                    let ta = self.value(*a);
                    let d = g.data.iter().zip(&ta.data).map(|(x, y)| 2.0 * x * y).collect();
                    acc(*a, Tensor { data: d, ..g }, &mut grads);
                }
                Op::Gather(a, idx) => {
                    let ta = self.value(*a);
                    let mut da = Tensor::zeros(ta.rows, ta.cols);
                    for (k, &src) in idx.iter().enumerate() {
                        if src != GATHER_ZERO {
                            da.data[src] += g.data[k];
                        }
                    }
                    acc(*a, da, &mut grads);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        if self.needs(p) {
                            let mut dp = Tensor::zeros(g.rows, w);
                            for r in 0..g.rows {
                                dp.data[r * w..(r + 1) * w].copy_from_slice(&g.row(r)[off..off + w]);
                            }
                            acc(p, dp, &mut grads);
                        }
                        off += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let ta = self.value(*a);
                    let mut da = Tensor::zeros(ta.rows, ta.cols);
                    for r in 0..g.rows {
                        da.data[r * ta.cols + start..r * ta.cols + start + g.cols].copy_from_slice(g.row(r));
                    }
                    acc(*a, da, &mut grads);
                }
                Op::MeanRows(a) => {
                    let ta = self.value(*a);
                    let inv = 1.0 / ta.rows as f64;
                    let mut da = Tensor::zeros(ta.rows, ta.cols);
                    for r in 0..ta.rows {
                        for (o, x) in da.data[r * ta.cols..(r + 1) * ta.cols].iter_mut().zip(&g.data) {
                            *o = x * inv;
                        }
                    }
                    acc(*a, da, &mut grads);
                }
                Op::Mean(a) => {
                    let ta = self.value(*a);
                    let v = g.data[0] / ta.len() as f64;
                    acc(
                        *a,
                        Tensor {
                            rows: ta.rows,
                            cols: ta.cols,
                            data: vec![v; ta.len()],
                        },
                        &mut grads,
                    );
                }
                Op::NormalizeRows(a) => {
                    let ta = self.value(*a);
                    let y = &node.value;
                    let mut da = Tensor::zeros(ta.rows, ta.cols);
                    for r in 0..ta.rows {
                        let n = ta.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
                        let yg: f64 = y.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                        for c in 0..ta.cols {
                            da.data[r * ta.cols + c] = (g.data[r * ta.cols + c] - y.data[r * ta.cols + c] * yg) / n;
                        }
                    }
                    acc(*a, da, &mut grads);
                }
                Op::RowDot(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let scale_rows = |t: &Tensor| {
                        let mut d = t.clone();
                        for r in 0..d.rows {
                            let s = g.data[r];
                            for o in &mut d.data[r * d.cols..(r + 1) * d.cols] {
                                *o *= s;
                            }
                        }
                        d
                    };
                    if self.needs(*a) {
                        acc(*a, scale_rows(tb), &mut grads);
                    }
                    if self.needs(*b) {
                        acc(*b, scale_rows(ta), &mut grads);
                    }
                }
                Op::MaskedL1(pred, target, mask) => {
                    let tp = self.value(*pred);
                    let count = mask.iter().filter(|m| **m).count();
                    let mut d = Tensor::zeros(tp.rows, tp.cols);
                    if count > 0 {
                        let s = g.data[0] / count as f64;
                        for i in 0..tp.len() {
                            if mask[i] {
                                let diff = tp.data[i] - target[i];
                                d.data[i] = if diff > 0.0 {
                                    s
                                } else if diff < 0.0 {
                                    -s
                                } else {
                                    0.0
                                };
                            }
                        }
                    }
                    acc(*pred, d, &mut grads);
                }
                Op::Bce(pred, labels) => {
                    let tp = self.value(*pred);
                    let s = g.data[0] / tp.len() as f64;
                    let d = tp
                        .data
                        .iter()
                        .zip(labels.iter())
                        .map(|(&a, &y)| {
                            if !(BCE_EPS..=1.0 - BCE_EPS).contains(&a) {
                                0.0
                            } else {
                                s * (-(y / a) + (1.0 - y) / (1.0 - a))
                            }
                        })
                        .collect();
                    acc(
                        *pred,
                        Tensor {
                            rows: tp.rows,
                            cols: tp.cols,
                            data: d,
                        },
                        &mut grads,
                    );
                }
                Op::Fuse(a, b, map) => {
                    let tb = self.value(*b);
                    let c = g.cols;
                    if self.needs(*b) {
                        let mut db = Tensor::zeros(tb.rows, tb.cols);
                        for (i, m) in map.iter().enumerate() {
                            if let Some(j) = *m {
                                for k in 0..c {
                                    db.data[j * c + k] += 0.5 * g.data[i * c + k];
                                }
                            }
                        }
                        acc(*b, db, &mut grads);
                    }
                    if self.needs(*a) {
                        let mut da = g;
                        for (i, m) in map.iter().enumerate() {
                            if m.is_some() {
                                for v in &mut da.data[i * c..(i + 1) * c] {
                                    *v *= 0.5;
                                }
                            }
                        }
                        acc(*a, da, &mut grads);
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_hand_computation() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let b = g.constant(Tensor::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap());
        let c = g.matmul(a, b);
        assert_eq!(g.value(c).data, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(2.0));
        let p = g.param(0, Tensor::scalar(3.0));
        let m = g.mul(a, p);
        let grads = g.backward(m);
        assert_eq!(grads, vec![(0, Tensor::scalar(2.0))]);
    }

    #[test]
    fn bce_at_half_is_ln2() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(0.5));
        let l = g.bce(a, Arc::new(vec![1.0]));
        assert!((g.scalar(l) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn masked_l1_ignores_invalid_entries() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::from_vec(1, 3, vec![0.5, 0.2, 9.0]).unwrap());
        let l = g.masked_l1(p, Arc::new(vec![0.4, 0.4, 0.0]), Arc::new(vec![true, true, false]));
        assert!((g.scalar(l) - 0.15).abs() < 1e-15);
    }
}
