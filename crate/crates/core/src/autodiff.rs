//! Minimal tape-based reverse-mode automatic differentiation over dense
//! row-major matrices.
//!
//! A [`Graph`] records every operation; [`Graph::backward`] returns a fresh
//! gradient table so the same graph can be differentiated for several
//! scalar outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                expected: (rows, cols),
                got: (data.len(), 1),
            });
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, v: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn row(data: Vec<f64>) -> Self {
        Tensor {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape(), other.shape());
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Tensor::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Min(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    Transpose(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Gather(Var, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of one scalar with respect to every node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `v`; `None` if the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn softmax_row(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Input or parameter node. Constants are leaves whose gradient is
    /// simply never read, which is also how stop-gradient is expressed.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Copies a node's value into a new leaf, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.leaf(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x / y);
        self.push(v, Op::Div(a, b))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), f64::min);
        self.push(v, Op::Min(a, b))
    }

    /// `a` (r×c) plus row vector `b` (1×c) broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        debug_assert_eq!((1, av.cols), bv.shape());
        let mut v = av.clone();
        for r in 0..v.rows {
            for c in 0..v.cols {
                v.data[r * v.cols + c] += bv.data[c];
            }
        }
        self.push(v, Op::AddRow(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x + k);
        self.push(v, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Clamp to `[lo, hi]`; gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut v = Tensor::zeros(av.rows, av.cols);
        for r in 0..av.rows {
            let s = r * av.cols..(r + 1) * av.cols;
            softmax_row(&av.data[s.clone()], &mut v.data[s]);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut v = av.clone();
        for r in 0..av.rows {
            let row = &mut v.data[r * av.cols..(r + 1) * av.cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.push(v, Op::LogSoftmaxRows(a))
    }

    /// Sum of all elements, 1×1.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).data.iter().sum());
        self.push(v, Op::Sum(a))
    }

    /// Mean of all elements, 1×1.
    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let v = Tensor::scalar(av.data.iter().sum::<f64>() / av.data.len() as f64);
        self.push(v, Op::Mean(a))
    }

    /// Row sums, r×1.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = (0..av.rows)
            .map(|r| av.data[r * av.cols..(r + 1) * av.cols].iter().sum())
            .collect();
        let v = Tensor {
            rows: av.rows,
            cols: 1,
            data,
        };
        self.push(v, Op::SumCols(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// Same data, new row-major shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let av = self.value(a);
        if av.data.len() != rows * cols {
            return Err(Error::Shape {
                expected: (rows, cols),
                got: av.shape(),
            });
        }
        let v = Tensor {
            rows,
            cols,
            data: av.data.clone(),
        };
        Ok(self.push(v, Op::Reshape(a)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let pv = self.value(p);
                debug_assert_eq!(pv.rows, rows);
                v.data[r * cols + off..r * cols + off + pv.cols].copy_from_slice(&pv.data[r * pv.cols..(r + 1) * pv.cols]);
                off += pv.cols;
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        for &p in parts {
            debug_assert_eq!(self.value(p).cols, cols);
            data.extend_from_slice(&self.value(p).data);
        }
        let v = Tensor {
            rows: data.len() / cols.max(1),
            cols,
            data,
        };
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let mut v = Tensor::zeros(av.rows, len);
        for r in 0..av.rows {
            v.data[r * len..(r + 1) * len].copy_from_slice(&av.data[r * av.cols + start..r * av.cols + start + len]);
        }
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let v = Tensor {
            rows: len,
            cols: av.cols,
            data: av.data[start * av.cols..(start + len) * av.cols].to_vec(),
        };
        self.push(v, Op::SliceRows(a, start))
    }

    /// Picks column `idx[r]` from every row r, giving an r×1 column.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        let data = idx.iter().enumerate().map(|(r, &c)| av.data[r * av.cols + c]).collect();
        let v = Tensor {
            rows: idx.len(),
            cols: 1,
            data,
        };
        self.push(v, Op::Gather(a, idx.to_vec()))
    }

    /// Reverse pass from a 1×1 output.
    pub fn backward(&self, out: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; out.0 + 1];
        grads[out.0] = Some(Tensor::full(1, 1, 1.0));
        let acc = |grads: &mut Vec<Option<Tensor>>, v: Var, g: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        };
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    acc(&mut grads, *a, g.matmul(&bv.transpose()));
                    acc(&mut grads, *b, av.transpose().matmul(&g));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, g.zip(self.value(*b), |x, y| x * y));
                    acc(&mut grads, *b, g.zip(self.value(*a), |x, y| x * y));
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    acc(&mut grads, *a, g.zip(bv, |x, y| x / y));
                    let t = g.zip(y, |x, q| x * q);
                    acc(&mut grads, *b, t.zip(bv, |x, y| -x / y));
                }
                Op::Min(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let mask_a = av.zip(bv, |x, y| if x <= y { 1.0 } else { 0.0 });
                    acc(&mut grads, *a, g.zip(&mask_a, |x, m| x * m));
                    acc(&mut grads, *b, g.zip(&mask_a, |x, m| x * (1.0 - m)));
                }
                Op::AddRow(a, b) => {
                    let mut gb = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            gb.data[c] += g.data[r * g.cols + c];
                        }
                    }
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g.map(|x| x * k)),
                Op::AddScalar(a) => acc(&mut grads, *a, g.clone()),
                Op::Exp(a) => acc(&mut grads, *a, g.zip(y, |x, e| x * e)),
                Op::Log(a) => acc(&mut grads, *a, g.zip(self.value(*a), |x, v| x / v)),
                Op::Tanh(a) => acc(&mut grads, *a, g.zip(y, |x, t| x * (1.0 - t * t))),
                Op::Square(a) => acc(&mut grads, *a, g.zip(self.value(*a), |x, v| 2.0 * x * v)),
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    acc(&mut grads, *a, g.zip(self.value(*a), |x, v| if v > lo && v < hi { x } else { 0.0 }))
                }
                Op::SoftmaxRows(a) => {
                    let mut ga = Tensor::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let s = r * g.cols..(r + 1) * g.cols;
                        let dot: f64 = g.data[s.clone()].iter().zip(&y.data[s.clone()]).map(|(a, b)| a * b).sum();
                        for j in s {
                            ga.data[j] = y.data[j] * (g.data[j] - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let mut ga = Tensor::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let s = r * g.cols..(r + 1) * g.cols;
                        let total: f64 = g.data[s.clone()].iter().sum();
                        for j in s {
                            ga.data[j] = g.data[j] - y.data[j].exp() * total;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    acc(&mut grads, *a, Tensor::full(r, c, g.item()));
                }
                Op::Mean(a) => {
                    let (r, c) = self.shape(*a);
                    acc(&mut grads, *a, Tensor::full(r, c, g.item() / (r * c) as f64));
                }
                Op::SumCols(a) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Tensor::zeros(r, c);
                    for i in 0..r {
                        ga.data[i * c..(i + 1) * c].iter_mut().for_each(|x| *x = g.data[i]);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Reshape(a) => {
                    let (r, c) = self.shape(*a);
                    acc(&mut grads, *a, Tensor { rows: r, cols: c, data: g.data.clone() });
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        let mut gp = Tensor::zeros(r, c);
                        for i in 0..r {
                            gp.data[i * c..(i + 1) * c].copy_from_slice(&g.data[i * g.cols + off..i * g.cols + off + c]);
                        }
                        off += c;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        let gp = Tensor {
                            rows: r,
                            cols: c,
                            data: g.data[off..off + r * c].to_vec(),
                        };
                        off += r * c;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Tensor::zeros(r, c);
                    for i in 0..r {
                        ga.data[i * c + start..i * c + start + g.cols].copy_from_slice(&g.data[i * g.cols..(i + 1) * g.cols]);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SliceRows(a, start) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Tensor::zeros(r, c);
                    ga.data[start * c..start * c + g.data.len()].copy_from_slice(&g.data);
                    acc(&mut grads, *a, ga);
                }
                Op::Gather(a, idx) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Tensor::zeros(r, c);
                    for (i, &j) in idx.iter().enumerate() {
                        ga.data[i * c + j] += g.data[i];
                    }
                    acc(&mut grads, *a, ga);
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}
