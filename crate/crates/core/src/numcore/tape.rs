//! Reverse-mode differentiation over a recorded sequence of matrix operations.
//!
//! A [`Tape`] records every operation of one forward pass together with its
//! value. [`Tape::backward`] walks the recording in reverse, applying each
//! operation's adjoint rule, and returns the gradient of a scalar loss with
//! respect to every parameter leaf (keyed by parameter name). A recording can
//! be differentiated once.

use std::borrow::Cow;
use std::collections::BTreeMap;

use super::activation::Activation;
use super::matrix::{matmul_nn, matmul_nt, matmul_tn, Matrix};
use crate::error::{Error, Result};

/// Handle to a recorded value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(String),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Activate(Var, Activation),
    Transpose(Var),
    SliceRows { src: Var, start: usize },
    ConcatRows(Vec<Var>),
    // value holds the probabilities
    Softmax(Var),
    // value holds the normalized input
    LayerNorm { src: Var, inv_std: Vec<f64> },
    MulColumn(Var, Var),
    Im2Col { src: Var, kernel: usize, stride: usize, pad: usize },
    Depthwise { src: Var, weight: Var, pad: usize },
    MeanCols(Var),
    CrossEntropy { logits: Var, label: usize, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op,
}

/// One forward recording. Parameters and inputs may be borrowed for `'a`.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    consumed: bool,
}

/// Parameter gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<String, Matrix>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Matrix) {
        self.map.insert(name.into(), grad);
    }

    /// Adds `other` into `self`, entry by entry.
    pub fn accumulate(&mut self, other: Gradients) {
        for (name, g) in other.map {
            match self.map.get_mut(&name) {
                Some(acc) if acc.shape() == g.shape() => acc.add_assign_unchecked(&g),
                _ => {
                    self.map.insert(name, g);
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.map.values_mut() {
            for v in g.as_mut_slice() {
                *v *= s;
            }
        }
    }

    /// First parameter whose gradient holds a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.map
            .iter()
            .find(|(_, g)| !g.is_finite())
            .map(|(k, _)| k.as_str())
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Cow<'a, Matrix>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A non-trainable input owned by the tape.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Cow::Owned(value), Op::Leaf)
    }

    /// A non-trainable borrowed input.
    pub fn input(&mut self, value: &'a Matrix) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf)
    }

    /// A trainable leaf; its gradient is reported under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: &'a Matrix) -> Var {
        self.push(Cow::Borrowed(value), Op::Param(name.into()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(Error::shape(
                "tape.matmul",
                format!("{:?} * {:?}", va.shape(), vb.shape()),
            ));
        }
        let out = matmul_nn(va, vb);
        Ok(self.push(Cow::Owned(out), Op::MatMul(a, b)))
    }

    /// `x + b` with `b` a column broadcast over every column of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.cols() != 1 || vb.rows() != vx.rows() {
            return Err(Error::shape(
                "tape.add_bias",
                format!("bias {:?} onto {:?}", vb.shape(), vx.shape()),
            ));
        }
        let out = vx.add_column(vb.as_slice())?;
        Ok(self.push(Cow::Owned(out), Op::AddBias(x, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(Cow::Owned(out), Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(Cow::Owned(out), Op::Scale(a, s))
    }

    pub fn activate(&mut self, a: Var, activation: Activation) -> Var {
        if activation == Activation::Identity {
            return a;
        }
        let out = self.value(a).map(|v| activation.apply(v));
        self.push(Cow::Owned(out), Op::Activate(a, activation))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(Cow::Owned(out), Op::Transpose(a))
    }

    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(src);
        if start + len > v.rows() || len == 0 {
            return Err(Error::shape(
                "tape.slice_rows",
                format!("rows {start}..{} of {:?}", start + len, v.shape()),
            ));
        }
        let out = v.rows_slice(start, len);
        Ok(self.push(Cow::Owned(out), Op::SliceRows { src, start }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = match parts.first() {
            Some(&p) => self.value(p).cols(),
            None => return Err(Error::invalid("concat_rows of nothing")),
        };
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::shape(
                    "tape.concat_rows",
                    format!("{} columns vs {cols}", v.cols()),
                ));
            }
            rows += v.rows();
            data.extend_from_slice(v.as_slice());
        }
        let out = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(Cow::Owned(out), Op::ConcatRows(parts.to_vec())))
    }

    /// Row-wise softmax. With `radius = Some(h)`, row `i` only attends to
    /// columns `j` with `|i - j| <= h`; the rest get probability exactly 0.
    pub fn softmax_rows(&mut self, src: Var, radius: Option<usize>) -> Var {
        let v = self.value(src);
        let (rows, cols) = v.shape();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let (lo, hi) = match radius {
                Some(h) => (i.saturating_sub(h), (i + h + 1).min(cols)),
                None => (0, cols),
            };
            let row = &v.row(i)[lo..hi];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (j, &z) in row.iter().enumerate() {
                let e = (z - max).exp();
                out.set(i, lo + j, e);
                total += e;
            }
            for j in lo..hi {
                out.set(i, j, out.get(i, j) / total);
            }
        }
        self.push(Cow::Owned(out), Op::Softmax(src))
    }

    /// Normalizes every column to zero mean and unit variance (biased
    /// variance, `eps` added before the square root).
    pub fn layer_norm_cols(&mut self, src: Var, eps: f64) -> Var {
        let v = self.value(src);
        let (d, t) = v.shape();
        let mut xhat = Matrix::zeros(d, t);
        let mut inv_std = Vec::with_capacity(t);
        for c in 0..t {
            let mean = (0..d).map(|r| v.get(r, c)).sum::<f64>() / d as f64;
            let var = (0..d).map(|r| (v.get(r, c) - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            for r in 0..d {
                xhat.set(r, c, (v.get(r, c) - mean) * is);
            }
            inv_std.push(is);
        }
        self.push(Cow::Owned(xhat), Op::LayerNorm { src, inv_std })
    }

    /// `x ⊙ g` with `g` a column broadcast over every column of `x`.
    pub fn mul_column(&mut self, x: Var, g: Var) -> Result<Var> {
        let (vx, vg) = (self.value(x), self.value(g));
        if vg.cols() != 1 || vg.rows() != vx.rows() {
            return Err(Error::shape(
                "tape.mul_column",
                format!("{:?} ⊙ {:?}", vx.shape(), vg.shape()),
            ));
        }
        let mut out = vx.clone();
        let cols = vx.cols();
        for r in 0..vx.rows() {
            let s = vg.as_slice()[r];
            for v in &mut out.as_mut_slice()[r * cols..(r + 1) * cols] {
                *v *= s;
            }
        }
        Ok(self.push(Cow::Owned(out), Op::MulColumn(x, g)))
    }

    /// Unfolds `C x T` into `(C * kernel) x T_out` patches so a temporal
    /// convolution becomes one matrix product. Row `c * kernel + j`, column
    /// `t` holds `x[c, t * stride + j - pad]` (zero outside the signal).
    pub fn im2col(&mut self, src: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let v = self.value(src);
        let (c, t) = v.shape();
        if kernel == 0 || stride == 0 || t + 2 * pad < kernel {
            return Err(Error::shape(
                "tape.im2col",
                format!("kernel {kernel}, stride {stride}, pad {pad} over {t} frames"),
            ));
        }
        let t_out = (t + 2 * pad - kernel) / stride + 1;
        let mut out = Matrix::zeros(c * kernel, t_out);
        for ch in 0..c {
            for j in 0..kernel {
                for o in 0..t_out {
                    let pos = (o * stride + j) as isize - pad as isize;
                    if pos >= 0 && (pos as usize) < t {
                        out.set(ch * kernel + j, o, v.get(ch, pos as usize));
                    }
                }
            }
        }
        Ok(self.push(Cow::Owned(out), Op::Im2Col { src, kernel, stride, pad }))
    }

    /// Per-channel temporal convolution, stride 1, `same` length output.
    pub fn depthwise_conv(&mut self, src: Var, weight: Var) -> Result<Var> {
        let (vx, vw) = (self.value(src), self.value(weight));
        let (c, t) = vx.shape();
        let k = vw.cols();
        if vw.rows() != c || k % 2 == 0 {
            return Err(Error::shape(
                "tape.depthwise_conv",
                format!("weight {:?} over input {:?} (odd kernel required)", vw.shape(), vx.shape()),
            ));
        }
        let pad = k / 2;
        let mut out = Matrix::zeros(c, t);
        for ch in 0..c {
            for o in 0..t {
                let mut acc = 0.0;
                for j in 0..k {
                    let pos = (o + j) as isize - pad as isize;
                    if pos >= 0 && (pos as usize) < t {
                        acc += vw.get(ch, j) * vx.get(ch, pos as usize);
                    }
                }
                out.set(ch, o, acc);
            }
        }
        Ok(self.push(Cow::Owned(out), Op::Depthwise { src, weight, pad }))
    }

    /// Mean over columns: `d x T -> d x 1`.
    pub fn mean_cols(&mut self, src: Var) -> Var {
        let v = self.value(src);
        let t = v.cols() as f64;
        let out: Vec<f64> = (0..v.rows()).map(|r| v.row(r).iter().sum::<f64>() / t).collect();
        self.push(Cow::Owned(Matrix::column(&out)), Op::MeanCols(src))
    }

    /// Softmax cross-entropy of an `n x 1` logit column against `label`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let v = self.value(logits);
        if v.cols() != 1 || label >= v.rows() {
            return Err(Error::shape(
                "tape.cross_entropy",
                format!("label {label} for logits {:?}", v.shape()),
            ));
        }
        let z = v.as_slice();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = z.iter().map(|&x| (x - max).exp()).sum();
        let lse = max + total.ln();
        let probs: Vec<f64> = z.iter().map(|&x| (x - lse).exp()).collect();
        let loss = lse - z[label];
        Ok(self.push(
            Cow::Owned(Matrix::column(&[loss])),
            Op::CrossEntropy { logits, label, probs },
        ))
    }

    /// Gradient of the scalar `loss` with respect to every parameter leaf
    /// reachable from it. Can be called once per recording.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::shape(
                "tape.backward",
                format!("loss must be 1x1, got {:?}", self.value(loss).shape()),
            ));
        }
        self.consumed = true;

        let mut adj: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut grads = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(name) => grads.accumulate(Gradients {
                    map: BTreeMap::from([(name.clone(), g)]),
                }),
                Op::MatMul(a, b) => {
                    let da = matmul_nt(&g, self.value(*b));
                    let db = matmul_tn(self.value(*a), &g);
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::AddBias(x, b) => {
                    let cols = g.cols();
                    let db: Vec<f64> = g
                        .as_slice()
                        .chunks(cols)
                        .map(|row| row.iter().sum())
                        .collect();
                    accumulate(&mut adj, *b, Matrix::column(&db));
                    accumulate(&mut adj, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Scale(a, s) => accumulate(&mut adj, *a, g.scale(*s)),
                Op::Activate(a, act) => {
                    let x = self.value(*a);
                    let mut d = g;
                    for (gv, &xv) in d.as_mut_slice().iter_mut().zip(x.as_slice()) {
                        *gv *= act.derivative(xv);
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::Transpose(a) => accumulate(&mut adj, *a, g.transpose()),
                Op::SliceRows { src, start } => {
                    let (rows, cols) = self.value(*src).shape();
                    let mut d = Matrix::zeros(rows, cols);
                    d.as_mut_slice()[start * cols..start * cols + g.len()]
                        .copy_from_slice(g.as_slice());
                    accumulate(&mut adj, *src, d);
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.value(*p).rows();
                        let piece = g.rows_slice(offset, rows);
                        offset += rows;
                        accumulate(&mut adj, *p, piece);
                    }
                    debug_assert_eq!(offset * cols, g.len());
                }
                Op::Softmax(src) => {
                    let p = &node.value;
                    let (rows, cols) = p.shape();
                    let mut d = Matrix::zeros(rows, cols);
                    for i in 0..rows {
                        let pr = p.row(i);
                        let gr = g.row(i);
                        let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            d.set(i, j, pr[j] * (gr[j] - dot));
                        }
                    }
                    accumulate(&mut adj, *src, d);
                }
                Op::LayerNorm { src, inv_std } => {
                    let xhat = &node.value;
                    let (dim, t) = xhat.shape();
                    let n = dim as f64;
                    let mut d = Matrix::zeros(dim, t);
                    for c in 0..t {
                        let mut sum_g = 0.0;
                        let mut sum_gx = 0.0;
                        for r in 0..dim {
                            sum_g += g.get(r, c);
                            sum_gx += g.get(r, c) * xhat.get(r, c);
                        }
                        for r in 0..dim {
                            let v = inv_std[c] / n
                                * (n * g.get(r, c) - sum_g - xhat.get(r, c) * sum_gx);
                            d.set(r, c, v);
                        }
                    }
                    accumulate(&mut adj, *src, d);
                }
                Op::MulColumn(x, col) => {
                    let vx = self.value(*x);
                    let vg = self.value(*col);
                    let cols = vx.cols();
                    let mut dx = g.clone();
                    let mut dg = vec![0.0; vg.rows()];
                    for r in 0..vx.rows() {
                        let s = vg.as_slice()[r];
                        for c in 0..cols {
                            dg[r] += g.get(r, c) * vx.get(r, c);
                            dx.set(r, c, g.get(r, c) * s);
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                    accumulate(&mut adj, *col, Matrix::column(&dg));
                }
                Op::Im2Col { src, kernel, stride, pad } => {
                    let (c, t) = self.value(*src).shape();
                    let t_out = g.cols();
                    let mut d = Matrix::zeros(c, t);
                    for ch in 0..c {
                        for j in 0..*kernel {
                            for o in 0..t_out {
                                let pos = (o * stride + j) as isize - *pad as isize;
                                if pos >= 0 && (pos as usize) < t {
                                    let cur = d.get(ch, pos as usize);
                                    d.set(ch, pos as usize, cur + g.get(ch * kernel + j, o));
                                }
                            }
                        }
                    }
                    accumulate(&mut adj, *src, d);
                }
                Op::Depthwise { src, weight, pad } => {
                    let vx = self.value(*src);
                    let vw = self.value(*weight);
                    let (c, t) = vx.shape();
                    let k = vw.cols();
                    let mut dx = Matrix::zeros(c, t);
                    let mut dw = Matrix::zeros(c, k);
                    for ch in 0..c {
                        for o in 0..t {
                            let go = g.get(ch, o);
                            for j in 0..k {
                                let pos = (o + j) as isize - *pad as isize;
                                if pos >= 0 && (pos as usize) < t {
                                    let p = pos as usize;
                                    dx.set(ch, p, dx.get(ch, p) + vw.get(ch, j) * go);
                                    dw.set(ch, j, dw.get(ch, j) + vx.get(ch, p) * go);
                                }
                            }
                        }
                    }
                    accumulate(&mut adj, *src, dx);
                    accumulate(&mut adj, *weight, dw);
                }
                Op::MeanCols(src) => {
                    let (rows, t) = self.value(*src).shape();
                    let mut d = Matrix::zeros(rows, t);
                    for r in 0..rows {
                        let v = g.get(r, 0) / t as f64;
                        for c in 0..t {
                            d.set(r, c, v);
                        }
                    }
                    accumulate(&mut adj, *src, d);
                }
                Op::CrossEntropy { logits, label, probs } => {
                    let s = g.get(0, 0);
                    let d: Vec<f64> = probs
                        .iter()
                        .enumerate()
                        .map(|(i, &p)| s * (p - if i == *label { 1.0 } else { 0.0 }))
                        .collect();
                    accumulate(&mut adj, *logits, Matrix::column(&d));
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut adj[v.0] {
        Some(acc) => acc.add_assign_unchecked(&g),
        slot @ None => *slot = Some(g),
    }
}
