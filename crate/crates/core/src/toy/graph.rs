//! Minimal reverse-mode differentiation over [`Mat`] values.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over node
//! indices is a valid topological order for the backward pass.

use super::{Mat, Real, ToyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulT(Var, Var),
    Add(Var, Var),
    Scale(Var, T),
    RmsNorm {
        x: Var,
        eps: T,
    },
    Silu(Var),
    /// Interleaved-pair rotation; `cos`/`sin` are `rows x cols/2`.
    Rotate {
        x: Var,
        cos: Mat<T>,
        sin: Mat<T>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    /// Row softmax restricted to allowed entries; masked entries are 0.
    MaskedSoftmax {
        x: Var,
        allowed: Vec<bool>,
    },
    /// Adds a constant; gradient passes straight through.
    Offset(Var),
    /// Mean cross-entropy over rows that carry a target.
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Mat<T>,
    },
}

struct Node<T> {
    value: Mat<T>,
    op: Op<T>,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

pub struct Grads<T> {
    grads: Vec<Option<Mat<T>>>,
}

impl<T: Real> Grads<T> {
    /// Gradient of the loss with respect to `v`; zeros if `v` did not
    /// influence the loss.
    pub fn get(&self, v: Var, shape: (usize, usize)) -> Mat<T> {
        self.grads[v.0].clone().unwrap_or_else(|| Mat::zeros(shape.0, shape.1))
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Mat<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, ToyError> {
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(ToyError::TokenOutOfRange { token: bad, vocab: t.rows() });
        }
        let value = Mat::from_fn(ids.len(), t.cols(), |r, c| t.get(ids[r], c));
        Ok(self.push(value, Op::Gather { table, ids: ids.to_vec() }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_t(self.value(b));
        self.push(value, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        self.push(value, Op::Add(a, b))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).map(|v| v * s);
        self.push(value, Op::Scale(x, s))
    }

    pub fn rms_norm(&mut self, x: Var, eps: T) -> Var {
        let xv = self.value(x);
        let n = T::from(xv.cols()).unwrap();
        let mut value = xv.clone();
        for r in 0..xv.rows() {
            let ms = xv.row(r).iter().fold(T::zero(), |acc, &v| acc + v * v) / n;
            let inv = (ms + eps).sqrt().recip();
            value.row_mut(r).iter_mut().for_each(|v| *v = *v * inv);
        }
        self.push(value, Op::RmsNorm { x, eps })
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * sigmoid(v));
        self.push(value, Op::Silu(x))
    }

    /// Rotates column pairs `(2j, 2j+1)` of row `r` by `angles[r][j]`.
    pub fn rotate(&mut self, x: Var, angles: &Mat<f64>) -> Var {
        let xv = self.value(x);
        assert_eq!(angles.shape(), (xv.rows(), xv.cols() / 2));
        let cos = Mat::from_fn(angles.rows(), angles.cols(), |r, c| T::from(angles.get(r, c).cos()).unwrap());
        let sin = Mat::from_fn(angles.rows(), angles.cols(), |r, c| T::from(angles.get(r, c).sin()).unwrap());
        let mut value = xv.clone();
        for r in 0..xv.rows() {
            for j in 0..xv.cols() / 2 {
                let (a, b) = (xv.get(r, 2 * j), xv.get(r, 2 * j + 1));
                let (c, s) = (cos.get(r, j), sin.get(r, j));
                value.set(r, 2 * j, a * c - b * s);
                value.set(r, 2 * j + 1, a * s + b * c);
            }
        }
        self.push(value, Op::Rotate { x, cos, sin })
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).slice_rows(start, len);
        self.push(value, Op::SliceRows { x, start })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).slice_cols(start, len);
        self.push(value, Op::SliceCols { x, start })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Mat::concat_rows(&mats);
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Mat::concat_cols(&mats);
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn masked_softmax(&mut self, x: Var, allowed: Vec<bool>) -> Result<Var, ToyError> {
        let xv = self.value(x);
        assert_eq!(allowed.len(), xv.rows() * xv.cols());
        let cols = xv.cols();
        let mut value = Mat::zeros(xv.rows(), cols);
        for r in 0..xv.rows() {
            let ok = &allowed[r * cols..(r + 1) * cols];
            let row = xv.row(r);
            let max = row
                .iter()
                .zip(ok)
                .filter(|(_, &a)| a)
                .map(|(&v, _)| v)
                .fold(None, |m: Option<T>, v| Some(m.map_or(v, |m| m.max(v))))
                .ok_or(ToyError::EmptyAttentionRow { row: r })?;
            let mut total = T::zero();
            let out = value.row_mut(r);
            for c in 0..cols {
                if ok[c] {
                    out[c] = (row[c] - max).exp();
                    total = total + out[c];
                }
            }
            out.iter_mut().for_each(|v| *v = *v / total);
        }
        Ok(self.push(value, Op::MaskedSoftmax { x, allowed }))
    }

    pub fn offset(&mut self, x: Var, delta: &Mat<T>) -> Var {
        let value = self.value(x).add(delta);
        self.push(value, Op::Offset(x))
    }

    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<Option<usize>>) -> Result<Var, ToyError> {
        let lv = self.value(logits);
        assert_eq!(targets.len(), lv.rows());
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(ToyError::NoTargets);
        }
        let mut probs = Mat::zeros(lv.rows(), lv.cols());
        let mut total = T::zero();
        for (r, target) in targets.iter().enumerate() {
            let Some(t) = *target else { continue };
            if t >= lv.cols() {
                return Err(ToyError::TokenOutOfRange { token: t, vocab: lv.cols() });
            }
            let row = lv.row(r);
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let sum = row.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp());
            let lse = max + sum.ln();
            total = total + (lse - row[t]);
            for (p, &v) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let value = Mat::from_vec(1, 1, vec![total / T::from(count).unwrap()]);
        Ok(self.push(value, Op::CrossEntropy { logits, targets, probs }))
    }

    /// Gradients of the scalar node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Mat<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_vec(1, 1, vec![T::one()]));

        fn accumulate<T: Real>(grads: &mut [Option<Mat<T>>], v: Var, g: Mat<T>) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].clone() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut gt = Mat::zeros(t.rows(), t.cols());
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..t.cols() {
                            gt.set(id, c, gt.get(id, c) + g.get(r, c));
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.matmul(self.value(*b));
                    let gb = g.t_matmul(self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Scale(x, s) => {
                    let s = *s;
                    accumulate(&mut grads, *x, g.map(|v| v * s));
                }
                Op::RmsNorm { x, eps } => {
                    let xv = self.value(*x);
                    let n = T::from(xv.cols()).unwrap();
                    let mut gx = Mat::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        let row = xv.row(r);
                        let ms = row.iter().fold(T::zero(), |acc, &v| acc + v * v) / n;
                        let inv = (ms + *eps).sqrt().recip();
                        let gdotx = row.iter().zip(g.row(r)).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                        let k = gdotx * inv * inv * inv / n;
                        for (c, out) in gx.row_mut(r).iter_mut().enumerate() {
                            *out = g.get(r, c) * inv - row[c] * k;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Silu(x) => {
                    let gx = self.value(*x).zip_map(&g, |v, gv| {
                        let s = sigmoid(v);
                        gv * s * (T::one() + v * (T::one() - s))
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Rotate { x, cos, sin } => {
                    let mut gx = g.clone();
                    for r in 0..g.rows() {
                        for j in 0..g.cols() / 2 {
                            let (ga, gb) = (g.get(r, 2 * j), g.get(r, 2 * j + 1));
                            let (c, s) = (cos.get(r, j), sin.get(r, j));
                            gx.set(r, 2 * j, ga * c + gb * s);
                            gx.set(r, 2 * j + 1, gb * c - ga * s);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SliceRows { x, start } => {
                    let (rows, cols) = self.value(*x).shape();
                    let mut gx = Mat::zeros(rows, cols);
                    for r in 0..g.rows() {
                        gx.row_mut(start + r).copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SliceCols { x, start } => {
                    let (rows, cols) = self.value(*x).shape();
                    let mut gx = Mat::zeros(rows, cols);
                    for r in 0..rows {
                        gx.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        accumulate(&mut grads, p, g.slice_rows(start, rows));
                        start += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let cols = self.value(p).cols();
                        accumulate(&mut grads, p, g.slice_cols(start, cols));
                        start += cols;
                    }
                }
                Op::MaskedSoftmax { x, allowed } => {
                    let y = &node.value;
                    let cols = y.cols();
                    let mut gx = Mat::zeros(y.rows(), cols);
                    for r in 0..y.rows() {
                        let dot = y.row(r).iter().zip(g.row(r)).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                        for c in 0..cols {
                            if allowed[r * cols + c] {
                                gx.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Offset(x) => accumulate(&mut grads, *x, g),
                Op::CrossEntropy { logits, targets, probs } => {
                    let count = T::from(targets.iter().flatten().count()).unwrap();
                    let scale = g.get(0, 0) / count;
                    let mut gl = Mat::zeros(probs.rows(), probs.cols());
                    for (r, target) in targets.iter().enumerate() {
                        let Some(t) = *target else { continue };
                        for (c, out) in gl.row_mut(r).iter_mut().enumerate() {
                            let onehot = if c == t { T::one() } else { T::zero() };
                            *out = (probs.get(r, c) - onehot) * scale;
                        }
                    }
                    accumulate(&mut grads, *logits, gl);
                }
            }
        }
        Grads { grads }
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
