//! Reverse-mode automatic differentiation over whole matrices.
//!
//! Every operation appends a node holding its value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates gradients for every node
//! reachable from the root.

use std::borrow::Cow;

use super::matrix::{dot, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Positive and candidate column sets for one row of a logit matrix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnchorSets {
    pub positives: Vec<usize>,
    pub candidates: Vec<usize>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Gather(Var, Vec<usize>),
    SliceRows(Var, usize),
    StackRows(Vec<Var>),
    ConcatCols(Var, Var),
    SoftmaxRows(Var),
    Tanh(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    NormalizeRows(Var, Vec<f64>),
    MultiPositive(Var, Vec<AnchorSets>),
    CrossEntropy(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op,
}

/// Norms below this are treated as this value when normalizing rows.
const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that borrows its value, typically a parameter.
    pub fn leaf(&mut self, m: &'a Matrix) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(m),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a * b^T`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_t(self.value(b));
        self.push(value, Op::MatMulT(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(value, Op::Add(a, b))
    }

    /// Adds the `1 x n` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let mut value = self.value(a).clone();
        let row = self.value(r);
        assert_eq!((1, value.cols()), row.shape(), "add_row shapes");
        for i in 0..value.rows() {
            for (x, y) in value.row_mut(i).iter_mut().zip(row.data()) {
                *x += y;
            }
        }
        self.push(value, Op::AddRow(a, r))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scaled(s);
        self.push(value, Op::Scale(a, s))
    }

    /// Multiplies `a` by the `1 x 1` node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let value = self.value(a).scaled(self.value(s).item());
        self.push(value, Op::ScaleBy(a, s))
    }

    pub fn gather_rows(&mut self, a: Var, rows: Vec<usize>) -> Var {
        let src = self.value(a);
        let mut value = Matrix::zeros(rows.len(), src.cols());
        for (i, &r) in rows.iter().enumerate() {
            value.row_mut(i).copy_from_slice(src.row(r));
        }
        self.push(value, Op::Gather(a, rows))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let src = self.value(a);
        let cols = src.cols();
        let value = Matrix::from_vec(len, cols, src.data()[start * cols..(start + len) * cols].to_vec());
        self.push(value, Op::SliceRows(a, start))
    }

    pub fn stack_rows(&mut self, parts: Vec<Var>) -> Var {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut data = Vec::new();
        for &p in &parts {
            assert_eq!(self.value(p).cols(), cols, "stack_rows widths");
            data.extend_from_slice(self.value(p).data());
        }
        let value = Matrix::from_vec(data.len() / cols.max(1), cols, data);
        self.push(value, Op::StackRows(parts))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.rows(), y.rows(), "concat_cols heights");
        let mut value = Matrix::zeros(x.rows(), x.cols() + y.cols());
        for i in 0..x.rows() {
            let row = value.row_mut(i);
            row[..x.cols()].copy_from_slice(x.row(i));
            row[x.cols()..].copy_from_slice(y.row(i));
        }
        self.push(value, Op::ConcatCols(a, b))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    /// Gradient passes through where `lo <= a <= hi`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    /// Scales every row to unit Euclidean length.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        let mut norms = Vec::with_capacity(value.rows());
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let n = dot(row, row).sqrt().max(NORM_FLOOR);
            row.iter_mut().for_each(|x| *x /= n);
            norms.push(n);
        }
        self.push(value, Op::NormalizeRows(a, norms))
    }

    /// Mean over rows of `-(1/|P|) * (logsumexp over P - logsumexp over U)`.
    ///
    /// Each row of `logits` is an anchor. Positives must be a non-empty subset
    /// of the candidates.
    pub fn multi_positive_loss(&mut self, logits: Var, anchors: Vec<AnchorSets>) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows(), anchors.len(), "one anchor set per row");
        let total: f64 = anchors
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let row = l.row(i);
                let lp = logsumexp(a.positives.iter().map(|&j| row[j]));
                let lu = logsumexp(a.candidates.iter().map(|&j| row[j]));
                -(lp - lu) / a.positives.len() as f64
            })
            .sum();
        let value = Matrix::scalar(total / anchors.len() as f64);
        self.push(value, Op::MultiPositive(logits, anchors))
    }

    /// Mean softmax cross-entropy of each row against its target column.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows(), targets.len(), "one target per row");
        let total: f64 = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| logsumexp(l.row(i).iter().copied()) - l.row(i)[t])
            .sum();
        let value = Matrix::scalar(total / targets.len() as f64);
        self.push(value, Op::CrossEntropy(logits, targets))
    }

    /// Gradients of the scalar `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        let y = &*node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                accumulate(grads, *a, g.matmul_t(self.value(*b)));
                accumulate(grads, *b, self.value(*a).t_matmul(g));
            }
            Op::MatMulT(a, b) => {
                accumulate(grads, *a, g.matmul(self.value(*b)));
                accumulate(grads, *b, g.t_matmul(self.value(*a)));
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, r) => {
                accumulate(grads, *a, g.clone());
                let mut col_sums = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (s, x) in col_sums.data_mut().iter_mut().zip(g.row(i)) {
                        *s += x;
                    }
                }
                accumulate(grads, *r, col_sums);
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.scaled(*s)),
            Op::ScaleBy(a, s) => {
                let sv = self.value(*s).item();
                accumulate(grads, *a, g.scaled(sv));
                let ds = dot(g.data(), self.value(*a).data());
                accumulate(grads, *s, Matrix::scalar(ds));
            }
            Op::Gather(a, rows) => {
                let src = self.value(*a);
                let mut d = Matrix::zeros(src.rows(), src.cols());
                for (i, &r) in rows.iter().enumerate() {
                    for (x, y) in d.row_mut(r).iter_mut().zip(g.row(i)) {
                        *x += y;
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::SliceRows(a, start) => {
                let src = self.value(*a);
                let mut d = Matrix::zeros(src.rows(), src.cols());
                let cols = src.cols();
                d.data_mut()[start * cols..start * cols + g.data().len()].copy_from_slice(g.data());
                accumulate(grads, *a, d);
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    let cols = g.cols();
                    let piece = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                    accumulate(grads, p, Matrix::from_vec(rows, cols, piece));
                    offset += rows;
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let mut da = Matrix::zeros(g.rows(), ca);
                let mut db = Matrix::zeros(g.rows(), cb);
                for i in 0..g.rows() {
                    da.row_mut(i).copy_from_slice(&g.row(i)[..ca]);
                    db.row_mut(i).copy_from_slice(&g.row(i)[ca..]);
                }
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::SoftmaxRows(a) => {
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let inner = dot(g.row(i), y.row(i));
                    for ((x, &yv), &gv) in d.row_mut(i).iter_mut().zip(y.row(i)).zip(g.row(i)) {
                        *x = yv * (gv - inner);
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::Tanh(a) => accumulate(grads, *a, zip_map(g, y, |gv, yv| gv * (1.0 - yv * yv))),
            Op::Exp(a) => accumulate(grads, *a, zip_map(g, y, |gv, yv| gv * yv)),
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a);
                let d = zip_map(g, x, |gv, xv| if xv >= *lo && xv <= *hi { gv } else { 0.0 });
                accumulate(grads, *a, d);
            }
            Op::NormalizeRows(a, norms) => {
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for (i, &n) in norms.iter().enumerate() {
                    let inner = dot(g.row(i), y.row(i));
                    for ((x, &yv), &gv) in d.row_mut(i).iter_mut().zip(y.row(i)).zip(g.row(i)) {
                        *x = (gv - yv * inner) / n;
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::MultiPositive(logits, anchors) => {
                let l = self.value(*logits);
                let scale = g.item() / anchors.len() as f64;
                let mut d = Matrix::zeros(l.rows(), l.cols());
                for (i, a) in anchors.iter().enumerate() {
                    let row = l.row(i);
                    let w = scale / a.positives.len() as f64;
                    let lp = logsumexp(a.positives.iter().map(|&j| row[j]));
                    let lu = logsumexp(a.candidates.iter().map(|&j| row[j]));
                    let out = d.row_mut(i);
                    for &j in &a.positives {
                        out[j] -= w * (row[j] - lp).exp();
                    }
                    for &j in &a.candidates {
                        out[j] += w * (row[j] - lu).exp();
                    }
                }
                accumulate(grads, *logits, d);
            }
            Op::CrossEntropy(logits, targets) => {
                let l = self.value(*logits);
                let scale = g.item() / targets.len() as f64;
                let mut d = Matrix::zeros(l.rows(), l.cols());
                for (i, &t) in targets.iter().enumerate() {
                    let lse = logsumexp(l.row(i).iter().copied());
                    for (x, &v) in d.row_mut(i).iter_mut().zip(l.row(i)) {
                        *x = scale * (v - lse).exp();
                    }
                    d.row_mut(i)[t] -= scale;
                }
                accumulate(grads, *logits, d);
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// `None` when `v` does not influence the root.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, d: Matrix) {
    match &mut grads[v.0] {
        Some(g) => g.add_assign(&d),
        slot => *slot = Some(d),
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

pub fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_grad(m: &Matrix, f: impl Fn(&Matrix) -> f64) -> Matrix {
        let eps = 1e-6;
        let mut out = Matrix::zeros(m.rows(), m.cols());
        for k in 0..m.data().len() {
            let mut plus = m.clone();
            plus.data_mut()[k] += eps;
            let mut minus = m.clone();
            minus.data_mut()[k] -= eps;
            out.data_mut()[k] = (f(&plus) - f(&minus)) / (2.0 * eps);
        }
        out
    }

    fn assert_close(a: &Matrix, b: &Matrix) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6 * (1.0 + x.abs().max(y.abs())), "{x} vs {y}");
        }
    }

    fn sample(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = seed;
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
            })
            .collect();
        Matrix::from_vec(rows, cols, data)
    }

    /// Builds a scalar from `x` through most operations.
    fn composite(x: &Matrix, w: &Matrix) -> (f64, Matrix) {
        let mut t = Tape::new();
        let xv = t.leaf(x);
        let wv = t.leaf(w);
        let h = t.matmul(xv, wv);
        let h = t.tanh(h);
        let s = t.softmax_rows(h);
        let g = t.gather_rows(s, vec![2, 0, 2]);
        let n = t.normalize_rows(g);
        let r = t.slice_rows(xv, 1, 1);
        let r = t.matmul(r, wv);
        let n = t.add_row(n, r);
        let c = t.concat_cols(n, n);
        let sim = t.matmul_t(c, c);
        let e = t.exp(sim);
        let e = t.scale(e, 0.3);
        let tr = t.transpose(e);
        let sum = t.add(e, tr);
        let temp = t.constant(Matrix::scalar(0.7));
        let temp = t.clamp(temp, 0.0, 1.0);
        let logits = t.scale_by(sum, temp);
        let anchors = (0..3)
            .map(|i| AnchorSets {
                positives: vec![i],
                candidates: vec![0, 1, 2],
            })
            .collect();
        let a = t.multi_positive_loss(logits, anchors);
        let st = t.stack_rows(vec![logits, logits]);
        let b = t.cross_entropy(st, vec![0, 1, 2, 0, 1, 2]);
        let root = t.add(a, b);
        let grads = t.backward(root);
        (t.value(root).item(), grads.get(xv).unwrap().clone())
    }

    #[test]
    fn matches_finite_differences() {
        let x = sample(3, 4, 1);
        let w = sample(4, 4, 2);
        let (_, analytic) = composite(&x, &w);
        let numeric = numeric_grad(&x, |x| composite(x, &w).0);
        assert_close(&analytic, &numeric);
    }

    #[test]
    fn multi_positive_reference_values() {
        // two anchors, identity cosine, unit temperature
        let mut t = Tape::new();
        let l = t.constant(Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let sets = vec![
            AnchorSets {
                positives: vec![0],
                candidates: vec![0, 1],
            },
            AnchorSets {
                positives: vec![1],
                candidates: vec![0, 1],
            },
        ];
        let loss = t.multi_positive_loss(l, sets);
        let per_anchor = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((t.value(loss).item() - per_anchor).abs() < 1e-12);
        assert!((per_anchor - 0.31326).abs() < 1e-5);

        // |P| = 2 of |U| = 3 with equal logits
        let mut t = Tape::new();
        let l = t.constant(Matrix::zeros(1, 3));
        let sets = vec![AnchorSets {
            positives: vec![0, 1],
            candidates: vec![0, 1, 2],
        }];
        let loss = t.multi_positive_loss(l, sets);
        assert!((t.value(loss).item() - 0.20273).abs() < 1e-5);
    }

    #[test]
    fn uniform_classifier_costs_ln3() {
        let mut t = Tape::new();
        let l = t.constant(Matrix::zeros(4, 3));
        let loss = t.cross_entropy(l, vec![0, 1, 2, 1]);
        assert!((t.value(loss).item() - 3f64.ln()).abs() < 1e-12);
    }
}
