//! Minimal dense reverse-mode autodiff.
//!
//! Values are row-major 2-D matrices. A [`Tape`] records operations in
//! evaluation order; [`Tape::backward`] walks it in reverse and returns one
//! gradient per node that requires one. All reductions run in ascending row
//! order so results are reproducible bit-for-bit.

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix shape does not match data");
        Matrix { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * other`
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self^T * other`
    fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows);
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a_row = self.row(r);
            let b_row = other.row(r);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * other^T`
    fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols);
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                let b_row = other.row(j);
                let mut acc = 0.0;
                for (a, b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                out.data[i * other.rows + j] = acc;
            }
        }
        out
    }

    fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Arithmetic mean accumulated in slice order.
pub fn mean_in_order(values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for v in values {
        acc += v;
    }
    acc / values.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    /// Per-row softmax cross-entropy; `probs` keeps the softmax for backward.
    SoftmaxXent {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Matrix,
    },
    RowSumSquares(NodeId),
    Mean(NodeId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Matrix,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, op: Op, value: Matrix, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn grad_of(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn param(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.grad_of(a) || self.grad_of(b);
        self.push(Op::MatMul(a, b), value, rg)
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let av = self.value(a);
        let rv = self.value(row);
        assert_eq!(rv.rows, 1);
        assert_eq!(av.cols, rv.cols);
        let mut value = av.clone();
        for r in 0..value.rows {
            for (o, b) in value.data[r * value.cols..(r + 1) * value.cols]
                .iter_mut()
                .zip(&rv.data)
            {
                *o += b;
            }
        }
        let rg = self.grad_of(a) || self.grad_of(row);
        self.push(Op::AddRow(a, row), value, rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let mut value = self.value(a).clone();
        for v in &mut value.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let rg = self.grad_of(a);
        self.push(Op::Relu(a), value, rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let mut value = self.value(a).clone();
        for v in &mut value.data {
            *v = v.tanh();
        }
        let rg = self.grad_of(a);
        self.push(Op::Tanh(a), value, rg)
    }

    /// Per-row cross-entropy of softmax(logits) against `labels`; `rows x 1`.
    ///
    /// Uses the max-subtracted log-sum-exp so large logits stay finite.
    pub fn softmax_xent(&mut self, logits: NodeId, labels: &[usize]) -> NodeId {
        let lv = self.value(logits);
        assert_eq!(lv.rows, labels.len());
        let mut probs = Matrix::zeros(lv.rows, lv.cols);
        let mut losses = Matrix::zeros(lv.rows, 1);
        for r in 0..lv.rows {
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            let prow = &mut probs.data[r * lv.cols..(r + 1) * lv.cols];
            for (p, &z) in prow.iter_mut().zip(row) {
                *p = (z - max).exp();
                sum += *p;
            }
            for p in prow.iter_mut() {
                *p /= sum;
            }
            losses.data[r] = sum.ln() - (row[labels[r]] - max);
        }
        let rg = self.grad_of(logits);
        self.push(
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            losses,
            rg,
        )
    }

    /// Sum of squares of each row; `rows x 1`.
    pub fn row_sum_squares(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let mut value = Matrix::zeros(av.rows, 1);
        for r in 0..av.rows {
            let mut acc = 0.0;
            for v in av.row(r) {
                acc += v * v;
            }
            value.data[r] = acc;
        }
        let rg = self.grad_of(a);
        self.push(Op::RowSumSquares(a), value, rg)
    }

    /// Mean over every entry (row-major order); `1 x 1`.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let value = Matrix::from_vec(1, 1, vec![mean_in_order(&self.value(a).data)]);
        let rg = self.grad_of(a);
        self.push(Op::Mean(a), value, rg)
    }

    /// Gradients of the scalar `root` with respect to every node.
    ///
    /// Only leaf entries are retained; interior gradients are consumed on the
    /// way down. Leaves that do not require a gradient stay `None`.
    pub fn backward(&self, root: NodeId) -> Vec<Option<Matrix>> {
        let rv = self.value(root);
        assert_eq!((rv.rows, rv.cols), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if self.grad_of(*a) {
                        let da = upstream.matmul_t(self.value(*b));
                        accumulate(&mut grads, *a, da);
                    }
                    if self.grad_of(*b) {
                        let db = self.value(*a).t_matmul(&upstream);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.grad_of(*row) {
                        let mut dr = Matrix::zeros(1, upstream.cols);
                        for r in 0..upstream.rows {
                            for (o, v) in dr.data.iter_mut().zip(upstream.row(r)) {
                                *o += v;
                            }
                        }
                        accumulate(&mut grads, *row, dr);
                    }
                    if self.grad_of(*a) {
                        accumulate(&mut grads, *a, upstream);
                    }
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut d = upstream;
                    for (g, &xv) in d.data.iter_mut().zip(&x.data) {
                        if xv <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Tanh(a) => {
                    let mut d = upstream;
                    for (g, y) in d.data.iter_mut().zip(&node.value.data) {
                        *g *= 1.0 - y * y;
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::SoftmaxXent {
                    logits,
                    labels,
                    probs,
                } => {
                    let mut d = probs.clone();
                    for r in 0..d.rows {
                        let scale = upstream.data[r];
                        let row = &mut d.data[r * d.cols..(r + 1) * d.cols];
                        row[labels[r]] -= 1.0;
                        for v in row.iter_mut() {
                            *v *= scale;
                        }
                    }
                    accumulate(&mut grads, *logits, d);
                }
                Op::RowSumSquares(a) => {
                    let x = self.value(*a);
                    let mut d = x.clone();
                    for r in 0..d.rows {
                        let scale = 2.0 * upstream.data[r];
                        for v in &mut d.data[r * d.cols..(r + 1) * d.cols] {
                            *v *= scale;
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Mean(a) => {
                    let x = self.value(*a);
                    let g = upstream.data[0] / x.data.len() as f64;
                    accumulate(&mut grads, *a, Matrix::from_vec(x.rows, x.cols, vec![g; x.data.len()]));
                }
            }
        }
        grads
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
