//! Recorded computation graph over dense `f64` matrices.
//!
//! Every value on the tape is an `Array2<f64>`; scalars are 1x1, row vectors
//! 1xd, column vectors nx1. Ops append nodes that reference earlier nodes by
//! id, so the tape is topologically ordered by construction and a single
//! reverse sweep computes exact gradients.

use std::rc::Rc;

use ndarray::{s, Array2, Axis};

use crate::error::{Result, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// Directed edges in CSR order: edge e points `src[e] -> dst[e]`, and edges
/// are grouped by destination so that edges into node i occupy
/// `offsets[i]..offsets[i+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeIndex {
    pub num_nodes: usize,
    pub dst: Vec<usize>,
    pub src: Vec<usize>,
    pub offsets: Vec<usize>,
}

impl EdgeIndex {
    pub fn num_edges(&self) -> usize {
        self.dst.len()
    }
}

enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    AddRow(TensorId, TensorId),
    Hadamard(TensorId, TensorId),
    Scale(TensorId, f64),
    ScaleRows(TensorId, TensorId),
    Tanh(TensorId),
    Sigmoid(TensorId),
    Relu(TensorId),
    RowSoftmax(TensorId),
    ConcatCols(TensorId, TensorId),
    ConcatRows(Vec<TensorId>),
    SliceRows(TensorId, usize, usize),
    SliceCols(TensorId, usize, usize),
    GatherRows(TensorId, Rc<Vec<usize>>),
    MeanRows(TensorId),
    SumAll(TensorId),
    MaskedCrossEntropy {
        logits: TensorId,
        labels: Rc<Vec<usize>>,
        mask: Rc<Vec<bool>>,
    },
    EdgeSoftmax {
        scores: TensorId,
        offsets: Rc<Vec<usize>>,
    },
    EdgeAggregate {
        h: TensorId,
        weights: TensorId,
        edges: Rc<EdgeIndex>,
    },
}

struct Node {
    value: Array2<f64>,
    grad: Option<Array2<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Append-only computation tape.
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, t: TensorId) -> &Array2<f64> {
        &self.nodes[t.0].value
    }

    pub fn shape(&self, t: TensorId) -> (usize, usize) {
        let d = self.nodes[t.0].value.dim();
        (d.0, d.1)
    }

    /// Gradient of the last backward pass, if this node participated.
    pub fn grad(&self, t: TensorId) -> Option<&Array2<f64>> {
        self.nodes[t.0].grad.as_ref()
    }

    pub fn requires_grad(&self, t: TensorId) -> bool {
        self.nodes[t.0].requires_grad
    }

    /// Insert an input tensor. `requires_grad` marks it as a differentiation
    /// target; constants should pass `false`.
    pub fn leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> TensorId {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> TensorId {
        self.leaf(value, false)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> TensorId {
        self.constant(Array2::zeros((rows, cols)))
    }

    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.constant(Array2::from_elem((1, 1), v))
    }

    fn push(&mut self, value: Array2<f64>, requires_grad: bool, op: Op) -> TensorId {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, op_name: &'static str, value: Array2<f64>, op: Op) -> Result<TensorId> {
        if !value.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::AddRow(a, b)
            | Op::Hadamard(a, b)
            | Op::ScaleRows(a, b)
            | Op::ConcatCols(a, b) => self.needs(*a) || self.needs(*b),
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::RowSoftmax(a)
            | Op::SliceRows(a, _, _)
            | Op::SliceCols(a, _, _)
            | Op::GatherRows(a, _)
            | Op::MeanRows(a)
            | Op::SumAll(a) => self.needs(*a),
            Op::ConcatRows(parts) => parts.iter().any(|p| self.needs(*p)),
            Op::MaskedCrossEntropy { logits, .. } => self.needs(*logits),
            Op::EdgeSoftmax { scores, .. } => self.needs(*scores),
            Op::EdgeAggregate { h, weights, .. } => self.needs(*h) || self.needs(*weights),
        };
        Ok(self.push(value, requires_grad, op))
    }

    fn needs(&self, t: TensorId) -> bool {
        self.nodes[t.0].requires_grad
    }

    fn same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                details: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        Ok(())
    }

    // ---- primitive forward ops ----

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                details: format!("{ar}x{ac} . {br}x{bc}"),
            });
        }
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push_checked("matmul", value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("add", a, b)?;
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push_checked("add", value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("sub", a, b)?;
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push_checked("sub", value, Op::Sub(a, b))
    }

    /// `a + row` with `row` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: TensorId, row: TensorId) -> Result<TensorId> {
        let (_, ac) = self.shape(a);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != ac {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                details: format!("{:?} + {rr}x{rc}", self.shape(a)),
            });
        }
        let value = &self.nodes[a.0].value + &self.nodes[row.0].value;
        self.push_checked("add_row", value, Op::AddRow(a, row))
    }

    pub fn hadamard(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("hadamard", a, b)?;
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push_checked("hadamard", value, Op::Hadamard(a, b))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        let value = &self.nodes[a.0].value * c;
        self.push_checked("scale", value, Op::Scale(a, c))
    }

    /// Multiply row i of `a` by the scalar `col[i]`; `col` is nx1.
    pub fn scale_rows(&mut self, a: TensorId, col: TensorId) -> Result<TensorId> {
        let (ar, _) = self.shape(a);
        let (cr, cc) = self.shape(col);
        if cr != ar || cc != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                details: format!("{:?} * {cr}x{cc}", self.shape(a)),
            });
        }
        let value = &self.nodes[a.0].value * &self.nodes[col.0].value;
        self.push_checked("scale_rows", value, Op::ScaleRows(a, col))
    }

    pub fn tanh(&mut self, a: TensorId) -> Result<TensorId> {
        let value = self.nodes[a.0].value.mapv(f64::tanh);
        self.push_checked("tanh", value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId> {
        let value = self.nodes[a.0].value.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push_checked("sigmoid", value, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        let value = self.nodes[a.0].value.mapv(|x| x.max(0.0));
        self.push_checked("relu", value, Op::Relu(a))
    }

    pub fn row_softmax(&mut self, a: TensorId) -> Result<TensorId> {
        let mut value = self.nodes[a.0].value.clone();
        for mut row in value.rows_mut() {
            softmax_in_place(row.as_slice_mut().expect("contiguous row"));
        }
        self.push_checked("row_softmax", value, Op::RowSoftmax(a))
    }

    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ar != br {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                details: format!("{ar}x{ac} | {br}x{bc}"),
            });
        }
        let mut value = Array2::zeros((ar, ac + bc));
        value
            .slice_mut(s![.., 0..ac])
            .assign(&self.nodes[a.0].value);
        value
            .slice_mut(s![.., ac..ac + bc])
            .assign(&self.nodes[b.0].value);
        self.push_checked("concat_cols", value, Op::ConcatCols(a, b))
    }

    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "concat_rows",
                details: "no parts".into(),
            });
        }
        let cols = self.shape(parts[0]).1;
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pc != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    details: format!("column widths {cols} vs {pc}"),
                });
            }
            rows += pr;
        }
        let mut value = Array2::zeros((rows, cols));
        let mut at = 0;
        for &p in parts {
            let pr = self.shape(p).0;
            value
                .slice_mut(s![at..at + pr, ..])
                .assign(&self.nodes[p.0].value);
            at += pr;
        }
        self.push_checked("concat_rows", value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (ar, _) = self.shape(a);
        if start + len > ar {
            return Err(TensorError::ShapeMismatch {
                op: "slice_rows",
                details: format!("rows {start}..{} of {ar}", start + len),
            });
        }
        let value = self.nodes[a.0].value.slice(s![start..start + len, ..]).to_owned();
        self.push_checked("slice_rows", value, Op::SliceRows(a, start, len))
    }

    pub fn slice_cols(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (_, ac) = self.shape(a);
        if start + len > ac {
            return Err(TensorError::ShapeMismatch {
                op: "slice_cols",
                details: format!("cols {start}..{} of {ac}", start + len),
            });
        }
        let value = self.nodes[a.0].value.slice(s![.., start..start + len]).to_owned();
        self.push_checked("slice_cols", value, Op::SliceCols(a, start, len))
    }

    /// Output row j = `a` row `indices[j]`. Duplicate indices are allowed;
    /// their gradients accumulate.
    pub fn gather_rows(&mut self, a: TensorId, indices: Rc<Vec<usize>>) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        for &i in indices.iter() {
            if i >= ar {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: ar,
                });
            }
        }
        let mut value = Array2::zeros((indices.len(), ac));
        for (j, &i) in indices.iter().enumerate() {
            value.row_mut(j).assign(&self.nodes[a.0].value.row(i));
        }
        self.push_checked("gather_rows", value, Op::GatherRows(a, indices))
    }

    /// Column-wise mean over rows: nxd -> 1xd.
    pub fn mean_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        if ar == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "mean_rows",
                details: "zero rows".into(),
            });
        }
        let value = self.nodes[a.0]
            .value
            .mean_axis(Axis(0))
            .expect("nonempty")
            .insert_axis(Axis(0));
        let _ = ac;
        self.push_checked("mean_rows", value, Op::MeanRows(a))
    }

    pub fn sum_all(&mut self, a: TensorId) -> Result<TensorId> {
        let value = Array2::from_elem((1, 1), self.nodes[a.0].value.sum());
        self.push_checked("sum_all", value, Op::SumAll(a))
    }

    /// Mean cross-entropy (softmax over columns) over rows where `mask` is
    /// true. Returns a 1x1 scalar.
    pub fn masked_cross_entropy(
        &mut self,
        logits: TensorId,
        labels: Rc<Vec<usize>>,
        mask: Rc<Vec<bool>>,
    ) -> Result<TensorId> {
        let (n, c) = self.shape(logits);
        if labels.len() != n || mask.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "masked_cross_entropy",
                details: format!("{n} rows vs {} labels / {} mask", labels.len(), mask.len()),
            });
        }
        let m = mask.iter().filter(|&&b| b).count();
        if m == 0 {
            return Err(TensorError::EmptyMask {
                op: "masked_cross_entropy",
            });
        }
        let mut total = 0.0;
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            let y = labels[i];
            if y >= c {
                return Err(TensorError::IndexOutOfRange {
                    op: "masked_cross_entropy",
                    index: y,
                    len: c,
                });
            }
            let row = self.nodes[logits.0].value.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let value = Array2::from_elem((1, 1), total / m as f64);
        self.push_checked(
            "masked_cross_entropy",
            value,
            Op::MaskedCrossEntropy { logits, labels, mask },
        )
    }

    /// Softmax over contiguous segments of an Ex1 score column. Segment i is
    /// `offsets[i]..offsets[i+1]`; empty segments are allowed.
    pub fn edge_softmax(&mut self, scores: TensorId, offsets: Rc<Vec<usize>>) -> Result<TensorId> {
        let (e, c) = self.shape(scores);
        if c != 1 || *offsets.last().unwrap_or(&0) != e {
            return Err(TensorError::ShapeMismatch {
                op: "edge_softmax",
                details: format!("scores {e}x{c}, offsets end {:?}", offsets.last()),
            });
        }
        let mut value = self.nodes[scores.0].value.clone();
        {
            let flat = value.as_slice_mut().expect("contiguous");
            for w in offsets.windows(2) {
                softmax_in_place(&mut flat[w[0]..w[1]]);
            }
        }
        self.push_checked("edge_softmax", value, Op::EdgeSoftmax { scores, offsets })
    }

    /// Sparse weighted aggregation: out_i = sum over edges e with dst==i of
    /// weights[e] * h[src[e]]. Rows of isolated nodes stay zero.
    pub fn edge_aggregate(
        &mut self,
        h: TensorId,
        weights: TensorId,
        edges: Rc<EdgeIndex>,
    ) -> Result<TensorId> {
        let (hr, hc) = self.shape(h);
        let (wr, wc) = self.shape(weights);
        if hr != edges.num_nodes || wr != edges.num_edges() || wc != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "edge_aggregate",
                details: format!(
                    "h {hr}x{hc}, weights {wr}x{wc}, edges {} nodes {} edges",
                    edges.num_nodes,
                    edges.num_edges()
                ),
            });
        }
        let mut value = Array2::zeros((edges.num_nodes, hc));
        {
            let hv = &self.nodes[h.0].value;
            let wv = &self.nodes[weights.0].value;
            for e in 0..edges.num_edges() {
                let w = wv[(e, 0)];
                let src = hv.row(edges.src[e]);
                let mut out = value.row_mut(edges.dst[e]);
                out.scaled_add(w, &src);
            }
        }
        self.push_checked("edge_aggregate", value, Op::EdgeAggregate { h, weights, edges })
    }

    // ---- reverse sweep ----

    /// Populate gradients of every `requires_grad` tensor reachable from
    /// `loss`. Leaves that require grad but do not participate get zeros.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardConsumed);
        }
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(TensorError::NonScalarLoss { rows: r, cols: c });
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad && !matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            self.propagate(i, &g);
            // Leaf gradients are the output of the pass; interior gradients
            // have been consumed and can be dropped to bound memory.
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].grad = Some(g);
            }
        }
        // Non-participating targets report an exact zero gradient.
        for node in &mut self.nodes {
            if node.requires_grad && matches!(node.op, Op::Leaf) && node.grad.is_none() {
                node.grad = Some(Array2::zeros(node.value.dim()));
            }
        }
        Ok(())
    }

    fn accum(&mut self, t: TensorId, delta: &Array2<f64>) {
        if !self.nodes[t.0].requires_grad {
            return;
        }
        match &mut self.nodes[t.0].grad {
            Some(g) => *g += delta,
            slot => *slot = Some(delta.clone()),
        }
    }

    fn propagate(&mut self, i: usize, g: &Array2<f64>) {
        // Ops are matched by moving cheap copies of the ids out first so the
        // borrow of self.nodes[i] ends before accumulation.
        enum Rule {
            None,
            Into(TensorId, Array2<f64>),
            Into2(TensorId, Array2<f64>, TensorId, Array2<f64>),
            Many(Vec<(TensorId, Array2<f64>)>),
        }
        let rule = match &self.nodes[i].op {
            Op::Leaf => Rule::None,
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let ga = g.dot(&self.nodes[b.0].value.t());
                let gb = self.nodes[a.0].value.t().dot(g);
                Rule::Into2(a, ga, b, gb)
            }
            Op::Add(a, b) => Rule::Into2(*a, g.clone(), *b, g.clone()),
            Op::Sub(a, b) => Rule::Into2(*a, g.clone(), *b, -g),
            Op::AddRow(a, row) => {
                let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                Rule::Into2(*a, g.clone(), *row, gr)
            }
            Op::Hadamard(a, b) => {
                let (a, b) = (*a, *b);
                let ga = g * &self.nodes[b.0].value;
                let gb = g * &self.nodes[a.0].value;
                Rule::Into2(a, ga, b, gb)
            }
            Op::Scale(a, cst) => Rule::Into(*a, g * *cst),
            Op::ScaleRows(a, col) => {
                let (a, col) = (*a, *col);
                let ga = g * &self.nodes[col.0].value;
                let gcol = (g * &self.nodes[a.0].value)
                    .sum_axis(Axis(1))
                    .insert_axis(Axis(1));
                Rule::Into2(a, ga, col, gcol)
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                Rule::Into(*a, g * &y.mapv(|v| 1.0 - v * v))
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                Rule::Into(*a, g * &y.mapv(|v| v * (1.0 - v)))
            }
            Op::Relu(a) => {
                let x = &self.nodes[a.0].value;
                Rule::Into(*a, g * &x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }))
            }
            Op::RowSoftmax(a) => {
                let y = &self.nodes[i].value;
                let mut ga = g * y;
                for (mut grow, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                    let dot: f64 = grow.sum();
                    grow.zip_mut_with(&yrow, |gv, &yv| *gv -= dot * yv);
                }
                Rule::Into(*a, ga)
            }
            Op::ConcatCols(a, b) => {
                let (a, b) = (*a, *b);
                let ac = self.shape(a).1;
                let ga = g.slice(s![.., 0..ac]).to_owned();
                let gb = g.slice(s![.., ac..]).to_owned();
                Rule::Into2(a, ga, b, gb)
            }
            Op::ConcatRows(parts) => {
                let parts = parts.clone();
                let mut out = Vec::with_capacity(parts.len());
                let mut at = 0;
                for p in parts {
                    let pr = self.shape(p).0;
                    out.push((p, g.slice(s![at..at + pr, ..]).to_owned()));
                    at += pr;
                }
                Rule::Many(out)
            }
            Op::SliceRows(a, start, len) => {
                let (a, start, len) = (*a, *start, *len);
                let mut ga = Array2::zeros(self.nodes[a.0].value.dim());
                ga.slice_mut(s![start..start + len, ..]).assign(g);
                Rule::Into(a, ga)
            }
            Op::SliceCols(a, start, len) => {
                let (a, start, len) = (*a, *start, *len);
                let mut ga = Array2::zeros(self.nodes[a.0].value.dim());
                ga.slice_mut(s![.., start..start + len]).assign(g);
                Rule::Into(a, ga)
            }
            Op::GatherRows(a, idx) => {
                let (a, idx) = (*a, idx.clone());
                let mut ga = Array2::zeros(self.nodes[a.0].value.dim());
                for (j, &i2) in idx.iter().enumerate() {
                    let mut row = ga.row_mut(i2);
                    row += &g.row(j);
                }
                Rule::Into(a, ga)
            }
            Op::MeanRows(a) => {
                let a = *a;
                let n = self.nodes[a.0].value.nrows() as f64;
                let grow = g.row(0).mapv(|v| v / n);
                let mut ga = Array2::zeros(self.nodes[a.0].value.dim());
                for mut row in ga.rows_mut() {
                    row.assign(&grow);
                }
                Rule::Into(a, ga)
            }
            Op::SumAll(a) => {
                let a = *a;
                let ga = Array2::from_elem(self.nodes[a.0].value.dim(), g[(0, 0)]);
                Rule::Into(a, ga)
            }
            Op::MaskedCrossEntropy { logits, labels, mask } => {
                let (logits, labels, mask) = (*logits, labels.clone(), mask.clone());
                let lv = &self.nodes[logits.0].value;
                let m = mask.iter().filter(|&&b| b).count() as f64;
                let gs = g[(0, 0)] / m;
                let mut ga = Array2::zeros(lv.dim());
                for i2 in 0..lv.nrows() {
                    if !mask[i2] {
                        continue;
                    }
                    let row = lv.row(i2);
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = row.iter().map(|&v| (v - max).exp()).sum();
                    for j in 0..lv.ncols() {
                        let p = (row[j] - max).exp() / denom;
                        let onehot = if j == labels[i2] { 1.0 } else { 0.0 };
                        ga[(i2, j)] = gs * (p - onehot);
                    }
                }
                Rule::Into(logits, ga)
            }
            Op::EdgeSoftmax { scores, offsets } => {
                let (scores, offsets) = (*scores, offsets.clone());
                let y = &self.nodes[i].value;
                let mut ga = Array2::zeros(y.dim());
                for w in offsets.windows(2) {
                    let dot: f64 = (w[0]..w[1]).map(|e| g[(e, 0)] * y[(e, 0)]).sum();
                    for e in w[0]..w[1] {
                        ga[(e, 0)] = y[(e, 0)] * (g[(e, 0)] - dot);
                    }
                }
                Rule::Into(scores, ga)
            }
            Op::EdgeAggregate { h, weights, edges } => {
                let (h, weights, edges) = (*h, *weights, edges.clone());
                let hv = &self.nodes[h.0].value;
                let wv = &self.nodes[weights.0].value;
                let mut gh = Array2::zeros(hv.dim());
                let mut gw = Array2::zeros(wv.dim());
                for e in 0..edges.num_edges() {
                    let gout = g.row(edges.dst[e]);
                    let mut gsrc = gh.row_mut(edges.src[e]);
                    gsrc.scaled_add(wv[(e, 0)], &gout);
                    gw[(e, 0)] = gout.dot(&hv.row(edges.src[e]));
                }
                Rule::Into2(h, gh, weights, gw)
            }
        };
        match rule {
            Rule::None => {}
            Rule::Into(a, ga) => self.accum(a, &ga),
            Rule::Into2(a, ga, b, gb) => {
                self.accum(a, &ga);
                self.accum(b, &gb);
            }
            Rule::Many(list) => {
                for (t, gt) in list {
                    self.accum(t, &gt);
                }
            }
        }
    }
}

fn softmax_in_place(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn row_softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let a = tape.constant(array![[1.0, 2.0, 3.0], [-5.0, 0.0, 5.0]]);
        let y = tape.row_softmax(a).unwrap();
        for row in tape.value(y).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tanh_of_zero_matrix_is_zero() {
        let mut tape = Tape::new();
        let a = tape.zeros(3, 4);
        let y = tape.tanh(a).unwrap();
        assert!(tape.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let mut tape = Tape::new();
        let a = tape.zeros(2, 3);
        let b = tape.zeros(2, 3);
        assert!(matches!(
            tape.matmul(a, b),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn non_finite_output_is_trapped() {
        let mut tape = Tape::new();
        let a = tape.constant(array![[1e308]]);
        let b = tape.constant(array![[1e308]]);
        assert!(matches!(tape.add(a, b), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn linear_loss_gradient_is_outer_product_structure() {
        // loss = sum(W · x) ⇒ dL/dW = 1 · xᵀ broadcast, dL/dx = Wᵀ · 1.
        let mut tape = Tape::new();
        let w = tape.leaf(array![[1.0, 2.0], [3.0, 4.0]], true);
        let x = tape.leaf(array![[5.0], [6.0]], true);
        let y = tape.matmul(w, x).unwrap();
        let loss = tape.sum_all(y).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &array![[5.0, 6.0], [5.0, 6.0]]);
        assert_eq!(tape.grad(x).unwrap(), &array![[4.0], [6.0]]);
    }

    #[test]
    fn unused_parameter_gets_zero_grad() {
        let mut tape = Tape::new();
        let used = tape.leaf(array![[2.0]], true);
        let unused = tape.leaf(array![[7.0, 7.0]], true);
        let loss = tape.sum_all(used).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(unused).unwrap(), &Array2::zeros((1, 2)));
    }

    #[test]
    fn backward_twice_errors() {
        let mut tape = Tape::new();
        let a = tape.leaf(array![[1.0]], true);
        let loss = tape.sum_all(a).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(TensorError::BackwardConsumed)));
    }

    #[test]
    fn backward_on_non_scalar_errors() {
        let mut tape = Tape::new();
        let a = tape.leaf(array![[1.0, 2.0]], true);
        assert!(matches!(
            tape.backward(a),
            Err(TensorError::NonScalarLoss { rows: 1, cols: 2 })
        ));
    }

    #[test]
    fn edge_aggregate_matches_dense_oracle_with_uniform_weights() {
        // Path 0-1-2; uniform weights 1/deg equal row-normalized adjacency.
        let edges = Rc::new(EdgeIndex {
            num_nodes: 3,
            dst: vec![0, 1, 1, 2],
            src: vec![1, 0, 2, 1],
            offsets: vec![0, 1, 3, 4],
        });
        let mut tape = Tape::new();
        let h = tape.constant(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let w = tape.constant(array![[1.0], [0.5], [0.5], [1.0]]);
        let out = tape.edge_aggregate(h, w, edges).unwrap();

        // Dense oracle: D^{-1} A H computed by hand loops.
        let a_dense = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let hv = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let deg = [1.0, 2.0, 1.0];
        for i in 0..3 {
            for j in 0..2 {
                let mut want = 0.0;
                for k in 0..3 {
                    want += a_dense[(i, k)] * hv[(k, j)] / deg[i];
                }
                assert!((tape.value(out)[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn edge_aggregate_isolated_node_row_is_zero() {
        let edges = Rc::new(EdgeIndex {
            num_nodes: 3,
            dst: vec![0, 1],
            src: vec![1, 0],
            offsets: vec![0, 1, 2, 2],
        });
        let mut tape = Tape::new();
        let h = tape.constant(array![[1.0], [2.0], [3.0]]);
        let w = tape.constant(array![[1.0], [1.0]]);
        let out = tape.edge_aggregate(h, w, edges).unwrap();
        assert_eq!(tape.value(out)[(2, 0)], 0.0);
    }

    #[test]
    fn masked_cross_entropy_empty_mask_errors() {
        let mut tape = Tape::new();
        let logits = tape.zeros(2, 2);
        let err = tape.masked_cross_entropy(
            logits,
            Rc::new(vec![0, 1]),
            Rc::new(vec![false, false]),
        );
        assert!(matches!(err, Err(TensorError::EmptyMask { .. })));
    }

    #[test]
    fn edge_softmax_segments_sum_to_one() {
        let mut tape = Tape::new();
        let s = tape.constant(array![[0.3], [-1.0], [2.0], [0.5]]);
        let y = tape
            .edge_softmax(s, Rc::new(vec![0, 2, 2, 4]))
            .unwrap();
        let v = tape.value(y);
        assert!((v[(0, 0)] + v[(1, 0)] - 1.0).abs() < 1e-12);
        assert!((v[(2, 0)] + v[(3, 0)] - 1.0).abs() < 1e-12);
    }
}
