use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{AutodiffError, Result};
use crate::params::ParamStore;
use crate::sparse::CsrMatrix;
use crate::Matrix;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Which axis a reduction collapses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    /// Collapse the row axis: `r x c -> 1 x c`.
    Rows,
    /// Collapse the column axis: `r x c -> r x 1`.
    Cols,
    /// Collapse everything to `1 x 1`.
    All,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(String),
    MatMul(Var, Var),
    SparseMatMul(Arc<CsrMatrix>, Var),
    ConstMatMul(Arc<Matrix>, Var),
    Reshape(Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Prelu(Var, Var),
    LogSigmoid(Var),
    Exp(Var),
    Log(Var),
    LogSumExpRows(Var),
    RowL2Normalize(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Sum(Var),
    Mean(Var, Reduce),
    Gather(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
    SegmentMean(Var, Arc<[usize]>, Arc<[f64]>),
    RowSoftmax(Var),
    SegmentSoftmax(Var, Arc<[usize]>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Records matrix operations for a single forward pass.
///
/// A tape is built once per optimisation step and dropped afterwards.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

fn shape_err(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> AutodiffError {
    AutodiffError::Shape { op, lhs, rhs }
}

/// Second operand of add/mul may be equal-shaped, a `1 x c` row, an `r x 1`
/// column or a `1 x 1` scalar.
fn broadcastable(a: (usize, usize), b: (usize, usize)) -> bool {
    (b.0 == a.0 || b.0 == 1) && (b.1 == a.1 || b.1 == 1)
}

fn reduce_to(grad: Matrix, shape: (usize, usize)) -> Matrix {
    let mut g = grad;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn sigmoid_neg(x: f64) -> f64 {
    // sigma(-x), evaluated without overflow on either side
    if x >= 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

pub(crate) fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn check_indices(op: &'static str, idx: &[usize], bound: usize) -> Result<()> {
    if let Some(&bad) = idx.iter().find(|&&i| i >= bound) {
        return Err(AutodiffError::Invalid {
            op,
            msg: format!("index {bad} out of range for {bound} rows"),
        });
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bytes held by every recorded value.
    pub fn value_bytes(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| n.value.len() * std::mem::size_of::<f64>())
            .sum()
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.dim()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A free leaf that receives a gradient; used for gradient checks.
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Loads a named parameter. Repeated calls return the same handle.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))?
            .clone();
        let v = self.push(value, Op::Param(name.to_string()), true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Makes later `param(name)` calls resolve to `var` instead of the store.
    pub fn bind_param(&mut self, name: &str, var: Var) {
        self.params.insert(name.to_string(), var);
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `sparse * x` for a constant sparse matrix.
    pub fn sparse_matmul(&mut self, sparse: Arc<CsrMatrix>, x: Var) -> Result<Var> {
        let value = sparse.matmul_dense(self.value(x))?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SparseMatMul(sparse, x), rg))
    }

    /// `dense * x` for a shared constant matrix that is never copied
    /// onto the tape.
    pub fn const_matmul(&mut self, dense: Arc<Matrix>, x: Var) -> Result<Var> {
        let (sa, sb) = (dense.dim(), self.shape(x));
        if sa.1 != sb.0 {
            return Err(shape_err("const_matmul", sa, sb));
        }
        let value = dense.dot(self.value(x));
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::ConstMatMul(dense, x), rg))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, x: Var, shape: (usize, usize)) -> Result<Var> {
        let input = self.value(x);
        if input.len() != shape.0 * shape.1 {
            return Err(shape_err("reshape", input.dim(), shape));
        }
        let flat: Vec<f64> = input.iter().copied().collect();
        let value = Array2::from_shape_vec(shape, flat).expect("length checked");
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).t().to_owned();
        let rg = self.rg(&[x]);
        self.push(value, Op::Transpose(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !broadcastable(sa, sb) {
            return Err(shape_err("add", sa, sb));
        }
        let value = self.value(a) + self.value(b);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let neg = self.scale(b, -1.0);
        self.add(a, neg)
    }

    /// Elementwise product; `b` may broadcast like in [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !broadcastable(sa, sb) {
            return Err(shape_err("mul", sa, sb));
        }
        let value = self.value(a) * self.value(b);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x) * factor;
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale(x, factor), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| v.max(0.0));
        let rg = self.rg(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = self.value(x).mapv(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(&[x]);
        self.push(value, Op::LeakyRelu(x, slope), rg)
    }

    /// PReLU with a single learnable `1 x 1` slope.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        if self.shape(slope) != (1, 1) {
            return Err(shape_err("prelu", self.shape(x), self.shape(slope)));
        }
        let a = self.value(slope)[[0, 0]];
        let value = self.value(x).mapv(|v| if v > 0.0 { v } else { a * v });
        let rg = self.rg(&[x, slope]);
        Ok(self.push(value, Op::Prelu(x, slope), rg))
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(log_sigmoid);
        let rg = self.rg(&[x]);
        self.push(value, Op::LogSigmoid(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::exp);
        let rg = self.rg(&[x]);
        self.push(value, Op::Exp(x), rg)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::ln);
        let rg = self.rg(&[x]);
        self.push(value, Op::Log(x), rg)
    }

    /// Row-wise log-sum-exp, `r x c -> r x 1`. Entries equal to `-inf` act
    /// as masked out; a fully masked row yields `-inf`.
    pub fn logsumexp_rows(&mut self, x: Var) -> Var {
        let input = self.value(x);
        let mut value = Array2::zeros((input.nrows(), 1));
        for (r, row) in input.rows().into_iter().enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            value[[r, 0]] = if max == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
            };
        }
        let rg = self.rg(&[x]);
        self.push(value, Op::LogSumExpRows(x), rg)
    }

    /// Scales each row to unit L2 norm. Zero rows stay zero.
    pub fn row_l2_normalize(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for mut row in value.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row /= norm;
            }
        }
        let rg = self.rg(&[x]);
        self.push(value, Op::RowL2Normalize(x), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| AutodiffError::Invalid {
            op: "concat_cols",
            msg: "no inputs".into(),
        })?;
        let rows = self.shape(first).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(shape_err("concat_cols", self.shape(first), self.shape(p)));
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| AutodiffError::Invalid {
            op: "concat_rows",
            msg: "no inputs".into(),
        })?;
        let cols = self.shape(first).1;
        for &p in parts {
            if self.shape(p).1 != cols {
                return Err(shape_err("concat_rows", self.shape(first), self.shape(p)));
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("column counts checked");
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn reduce_sum(&mut self, x: Var, axis: Reduce) -> Var {
        let input = self.value(x);
        let value = match axis {
            Reduce::Rows => input.sum_axis(Axis(0)).insert_axis(Axis(0)),
            Reduce::Cols => input.sum_axis(Axis(1)).insert_axis(Axis(1)),
            Reduce::All => Array2::from_elem((1, 1), input.sum()),
        };
        let rg = self.rg(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        self.reduce_sum(x, Reduce::All)
    }

    /// Mean along an axis. An empty axis yields zeros.
    pub fn reduce_mean(&mut self, x: Var, axis: Reduce) -> Var {
        let input = self.value(x);
        let (r, c) = input.dim();
        let count = match axis {
            Reduce::Rows => r,
            Reduce::Cols => c,
            Reduce::All => r * c,
        };
        let inv = if count == 0 { 0.0 } else { 1.0 / count as f64 };
        let value = match axis {
            Reduce::Rows => input.sum_axis(Axis(0)).insert_axis(Axis(0)) * inv,
            Reduce::Cols => input.sum_axis(Axis(1)).insert_axis(Axis(1)) * inv,
            Reduce::All => Array2::from_elem((1, 1), input.sum() * inv),
        };
        let rg = self.rg(&[x]);
        self.push(value, Op::Mean(x, axis), rg)
    }

    /// Selects rows of `x` by index; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, indices: impl Into<Arc<[usize]>>) -> Result<Var> {
        let indices = indices.into();
        let input = self.value(x);
        check_indices("gather_rows", &indices, input.nrows())?;
        let value = input.select(Axis(0), &indices);
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Gather(x, indices), rg))
    }

    /// Sums rows of `x` into `segments` output rows; row `k` goes to
    /// `segment_ids[k]`.
    pub fn segment_sum(&mut self, x: Var, segment_ids: impl Into<Arc<[usize]>>, segments: usize) -> Result<Var> {
        let ids = segment_ids.into();
        let input = self.value(x);
        if ids.len() != input.nrows() {
            return Err(shape_err("segment_sum", input.dim(), (ids.len(), 1)));
        }
        check_indices("segment_sum", &ids, segments)?;
        let mut value = Array2::zeros((segments, input.ncols()));
        for (k, &s) in ids.iter().enumerate() {
            value.row_mut(s).scaled_add(1.0, &input.row(k));
        }
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SegmentSum(x, ids), rg))
    }

    /// Like [`Tape::segment_sum`] but averaged; empty segments are zero.
    pub fn segment_mean(&mut self, x: Var, segment_ids: impl Into<Arc<[usize]>>, segments: usize) -> Result<Var> {
        let ids = segment_ids.into();
        let input = self.value(x);
        if ids.len() != input.nrows() {
            return Err(shape_err("segment_mean", input.dim(), (ids.len(), 1)));
        }
        check_indices("segment_mean", &ids, segments)?;
        let mut counts = vec![0.0; segments];
        for &s in ids.iter() {
            counts[s] += 1.0;
        }
        let inv: Arc<[f64]> = counts
            .iter()
            .map(|&c| if c > 0.0 { 1.0 / c } else { 0.0 })
            .collect();
        let mut value = Array2::zeros((segments, input.ncols()));
        for (k, &s) in ids.iter().enumerate() {
            value.row_mut(s).scaled_add(inv[s], &input.row(k));
        }
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SegmentMean(x, ids, inv), rg))
    }

    pub fn row_softmax(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for mut row in value.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let total = row.sum();
            row /= total;
        }
        let rg = self.rg(&[x]);
        self.push(value, Op::RowSoftmax(x), rg)
    }

    /// Softmax over the rows that share a segment id, column by column.
    pub fn segment_softmax(&mut self, x: Var, segment_ids: impl Into<Arc<[usize]>>, segments: usize) -> Result<Var> {
        let ids = segment_ids.into();
        let input = self.value(x);
        if ids.len() != input.nrows() {
            return Err(shape_err("segment_softmax", input.dim(), (ids.len(), 1)));
        }
        check_indices("segment_softmax", &ids, segments)?;
        let cols = input.ncols();
        let mut max = Array2::from_elem((segments, cols), f64::NEG_INFINITY);
        for (k, &s) in ids.iter().enumerate() {
            Zip::from(max.row_mut(s))
                .and(input.row(k))
                .for_each(|m, &v| *m = m.max(v));
        }
        let mut value = input.clone();
        let mut total = Array2::zeros((segments, cols));
        for (k, &s) in ids.iter().enumerate() {
            Zip::from(value.row_mut(k))
                .and(max.row(s))
                .for_each(|v, &m| *v = (*v - m).exp());
            total.row_mut(s).scaled_add(1.0, &value.row(k));
        }
        for (k, &s) in ids.iter().enumerate() {
            Zip::from(value.row_mut(k))
                .and(total.row(s))
                .for_each(|v, &t| *v /= t);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SegmentSoftmax(x, ids), rg))
    }

    /// Reverse sweep from a `1 x 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Tape::backward`] and adds every parameter gradient into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward(loss)?;
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                if let Some(g) = grads.grads[id].as_ref() {
                    store.accumulate_grad(name, g)?;
                }
            }
        }
        Ok(())
    }

    fn acc(&self, grads: &mut [Option<Matrix>], var: Var, g: Matrix) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => *existing += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    self.acc(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.requires_grad(*b) {
                    self.acc(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::SparseMatMul(sparse, x) => {
                let gx = sparse.transpose_matmul_dense(g).expect("shapes fixed at forward");
                self.acc(grads, *x, gx);
            }
            Op::ConstMatMul(dense, x) => self.acc(grads, *x, dense.t().dot(g)),
            Op::Reshape(x) => {
                let flat: Vec<f64> = g.iter().copied().collect();
                let gx = Array2::from_shape_vec(self.shape(*x), flat).expect("same length");
                self.acc(grads, *x, gx);
            }
            Op::Transpose(x) => self.acc(grads, *x, g.t().to_owned()),
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                if self.requires_grad(*b) {
                    let shape = self.shape(*b);
                    self.acc(grads, *b, reduce_to(g.clone(), shape));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.acc(grads, *a, g * vb);
                }
                if self.requires_grad(*b) {
                    self.acc(grads, *b, reduce_to(g * va, vb.dim()));
                }
            }
            Op::Scale(x, f) => self.acc(grads, *x, g * *f),
            Op::Relu(x) => {
                let mut gx = g.clone();
                Zip::from(&mut gx)
                    .and(self.value(*x))
                    .for_each(|d, &v| if v <= 0.0 { *d = 0.0 });
                self.acc(grads, *x, gx);
            }
            Op::LeakyRelu(x, slope) => {
                let mut gx = g.clone();
                Zip::from(&mut gx)
                    .and(self.value(*x))
                    .for_each(|d, &v| if v <= 0.0 { *d *= slope });
                self.acc(grads, *x, gx);
            }
            Op::Prelu(x, slope) => {
                let a = self.value(*slope)[[0, 0]];
                let vx = self.value(*x);
                if self.requires_grad(*x) {
                    let mut gx = g.clone();
                    Zip::from(&mut gx)
                        .and(vx)
                        .for_each(|d, &v| if v <= 0.0 { *d *= a });
                    self.acc(grads, *x, gx);
                }
                if self.requires_grad(*slope) {
                    let mut ga = 0.0;
                    Zip::from(g).and(vx).for_each(|&d, &v| {
                        if v <= 0.0 {
                            ga += d * v;
                        }
                    });
                    self.acc(grads, *slope, Array2::from_elem((1, 1), ga));
                }
            }
            Op::LogSigmoid(x) => {
                let mut gx = g.clone();
                Zip::from(&mut gx)
                    .and(self.value(*x))
                    .for_each(|d, &v| *d *= sigmoid_neg(v));
                self.acc(grads, *x, gx);
            }
            Op::Exp(x) => self.acc(grads, *x, g * y),
            Op::Log(x) => self.acc(grads, *x, g / self.value(*x)),
            Op::LogSumExpRows(x) => {
                let vx = self.value(*x);
                let mut gx = Array2::zeros(vx.dim());
                for r in 0..vx.nrows() {
                    let lse = y[[r, 0]];
                    if lse == f64::NEG_INFINITY {
                        continue;
                    }
                    let gr = g[[r, 0]];
                    Zip::from(gx.row_mut(r))
                        .and(vx.row(r))
                        .for_each(|d, &v| *d = gr * (v - lse).exp());
                }
                self.acc(grads, *x, gx);
            }
            Op::RowL2Normalize(x) => {
                let vx = self.value(*x);
                let mut gx = Array2::zeros(vx.dim());
                for r in 0..vx.nrows() {
                    let xr = vx.row(r);
                    let norm = xr.dot(&xr).sqrt();
                    if norm == 0.0 {
                        continue;
                    }
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let proj = yr.dot(&gr);
                    Zip::from(gx.row_mut(r))
                        .and(gr)
                        .and(yr)
                        .for_each(|d, &gv, &yv| *d = (gv - yv * proj) / norm);
                }
                self.acc(grads, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let width = self.shape(p).1;
                    if self.requires_grad(p) {
                        self.acc(grads, p, g.slice(s![.., offset..offset + width]).to_owned());
                    }
                    offset += width;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let height = self.shape(p).0;
                    if self.requires_grad(p) {
                        self.acc(grads, p, g.slice(s![offset..offset + height, ..]).to_owned());
                    }
                    offset += height;
                }
            }
            Op::Sum(x) => {
                let shape = self.shape(*x);
                self.acc(grads, *x, g.broadcast(shape).expect("reduced shape broadcasts").to_owned());
            }
            Op::Mean(x, axis) => {
                let shape = self.shape(*x);
                let count = match axis {
                    Reduce::Rows => shape.0,
                    Reduce::Cols => shape.1,
                    Reduce::All => shape.0 * shape.1,
                };
                if count == 0 {
                    return;
                }
                let gx = g.broadcast(shape).expect("reduced shape broadcasts").to_owned() / count as f64;
                self.acc(grads, *x, gx);
            }
            Op::Gather(x, idx) => {
                let shape = self.shape(*x);
                let mut gx = Array2::zeros(shape);
                for (k, &i) in idx.iter().enumerate() {
                    gx.row_mut(i).scaled_add(1.0, &g.row(k));
                }
                self.acc(grads, *x, gx);
            }
            Op::SegmentSum(x, ids) => {
                let gx = g.select(Axis(0), ids);
                self.acc(grads, *x, gx);
            }
            Op::SegmentMean(x, ids, inv) => {
                let mut gx = g.select(Axis(0), ids);
                for (k, &s) in ids.iter().enumerate() {
                    gx.row_mut(k).mapv_inplace(|v| v * inv[s]);
                }
                self.acc(grads, *x, gx);
            }
            Op::RowSoftmax(x) => {
                let mut gx = Array2::zeros(y.dim());
                for r in 0..y.nrows() {
                    let dot = y.row(r).dot(&g.row(r));
                    Zip::from(gx.row_mut(r))
                        .and(y.row(r))
                        .and(g.row(r))
                        .for_each(|d, &yv, &gv| *d = yv * (gv - dot));
                }
                self.acc(grads, *x, gx);
            }
            Op::SegmentSoftmax(x, ids) => {
                let segments = ids.iter().copied().max().map_or(0, |m| m + 1);
                let mut dots = Array2::zeros((segments, y.ncols()));
                for (k, &s) in ids.iter().enumerate() {
                    let prod = &y.row(k) * &g.row(k);
                    dots.row_mut(s).scaled_add(1.0, &prod);
                }
                let mut gx = Array2::zeros(y.dim());
                for (k, &s) in ids.iter().enumerate() {
                    Zip::from(gx.row_mut(k))
                        .and(y.row(k))
                        .and(g.row(k))
                        .and(dots.row(s))
                        .for_each(|d, &yv, &gv, &dv| *d = yv * (gv - dv));
                }
                self.acc(grads, *x, gx);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(0.0) + std::f64::consts::LN_2).abs() < 1e-12);
        let far = log_sigmoid(-745.0);
        assert!(far.is_finite());
        assert!((far + 745.0).abs() < 1e-6);
        assert!(log_sigmoid(800.0) <= 0.0);
    }

    #[test]
    fn logsumexp_of_equal_entries() {
        let mut t = Tape::new();
        let x = t.constant(array![[0.0, 0.0, 0.0, 0.0]]);
        let y = t.logsumexp_rows(x);
        assert!((t.value(y)[[0, 0]] - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_logsumexp_row_has_zero_gradient() {
        let mut t = Tape::new();
        let x = t.variable(array![[f64::NEG_INFINITY, f64::NEG_INFINITY], [1.0, 2.0]]);
        let y = t.logsumexp_rows(x);
        assert_eq!(t.value(y)[[0, 0]], f64::NEG_INFINITY);
        let scaled = t.scale(y, 0.0);
        let row = t.gather_rows(scaled, vec![1]).unwrap();
        let finite = t.gather_rows(y, vec![1]).unwrap();
        let total = t.add(row, finite).unwrap();
        let loss = t.sum_all(total);
        let g = t.backward(loss).unwrap();
        let gx = g.get(x).unwrap();
        assert_eq!(gx.row(0).to_vec(), vec![0.0, 0.0]);
        assert!((gx.row(1).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut t = Tape::new();
        let a = t.constant(Array2::zeros((2, 3)));
        let b = t.constant(Array2::zeros((2, 3)));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
        assert!(err.contains("(2, 3)"), "{err}");
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let a = t.variable(Array2::zeros((2, 1)));
        assert!(matches!(t.backward(a), Err(AutodiffError::NonScalarLoss((2, 1)))));
    }

    #[test]
    fn sum_of_weight_times_fixed_input() {
        // loss = sum(W x): dloss/dW[i, j] = x[j]
        let mut store = ParamStore::new();
        store.insert("w", array![[0.3, -0.2, 0.9], [1.5, 0.0, -0.4]]);
        let mut t = Tape::new();
        let w = t.param(&store, "w").unwrap();
        let x = t.constant(array![[2.0], [-1.0], [0.5]]);
        let y = t.matmul(w, x).unwrap();
        let loss = t.sum_all(y);
        t.backward_into(loss, &mut store).unwrap();
        let g = store.grad("w").unwrap();
        for i in 0..2 {
            assert_eq!(g.row(i).to_vec(), vec![2.0, -1.0, 0.5]);
        }
    }

    #[test]
    fn disconnected_parameter_gets_exact_zero() {
        let mut store = ParamStore::new();
        store.insert("used", array![[1.0]]);
        store.insert("unused", array![[3.0, 4.0]]);
        let mut t = Tape::new();
        let u = t.param(&store, "used").unwrap();
        let _ = t.param(&store, "unused").unwrap();
        let sq = t.mul(u, u).unwrap();
        let loss = t.sum_all(sq);
        t.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.grad("unused").unwrap(), &array![[0.0, 0.0]]);
        assert_eq!(store.grad("used").unwrap(), &array![[2.0]]);
    }

    #[test]
    fn row_normalize_handles_zero_rows() {
        let mut t = Tape::new();
        let x = t.constant(array![[3.0, 4.0], [0.0, 0.0]]);
        let y = t.row_l2_normalize(x);
        assert_eq!(t.value(y), &array![[0.6, 0.8], [0.0, 0.0]]);
    }

    #[test]
    fn segment_ops_forward() {
        let mut t = Tape::new();
        let x = t.constant(array![[1.0], [2.0], [4.0]]);
        let s = t.segment_sum(x, vec![0, 0, 2], 3).unwrap();
        assert_eq!(t.value(s), &array![[3.0], [0.0], [4.0]]);
        let m = t.segment_mean(x, vec![0, 0, 2], 3).unwrap();
        assert_eq!(t.value(m), &array![[1.5], [0.0], [4.0]]);
        let sm = t.segment_softmax(x, vec![1, 1, 0], 2).unwrap();
        let v = t.value(sm);
        assert!((v[[0, 0]] + v[[1, 0]] - 1.0).abs() < 1e-12);
        assert_eq!(v[[2, 0]], 1.0);
    }
}
