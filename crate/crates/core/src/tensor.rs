//! Dense matrices, a small reverse-mode tape, and the Adam optimizer.
//!
//! The tape is a flat list of nodes in creation order, which is already a
//! topological order, so `backward` is a single reverse sweep.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally long rows. An empty slice gives a 0x0 matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::ShapeMismatch {
                    op: "from_rows",
                    left: (rows.len(), cols),
                    right: (1, row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (kk, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(kk)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::ShapeMismatch {
                op: "t_matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let b_row = other.row(r);
            for (i, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                op: "matmul_t",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Compressed sparse row matrix used for the constant normalized adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(col, value)` lists; columns must be in range.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        offsets.push(0);
        for row in &rows {
            for &(c, v) in row {
                if c >= cols {
                    return Err(Error::ShapeMismatch {
                        op: "csr",
                        left: (rows.len(), cols),
                        right: (1, c + 1),
                    });
                }
                indices.push(c);
                values.push(v);
            }
            offsets.push(indices.len());
        }
        Ok(CsrMatrix {
            rows: rows.len(),
            cols,
            offsets,
            indices,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[r]..self.offsets[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                m.set(r, c, v);
            }
        }
        m
    }

    pub fn mul_dense(&self, b: &Matrix) -> Result<Matrix> {
        if self.cols != b.rows() {
            return Err(Error::ShapeMismatch {
                op: "spmm",
                left: (self.rows, self.cols),
                right: b.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, b.cols());
        for r in 0..self.rows {
            let out_row = out.row_mut(r);
            for (c, v) in self.row(r) {
                for (o, &x) in out_row.iter_mut().zip(b.row(c)) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · b`.
    pub fn t_mul_dense(&self, b: &Matrix) -> Result<Matrix> {
        if self.rows != b.rows() {
            return Err(Error::ShapeMismatch {
                op: "spmm_t",
                left: (self.rows, self.cols),
                right: b.shape(),
            });
        }
        let mut out = Matrix::zeros(self.cols, b.cols());
        for r in 0..self.rows {
            let b_row = b.row(r);
            for (c, v) in self.row(r) {
                for (o, &x) in out.row_mut(c).iter_mut().zip(b_row) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }
}

/// Flat list of index segments, each with its own multiplier, for
/// segment-wise log-sum-exp.
#[derive(Debug, Clone, Default)]
pub struct Segments {
    offsets: Vec<usize>,
    indices: Vec<u32>,
    scales: Vec<f64>,
}

impl Segments {
    pub fn new() -> Self {
        Segments {
            offsets: vec![0],
            indices: Vec::new(),
            scales: Vec::new(),
        }
    }

    /// Appends a segment and returns its position.
    pub fn push(&mut self, indices: impl IntoIterator<Item = u32>, scale: f64) -> usize {
        if self.offsets.is_empty() {
            self.offsets.push(0);
        }
        self.indices.extend(indices);
        self.offsets.push(self.indices.len());
        self.scales.push(scale);
        self.scales.len() - 1
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    pub fn segment(&self, s: usize) -> (&[u32], f64) {
        (
            &self.indices[self.offsets[s]..self.offsets[s + 1]],
            self.scales[s],
        )
    }

    /// Total number of indexed elements over all segments.
    pub fn total_len(&self) -> usize {
        self.indices.len()
    }
}

/// Numerically stable `log Σ exp(scale·x)` over the given values.
pub fn logsumexp(values: impl IntoIterator<Item = f64> + Clone, scale: f64) -> f64 {
    let max = values
        .clone()
        .into_iter()
        .map(|v| v * scale)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    let sum: f64 = values.into_iter().map(|v| (v * scale - max).exp()).sum();
    max + sum.ln()
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<CsrMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Leaky(Var, f64),
    Prelu(Var, Var),
    RowNormalize(Var, f64),
    PairDot(Var, Arc<Vec<(u32, u32)>>),
    SegmentLse(Var, Arc<Segments>),
    LogSumExpRows(Var),
    GatherDiff(Var, Arc<Vec<(u32, u32)>>),
    MinConst(Var, f64),
    Scale(Var, f64),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    grad: Option<Matrix>,
    op: Op,
    param: Option<String>,
}

/// Records operations for one forward pass and replays them backwards.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf; must be connected to the root when `backward` runs.
    pub fn param(&mut self, name: impl Into<String>, value: Matrix) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].param = Some(name.into());
        v
    }

    /// Non-trainable leaf (inputs, fixed data).
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Constant sparse matrix times a tape value.
    pub fn spmm(&mut self, a: &Arc<CsrMatrix>, b: Var) -> Result<Var> {
        let value = a.mul_dense(self.value(b))?;
        Ok(self.push(value, Op::SpMM(Arc::clone(a), b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let mut value = self.value(a).clone();
        for (x, y) in value.data.iter_mut().zip(&self.nodes[b.0].value.data) {
            *x -= y;
        }
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let mut value = self.value(a).clone();
        for (x, y) in value.data.iter_mut().zip(&self.nodes[b.0].value.data) {
            *x *= y;
        }
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Adds a `1 x d` row to every row of an `N x d` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, d) = self.shape(a);
        if self.shape(row) != (1, d) {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                left: (n, d),
                right: self.shape(row),
            });
        }
        let mut value = self.value(a).clone();
        let bias = self.nodes[row.0].value.data.clone();
        for r in 0..n {
            for (x, b) in value.row_mut(r).iter_mut().zip(&bias) {
                *x += b;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky(a, 0.0)
    }

    /// `x` for positive inputs, `slope·x` otherwise.
    pub fn leaky(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(value, Op::Leaky(a, slope))
    }

    /// Leaky activation with a learnable `1 x 1` slope.
    pub fn prelu(&mut self, a: Var, slope: Var) -> Result<Var> {
        if self.shape(slope) != (1, 1) {
            return Err(Error::ShapeMismatch {
                op: "prelu",
                left: self.shape(a),
                right: self.shape(slope),
            });
        }
        let s = self.scalar(slope);
        let value = self.value(a).map(|x| if x > 0.0 { x } else { s * x });
        Ok(self.push(value, Op::Prelu(a, slope)))
    }

    /// Divides each row by `sqrt(‖row‖² + eps²)`.
    pub fn row_normalize(&mut self, a: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "normalization eps must be positive, got {eps}"
            )));
        }
        let mut value = self.value(a).clone();
        for r in 0..value.rows {
            let row = value.row_mut(r);
            let norm = (dot(row, row) + eps * eps).sqrt();
            for x in row.iter_mut() {
                *x /= norm;
            }
        }
        Ok(self.push(value, Op::RowNormalize(a, eps)))
    }

    /// Cosine similarity of two `1 x d` rows with the eps-regularized norm.
    pub fn cosine(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        self.same_shape("cosine", a, b)?;
        let na = self.row_normalize(a, eps)?;
        let nb = self.row_normalize(b, eps)?;
        let prod = self.mul(na, nb)?;
        Ok(self.sum(prod))
    }

    /// Dot products between row pairs of `a`; output is `P x 1`.
    pub fn pair_dot(&mut self, a: Var, pairs: Arc<Vec<(u32, u32)>>) -> Result<Var> {
        let m = self.value(a);
        if let Some(&(i, j)) = pairs
            .iter()
            .find(|&&(i, j)| i as usize >= m.rows || j as usize >= m.rows)
        {
            return Err(Error::ShapeMismatch {
                op: "pair_dot",
                left: m.shape(),
                right: (i.max(j) as usize + 1, m.cols),
            });
        }
        let data = pairs
            .iter()
            .map(|&(i, j)| dot(m.row(i as usize), m.row(j as usize)))
            .collect();
        let value = Matrix {
            rows: pairs.len(),
            cols: 1,
            data,
        };
        Ok(self.push(value, Op::PairDot(a, pairs)))
    }

    /// For each segment `s`: `log Σ_{i∈s} exp(scale_s · x_i)` over the
    /// flattened values of `x`; output is `S x 1`.
    pub fn segment_logsumexp(&mut self, x: Var, segments: Arc<Segments>) -> Result<Var> {
        let values = &self.nodes[x.0].value.data;
        if let Some(&bad) = segments
            .indices
            .iter()
            .find(|&&i| i as usize >= values.len())
        {
            return Err(Error::ShapeMismatch {
                op: "segment_logsumexp",
                left: self.shape(x),
                right: (bad as usize + 1, 1),
            });
        }
        let data = (0..segments.len())
            .map(|s| {
                let (idx, scale) = segments.segment(s);
                logsumexp(idx.iter().map(|&i| values[i as usize]), scale)
            })
            .collect();
        let value = Matrix {
            rows: segments.len(),
            cols: 1,
            data,
        };
        Ok(self.push(value, Op::SegmentLse(x, segments)))
    }

    /// Row-wise log-sum-exp; output is `N x 1`.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let data = (0..m.rows)
            .map(|r| logsumexp(m.row(r).iter().copied(), 1.0))
            .collect();
        let value = Matrix {
            rows: m.rows,
            cols: 1,
            data,
        };
        self.push(value, Op::LogSumExpRows(a))
    }

    /// `out_t = x[a_t] - x[b_t]` over the flattened values of `x`.
    pub fn gather_diff(&mut self, x: Var, pairs: Arc<Vec<(u32, u32)>>) -> Result<Var> {
        let values = &self.nodes[x.0].value.data;
        if pairs
            .iter()
            .any(|&(a, b)| a as usize >= values.len() || b as usize >= values.len())
        {
            return Err(Error::ShapeMismatch {
                op: "gather_diff",
                left: self.shape(x),
                right: (pairs.len(), 1),
            });
        }
        let data = pairs
            .iter()
            .map(|&(a, b)| values[a as usize] - values[b as usize])
            .collect();
        let value = Matrix {
            rows: pairs.len(),
            cols: 1,
            data,
        };
        Ok(self.push(value, Op::GatherDiff(x, pairs)))
    }

    /// `min(x, c)` elementwise. The gradient flows where `x <= c`.
    pub fn min_const(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x.min(c));
        self.push(value, Op::MinConst(a, c))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s))
    }

    /// Sum of all entries as a `1 x 1` value.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        self.push(Matrix::filled(1, 1, total), Op::Sum(a))
    }

    /// Clears gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    /// Populates gradients of every node reachable from the scalar `root`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardAlreadyRun);
        }
        if self.shape(root) != (1, 1) {
            return Err(Error::NonScalarRoot(self.shape(root)));
        }
        self.backward_done = true;
        self.nodes[root.0].grad = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            self.propagate(idx, &op, &g)?;
            self.nodes[idx].grad = Some(g);
        }

        for node in &self.nodes {
            if let Some(name) = &node.param {
                if node.grad.is_none() {
                    return Err(Error::DisconnectedLeaf(name.clone()));
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Matrix) {
        let slot = &mut self.nodes[v.0].grad;
        match slot {
            Some(g) => g.add_assign(&delta),
            None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, idx: usize, op: &Op, g: &Matrix) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ga = g.matmul_t(self.value(*b))?;
                let gb = self.value(*a).t_matmul(g)?;
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
            Op::SpMM(sp, b) => {
                let gb = sp.t_mul_dense(g)?;
                self.accumulate(*b, gb);
            }
            Op::Add(a, b) => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let mut ga = g.clone();
                let mut gb = g.clone();
                for ((x, y), (ga, gb)) in va
                    .data
                    .iter()
                    .zip(&vb.data)
                    .zip(ga.data.iter_mut().zip(gb.data.iter_mut()))
                {
                    *ga *= y;
                    *gb *= x;
                }
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
            Op::AddRow(a, row) => {
                let mut grow = Matrix::zeros(1, g.cols);
                for r in 0..g.rows {
                    for (acc, x) in grow.data.iter_mut().zip(g.row(r)) {
                        *acc += x;
                    }
                }
                self.accumulate(*a, g.clone());
                self.accumulate(*row, grow);
            }
            Op::Leaky(a, slope) => {
                let input = self.value(*a);
                let mut ga = g.clone();
                for (d, &x) in ga.data.iter_mut().zip(&input.data) {
                    if x <= 0.0 {
                        *d *= slope;
                    }
                }
                self.accumulate(*a, ga);
            }
            Op::Prelu(a, slope) => {
                let s = self.scalar(*slope);
                let input = self.value(*a);
                let mut ga = g.clone();
                let mut gs = 0.0;
                for (d, &x) in ga.data.iter_mut().zip(&input.data) {
                    if x <= 0.0 {
                        gs += *d * x;
                        *d *= s;
                    }
                }
                self.accumulate(*a, ga);
                self.accumulate(*slope, Matrix::filled(1, 1, gs));
            }
            Op::RowNormalize(a, eps) => {
                let input = self.value(*a);
                let mut ga = Matrix::zeros(input.rows, input.cols);
                for r in 0..input.rows {
                    let x = input.row(r);
                    let gr = g.row(r);
                    let norm = (dot(x, x) + eps * eps).sqrt();
                    let proj = dot(x, gr) / (norm * norm * norm);
                    for ((o, &xi), &gi) in ga.row_mut(r).iter_mut().zip(x).zip(gr) {
                        *o = gi / norm - xi * proj;
                    }
                }
                self.accumulate(*a, ga);
            }
            Op::PairDot(a, pairs) => {
                let input = self.value(*a);
                let mut ga = Matrix::zeros(input.rows, input.cols);
                for (&(i, j), &w) in pairs.iter().zip(&g.data) {
                    if w == 0.0 {
                        continue;
                    }
                    let (i, j) = (i as usize, j as usize);
                    for c in 0..input.cols {
                        ga.data[i * input.cols + c] += w * input.data[j * input.cols + c];
                        ga.data[j * input.cols + c] += w * input.data[i * input.cols + c];
                    }
                }
                self.accumulate(*a, ga);
            }
            Op::SegmentLse(x, segments) => {
                let input = self.value(*x);
                let out = &self.nodes[idx].value;
                let mut gx = Matrix::zeros(input.rows, input.cols);
                for s in 0..segments.len() {
                    let w = g.data[s];
                    if w == 0.0 {
                        continue;
                    }
                    let (seg_idx, scale) = segments.segment(s);
                    let lse = out.data[s];
                    for &i in seg_idx {
                        let i = i as usize;
                        gx.data[i] += w * scale * (scale * input.data[i] - lse).exp();
                    }
                }
                self.accumulate(*x, gx);
            }
            Op::LogSumExpRows(a) => {
                let input = self.value(*a);
                let out = &self.nodes[idx].value;
                let mut ga = Matrix::zeros(input.rows, input.cols);
                for r in 0..input.rows {
                    let lse = out.data[r];
                    let w = g.data[r];
                    for (o, &x) in ga.row_mut(r).iter_mut().zip(input.row(r)) {
                        *o = w * (x - lse).exp();
                    }
                }
                self.accumulate(*a, ga);
            }
            Op::GatherDiff(x, pairs) => {
                let shape = self.shape(*x);
                let mut gx = Matrix::zeros(shape.0, shape.1);
                for (&(a, b), &w) in pairs.iter().zip(&g.data) {
                    gx.data[a as usize] += w;
                    gx.data[b as usize] -= w;
                }
                self.accumulate(*x, gx);
            }
            Op::MinConst(a, c) => {
                let input = self.value(*a);
                let mut ga = g.clone();
                for (d, &x) in ga.data.iter_mut().zip(&input.data) {
                    if x > *c {
                        *d = 0.0;
                    }
                }
                self.accumulate(*a, ga);
            }
            Op::Scale(a, s) => {
                self.accumulate(*a, g.scale(*s));
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(*a, Matrix::filled(r, c, g.data[0]));
            }
        }
        Ok(())
    }
}

/// A named trainable matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        Param {
            name: name.into(),
            value,
        }
    }
}

/// How weight decay enters the Adam update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightDecayMode {
    /// Decay term added to the gradient before the moment updates.
    #[default]
    L2,
    /// Decay applied directly to the parameters (AdamW style).
    Decoupled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay_mode: WeightDecayMode,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decay_mode: WeightDecayMode::L2,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(params: &[Param]) -> Self {
        let zeros: Vec<Matrix> = params
            .iter()
            .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut [Param],
    grads: &[Matrix],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::InvalidParameter(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: p.value.shape(),
                right: g.shape(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..g.data.len() {
            let w = p.value.data[i];
            let mut grad = g.data[i];
            if cfg.decay_mode == WeightDecayMode::L2 {
                grad += cfg.weight_decay * w;
            }
            let mi = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * grad;
            let vi = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * grad * grad;
            m.data[i] = mi;
            v.data[i] = vi;
            let m_hat = mi / bias1;
            let v_hat = vi / bias2;
            let mut updated = w - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            if cfg.decay_mode == WeightDecayMode::Decoupled {
                updated -= cfg.lr * cfg.weight_decay * w;
            }
            p.value.data[i] = updated;
        }
    }
    Ok(())
}
