use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::array::{dot, matmul_nn, matmul_nt, matmul_tn, sq_dist};
use super::{AdError, Array};
use crate::math;

/// Finite stand-in for `-inf` in masked attention scores.
///
/// `exp(SENTINEL - m)` underflows to exactly zero for any finite row max `m`
/// of ordinary magnitude, and the backward pass never sees `inf * 0`.
pub const MASK_SENTINEL: f64 = -1e30;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Constant sparse matrix in CSR form, used for neighbor averaging.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from `(row, col, weight)` triplets. Duplicates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, AdError> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= rows || c >= cols {
                return Err(AdError::IndexOutOfRange {
                    op: "sparse",
                    index: if r >= rows { r } else { c },
                    bound: if r >= rows { rows } else { cols },
                });
            }
        }
        sorted.sort_by_key(|a| (a.0, a.1));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut weights: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, w) in sorted {
            if last == Some((r, c)) {
                *weights.last_mut().expect("duplicate follows an entry") += w;
                continue;
            }
            last = Some((r, c));
            indptr[r + 1] += 1;
            indices.push(c);
            weights.push(w);
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            weights,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// `(col, weight)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.weights[span].iter().copied())
    }

    pub fn to_dense(&self) -> Array {
        let mut out = Array::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, w) in self.row(r) {
                let v = out.get(r, c) + w;
                out.set(r, c, v);
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
struct SilhouetteCache {
    labels: Vec<usize>,
    sizes: Vec<usize>,
    dist: Vec<f64>,
    /// Per point: `(ds/da, ds/db, nearest other cluster)`; `None` when `s` is
    /// pinned to zero.
    partials: Vec<Option<(f64, f64, usize)>>,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulConst(Var, Array),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Recip(Var),
    Softplus(Var),
    RowSoftmax(Var),
    LogSoftmax(Var),
    MaskedFill(Var, Vec<bool>),
    LayerNorm(Var, Vec<f64>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<Option<usize>>),
    PickPerRow(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    SqDist(Var, Var),
    SpMM(Arc<SparseMatrix>, Var),
    Silhouette(Var, SilhouetteCache),
}

#[derive(Clone, Debug)]
struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run computation graph.
///
/// Every operation evaluates eagerly and appends a node, so node order is a
/// topological order and [`Tape::backward`] is a single reverse sweep.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients {
    adj: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array> {
        self.adj.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when no path reached it.
    pub fn get_or_zeros(&self, v: Var, like: &Array) -> Array {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Array::zeros(like.rows(), like.cols()))
    }
}

fn same_shape(op: &'static str, a: &Array, b: &Array) -> Result<(), AdError> {
    if a.shape() != b.shape() {
        return Err(AdError::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn zip_map(a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Array::new(a.rows(), a.cols(), data).expect("shape preserved")
}

fn accumulate(adj: &mut [Option<Array>], v: Var, g: Array) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
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

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> Option<f64> {
        self.value(v).as_scalar()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Array) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Array) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(
        &mut self,
        name: &'static str,
        value: Array,
        op: Op,
        inputs: &[Var],
    ) -> Result<Var, AdError> {
        if !value.is_finite() {
            return Err(AdError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(AdError::ShapeMismatch {
                op: "matmul",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let out = matmul_nn(av, bv);
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(AdError::ShapeMismatch {
                op: "matmul_nt",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let out = matmul_nt(av, bv);
        self.push("matmul_nt", out, Op::MatMulNt(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AdError> {
        let out = self.value(a).transpose();
        self.push("transpose", out, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        same_shape("div", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x / y);
        self.push("div", out, Op::Div(a, b), &[a, b])
    }

    /// Adds a `1 x c` row to every row of an `n x c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AdError> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(AdError::ShapeMismatch {
                op: "add_row",
                left: av.shape(),
                right: rv.shape(),
            });
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        self.push("add_row", out, Op::AddRow(a, row), &[a, row])
    }

    /// Multiplies every row of an `n x c` matrix by a `1 x c` row, elementwise.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, AdError> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(AdError::ShapeMismatch {
                op: "mul_row",
                left: av.shape(),
                right: rv.shape(),
            });
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                *o *= b;
            }
        }
        self.push("mul_row", out, Op::MulRow(a, row), &[a, row])
    }

    /// Scales row `i` of an `n x c` matrix by entry `i` of an `n x 1` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, AdError> {
        let (av, cv) = (self.value(a), self.value(col));
        if cv.cols() != 1 || cv.rows() != av.rows() {
            return Err(AdError::ShapeMismatch {
                op: "mul_col",
                left: av.shape(),
                right: cv.shape(),
            });
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            let s = cv.data()[r];
            out.row_mut(r).iter_mut().for_each(|o| *o *= s);
        }
        self.push("mul_col", out, Op::MulCol(a, col), &[a, col])
    }

    /// Divides row `i` of an `n x c` matrix by entry `i` of an `n x 1` column.
    pub fn div_col(&mut self, a: Var, col: Var) -> Result<Var, AdError> {
        let (av, cv) = (self.value(a), self.value(col));
        if cv.cols() != 1 || cv.rows() != av.rows() {
            return Err(AdError::ShapeMismatch {
                op: "div_col",
                left: av.shape(),
                right: cv.shape(),
            });
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            let s = cv.data()[r];
            out.row_mut(r).iter_mut().for_each(|o| *o /= s);
        }
        self.push("div_col", out, Op::DivCol(a, col), &[a, col])
    }

    /// Multiplies by a `1 x 1` variable.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var, AdError> {
        let sv = self.value(s).as_scalar().ok_or(AdError::ShapeMismatch {
            op: "mul_scalar",
            left: self.value(a).shape(),
            right: self.value(s).shape(),
        })?;
        let out = self.value(a).map(|x| x * sv);
        self.push("mul_scalar", out, Op::MulScalar(a, s), &[a, s])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var, AdError> {
        let out = self.value(a).map(|x| x * k);
        self.push("scale", out, Op::Scale(a, k), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, AdError> {
        self.scale(a, -1.0)
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Result<Var, AdError> {
        let out = self.value(a).map(|x| x + k);
        self.push("add_const", out, Op::AddConst(a), &[a])
    }

    /// Elementwise product with a constant array.
    pub fn mul_const(&mut self, a: Var, m: Array) -> Result<Var, AdError> {
        same_shape("mul_const", self.value(a), &m)?;
        let out = zip_map(self.value(a), &m, |x, y| x * y);
        self.push("mul_const", out, Op::MulConst(a, m), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AdError> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push("relu", out, Op::Relu(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AdError> {
        let out = self.value(a).map(math::exp);
        self.push("exp", out, Op::Exp(a), &[a])
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, AdError> {
        let out = self.value(a).map(math::ln);
        self.push("ln", out, Op::Ln(a), &[a])
    }

    pub fn recip(&mut self, a: Var) -> Result<Var, AdError> {
        let out = self.value(a).map(|x| 1.0 / x);
        self.push("recip", out, Op::Recip(a), &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, AdError> {
        let out = self.value(a).map(math::softplus);
        self.push("softplus", out, Op::Softplus(a), &[a])
    }

    /// Softmax along each row, after subtracting the row max.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var, AdError> {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = math::exp(*v - m);
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        self.push("row_softmax", out, Op::RowSoftmax(a), &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var, AdError> {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| math::exp(v - m)).sum();
            let lz = m + math::ln(z);
            row.iter_mut().for_each(|v| *v -= lz);
        }
        self.push("log_softmax", out, Op::LogSoftmax(a), &[a])
    }

    /// Replaces entries where `mask` is true with `value`; those entries get
    /// no gradient.
    pub fn masked_fill(&mut self, a: Var, mask: Vec<bool>, value: f64) -> Result<Var, AdError> {
        if mask.len() != self.value(a).len() {
            return Err(AdError::InvalidArgument {
                op: "masked_fill",
                reason: "mask length differs from array length",
            });
        }
        let mut out = self.value(a).clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            if m {
                *o = value;
            }
        }
        self.push("masked_fill", out, Op::MaskedFill(a, mask), &[a])
    }

    /// Normalizes every row to zero mean and unit variance (biased), without
    /// an affine part.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var, AdError> {
        let mut out = self.value(a).clone();
        let d = out.cols() as f64;
        let mut inv_std = Vec::with_capacity(out.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let is = 1.0 / math::sqrt(var + eps);
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        self.push("layer_norm", out, Op::LayerNorm(a, inv_std), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        let first = parts.first().ok_or(AdError::InvalidArgument {
            op: "concat_cols",
            reason: "nothing to concatenate",
        })?;
        let n = self.value(*first).rows();
        let mut total = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != n {
                return Err(AdError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.value(*first).shape(),
                    right: pv.shape(),
                });
            }
            total += pv.cols();
        }
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Array::new(n, total, data)?;
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Columns `start .. start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AdError> {
        let av = self.value(a);
        if len == 0 || start + len > av.cols() {
            return Err(AdError::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                bound: av.cols(),
            });
        }
        let out = Array::from_fn(av.rows(), len, |r, c| av.get(r, start + c));
        self.push("slice_cols", out, Op::SliceCols(a, start), &[a])
    }

    /// Row `i` of the output is row `idx[i]` of `a`, or zeros for `None`.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<Option<usize>>) -> Result<Var, AdError> {
        let av = self.value(a);
        if idx.is_empty() {
            return Err(AdError::InvalidArgument {
                op: "gather_rows",
                reason: "empty index list",
            });
        }
        let c = av.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for i in &idx {
            match *i {
                Some(i) if i >= av.rows() => {
                    return Err(AdError::IndexOutOfRange {
                        op: "gather_rows",
                        index: i,
                        bound: av.rows(),
                    })
                }
                Some(i) => data.extend_from_slice(av.row(i)),
                None => data.extend(core::iter::repeat_n(0.0, c)),
            }
        }
        let out = Array::new(idx.len(), c, data)?;
        self.push("gather_rows", out, Op::GatherRows(a, idx), &[a])
    }

    /// `out[i] = a[i, idx[i]]` as an `n x 1` column.
    pub fn pick_per_row(&mut self, a: Var, idx: Vec<usize>) -> Result<Var, AdError> {
        let av = self.value(a);
        if idx.len() != av.rows() {
            return Err(AdError::InvalidArgument {
                op: "pick_per_row",
                reason: "one index per row required",
            });
        }
        let mut data = Vec::with_capacity(idx.len());
        for (r, &c) in idx.iter().enumerate() {
            if c >= av.cols() {
                return Err(AdError::IndexOutOfRange {
                    op: "pick_per_row",
                    index: c,
                    bound: av.cols(),
                });
            }
            data.push(av.get(r, c));
        }
        let out = Array::new(idx.len(), 1, data)?;
        self.push("pick_per_row", out, Op::PickPerRow(a, idx), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AdError> {
        let out = Array::scalar(self.value(a).sum());
        self.push("sum", out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AdError> {
        let av = self.value(a);
        let out = Array::scalar(av.sum() / av.len() as f64);
        self.push("mean", out, Op::Mean(a), &[a])
    }

    /// Row sums as an `n x 1` column.
    pub fn row_sum(&mut self, a: Var) -> Result<Var, AdError> {
        let av = self.value(a);
        let data = (0..av.rows()).map(|r| av.row(r).iter().sum()).collect();
        let out = Array::new(av.rows(), 1, data)?;
        self.push("row_sum", out, Op::RowSum(a), &[a])
    }

    /// Pairwise squared Euclidean distances between rows of `x` (`n x d`) and
    /// rows of `c` (`k x d`), as an `n x k` matrix.
    pub fn sq_dist(&mut self, x: Var, c: Var) -> Result<Var, AdError> {
        let (xv, cv) = (self.value(x), self.value(c));
        if xv.cols() != cv.cols() {
            return Err(AdError::ShapeMismatch {
                op: "sq_dist",
                left: xv.shape(),
                right: cv.shape(),
            });
        }
        let out = Array::from_fn(xv.rows(), cv.rows(), |i, j| sq_dist(xv.row(i), cv.row(j)));
        self.push("sq_dist", out, Op::SqDist(x, c), &[x, c])
    }

    /// Sparse-dense product `m · a` with a constant sparse matrix.
    pub fn spmm(&mut self, m: Arc<SparseMatrix>, a: Var) -> Result<Var, AdError> {
        let av = self.value(a);
        if m.cols() != av.rows() {
            return Err(AdError::ShapeMismatch {
                op: "spmm",
                left: [m.rows(), m.cols()],
                right: av.shape(),
            });
        }
        let c = av.cols();
        let mut out = Array::zeros(m.rows(), c);
        for r in 0..m.rows() {
            for (j, w) in m.row(r) {
                let src = av.row(j);
                for (o, s) in out.row_mut(r).iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        self.push("spmm", out, Op::SpMM(m, a), &[a])
    }

    /// Per-point silhouette values of the rows of `x` under fixed `labels`,
    /// as an `n x 1` column. Euclidean distances.
    ///
    /// Points in singleton clusters and points with `a = b = 0` get `0`.
    pub fn silhouette(&mut self, x: Var, labels: &[usize]) -> Result<Var, AdError> {
        let xv = self.value(x);
        let n = xv.rows();
        if labels.len() != n {
            return Err(AdError::InvalidArgument {
                op: "silhouette",
                reason: "one label per row required",
            });
        }
        let (dense, k) = compress_labels(labels);
        if k < 2 {
            return Err(AdError::InvalidArgument {
                op: "silhouette",
                reason: "at least two non-empty clusters required",
            });
        }
        let mut sizes = vec![0usize; k];
        for &l in &dense {
            sizes[l] += 1;
        }
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = math::sqrt(sq_dist(xv.row(i), xv.row(j)));
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        let mut values = Vec::with_capacity(n);
        let mut partials = Vec::with_capacity(n);
        let mut sums = vec![0.0; k];
        for i in 0..n {
            sums.iter_mut().for_each(|s| *s = 0.0);
            for j in 0..n {
                sums[dense[j]] += dist[i * n + j];
            }
            let own = dense[i];
            if sizes[own] < 2 {
                values.push(0.0);
                partials.push(None);
                continue;
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let mut b = f64::INFINITY;
            let mut nearest = own;
            for c in 0..k {
                if c != own && sizes[c] > 0 {
                    let m = sums[c] / sizes[c] as f64;
                    if m < b {
                        b = m;
                        nearest = c;
                    }
                }
            }
            let denom = a.max(b);
            if denom == 0.0 {
                values.push(0.0);
                partials.push(None);
                continue;
            }
            let s = (b - a) / denom;
            let (dsda, dsdb) = if a < b {
                (-1.0 / b, a / (b * b))
            } else {
                (-b / (a * a), 1.0 / a)
            };
            values.push(s);
            partials.push(Some((dsda, dsdb, nearest)));
        }
        let out = Array::new(n, 1, values)?;
        let cache = SilhouetteCache {
            labels: dense,
            sizes,
            dist,
            partials,
        };
        self.push("silhouette", out, Op::Silhouette(x, cache), &[x])
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients, AdError> {
        let ov = self.value(out);
        if ov.len() != 1 {
            return Err(AdError::NonScalar { shape: ov.shape() });
        }
        let mut adj: Vec<Option<Array>> = vec![None; out.0 + 1];
        adj[out.0] = Some(Array::scalar(1.0));
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(node, &g, &mut adj);
            adj[i] = Some(g);
        }
        Ok(Gradients { adj })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Array, adj: &mut [Option<Array>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    accumulate(adj, *a, matmul_nt(g, self.value(*b)));
                }
                if self.needs(*b) {
                    accumulate(adj, *b, matmul_tn(self.value(*a), g));
                }
            }
            Op::MatMulNt(a, b) => {
                if self.needs(*a) {
                    accumulate(adj, *a, matmul_nn(g, self.value(*b)));
                }
                if self.needs(*b) {
                    accumulate(adj, *b, matmul_tn(g, self.value(*a)));
                }
            }
            Op::Transpose(a) => accumulate(adj, *a, g.transpose()),
            Op::Add(a, b) => {
                if self.needs(*a) {
                    accumulate(adj, *a, g.clone());
                }
                if self.needs(*b) {
                    accumulate(adj, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accumulate(adj, *a, g.clone());
                }
                if self.needs(*b) {
                    accumulate(adj, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    accumulate(adj, *a, zip_map(g, self.value(*b), |x, y| x * y));
                }
                if self.needs(*b) {
                    accumulate(adj, *b, zip_map(g, self.value(*a), |x, y| x * y));
                }
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                if self.needs(*a) {
                    accumulate(adj, *a, zip_map(g, bv, |x, y| x / y));
                }
                if self.needs(*b) {
                    // d(a/b)/db = -y / b
                    let gy = zip_map(g, y, |x, y| x * y);
                    accumulate(adj, *b, zip_map(&gy, bv, |x, y| -x / y));
                }
            }
            Op::AddRow(a, r) => {
                if self.needs(*a) {
                    accumulate(adj, *a, g.clone());
                }
                if self.needs(*r) {
                    accumulate(adj, *r, col_sums(g));
                }
            }
            Op::MulRow(a, r) => {
                let (av, rv) = (self.value(*a), self.value(*r));
                if self.needs(*a) {
                    let mut ga = g.clone();
                    for i in 0..ga.rows() {
                        for (o, s) in ga.row_mut(i).iter_mut().zip(rv.data()) {
                            *o *= s;
                        }
                    }
                    accumulate(adj, *a, ga);
                }
                if self.needs(*r) {
                    accumulate(adj, *r, col_sums(&zip_map(g, av, |x, y| x * y)));
                }
            }
            Op::MulCol(a, c) => {
                let (av, cv) = (self.value(*a), self.value(*c));
                if self.needs(*a) {
                    let mut ga = g.clone();
                    for i in 0..ga.rows() {
                        let s = cv.data()[i];
                        ga.row_mut(i).iter_mut().for_each(|o| *o *= s);
                    }
                    accumulate(adj, *a, ga);
                }
                if self.needs(*c) {
                    let data = (0..g.rows()).map(|i| dot(g.row(i), av.row(i))).collect();
                    accumulate(adj, *c, Array::new(g.rows(), 1, data).expect("column"));
                }
            }
            Op::DivCol(a, c) => {
                let cv = self.value(*c);
                if self.needs(*a) {
                    let mut ga = g.clone();
                    for i in 0..ga.rows() {
                        let s = cv.data()[i];
                        ga.row_mut(i).iter_mut().for_each(|o| *o /= s);
                    }
                    accumulate(adj, *a, ga);
                }
                if self.needs(*c) {
                    let data = (0..g.rows())
                        .map(|i| -dot(g.row(i), y.row(i)) / cv.data()[i])
                        .collect();
                    accumulate(adj, *c, Array::new(g.rows(), 1, data).expect("column"));
                }
            }
            Op::MulScalar(a, s) => {
                let sv = self.value(*s).data()[0];
                if self.needs(*a) {
                    accumulate(adj, *a, g.map(|v| v * sv));
                }
                if self.needs(*s) {
                    accumulate(adj, *s, Array::scalar(dot(g.data(), self.value(*a).data())));
                }
            }
            Op::Scale(a, k) => accumulate(adj, *a, g.map(|v| v * k)),
            Op::AddConst(a) => accumulate(adj, *a, g.clone()),
            Op::MulConst(a, m) => accumulate(adj, *a, zip_map(g, m, |x, y| x * y)),
            Op::Relu(a) => {
                let av = self.value(*a);
                accumulate(
                    adj,
                    *a,
                    zip_map(g, av, |x, v| if v > 0.0 { x } else { 0.0 }),
                );
            }
            Op::Exp(a) => accumulate(adj, *a, zip_map(g, y, |x, e| x * e)),
            Op::Ln(a) => accumulate(adj, *a, zip_map(g, self.value(*a), |x, v| x / v)),
            Op::Recip(a) => accumulate(adj, *a, zip_map(g, y, |x, r| -x * r * r)),
            Op::Softplus(a) => accumulate(
                adj,
                *a,
                zip_map(g, self.value(*a), |x, v| x * math::sigmoid(v)),
            ),
            Op::RowSoftmax(a) => {
                let mut ga = Array::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let (gr, yr) = (g.row(i), y.row(i));
                    let s = dot(gr, yr);
                    for ((o, gv), yv) in ga.row_mut(i).iter_mut().zip(gr).zip(yr) {
                        *o = yv * (gv - s);
                    }
                }
                accumulate(adj, *a, ga);
            }
            Op::LogSoftmax(a) => {
                let mut ga = Array::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let (gr, yr) = (g.row(i), y.row(i));
                    let s: f64 = gr.iter().sum();
                    for ((o, gv), yv) in ga.row_mut(i).iter_mut().zip(gr).zip(yr) {
                        *o = gv - math::exp(*yv) * s;
                    }
                }
                accumulate(adj, *a, ga);
            }
            Op::MaskedFill(a, mask) => {
                let mut ga = g.clone();
                for (o, &m) in ga.data_mut().iter_mut().zip(mask) {
                    if m {
                        *o = 0.0;
                    }
                }
                accumulate(adj, *a, ga);
            }
            Op::LayerNorm(a, inv_std) => {
                let d = g.cols() as f64;
                let mut ga = Array::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let (gr, yr) = (g.row(i), y.row(i));
                    let mg = gr.iter().sum::<f64>() / d;
                    let mgy = dot(gr, yr) / d;
                    let is = inv_std[i];
                    for ((o, gv), yv) in ga.row_mut(i).iter_mut().zip(gr).zip(yr) {
                        *o = is * (gv - mg - yv * mgy);
                    }
                }
                accumulate(adj, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        let gp = Array::from_fn(g.rows(), w, |r, c| g.get(r, offset + c));
                        accumulate(adj, p, gp);
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let mut ga = Array::zeros(av.rows(), av.cols());
                for r in 0..g.rows() {
                    ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(adj, *a, ga);
            }
            Op::GatherRows(a, idx) => {
                let av = self.value(*a);
                let mut ga = Array::zeros(av.rows(), av.cols());
                for (r, i) in idx.iter().enumerate() {
                    if let Some(i) = *i {
                        for (o, v) in ga.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                accumulate(adj, *a, ga);
            }
            Op::PickPerRow(a, idx) => {
                let av = self.value(*a);
                let mut ga = Array::zeros(av.rows(), av.cols());
                for (r, &c) in idx.iter().enumerate() {
                    ga.set(r, c, g.data()[r]);
                }
                accumulate(adj, *a, ga);
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                accumulate(adj, *a, Array::filled(av.rows(), av.cols(), g.data()[0]));
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let v = g.data()[0] / av.len() as f64;
                accumulate(adj, *a, Array::filled(av.rows(), av.cols(), v));
            }
            Op::RowSum(a) => {
                let av = self.value(*a);
                accumulate(
                    adj,
                    *a,
                    Array::from_fn(av.rows(), av.cols(), |r, _| g.data()[r]),
                );
            }
            Op::SqDist(x, c) => {
                let (xv, cv) = (self.value(*x), self.value(*c));
                let d = xv.cols();
                let mut gx = Array::zeros(xv.rows(), d);
                let mut gc = Array::zeros(cv.rows(), d);
                for i in 0..xv.rows() {
                    for j in 0..cv.rows() {
                        let w = 2.0 * g.get(i, j);
                        if w == 0.0 {
                            continue;
                        }
                        for p in 0..d {
                            let diff = w * (xv.get(i, p) - cv.get(j, p));
                            gx.data_mut()[i * d + p] += diff;
                            gc.data_mut()[j * d + p] -= diff;
                        }
                    }
                }
                if self.needs(*x) {
                    accumulate(adj, *x, gx);
                }
                if self.needs(*c) {
                    accumulate(adj, *c, gc);
                }
            }
            Op::SpMM(m, a) => {
                let av = self.value(*a);
                let mut ga = Array::zeros(av.rows(), av.cols());
                for r in 0..m.rows() {
                    for (j, w) in m.row(r) {
                        for (o, v) in ga.row_mut(j).iter_mut().zip(g.row(r)) {
                            *o += w * v;
                        }
                    }
                }
                accumulate(adj, *a, ga);
            }
            Op::Silhouette(x, cache) => {
                let xv = self.value(*x);
                let n = xv.rows();
                let d = xv.cols();
                let mut gx = Array::zeros(n, d);
                for i in 0..n {
                    let Some((dsda, dsdb, nearest)) = cache.partials[i] else {
                        continue;
                    };
                    let gi = g.data()[i];
                    if gi == 0.0 {
                        continue;
                    }
                    let own = cache.labels[i];
                    let wa = gi * dsda / (cache.sizes[own] - 1) as f64;
                    let wb = gi * dsdb / cache.sizes[nearest] as f64;
                    for j in 0..n {
                        let lj = cache.labels[j];
                        let w = if j != i && lj == own {
                            wa
                        } else if lj == nearest {
                            wb
                        } else {
                            continue;
                        };
                        let dij = cache.dist[i * n + j];
                        if dij == 0.0 {
                            continue;
                        }
                        let k = w / dij;
                        for p in 0..d {
                            let u = k * (xv.get(i, p) - xv.get(j, p));
                            gx.data_mut()[i * d + p] += u;
                            gx.data_mut()[j * d + p] -= u;
                        }
                    }
                }
                accumulate(adj, *x, gx);
            }
        }
    }
}

fn col_sums(g: &Array) -> Array {
    let mut out = Array::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

/// Maps arbitrary label ids onto `0..k` in order of first appearance.
pub(crate) fn compress_labels(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut seen: alloc::collections::BTreeMap<usize, usize> = alloc::collections::BTreeMap::new();
    let mut out = Vec::with_capacity(labels.len());
    for &l in labels {
        let next = seen.len();
        out.push(*seen.entry(l).or_insert(next));
    }
    let k = seen.len();
    (out, k)
}
