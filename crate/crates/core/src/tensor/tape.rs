use std::sync::atomic::{AtomicU32, Ordering};

use super::{log_sum_exp, sigmoid, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    idx: u32,
}

impl Var {
    fn index(self) -> usize {
        self.idx as usize
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatVec(Var, Var),
    VecMat(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    MeanLast(Var),
    StdLast(Var),
    Reshape(Var),
    NormalizeLast {
        input: Var,
        eps: f64,
    },
    SqDist(Var, Var),
    EuclideanRows(Var, Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order; every input of a node precedes it.
#[derive(Debug)]
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// Splits a shape around `axis` into (outer, axis extent, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Enables or disables the per-op NaN/Inf check (on by default in debug builds).
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> Result<&Node, TensorError> {
        if v.tape != self.id {
            return Err(TensorError::DetachedTensor);
        }
        self.nodes.get(v.index()).ok_or(TensorError::DetachedTensor)
    }

    fn val(&self, v: Var) -> Result<&Tensor, TensorError> {
        self.node(v).map(|n| &n.value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.val(v).expect("variable recorded on this tape")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    /// Accumulated gradient of a leaf created with `requires_grad`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        if v.tape != self.id {
            return None;
        }
        self.leaf_grads.get(v.index())?.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(
        &mut self,
        value: Tensor,
        op: Op,
        requires_grad: bool,
        name: &'static str,
    ) -> Result<Var, TensorError> {
        if self.check_finite && !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var { tape: self.id, idx })
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.index()].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var { tape: self.id, idx }
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.val(a)?, self.val(b)?);
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("matmul", ta, tb));
        }
        let (r, k, c) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; r * c];
        let (da, db) = (ta.data(), tb.data());
        for i in 0..r {
            let orow = &mut out[i * c..(i + 1) * c];
            for p in 0..k {
                let av = da[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &db[p * c..(p + 1) * c];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        self.push(
            Tensor::new(vec![r, c], out)?,
            Op::MatMul(a, b),
            rg,
            "matmul",
        )
    }

    /// `a · x` for a matrix `a` [r × k] and vector `x` [k].
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var, TensorError> {
        let (ta, tx) = (self.val(a)?, self.val(x)?);
        if ta.rank() != 2 || tx.rank() != 1 || ta.shape()[1] != tx.shape()[0] {
            return Err(mismatch("matvec", ta, tx));
        }
        let (r, k) = (ta.shape()[0], ta.shape()[1]);
        let (da, dx) = (ta.data(), tx.data());
        let out: Vec<f64> = (0..r).map(|i| dot(&da[i * k..(i + 1) * k], dx)).collect();
        let rg = self.rg(&[a, x]);
        self.push(Tensor::vector(out), Op::MatVec(a, x), rg, "matvec")
    }

    /// `xᵀ · a` for a vector `x` [r] and matrix `a` [r × c].
    pub fn vecmat(&mut self, x: Var, a: Var) -> Result<Var, TensorError> {
        let (tx, ta) = (self.val(x)?, self.val(a)?);
        if ta.rank() != 2 || tx.rank() != 1 || ta.shape()[0] != tx.shape()[0] {
            return Err(mismatch("vecmat", tx, ta));
        }
        let (r, c) = (ta.shape()[0], ta.shape()[1]);
        let mut out = vec![0.0; c];
        for i in 0..r {
            axpy(&mut out, tx.data()[i], &ta.data()[i * c..(i + 1) * c]);
        }
        let rg = self.rg(&[x, a]);
        self.push(Tensor::vector(out), Op::VecMat(x, a), rg, "vecmat")
    }

    /// `a · bᵀ` for `a` [r × k] and `b` [c × k].
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.val(a)?, self.val(b)?);
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[1] {
            return Err(mismatch("matmul_nt", ta, tb));
        }
        let (r, k, c) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let arow = &ta.data()[i * k..(i + 1) * k];
            for j in 0..c {
                out.push(dot(arow, &tb.data()[j * k..(j + 1) * k]));
            }
        }
        let rg = self.rg(&[a, b]);
        self.push(
            Tensor::new(vec![r, c], out)?,
            Op::MatMulNt(a, b),
            rg,
            "matmul_nt",
        )
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, TensorError> {
        let (ta, tb) = (self.val(a)?, self.val(b)?);
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Add(a, b), rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Sub(a, b), rg, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Mul(a, b), rg, "mul")
    }

    /// Adds vector `v` [c] to every row of `m` [r × c].
    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var, TensorError> {
        let (tm, tv) = (self.val(m)?, self.val(v)?);
        if tm.rank() != 2 || tv.rank() != 1 || tm.shape()[1] != tv.shape()[0] {
            return Err(mismatch("add_row", tm, tv));
        }
        let c = tv.numel();
        let data = tm
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tv.data()[i % c])
            .collect();
        let t = Tensor::new(tm.shape().to_vec(), data)?;
        let rg = self.rg(&[m, v]);
        self.push(t, Op::AddRow(m, v), rg, "add_row")
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Result<Tensor, TensorError> {
        let ta = self.val(a)?;
        Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|&x| f(x)).collect(),
        )
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, TensorError> {
        let t = self.map(a, |x| x * s)?;
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, s), rg, "scale")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.map(a, sigmoid)?;
        let rg = self.rg(&[a]);
        self.push(t, Op::Sigmoid(a), rg, "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.map(a, f64::tanh)?;
        let rg = self.rg(&[a]);
        self.push(t, Op::Tanh(a), rg, "tanh")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        self.softmax_masked(a, None)
    }

    /// Softmax over the last axis of a vector, with masked-out entries receiving
    /// exactly zero weight. At least one entry must stay unmasked.
    pub fn softmax_masked(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var, TensorError> {
        let ta = self.val(a)?;
        let c = ta.last_dim();
        if let Some(m) = mask {
            if ta.rank() != 1 || m.len() != c || !m.iter().any(|&v| v) {
                return Err(TensorError::ShapeMismatch {
                    op: "softmax_masked",
                    left: ta.shape().to_vec(),
                    right: vec![m.len()],
                });
            }
        }
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(c) {
            let keep = |j: usize| mask.is_none_or(|m| m[j]);
            let mx = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| keep(j))
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (j, v) in row.iter_mut().enumerate() {
                *v = if keep(j) { (*v - mx).exp() } else { 0.0 };
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        let rg = self.rg(&[a]);
        self.push(t, Op::Softmax(a), rg, "softmax")
    }

    /// Concatenates same-rank tensors along `axis`.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = self.val(*inputs.first().ok_or(TensorError::InvalidShape {
            shape: vec![],
            len: 0,
        })?)?;
        let rank = first.rank();
        if axis >= rank {
            return Err(TensorError::IndexOutOfRange {
                op: "concat",
                index: axis,
                bound: rank,
            });
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        for &v in inputs {
            let t = self.val(v)?;
            let ok = t.rank() == rank
                && (0..rank).all(|d| d == axis || t.shape()[d] == first.shape()[d]);
            if !ok {
                return Err(mismatch("concat", first, t));
            }
            shape[axis] += t.shape()[axis];
        }
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.val(v)?;
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = self.rg(inputs);
        self.push(
            Tensor::new(shape, data)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
            "concat",
        )
    }

    /// Stacks equal-length vectors into a matrix, one vector per row.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var, TensorError> {
        let width = self
            .val(*rows.first().ok_or(TensorError::InvalidShape {
                shape: vec![],
                len: 0,
            })?)?
            .numel();
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            let t = self.val(r)?;
            if t.rank() != 1 || t.numel() != width {
                return Err(TensorError::ShapeMismatch {
                    op: "stack",
                    left: vec![width],
                    right: t.shape().to_vec(),
                });
            }
            data.extend_from_slice(t.data());
        }
        let rg = self.rg(rows);
        self.push(
            Tensor::new(vec![rows.len(), width], data)?,
            Op::Concat {
                inputs: rows.to_vec(),
                axis: 0,
            },
            rg,
            "stack",
        )
    }

    /// Contiguous range `start..start+len` along `axis`.
    pub fn slice(
        &mut self,
        a: Var,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<Var, TensorError> {
        let ta = self.val(a)?;
        if axis >= ta.rank() {
            return Err(TensorError::IndexOutOfRange {
                op: "slice",
                index: axis,
                bound: ta.rank(),
            });
        }
        let (outer, extent, inner) = split_axis(ta.shape(), axis);
        if len == 0 || start + len > extent {
            return Err(TensorError::IndexOutOfRange {
                op: "slice",
                index: start + len,
                bound: extent,
            });
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * extent * inner + start * inner;
            data.extend_from_slice(&ta.data()[base..base + len * inner]);
        }
        let mut shape = ta.shape().to_vec();
        shape[axis] = len;
        let rg = self.rg(&[a]);
        self.push(
            Tensor::new(shape, data)?,
            Op::Slice {
                input: a,
                axis,
                start,
            },
            rg,
            "slice",
        )
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, m: Var, i: usize) -> Result<Var, TensorError> {
        let tm = self.val(m)?;
        if tm.rank() != 2 {
            return Err(mismatch("row", tm, tm));
        }
        let (r, c) = (tm.shape()[0], tm.shape()[1]);
        if i >= r {
            return Err(TensorError::IndexOutOfRange {
                op: "row",
                index: i,
                bound: r,
            });
        }
        let data = tm.data()[i * c..(i + 1) * c].to_vec();
        let rg = self.rg(&[m]);
        // A row is the flat range [i*c, (i+1)*c): a slice along axis 0 of the
        // flattened matrix, which has the same backward rule.
        self.push(
            Tensor::vector(data),
            Op::Slice {
                input: m,
                axis: 0,
                start: i * c,
            },
            rg,
            "row",
        )
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let ta = self.val(a)?;
        let t = Tensor::new(shape.to_vec(), ta.data().to_vec())?;
        let rg = self.rg(&[a]);
        self.push(t, Op::Reshape(a), rg, "reshape")
    }

    /// Gathers rows of `table` [V × E] into [n × E].
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let tt = self.val(table)?;
        if tt.rank() != 2 || ids.is_empty() {
            return Err(mismatch("embedding", tt, tt));
        }
        let (v, e) = (tt.shape()[0], tt.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id >= v {
                return Err(TensorError::IndexOutOfRange {
                    op: "embedding",
                    index: id,
                    bound: v,
                });
            }
            data.extend_from_slice(&tt.data()[id * e..(id + 1) * e]);
        }
        let rg = self.rg(&[table]);
        self.push(
            Tensor::new(vec![ids.len(), e], data)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
            "embedding",
        )
    }

    fn reduce_shape(t: &Tensor) -> Vec<usize> {
        if t.rank() == 1 {
            vec![1]
        } else {
            t.shape()[..t.rank() - 1].to_vec()
        }
    }

    /// Mean over the last axis.
    pub fn mean_last(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.val(a)?;
        let c = ta.last_dim();
        let data = ta
            .data()
            .chunks(c)
            .map(|r| r.iter().sum::<f64>() / c as f64)
            .collect();
        let t = Tensor::new(Self::reduce_shape(ta), data)?;
        let rg = self.rg(&[a]);
        self.push(t, Op::MeanLast(a), rg, "mean_last")
    }

    /// Population standard deviation over the last axis, `sqrt(var + eps)`.
    pub fn std_last(&mut self, a: Var, eps: f64) -> Result<Var, TensorError> {
        let ta = self.val(a)?;
        let c = ta.last_dim();
        let data = ta.data().chunks(c).map(|r| moments(r, eps).1).collect();
        let t = Tensor::new(Self::reduce_shape(ta), data)?;
        let rg = self.rg(&[a]);
        self.push(t, Op::StdLast(a), rg, "std_last")
    }

    /// `(x - mean) / sqrt(var + eps)` over the last axis.
    pub fn normalize_last(&mut self, a: Var, eps: f64) -> Result<Var, TensorError> {
        let ta = self.val(a)?;
        let c = ta.last_dim();
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(c) {
            let (mu, sd) = moments(row, eps);
            row.iter_mut().for_each(|v| *v = (*v - mu) / sd);
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        self.push(t, Op::NormalizeLast { input: a, eps }, rg, "normalize_last")
    }

    /// `Σ (a - b)²` as a scalar.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let t = self.zip_same(a, b, "sq_dist", |x, y| (x - y) * (x - y))?;
        let s = t.data().iter().sum();
        let rg = self.rg(&[a, b]);
        self.push(Tensor::scalar(s), Op::SqDist(a, b), rg, "sq_dist")
    }

    /// Per-row Euclidean distance between two equally shaped matrices.
    pub fn euclidean_rows(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let t = self.zip_same(a, b, "euclidean_rows", |x, y| (x - y) * (x - y))?;
        let c = t.last_dim();
        let data = t
            .data()
            .chunks(c)
            .map(|r| r.iter().sum::<f64>().sqrt())
            .collect();
        let out = Tensor::new(Self::reduce_shape(&t), data)?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::EuclideanRows(a, b), rg, "euclidean_rows")
    }

    /// Sum over rows of `-log softmax(row)[target]`, stabilized by log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let tl = self.val(logits)?;
        let c = tl.last_dim();
        if tl.rows() != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: tl.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let mut total = 0.0;
        for (row, &t) in tl.data().chunks(c).zip(targets) {
            if t >= c {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: t,
                    bound: c,
                });
            }
            total += log_sum_exp(row) - row[t];
        }
        let rg = self.rg(&[logits]);
        self.push(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            rg,
            "cross_entropy",
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.val(a)?.data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg, "sum")
    }

    /// Weighted sum of scalars `Σ wᵢ·xᵢ`.
    pub fn weighted_sum(&mut self, terms: &[(f64, Var)]) -> Result<Var, TensorError> {
        let mut acc: Option<Var> = None;
        for &(w, v) in terms {
            let s = self.scale(v, w)?;
            acc = Some(match acc {
                None => s,
                Some(a) => self.add(a, s)?,
            });
        }
        acc.ok_or(TensorError::InvalidShape {
            shape: vec![],
            len: 0,
        })
    }

    /// Reverse pass from a scalar `loss`; leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let lt = self.val(loss)?;
        if lt.numel() != 1 {
            return Err(TensorError::NotScalarLoss(lt.shape().to_vec()));
        }
        let n = loss.index() + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[n - 1] = Some(vec![1.0]);
        if self.leaf_grads.len() < self.nodes.len() {
            self.leaf_grads.resize(self.nodes.len(), None);
        }
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        let needs = |v: Var| nodes[v.index()].requires_grad;
        let value = |v: Var| &nodes[v.index()].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (value(*a), value(*b));
                let (r, k, c) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if needs(*a) {
                    let ga = slot(grads, *a, r * k);
                    for i in 0..r {
                        for p in 0..k {
                            ga[i * k + p] +=
                                dot(&g[i * c..(i + 1) * c], &tb.data()[p * c..(p + 1) * c]);
                        }
                    }
                }
                if needs(*b) {
                    let gb = slot(grads, *b, k * c);
                    for i in 0..r {
                        for p in 0..k {
                            axpy(
                                &mut gb[p * c..(p + 1) * c],
                                ta.data()[i * k + p],
                                &g[i * c..(i + 1) * c],
                            );
                        }
                    }
                }
            }
            Op::MatVec(a, x) => {
                let (ta, tx) = (value(*a), value(*x));
                let (r, k) = (ta.shape()[0], ta.shape()[1]);
                if needs(*a) {
                    let ga = slot(grads, *a, r * k);
                    for i in 0..r {
                        axpy(&mut ga[i * k..(i + 1) * k], g[i], tx.data());
                    }
                }
                if needs(*x) {
                    let gx = slot(grads, *x, k);
                    for i in 0..r {
                        axpy(gx, g[i], &ta.data()[i * k..(i + 1) * k]);
                    }
                }
            }
            Op::VecMat(x, a) => {
                let (tx, ta) = (value(*x), value(*a));
                let (r, c) = (ta.shape()[0], ta.shape()[1]);
                if needs(*x) {
                    let gx = slot(grads, *x, r);
                    for i in 0..r {
                        gx[i] += dot(g, &ta.data()[i * c..(i + 1) * c]);
                    }
                }
                if needs(*a) {
                    let ga = slot(grads, *a, r * c);
                    for i in 0..r {
                        axpy(&mut ga[i * c..(i + 1) * c], tx.data()[i], g);
                    }
                }
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (value(*a), value(*b));
                let (r, k, c) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
                if needs(*a) {
                    let ga = slot(grads, *a, r * k);
                    for i in 0..r {
                        for j in 0..c {
                            axpy(
                                &mut ga[i * k..(i + 1) * k],
                                g[i * c + j],
                                &tb.data()[j * k..(j + 1) * k],
                            );
                        }
                    }
                }
                if needs(*b) {
                    let gb = slot(grads, *b, c * k);
                    for i in 0..r {
                        for j in 0..c {
                            axpy(
                                &mut gb[j * k..(j + 1) * k],
                                g[i * c + j],
                                &ta.data()[i * k..(i + 1) * k],
                            );
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        axpy(slot(grads, v, g.len()), 1.0, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    axpy(slot(grads, *a, g.len()), 1.0, g);
                }
                if needs(*b) {
                    axpy(slot(grads, *b, g.len()), -1.0, g);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (value(*a), value(*b));
                if needs(*a) {
                    let ga = slot(grads, *a, g.len());
                    for ((d, &gg), &y) in ga.iter_mut().zip(g).zip(tb.data()) {
                        *d += gg * y;
                    }
                }
                if needs(*b) {
                    let gb = slot(grads, *b, g.len());
                    for ((d, &gg), &x) in gb.iter_mut().zip(g).zip(ta.data()) {
                        *d += gg * x;
                    }
                }
            }
            Op::AddRow(m, v) => {
                if needs(*m) {
                    axpy(slot(grads, *m, g.len()), 1.0, g);
                }
                if needs(*v) {
                    let c = value(*v).numel();
                    let gv = slot(grads, *v, c);
                    for row in g.chunks(c) {
                        axpy(gv, 1.0, row);
                    }
                }
            }
            Op::Scale(a, s) => axpy(slot(grads, *a, g.len()), *s, g),
            Op::Sigmoid(a) => {
                let ga = slot(grads, *a, g.len());
                for ((d, &gg), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                    *d += gg * y * (1.0 - y);
                }
            }
            Op::Tanh(a) => {
                let ga = slot(grads, *a, g.len());
                for ((d, &gg), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                    *d += gg * (1.0 - y * y);
                }
            }
            Op::Softmax(a) => {
                let c = out.last_dim();
                let ga = slot(grads, *a, g.len());
                for ((grow, yrow), drow) in
                    g.chunks(c).zip(out.data().chunks(c)).zip(ga.chunks_mut(c))
                {
                    let s = dot(grow, yrow);
                    for ((d, &gg), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += y * (gg - s);
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                let row_len = out.shape()[*axis] * inner;
                for &v in inputs {
                    let t = value(v);
                    let chunk = if t.rank() == out.rank() {
                        t.shape()[*axis] * inner
                    } else {
                        t.numel()
                    };
                    if needs(v) {
                        let gv = slot(grads, v, t.numel());
                        for o in 0..outer {
                            axpy(
                                &mut gv[o * chunk..(o + 1) * chunk],
                                1.0,
                                &g[o * row_len + offset..o * row_len + offset + chunk],
                            );
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Slice { input, axis, start } => {
                let t = value(*input);
                let gi = slot(grads, *input, t.numel());
                if out.rank() == t.rank() {
                    let (outer, extent, inner) = split_axis(t.shape(), *axis);
                    let len = out.shape()[*axis] * inner;
                    for o in 0..outer {
                        let base = o * extent * inner + start * inner;
                        axpy(&mut gi[base..base + len], 1.0, &g[o * len..(o + 1) * len]);
                    }
                } else {
                    // Row extraction: flat offset.
                    axpy(&mut gi[*start..*start + g.len()], 1.0, g);
                }
            }
            Op::Embedding { table, ids } => {
                let e = value(*table).shape()[1];
                let n = value(*table).numel();
                let gt = slot(grads, *table, n);
                for (k, &id) in ids.iter().enumerate() {
                    axpy(&mut gt[id * e..(id + 1) * e], 1.0, &g[k * e..(k + 1) * e]);
                }
            }
            Op::MeanLast(a) => {
                let t = value(*a);
                let c = t.last_dim();
                let ga = slot(grads, *a, t.numel());
                for (drow, &gg) in ga.chunks_mut(c).zip(g) {
                    drow.iter_mut().for_each(|d| *d += gg / c as f64);
                }
            }
            Op::Reshape(a) => axpy(slot(grads, *a, g.len()), 1.0, g),
            Op::StdLast(input) => {
                let t = value(*input);
                let c = t.last_dim();
                let ga = slot(grads, *input, t.numel());
                for (((drow, xrow), &gg), &sd) in ga
                    .chunks_mut(c)
                    .zip(t.data().chunks(c))
                    .zip(g)
                    .zip(out.data())
                {
                    let mu = xrow.iter().sum::<f64>() / c as f64;
                    for (d, &x) in drow.iter_mut().zip(xrow) {
                        *d += gg * (x - mu) / (c as f64 * sd);
                    }
                }
            }
            Op::NormalizeLast { input, eps } => {
                let t = value(*input);
                let c = t.last_dim();
                let ga = slot(grads, *input, t.numel());
                for (((drow, xrow), grow), yrow) in ga
                    .chunks_mut(c)
                    .zip(t.data().chunks(c))
                    .zip(g.chunks(c))
                    .zip(out.data().chunks(c))
                {
                    let sd = moments(xrow, *eps).1;
                    let gmean = grow.iter().sum::<f64>() / c as f64;
                    let gy = dot(grow, yrow) / c as f64;
                    for ((d, &gg), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += (gg - gmean - y * gy) / sd;
                    }
                }
            }
            Op::SqDist(a, b) => {
                let (ta, tb) = (value(*a), value(*b));
                for (v, sign) in [(*a, 2.0), (*b, -2.0)] {
                    if needs(v) {
                        let gv = slot(grads, v, ta.numel());
                        for ((d, &x), &y) in gv.iter_mut().zip(ta.data()).zip(tb.data()) {
                            *d += sign * g[0] * (x - y);
                        }
                    }
                }
            }
            Op::EuclideanRows(a, b) => {
                let (ta, tb) = (value(*a), value(*b));
                let c = ta.last_dim();
                for (v, sign) in [(*a, 1.0), (*b, -1.0)] {
                    if !needs(v) {
                        continue;
                    }
                    let gv = slot(grads, v, ta.numel());
                    for (r, &dist) in out.data().iter().enumerate() {
                        if dist == 0.0 {
                            continue;
                        }
                        let k = sign * g[r] / dist;
                        for j in r * c..(r + 1) * c {
                            gv[j] += k * (ta.data()[j] - tb.data()[j]);
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets } => {
                let t = value(*logits);
                let c = t.last_dim();
                let gl = slot(grads, *logits, t.numel());
                for ((drow, row), &tgt) in gl.chunks_mut(c).zip(t.data().chunks(c)).zip(targets) {
                    let lse = log_sum_exp(row);
                    for (j, (d, &x)) in drow.iter_mut().zip(row).enumerate() {
                        let p = (x - lse).exp();
                        *d += g[0] * (p - f64::from(u8::from(j == tgt)));
                    }
                }
            }
            Op::Sum(a) => {
                let n = value(*a).numel();
                slot(grads, *a, n).iter_mut().for_each(|d| *d += g[0]);
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.index()].get_or_insert_with(|| vec![0.0; len])
}

fn moments(row: &[f64], eps: f64) -> (f64, f64) {
    let c = row.len() as f64;
    let mu = row.iter().sum::<f64>() / c;
    let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / c;
    (mu, (var + eps).sqrt())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (a, &b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}
