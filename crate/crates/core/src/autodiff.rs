//! Define-by-run reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] owns every value produced during one forward pass. [`Tensor`]
//! is a lightweight handle (node id + shape) into that tape. Every primitive
//! checks shapes, evaluates eagerly, rejects non-finite results and records
//! enough information for [`Tape::backward`] to propagate gradients.
//!
//! Binary element-wise primitives broadcast their *second* operand when it
//! is `1x1`, `rows x 1` or `1 x cols`.

use std::cell::{Ref, RefCell};
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array2, Axis, Zip};
use thiserror::Error;

pub type Matrix = Array2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("log of non-positive value {0}")]
    LogDomain(f64),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("loss must be 1x1, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("tensor belongs to a different tape")]
    ForeignTensor,
    #[error("empty tensor ({0}x{1})")]
    Empty(usize, usize),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    id: usize,
    tape: u64,
    rows: usize,
    cols: usize,
}

impl Tensor {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn node_id(&self) -> usize {
        self.id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Full,
    Scalar,
    Col,
    Row,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize, Bcast),
    Sub(usize, usize, Bcast),
    Mul(usize, usize, Bcast),
    Div(usize, usize, Bcast),
    Scale(usize, f64),
    Shift(usize),
    Relu(usize),
    RowSoftmax(usize),
    MeanOverRows(usize),
    MeanOverCols(usize),
    RowSum(usize),
    HConcat(Vec<usize>),
    SumAll(usize),
    FrobeniusSq(usize),
    Log(usize),
    Exp(usize),
    Sqrt(usize),
    Powf(usize, f64),
    Clamp(usize, f64, f64),
    SliceColumns(usize, usize),
    MaxAll(usize, (usize, usize)),
    MinAll(usize, (usize, usize)),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Recorded forward computation. One tape per forward pass.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss, indexed by tensor.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient w.r.t. `t`, or `None` when `t` does not require gradients or
    /// the loss does not depend on it.
    pub fn get(&self, t: &Tensor) -> Option<&Matrix> {
        if t.tape != self.tape {
            return None;
        }
        self.grads.get(t.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, t: &Tensor) -> Option<Matrix> {
        if t.tape != self.tape {
            return None;
        }
        self.grads.get_mut(t.id).and_then(|g| g.take())
    }
}

fn ensure_finite(op: &'static str, m: &Matrix) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite(op))
    }
}

fn bcast_kind(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Result<Bcast> {
    match rhs {
        r if r == lhs => Ok(Bcast::Full),
        (1, 1) => Ok(Bcast::Scalar),
        (r, 1) if r == lhs.0 => Ok(Bcast::Col),
        (1, c) if c == lhs.1 => Ok(Bcast::Row),
        _ => Err(TensorError::ShapeMismatch { op, lhs, rhs }),
    }
}

fn broadcast_to(b: &Matrix, shape: (usize, usize)) -> Matrix {
    b.broadcast(shape)
        .expect("broadcast shape validated at record time")
        .to_owned()
}

fn reduce_to(g: Matrix, kind: Bcast) -> Matrix {
    match kind {
        Bcast::Full => g,
        Bcast::Scalar => Array2::from_elem((1, 1), g.sum()),
        Bcast::Col => g.sum_axis(Axis(1)).insert_axis(Axis(1)),
        Bcast::Row => g.sum_axis(Axis(0)).insert_axis(Axis(0)),
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, op: Op, requires_grad: bool) -> Tensor {
        let (rows, cols) = value.dim();
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Tensor {
            id,
            tape: self.id,
            rows,
            cols,
        }
    }

    fn check(&self, t: &Tensor) -> Result<()> {
        if t.tape == self.id {
            Ok(())
        } else {
            Err(TensorError::ForeignTensor)
        }
    }

    fn needs_grad(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Creates a leaf. `requires_grad` leaves receive gradients in
    /// [`Tape::backward`].
    pub fn leaf(&self, value: Matrix, requires_grad: bool) -> Result<Tensor> {
        let (r, c) = value.dim();
        if r == 0 || c == 0 {
            return Err(TensorError::Empty(r, c));
        }
        ensure_finite("leaf", &value)?;
        Ok(self.push(value, Op::Leaf, requires_grad))
    }

    pub fn constant(&self, value: Matrix) -> Result<Tensor> {
        self.leaf(value, false)
    }

    pub fn variable(&self, value: Matrix) -> Result<Tensor> {
        self.leaf(value, true)
    }

    pub fn scalar(&self, v: f64) -> Result<Tensor> {
        self.constant(Array2::from_elem((1, 1), v))
    }

    /// Borrow the forward value of `t`.
    pub fn value(&self, t: &Tensor) -> Ref<'_, Matrix> {
        assert_eq!(t.tape, self.id, "tensor belongs to a different tape");
        Ref::map(self.nodes.borrow(), |n| &n[t.id].value)
    }

    pub fn to_matrix(&self, t: &Tensor) -> Matrix {
        self.value(t).clone()
    }

    pub fn item(&self, t: &Tensor) -> f64 {
        self.value(t)[[0, 0]]
    }

    pub fn requires_grad(&self, t: &Tensor) -> bool {
        self.nodes.borrow()[t.id].requires_grad
    }

    fn record(&self, op_name: &'static str, value: Matrix, op: Op, inputs: &[usize]) -> Result<Tensor> {
        ensure_finite(op_name, &value)?;
        let rg = self.needs_grad(inputs);
        Ok(self.push(value, op, rg))
    }

    fn unary<F>(&self, name: &'static str, a: &Tensor, f: F, op: Op) -> Result<Tensor>
    where
        F: FnOnce(&Matrix) -> Matrix,
    {
        self.check(a)?;
        let v = f(&self.value(a));
        self.record(name, v, op, &[a.id])
    }

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.check(a)?;
        self.check(b)?;
        if a.cols != b.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let v = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.dot(&nodes[b.id].value)
        };
        self.record("matmul", v, Op::MatMul(a.id, b.id), &[a.id, b.id])
    }

    pub fn transpose(&self, a: &Tensor) -> Result<Tensor> {
        self.unary("transpose", a, |m| m.t().to_owned(), Op::Transpose(a.id))
    }

    fn binary<F>(&self, name: &'static str, a: &Tensor, b: &Tensor, f: F, mk: fn(usize, usize, Bcast) -> Op) -> Result<Tensor>
    where
        F: Fn(f64, f64) -> f64,
    {
        self.check(a)?;
        self.check(b)?;
        let kind = bcast_kind(name, a.shape(), b.shape())?;
        let v = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.id].value;
            let bv = nodes[b.id]
                .value
                .broadcast(av.dim())
                .expect("broadcast validated");
            let mut out = av.clone();
            Zip::from(&mut out).and(&bv).for_each(|o, &y| *o = f(*o, y));
            out
        };
        self.record(name, v, mk(a.id, b.id, kind), &[a.id, b.id])
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("subtract", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("multiply", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("divide", a, b, |x, y| x / y, Op::Div)
    }

    pub fn scale(&self, a: &Tensor, c: f64) -> Result<Tensor> {
        self.unary("scale", a, |m| m * c, Op::Scale(a.id, c))
    }

    /// Adds the constant `c` to every entry.
    pub fn shift(&self, a: &Tensor, c: f64) -> Result<Tensor> {
        self.unary("shift", a, |m| m + c, Op::Shift(a.id))
    }

    pub fn relu(&self, a: &Tensor) -> Result<Tensor> {
        self.unary("relu", a, |m| m.mapv(|v| v.max(0.0)), Op::Relu(a.id))
    }

    pub fn row_softmax(&self, a: &Tensor) -> Result<Tensor> {
        self.unary("row_softmax", a, softmax_rows, Op::RowSoftmax(a.id))
    }

    /// Mean taken over the rows: `r x c -> 1 x c`.
    pub fn mean_over_rows(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(
            "mean_over_rows",
            a,
            |m| m.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0)),
            Op::MeanOverRows(a.id),
        )
    }

    /// Mean taken over the columns: `r x c -> r x 1`.
    pub fn mean_over_cols(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(
            "mean_over_cols",
            a,
            |m| m.mean_axis(Axis(1)).expect("non-empty").insert_axis(Axis(1)),
            Op::MeanOverCols(a.id),
        )
    }

    /// `r x c -> r x 1` row sums.
    pub fn row_sum(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(
            "row_sum",
            a,
            |m| m.sum_axis(Axis(1)).insert_axis(Axis(1)),
            Op::RowSum(a.id),
        )
    }

    pub fn hconcat(&self, parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("hconcat of zero tensors".into()))?;
        for p in parts {
            self.check(p)?;
            if p.rows != first.rows {
                return Err(TensorError::ShapeMismatch {
                    op: "hconcat",
                    lhs: first.shape(),
                    rhs: p.shape(),
                });
            }
        }
        let v = {
            let nodes = self.nodes.borrow();
            let views: Vec<_> = parts.iter().map(|p| nodes[p.id].value.view()).collect();
            ndarray::concatenate(Axis(1), &views).expect("rows checked")
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        self.record("hconcat", v, Op::HConcat(ids.clone()), &ids)
    }

    pub fn sum_all(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(
            "sum_all",
            a,
            |m| Array2::from_elem((1, 1), m.sum()),
            Op::SumAll(a.id),
        )
    }

    /// Squared Frobenius norm.
    pub fn frobenius_sq(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(
            "frobenius_sq",
            a,
            |m| Array2::from_elem((1, 1), m.iter().map(|v| v * v).sum()),
            Op::FrobeniusSq(a.id),
        )
    }

    /// Natural log. Non-positive inputs are an error; clamp first.
    pub fn log(&self, a: &Tensor) -> Result<Tensor> {
        self.check(a)?;
        if let Some(bad) = self.value(a).iter().find(|v| **v <= 0.0) {
            return Err(TensorError::LogDomain(*bad));
        }
        self.unary("log", a, |m| m.mapv(f64::ln), Op::Log(a.id))
    }

    pub fn exp(&self, a: &Tensor) -> Result<Tensor> {
        self.unary("exp", a, |m| m.mapv(f64::exp), Op::Exp(a.id))
    }

    /// Square root; the backward pass uses a zero subgradient at 0.
    pub fn sqrt(&self, a: &Tensor) -> Result<Tensor> {
        self.check(a)?;
        if let Some(bad) = self.value(a).iter().find(|v| **v < 0.0) {
            return Err(TensorError::Invalid(format!("sqrt of negative value {bad}")));
        }
        self.unary("sqrt", a, |m| m.mapv(f64::sqrt), Op::Sqrt(a.id))
    }

    pub fn powf(&self, a: &Tensor, e: f64) -> Result<Tensor> {
        self.unary("powf", a, |m| m.mapv(|v| v.powf(e)), Op::Powf(a.id, e))
    }

    pub fn clamp(&self, a: &Tensor, lo: f64, hi: f64) -> Result<Tensor> {
        if lo > hi {
            return Err(TensorError::Invalid(format!("clamp bounds {lo} > {hi}")));
        }
        self.unary(
            "clamp",
            a,
            |m| m.mapv(|v| v.clamp(lo, hi)),
            Op::Clamp(a.id, lo, hi),
        )
    }

    /// Columns `start..end`.
    pub fn slice_columns(&self, a: &Tensor, start: usize, end: usize) -> Result<Tensor> {
        self.check(a)?;
        if start >= end || end > a.cols {
            return Err(TensorError::Invalid(format!(
                "column slice {start}..{end} out of range for {} columns",
                a.cols
            )));
        }
        self.unary(
            "slice_columns",
            a,
            |m| m.slice(s![.., start..end]).to_owned(),
            Op::SliceColumns(a.id, start),
        )
    }

    fn extreme(&self, a: &Tensor, max: bool) -> Result<Tensor> {
        self.check(a)?;
        let (idx, v) = {
            let val = self.value(a);
            let mut best = ((0, 0), val[[0, 0]]);
            for ((i, j), &x) in val.indexed_iter() {
                if (max && x > best.1) || (!max && x < best.1) {
                    best = ((i, j), x);
                }
            }
            best
        };
        let op = if max { Op::MaxAll(a.id, idx) } else { Op::MinAll(a.id, idx) };
        self.record(
            if max { "max_all" } else { "min_all" },
            Array2::from_elem((1, 1), v),
            op,
            &[a.id],
        )
    }

    /// Largest entry (gradient routed to the first maximiser).
    pub fn max_all(&self, a: &Tensor) -> Result<Tensor> {
        self.extreme(a, true)
    }

    pub fn min_all(&self, a: &Tensor) -> Result<Tensor> {
        self.extreme(a, false)
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: &Tensor) -> Result<Gradients> {
        self.check(loss)?;
        if loss.shape() != (1, 1) {
            return Err(TensorError::NotScalar(loss.shape()));
        }
        let nodes = self.nodes.into_inner();
        let mut grads: Vec<Option<Matrix>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.id).rev() {
            if !nodes[id].requires_grad {
                continue;
            }
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let val = |i: usize| &nodes[i].value;
            let wants = |i: usize| nodes[i].requires_grad;
            match &nodes[id].op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if wants(*a) {
                        accumulate(&mut grads[*a], g.dot(&val(*b).t()));
                    }
                    if wants(*b) {
                        accumulate(&mut grads[*b], val(*a).t().dot(&g));
                    }
                }
                Op::Transpose(a) => accumulate(&mut grads[*a], g.t().to_owned()),
                Op::Add(a, b, k) => {
                    if wants(*b) {
                        accumulate(&mut grads[*b], reduce_to(g.clone(), *k));
                    }
                    if wants(*a) {
                        accumulate(&mut grads[*a], g);
                    }
                }
                Op::Sub(a, b, k) => {
                    if wants(*b) {
                        accumulate(&mut grads[*b], reduce_to(-&g, *k));
                    }
                    if wants(*a) {
                        accumulate(&mut grads[*a], g);
                    }
                }
                Op::Mul(a, b, k) => {
                    if wants(*a) {
                        let bb = broadcast_to(val(*b), g.dim());
                        accumulate(&mut grads[*a], &g * &bb);
                    }
                    if wants(*b) {
                        accumulate(&mut grads[*b], reduce_to(&g * val(*a), *k));
                    }
                }
                Op::Div(a, b, k) => {
                    let bb = broadcast_to(val(*b), g.dim());
                    if wants(*a) {
                        accumulate(&mut grads[*a], &g / &bb);
                    }
                    if wants(*b) {
                        let mut d = -&g * val(*a);
                        Zip::from(&mut d).and(&bb).for_each(|x, &y| *x /= y * y);
                        accumulate(&mut grads[*b], reduce_to(d, *k));
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads[*a], g * *c),
                Op::Shift(a) => accumulate(&mut grads[*a], g),
                Op::Relu(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(val(*a))
                        .for_each(|x, &v| if v <= 0.0 { *x = 0.0 });
                    accumulate(&mut grads[*a], d);
                }
                Op::RowSoftmax(a) => {
                    let y = val(id);
                    let mut d = &g * y;
                    let dots = d.sum_axis(Axis(1));
                    for (i, mut row) in d.rows_mut().into_iter().enumerate() {
                        let yi = y.row(i);
                        Zip::from(&mut row).and(&yi).for_each(|x, &yy| *x -= yy * dots[i]);
                    }
                    accumulate(&mut grads[*a], d);
                }
                Op::MeanOverRows(a) => {
                    let r = val(*a).nrows() as f64;
                    accumulate(&mut grads[*a], broadcast_to(&(g / r), val(*a).dim()));
                }
                Op::MeanOverCols(a) => {
                    let c = val(*a).ncols() as f64;
                    accumulate(&mut grads[*a], broadcast_to(&(g / c), val(*a).dim()));
                }
                Op::RowSum(a) => accumulate(&mut grads[*a], broadcast_to(&g, val(*a).dim())),
                Op::HConcat(ids) => {
                    let mut off = 0;
                    for &p in ids {
                        let w = val(p).ncols();
                        if wants(p) {
                            accumulate(&mut grads[p], g.slice(s![.., off..off + w]).to_owned());
                        }
                        off += w;
                    }
                }
                Op::SumAll(a) => {
                    accumulate(&mut grads[*a], Array2::from_elem(val(*a).dim(), g[[0, 0]]))
                }
                Op::FrobeniusSq(a) => accumulate(&mut grads[*a], val(*a) * (2.0 * g[[0, 0]])),
                Op::Log(a) => accumulate(&mut grads[*a], &g / val(*a)),
                Op::Exp(a) => accumulate(&mut grads[*a], &g * val(id)),
                Op::Sqrt(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(val(id)).for_each(|x, &y| {
                        *x = if y > 0.0 { *x / (2.0 * y) } else { 0.0 };
                    });
                    accumulate(&mut grads[*a], d);
                }
                Op::Powf(a, e) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(val(*a))
                        .for_each(|x, &v| *x *= e * v.powf(e - 1.0));
                    accumulate(&mut grads[*a], d);
                }
                Op::Clamp(a, lo, hi) => {
                    let mut d = g;
                    Zip::from(&mut d).and(val(*a)).for_each(|x, &v| {
                        if v < *lo || v > *hi {
                            *x = 0.0;
                        }
                    });
                    accumulate(&mut grads[*a], d);
                }
                Op::SliceColumns(a, start) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    let w = g.ncols();
                    d.slice_mut(s![.., *start..*start + w]).assign(&g);
                    accumulate(&mut grads[*a], d);
                }
                Op::MaxAll(a, idx) | Op::MinAll(a, idx) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    d[*idx] = g[[0, 0]];
                    accumulate(&mut grads[*a], d);
                }
            }
        }

        // Only leaves keep their gradients.
        for (id, node) in nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                grads[id] = None;
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

/// Central-difference gradient of `f` at `at`.
pub fn finite_difference_gradient<F>(f: F, at: &Matrix, h: f64) -> Result<Matrix>
where
    F: Fn(&Matrix) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(TensorError::Invalid(format!("step h must be positive, got {h}")));
    }
    let mut x = at.clone();
    let mut out = Array2::zeros(at.dim());
    for idx in 0..at.len() {
        let (i, j) = (idx / at.ncols(), idx % at.ncols());
        let orig = x[[i, j]];
        x[[i, j]] = orig + h;
        let fp = f(&x)?;
        x[[i, j]] = orig - h;
        let fm = f(&x)?;
        x[[i, j]] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(TensorError::NonFinite("finite_difference_gradient"));
        }
        out[[i, j]] = (fp - fm) / (2.0 * h);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matmul_identity() {
        let t = Tape::new();
        let a = t.constant(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let i = t.constant(Array2::eye(2)).unwrap();
        let c = t.matmul(&a, &i).unwrap();
        assert_eq!(*t.value(&c), array![[1.0, 2.0], [3.0, 4.0]]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let t = Tape::new();
        let a = t.constant(Array2::zeros((2, 2))).unwrap();
        let s = t.row_softmax(&a).unwrap();
        assert_eq!(*t.value(&s), array![[0.5, 0.5], [0.5, 0.5]]);
    }

    #[test]
    fn relu_clips_negatives() {
        let t = Tape::new();
        let a = t.constant(array![[-1.0, 2.0]]).unwrap();
        let r = t.relu(&a).unwrap();
        assert_eq!(*t.value(&r), array![[0.0, 2.0]]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let t = Tape::new();
        let a = t.constant(Array2::zeros((2, 3))).unwrap();
        let b = t.constant(Array2::zeros((2, 3))).unwrap();
        assert!(matches!(t.matmul(&a, &b), Err(TensorError::ShapeMismatch { .. })));
        let c = t.constant(Array2::zeros((3, 2))).unwrap();
        assert!(matches!(t.add(&a, &c), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn log_rejects_non_positive() {
        let t = Tape::new();
        let a = t.constant(array![[1.0, 0.0]]).unwrap();
        assert!(matches!(t.log(&a), Err(TensorError::LogDomain(_))));
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let t = Tape::new();
        let a = t.constant(array![[1000.0]]).unwrap();
        assert!(matches!(t.exp(&a), Err(TensorError::NonFinite(_))));
    }

    #[test]
    fn sum_all_gradient_is_ones() {
        let t = Tape::new();
        let w = t.variable(Array2::from_elem((3, 2), 0.7)).unwrap();
        let l = t.sum_all(&w).unwrap();
        let g = t.backward(&l).unwrap();
        assert_eq!(g.get(&w).unwrap(), &Array2::<f64>::ones((3, 2)));
    }

    #[test]
    fn frobenius_gradient_is_twice_value() {
        let t = Tape::new();
        let w = t.variable(array![[3.0]]).unwrap();
        let l = t.frobenius_sq(&w).unwrap();
        let g = t.backward(&l).unwrap();
        assert_eq!(g.get(&w).unwrap(), &array![[6.0]]);
    }

    #[test]
    fn cross_entropy_gradient_matches_frozen_value() {
        // Frozen from central differences (h = 1e-6): [[-0.5, 0.5]].
        let t = Tape::new();
        let z = t.variable(array![[0.0, 0.0]]).unwrap();
        let p = t.row_softmax(&z).unwrap();
        let pc = t.slice_columns(&p, 0, 1).unwrap();
        let lp = t.log(&pc).unwrap();
        let l = t.scale(&lp, -1.0).unwrap();
        let g = t.backward(&l).unwrap();
        let g = g.get(&z).unwrap();
        assert!((g[[0, 0]] + 0.5).abs() < 1e-12);
        assert!((g[[0, 1]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fan_out_accumulates() {
        let t = Tape::new();
        let w = t.variable(array![[2.0]]).unwrap();
        let a = t.scale(&w, 3.0).unwrap();
        let b = t.mul(&w, &w).unwrap();
        let s = t.add(&a, &b).unwrap();
        let g = t.backward(&s).unwrap();
        // d/dw (3w + w^2) = 3 + 2w = 7
        assert_eq!(g.get(&w).unwrap()[[0, 0]], 7.0);
    }

    #[test]
    fn backward_requires_scalar_on_same_tape() {
        let t = Tape::new();
        let w = t.variable(Array2::zeros((2, 2))).unwrap();
        assert!(matches!(t.backward(&w), Err(TensorError::NotScalar(_))));
        let t1 = Tape::new();
        let t2 = Tape::new();
        let x = t2.scalar(1.0).unwrap();
        assert!(matches!(t1.backward(&x), Err(TensorError::ForeignTensor)));
    }

    #[test]
    fn finite_difference_is_exact_for_linear_and_quadratic() {
        let x = array![[0.3, -1.2], [2.0, 0.1]];
        let g = finite_difference_gradient(|m| Ok(m.sum()), &x, 1e-5).unwrap();
        for v in g.iter() {
            assert!((v - 1.0).abs() < 1e-9);
        }
        let g = finite_difference_gradient(|m| Ok(m.iter().map(|v| v * v).sum()), &array![[2.0]], 1e-5)
            .unwrap();
        assert!((g[[0, 0]] - 4.0).abs() < 1e-8);
        assert!(finite_difference_gradient(|m| Ok(m.sum()), &x, 0.0).is_err());
    }

    #[test]
    fn constants_do_not_receive_gradients() {
        let t = Tape::new();
        let c = t.constant(array![[1.0, 2.0]]).unwrap();
        let w = t.variable(array![[0.5, 0.5]]).unwrap();
        let p = t.mul(&c, &w).unwrap();
        let l = t.sum_all(&p).unwrap();
        let g = t.backward(&l).unwrap();
        assert!(g.get(&c).is_none());
        assert_eq!(g.get(&w).unwrap(), &array![[1.0, 2.0]]);
    }
}
