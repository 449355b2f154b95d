//! One level of hierarchical coarsening: GCN embedding, soft cluster
//! assignment, pooling of features and adjacency, and the edge-prediction
//! loss on the assignment.

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{Result, Tape, Tensor, TensorError};
use crate::params::{ForwardCtx, ParamId, ParamStore};

/// Lower/upper clamp applied before every log.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GcnStack {
    pub layers: Vec<ParamId>,
}

impl GcnStack {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_hidden: usize,
        depth: usize,
        rng: &mut R,
    ) -> Self {
        let depth = depth.max(1);
        let layers = (0..depth)
            .map(|i| {
                let rows = if i == 0 { d_in } else { d_hidden };
                store.add_glorot(format!("{prefix}.gcn.{i}"), rows, d_hidden, rng)
            })
            .collect();
        Self { layers }
    }
}

/// Two-layer perceptron producing `k_max` cluster logits per node.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub k_max: usize,
}

impl AssignmentHead {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, d_hidden: usize, k_max: usize, rng: &mut R) -> Self {
        Self {
            w1: store.add_glorot(format!("{prefix}.assign.w1"), d_hidden, d_hidden, rng),
            b1: store.add_zeros(format!("{prefix}.assign.b1"), 1, d_hidden),
            w2: store.add_glorot(format!("{prefix}.assign.w2"), d_hidden, k_max, rng),
            b2: store.add_zeros(format!("{prefix}.assign.b2"), 1, k_max),
            k_max,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CoarsenOutput {
    pub embeddings: Tensor,
    pub assignment: Tensor,
    pub pooled_features: Tensor,
    pub pooled_adjacency: Tensor,
    pub link_loss: Tensor,
}

/// `K = max(2, round(q * n))`.
pub fn cluster_count(q: f64, n: usize) -> usize {
    ((q * n as f64).round() as usize).max(2)
}

/// Differentiable `D^-1/2 (A + I) D^-1/2` for an adjacency living on the tape.
pub fn normalized_adjacency(tape: &Tape, a: &Tensor) -> Result<Tensor> {
    let n = a.rows();
    if a.cols() != n {
        return Err(TensorError::ShapeMismatch {
            op: "normalized_adjacency",
            lhs: a.shape(),
            rhs: a.shape(),
        });
    }
    let eye = tape.constant(Array2::eye(n))?;
    let hat = tape.add(a, &eye)?;
    let deg = tape.row_sum(&hat)?;
    let dinv = tape.powf(&deg, -0.5)?;
    let left = tape.mul(&hat, &dinv)?;
    let dinv_t = tape.transpose(&dinv)?;
    tape.mul(&left, &dinv_t)
}

/// `Z = relu(N ... relu(N X W1) ... W_last)`.
pub fn gcn_forward(ctx: &ForwardCtx, stack: &GcnStack, norm_adj: &Tensor, x: &Tensor) -> Result<Tensor> {
    let tape = &ctx.tape;
    if norm_adj.rows() != x.rows() {
        return Err(TensorError::ShapeMismatch {
            op: "gcn_forward",
            lhs: norm_adj.shape(),
            rhs: x.shape(),
        });
    }
    let mut h = *x;
    for &w in &stack.layers {
        let w = ctx.param(w)?;
        let hw = tape.matmul(&h, &w)?;
        let agg = tape.matmul(norm_adj, &hw)?;
        h = tape.relu(&agg)?;
    }
    Ok(h)
}

/// Pre-softmax assignment scores, `n x k_max`.
pub fn assignment_logits(ctx: &ForwardCtx, head: &AssignmentHead, z: &Tensor) -> Result<Tensor> {
    let tape = &ctx.tape;
    let h = tape.matmul(z, &ctx.param(head.w1)?)?;
    let h = tape.add(&h, &ctx.param(head.b1)?)?;
    let h = tape.relu(&h)?;
    let o = tape.matmul(&h, &ctx.param(head.w2)?)?;
    tape.add(&o, &ctx.param(head.b2)?)
}

pub(crate) fn check_k(k: usize, k_max: usize) -> Result<()> {
    if k == 0 || k > k_max {
        return Err(TensorError::Invalid(format!("cluster count {k} outside 1..={k_max}")));
    }
    Ok(())
}

/// `S = softmax(MLP(z)[:, ..k])`.
pub fn assign(ctx: &ForwardCtx, head: &AssignmentHead, z: &Tensor, k: usize) -> Result<Tensor> {
    check_k(k, head.k_max)?;
    let logits = assignment_logits(ctx, head, z)?;
    let sliced = ctx.tape.slice_columns(&logits, 0, k)?;
    ctx.tape.row_softmax(&sliced)
}

/// `S^T Z`.
pub fn pool_features(tape: &Tape, z: &Tensor, s: &Tensor) -> Result<Tensor> {
    let st = tape.transpose(s)?;
    tape.matmul(&st, z)
}

/// `S^T A S`.
pub fn pool_adjacency(tape: &Tape, a: &Tensor, s: &Tensor) -> Result<Tensor> {
    let st = tape.transpose(s)?;
    let sa = tape.matmul(&st, a)?;
    tape.matmul(&sa, s)
}

pub fn pool(tape: &Tape, z: &Tensor, a: &Tensor, s: &Tensor) -> Result<(Tensor, Tensor)> {
    if z.rows() != s.rows() || a.rows() != s.rows() || a.cols() != s.rows() {
        return Err(TensorError::ShapeMismatch {
            op: "pool",
            lhs: a.shape(),
            rhs: s.shape(),
        });
    }
    Ok((pool_features(tape, z, s)?, pool_adjacency(tape, a, s)?))
}

/// `(A - min) / (max - min)`; all-equal inputs map to zeros.
pub fn minmax_rescale(tape: &Tape, a: &Tensor) -> Result<Tensor> {
    let lo = tape.min_all(a)?;
    let hi = tape.max_all(a)?;
    let range = tape.item(&hi) - tape.item(&lo);
    let centered = tape.sub(a, &lo)?;
    if range <= 1e-12 {
        return tape.scale(&centered, 0.0);
    }
    let span = tape.sub(&hi, &lo)?;
    tape.div(&centered, &span)
}

/// Binary cross-entropy between `a` and the reconstruction `S S^T`,
/// averaged over the `n^2` entries.
pub fn link_loss(tape: &Tape, a: &Tensor, s: &Tensor) -> Result<Tensor> {
    let n = s.rows();
    if a.shape() != (n, n) {
        return Err(TensorError::ShapeMismatch {
            op: "link_loss",
            lhs: a.shape(),
            rhs: s.shape(),
        });
    }
    if let Some(bad) = tape
        .value(a)
        .iter()
        .find(|v| **v < -1e-12 || **v > 1.0 + 1e-12)
    {
        return Err(TensorError::Invalid(format!("link target {bad} outside [0, 1]")));
    }
    let st = tape.transpose(s)?;
    let recon = tape.matmul(s, &st)?;
    let recon = tape.clamp(&recon, LOG_EPS, 1.0 - LOG_EPS)?;
    let log_p = tape.log(&recon)?;
    let one_minus = tape.shift(&tape.scale(&recon, -1.0)?, 1.0)?;
    let log_q = tape.log(&one_minus)?;
    let neg_a = tape.shift(&tape.scale(a, -1.0)?, 1.0)?;
    let pos = tape.mul(&log_p, a)?;
    let neg = tape.mul(&log_q, &neg_a)?;
    let total = tape.sum_all(&tape.add(&pos, &neg)?)?;
    tape.scale(&total, -1.0 / (n * n) as f64)
}

/// Runs one full level on `(x, a)`: normalisation, GCN, assignment with `k`
/// clusters, pooling and link loss. `rescale_target` min-max rescales `a`
/// before the link loss (deeper levels carry weights above 1).
pub fn coarsen_level(
    ctx: &ForwardCtx,
    stack: &GcnStack,
    head: &AssignmentHead,
    x: &Tensor,
    a: &Tensor,
    k: usize,
    rescale_target: bool,
) -> Result<CoarsenOutput> {
    let tape = &ctx.tape;
    let norm = normalized_adjacency(tape, a)?;
    let z = gcn_forward(ctx, stack, &norm, x)?;
    let s = assign(ctx, head, &z, k)?;
    let (pf, pa) = pool(tape, &z, a, &s)?;
    let target = if rescale_target { minmax_rescale(tape, a)? } else { *a };
    let ll = link_loss(tape, &target, &s)?;
    Ok(CoarsenOutput {
        embeddings: z,
        assignment: s,
        pooled_features: pf,
        pooled_adjacency: pa,
        link_loss: ll,
    })
}
