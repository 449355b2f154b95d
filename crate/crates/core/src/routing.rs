//! Per-tree-node routers: summarise the M branch embeddings, score each
//! branch, pick the most probable one, and regularise with routing entropy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Result, Tape, Tensor, TensorError};
use crate::coarsening::{pool_adjacency, LOG_EPS};
use crate::params::{ForwardCtx, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RouterVariant {
    #[default]
    Mlp,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GateMode {
    /// Multiply the selected branch by its routing probability.
    #[default]
    Prob,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Router {
    pub w1: Option<ParamId>,
    pub b1: Option<ParamId>,
    pub w2: ParamId,
    pub b2: ParamId,
    pub variant: RouterVariant,
    pub branches: usize,
}

impl Router {
    /// `input` is the summary width `M * d`.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        branches: usize,
        variant: RouterVariant,
        rng: &mut R,
    ) -> Self {
        match variant {
            RouterVariant::Mlp => Self {
                w1: Some(store.add_glorot(format!("{prefix}.router.w1"), input, hidden, rng)),
                b1: Some(store.add_zeros(format!("{prefix}.router.b1"), 1, hidden)),
                w2: store.add_glorot(format!("{prefix}.router.w2"), hidden, branches, rng),
                b2: store.add_zeros(format!("{prefix}.router.b2"), 1, branches),
                variant,
                branches,
            },
            RouterVariant::Linear => Self {
                w1: None,
                b1: None,
                w2: store.add_glorot(format!("{prefix}.router.w"), input, branches, rng),
                b2: store.add_zeros(format!("{prefix}.router.b"), 1, branches),
                variant,
                branches,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct RoutingDecision {
    pub probabilities: Vec<f64>,
    pub selected: usize,
    pub logits: Vec<f64>,
    /// `1 x M` probability tensor, kept for the entropy term and the gate.
    pub prob_tensor: Tensor,
}

/// One candidate child of a tree node.
#[derive(Debug, Clone, Copy)]
pub struct Branch {
    pub assignment: Tensor,
    pub features: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct Selection {
    pub index: usize,
    pub assignment: Tensor,
    pub features: Tensor,
    pub adjacency: Tensor,
    /// `1 x 1` probability of the selected branch.
    pub gate: Tensor,
}

/// Column-mean of every branch, concatenated into `1 x (M * d)`.
pub fn summarize_branches(tape: &Tape, branch_z: &[Tensor]) -> Result<Tensor> {
    let first = branch_z
        .first()
        .ok_or_else(|| TensorError::Invalid("no branches to summarise".into()))?;
    let pooled = branch_z
        .iter()
        .map(|b| {
            if b.shape() != first.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "summarize_branches",
                    lhs: first.shape(),
                    rhs: b.shape(),
                });
            }
            tape.mean_over_rows(b)
        })
        .collect::<Result<Vec<_>>>()?;
    tape.hconcat(&pooled)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn route(ctx: &ForwardCtx, router: &Router, summary: &Tensor) -> Result<RoutingDecision> {
    let tape = &ctx.tape;
    let logits = match (router.variant, router.w1, router.b1) {
        (RouterVariant::Mlp, Some(w1), Some(b1)) => {
            let h = tape.add(&tape.matmul(summary, &ctx.param(w1)?)?, &ctx.param(b1)?)?;
            let h = tape.relu(&h)?;
            tape.add(&tape.matmul(&h, &ctx.param(router.w2)?)?, &ctx.param(router.b2)?)?
        }
        (RouterVariant::Linear, _, _) => {
            tape.add(&tape.matmul(summary, &ctx.param(router.w2)?)?, &ctx.param(router.b2)?)?
        }
        _ => return Err(TensorError::Invalid("mlp router without hidden layer".into())),
    };
    let probs = tape.row_softmax(&logits)?;
    let probabilities = tape.value(&probs).row(0).to_vec();
    let logit_vals = tape.value(&logits).row(0).to_vec();
    Ok(RoutingDecision {
        selected: argmax(&probabilities),
        probabilities,
        logits: logit_vals,
        prob_tensor: probs,
    })
}

/// Picks the routed branch and pools the parent adjacency with its assignment.
pub fn apply_selection(
    tape: &Tape,
    decision: &RoutingDecision,
    branches: &[Branch],
    adjacency: &Tensor,
) -> Result<Selection> {
    if branches.len() != decision.probabilities.len() {
        return Err(TensorError::Invalid(format!(
            "{} branches but {} routing probabilities",
            branches.len(),
            decision.probabilities.len()
        )));
    }
    let i = decision.selected;
    let b = branches
        .get(i)
        .ok_or_else(|| TensorError::Invalid(format!("branch index {i} out of range")))?;
    Ok(Selection {
        index: i,
        assignment: b.assignment,
        features: b.features,
        adjacency: pool_adjacency(tape, adjacency, &b.assignment)?,
        gate: tape.slice_columns(&decision.prob_tensor, i, i + 1)?,
    })
}

/// `-sum p log p` over every router that fired.
pub fn routing_entropy(tape: &Tape, decisions: &[RoutingDecision]) -> Result<Tensor> {
    if decisions.is_empty() {
        return Err(TensorError::Invalid("routing entropy of zero routers".into()));
    }
    let mut total = tape.scalar(0.0)?;
    for d in decisions {
        let p = &d.prob_tensor;
        let lp = tape.log(&tape.clamp(p, LOG_EPS, 1.0 - LOG_EPS)?)?;
        let h = tape.sum_all(&tape.mul(p, &lp)?)?;
        total = tape.sub(&total, &h)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn zero_router(store: &mut ParamStore, input: usize, hidden: usize, m: usize) -> Router {
        Router {
            w1: Some(store.add_zeros("w1", input, hidden)),
            b1: Some(store.add_zeros("b1", 1, hidden)),
            w2: store.add_zeros("w2", hidden, m),
            b2: store.add_zeros("b2", 1, m),
            variant: RouterVariant::Mlp,
            branches: m,
        }
    }

    #[test]
    fn summaries_are_column_means() {
        let tape = Tape::new();
        let ones = tape.constant(Array2::ones((3, 2))).unwrap();
        let s = summarize_branches(&tape, &[ones, ones]).unwrap();
        assert_eq!(*tape.value(&s), array![[1.0, 1.0, 1.0, 1.0]]);
        let b = array![[1.0, 4.0], [2.0, -1.0], [6.0, 0.0]];
        let bt = tape.constant(b.clone()).unwrap();
        let s = tape.to_matrix(&summarize_branches(&tape, &[bt]).unwrap());
        for c in 0..2 {
            let mut acc = 0.0;
            for r in 0..3 {
                acc += b[[r, c]];
            }
            assert!((s[[0, c]] - acc / 3.0).abs() < 1e-15);
        }
        let other = tape.constant(Array2::ones((2, 2))).unwrap();
        assert!(summarize_branches(&tape, &[ones, other]).is_err());
    }

    #[test]
    fn zero_router_is_uniform_and_picks_first() {
        let mut store = ParamStore::new();
        let r = zero_router(&mut store, 4, 3, 4);
        let ctx = ForwardCtx::new(&store, true);
        let s = ctx.tape.constant(array![[1.0, 2.0, 3.0, 4.0]]).unwrap();
        let d = route(&ctx, &r, &s).unwrap();
        assert_eq!(d.selected, 0);
        for p in &d.probabilities {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn biased_router_hand_value() {
        let mut store = ParamStore::new();
        let r = zero_router(&mut store, 4, 3, 4);
        store.get_mut(r.b2).value = array![[10.0, 0.0, 0.0, 0.0]];
        let ctx = ForwardCtx::new(&store, true);
        let s = ctx.tape.constant(array![[1.0, 2.0, 3.0, 4.0]]).unwrap();
        let d = route(&ctx, &r, &s).unwrap();
        let e10 = 10f64.exp();
        assert_eq!(d.selected, 0);
        assert!((d.probabilities[0] - e10 / (e10 + 3.0)).abs() < 1e-12);
        assert!((d.probabilities[0] - 0.9998638187585689).abs() < 1e-12);
    }

    #[test]
    fn logit_translation_leaves_decision_unchanged() {
        let mut store = ParamStore::new();
        let r = zero_router(&mut store, 2, 2, 3);
        store.get_mut(r.b2).value = array![[0.3, 1.2, -0.4]];
        let mut shifted = store.clone();
        shifted.get_mut(r.b2).value = array![[5.3, 6.2, 4.6]];
        let s = array![[0.5, -0.5]];
        let c1 = ForwardCtx::new(&store, true);
        let c2 = ForwardCtx::new(&shifted, true);
        let d1 = route(&c1, &r, &c1.tape.constant(s.clone()).unwrap()).unwrap();
        let d2 = route(&c2, &r, &c2.tape.constant(s).unwrap()).unwrap();
        assert_eq!(d1.selected, d2.selected);
        for (a, b) in d1.probabilities.iter().zip(&d2.probabilities) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_tie_breaks_low() {
        assert_eq!(argmax(&[0.3, 0.3, 0.4, 0.4]), 2);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn selection_returns_gate_and_pooled_adjacency() {
        let tape = Tape::new();
        let probs = tape.constant(array![[0.2, 0.7, 0.1]]).unwrap();
        let d = RoutingDecision {
            probabilities: vec![0.2, 0.7, 0.1],
            selected: 1,
            logits: vec![0.0; 3],
            prob_tensor: probs,
        };
        let eye = tape.constant(Array2::eye(2)).unwrap();
        let z = tape.constant(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let a = tape.constant(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let other = tape.constant(array![[1.0], [1.0]]).unwrap();
        let branches = [
            Branch { assignment: other, features: z },
            Branch { assignment: eye, features: z },
            Branch { assignment: other, features: z },
        ];
        let sel = apply_selection(&tape, &d, &branches, &a).unwrap();
        assert_eq!(sel.index, 1);
        assert_eq!(tape.item(&sel.gate), 0.7);
        assert_eq!(*tape.value(&sel.adjacency), *tape.value(&a));
        assert_eq!(*tape.value(&sel.features), *tape.value(&z));
        assert!(apply_selection(&tape, &d, &branches[..2], &a).is_err());
    }

    #[test]
    fn single_branch_gate_is_one() {
        let mut store = ParamStore::new();
        let r = zero_router(&mut store, 2, 2, 1);
        let ctx = ForwardCtx::new(&store, true);
        let s = ctx.tape.constant(array![[1.0, 1.0]]).unwrap();
        let d = route(&ctx, &r, &s).unwrap();
        let a = ctx.tape.constant(array![[0.0]]).unwrap();
        let x = ctx.tape.constant(array![[1.0]]).unwrap();
        let sel = apply_selection(&ctx.tape, &d, &[Branch { assignment: x, features: x }], &a).unwrap();
        assert_eq!(sel.index, 0);
        assert_eq!(ctx.tape.item(&sel.gate), 1.0);
    }

    fn decision(tape: &Tape, p: &[f64]) -> RoutingDecision {
        RoutingDecision {
            probabilities: p.to_vec(),
            selected: argmax(p),
            logits: vec![0.0; p.len()],
            prob_tensor: tape.constant(Array2::from_shape_vec((1, p.len()), p.to_vec()).unwrap()).unwrap(),
        }
    }

    #[test]
    fn entropy_values() {
        let tape = Tape::new();
        let h = routing_entropy(&tape, &[decision(&tape, &[0.25; 4])]).unwrap();
        assert!((tape.item(&h) - 4f64.ln()).abs() < 1e-12);
        let h = routing_entropy(&tape, &[decision(&tape, &[1.0 - 3e-9, 1e-9, 1e-9, 1e-9])]).unwrap();
        assert!(tape.item(&h) < 1e-5);
        let two = [decision(&tape, &[0.5, 0.5]), decision(&tape, &[0.5, 0.5])];
        let h = routing_entropy(&tape, &two).unwrap();
        assert!((tape.item(&h) - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(routing_entropy(&tape, &[]).is_err());
    }
}
