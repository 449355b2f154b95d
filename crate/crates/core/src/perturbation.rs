//! Learnable branch perturbations of a cluster assignment, and the
//! similarity / diversity regularisers on the resulting branch embeddings.
//!
//! Each perturbation is a length-`k_max` row vector broadcast over all
//! nodes, so one set of parameters applies to graphs of any size.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Result, Tape, Tensor, TensorError};
use crate::coarsening::{check_k, pool_features, LOG_EPS};
use crate::params::{ForwardCtx, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbSpace {
    /// Perturbation added to the assignment logits before the softmax.
    #[default]
    Logit,
    /// Perturbation added to the assignment probabilities, then clamped and
    /// renormalised row-wise.
    Simplex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DiversityForm {
    /// `max(0, m - ||Xi - Xj||)^2`: minimising pushes branches apart up to `m`.
    #[default]
    Hinge,
    /// Raw `||Xi - Xj||^2` added with positive weight.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSet {
    pub vectors: Vec<ParamId>,
    pub space: PerturbSpace,
    pub lambda: Vec<f64>,
    pub mu: f64,
    pub margin: f64,
    pub diversity: DiversityForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbSettings {
    pub space: PerturbSpace,
    pub lambda: f64,
    pub mu: f64,
    pub margin: f64,
    pub diversity: DiversityForm,
}

impl Default for PerturbSettings {
    fn default() -> Self {
        Self {
            space: PerturbSpace::Logit,
            lambda: 0.1,
            mu: 0.1,
            margin: 1.0,
            diversity: DiversityForm::Hinge,
        }
    }
}

impl PerturbationSet {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        branches: usize,
        k_max: usize,
        init_std: f64,
        trainable: bool,
        settings: &PerturbSettings,
        rng: &mut R,
    ) -> Self {
        let vectors = (0..branches)
            .map(|i| store.add_normal(format!("{prefix}.perturb.{i}"), 1, k_max, init_std, trainable, rng))
            .collect();
        Self {
            vectors,
            space: settings.space,
            lambda: vec![settings.lambda; branches],
            mu: settings.mu,
            margin: settings.margin,
            diversity: settings.diversity,
        }
    }

    pub fn branches(&self) -> usize {
        self.vectors.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PerturbLosses {
    pub similarity: Tensor,
    pub diversity: Tensor,
    pub total: Tensor,
}

/// One row-stochastic `n x k` assignment per branch.
pub fn perturb_assignments(ctx: &ForwardCtx, ps: &PerturbationSet, logits: &Tensor, k: usize) -> Result<Vec<Tensor>> {
    let tape = &ctx.tape;
    check_k(k, logits.cols())?;
    let sliced = tape.slice_columns(logits, 0, k)?;
    let base = match ps.space {
        PerturbSpace::Logit => None,
        PerturbSpace::Simplex => Some(tape.row_softmax(&sliced)?),
    };
    ps.vectors
        .iter()
        .map(|&id| {
            let p = ctx.param(id)?;
            if p.cols() < k {
                return Err(TensorError::Invalid(format!(
                    "perturbation width {} below cluster count {k}",
                    p.cols()
                )));
            }
            let p = tape.slice_columns(&p, 0, k)?;
            match base {
                None => tape.row_softmax(&tape.add(&sliced, &p)?),
                Some(s) => {
                    let shifted = tape.clamp(&tape.add(&s, &p)?, LOG_EPS, 1.0)?;
                    let sums = tape.row_sum(&shifted)?;
                    tape.div(&shifted, &sums)
                }
            }
        })
        .collect()
}

/// `X_i = S_i^T z` for every branch.
pub fn branch_embeddings(tape: &Tape, branches: &[Tensor], z: &Tensor) -> Result<Vec<Tensor>> {
    branches
        .iter()
        .map(|s| {
            if s.rows() != z.rows() {
                return Err(TensorError::ShapeMismatch {
                    op: "branch_embeddings",
                    lhs: s.shape(),
                    rhs: z.shape(),
                });
            }
            pool_features(tape, z, s)
        })
        .collect()
}

pub fn perturb_losses(tape: &Tape, ps: &PerturbationSet, branch_x: &[Tensor], base_x: &Tensor) -> Result<PerturbLosses> {
    for x in branch_x {
        if x.shape() != base_x.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "perturb_losses",
                lhs: x.shape(),
                rhs: base_x.shape(),
            });
        }
    }
    let mut similarity = tape.scalar(0.0)?;
    for (i, x) in branch_x.iter().enumerate() {
        let lambda = ps.lambda.get(i).copied().unwrap_or(0.0);
        let d = tape.frobenius_sq(&tape.sub(x, base_x)?)?;
        similarity = tape.add(&similarity, &tape.scale(&d, lambda)?)?;
    }
    let mut diversity = tape.scalar(0.0)?;
    for i in 0..branch_x.len() {
        for j in i + 1..branch_x.len() {
            let sq = tape.frobenius_sq(&tape.sub(&branch_x[i], &branch_x[j])?)?;
            let term = match ps.diversity {
                DiversityForm::Literal => sq,
                DiversityForm::Hinge => {
                    let dist = tape.sqrt(&sq)?;
                    let gap = tape.relu(&tape.shift(&tape.scale(&dist, -1.0)?, ps.margin)?)?;
                    tape.frobenius_sq(&gap)?
                }
            };
            // (i, j) and (j, i) contribute equally.
            diversity = tape.add(&diversity, &tape.scale(&term, 2.0 * ps.mu)?)?;
        }
    }
    let total = tape.add(&similarity, &diversity)?;
    Ok(PerturbLosses {
        similarity,
        diversity,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarsening::pool;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(store: &mut ParamStore, vecs: &[Vec<f64>], space: PerturbSpace) -> PerturbationSet {
        let vectors = vecs
            .iter()
            .enumerate()
            .map(|(i, v)| store.add(format!("p{i}"), Array2::from_shape_vec((1, v.len()), v.clone()).unwrap(), true))
            .collect::<Vec<_>>();
        PerturbationSet {
            lambda: vec![0.1; vectors.len()],
            vectors,
            space,
            mu: 1.0,
            margin: 1.0,
            diversity: DiversityForm::Hinge,
        }
    }

    #[test]
    fn zero_perturbations_reproduce_base_assignment() {
        for space in [PerturbSpace::Logit, PerturbSpace::Simplex] {
            let mut store = ParamStore::new();
            let ps = set(&mut store, &[vec![0.0; 3], vec![0.0; 3]], space);
            let ctx = ForwardCtx::new(&store, true);
            let logits = ctx.tape.constant(array![[0.2, -1.0, 0.5], [1.5, 0.0, -0.3]]).unwrap();
            let base = ctx.tape.row_softmax(&logits).unwrap();
            let out = perturb_assignments(&ctx, &ps, &logits, 3).unwrap();
            for s in &out {
                for (a, b) in ctx.tape.value(s).iter().zip(ctx.tape.value(&base).iter()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn constant_logit_shift_is_invisible() {
        let mut store = ParamStore::new();
        let ps = set(&mut store, &[vec![0.7; 3]], PerturbSpace::Logit);
        let ctx = ForwardCtx::new(&store, true);
        let logits = ctx.tape.constant(array![[0.2, -1.0, 0.5]]).unwrap();
        let base = ctx.tape.row_softmax(&logits).unwrap();
        let out = perturb_assignments(&ctx, &ps, &logits, 3).unwrap();
        for (a, b) in ctx.tape.value(&out[0]).iter().zip(ctx.tape.value(&base).iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn logit_perturbation_hand_value() {
        let mut store = ParamStore::new();
        let ps = set(&mut store, &[vec![1.0, 0.0, 9.0]], PerturbSpace::Logit);
        let ctx = ForwardCtx::new(&store, true);
        let logits = ctx.tape.constant(array![[0.0, 0.0, 3.0]]).unwrap();
        let out = perturb_assignments(&ctx, &ps, &logits, 2).unwrap();
        let v = ctx.tape.to_matrix(&out[0]);
        let e = std::f64::consts::E;
        assert!((v[[0, 0]] - e / (e + 1.0)).abs() < 1e-12);
        assert!((v[[0, 0]] - 0.7310585786300049).abs() < 1e-12);
        assert!((v[[0, 1]] - 1.0 / (e + 1.0)).abs() < 1e-12);
        assert!(perturb_assignments(&ctx, &ps, &logits, 4).is_err());
    }

    #[test]
    fn simplex_space_stays_row_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let ps = PerturbationSet::new(&mut store, "t", 3, 4, 0.8, true, &PerturbSettings {
            space: PerturbSpace::Simplex,
            ..Default::default()
        }, &mut rng);
        let ctx = ForwardCtx::new(&store, true);
        let logits = ctx
            .tape
            .constant(Array2::from_shape_fn((6, 4), |_| rng.gen_range(-3.0..3.0)))
            .unwrap();
        for s in perturb_assignments(&ctx, &ps, &logits, 3).unwrap() {
            for row in ctx.tape.value(&s).rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|v| *v > 0.0));
            }
        }
    }

    #[test]
    fn branch_embeddings_match_pool() {
        let tape = Tape::new();
        let z = tape.constant(array![[1.0, 2.0], [0.0, -1.0], [3.0, 0.5]]).unwrap();
        let s = tape.constant(array![[0.3, 0.7], [0.9, 0.1], [0.5, 0.5]]).unwrap();
        let a = tape.constant(Array2::zeros((3, 3))).unwrap();
        let x = branch_embeddings(&tape, &[s, s], &z).unwrap();
        let (pf, _) = pool(&tape, &z, &a, &s).unwrap();
        assert_eq!(*tape.value(&x[0]), *tape.value(&pf));
        assert_eq!(*tape.value(&x[0]), *tape.value(&x[1]));
        let zero = tape.constant(Array2::zeros((3, 2))).unwrap();
        let x = branch_embeddings(&tape, &[s], &zero).unwrap();
        assert!(tape.value(&x[0]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn loss_values() {
        let mut store = ParamStore::new();
        let mut ps = set(&mut store, &[vec![0.0], vec![0.0], vec![0.0]], PerturbSpace::Logit);
        ps.mu = 0.1;
        ps.margin = 1.5;
        let tape = Tape::new();
        let base = tape.constant(array![[1.0, 2.0]]).unwrap();
        let l = perturb_losses(&tape, &ps, &[base, base, base], &base).unwrap();
        assert_eq!(tape.item(&l.similarity), 0.0);
        // mu * M(M-1) * m^2
        assert!((tape.item(&l.diversity) - 0.1 * 6.0 * 2.25).abs() < 1e-12);

        // Two branches at distance m/2: 2 * (m/2)^2.
        let mut ps2 = set(&mut store, &[vec![0.0], vec![0.0]], PerturbSpace::Logit);
        ps2.margin = 2.0;
        let x1 = tape.constant(array![[0.0, 0.0]]).unwrap();
        let x2 = tape.constant(array![[0.6, 0.8]]).unwrap();
        let l = perturb_losses(&tape, &ps2, &[x1, x2], &x1).unwrap();
        assert!((tape.item(&l.diversity) - 2.0).abs() < 1e-12);
        // Beyond the margin nothing is left.
        let far = tape.constant(array![[3.0, 0.0]]).unwrap();
        let l = perturb_losses(&tape, &ps2, &[x1, far], &x1).unwrap();
        assert_eq!(tape.item(&l.diversity), 0.0);
        assert!((tape.item(&l.similarity) - 0.1 * 9.0).abs() < 1e-12);
        assert!((tape.item(&l.total) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn literal_diversity_is_squared_distance() {
        let mut store = ParamStore::new();
        let mut ps = set(&mut store, &[vec![0.0], vec![0.0]], PerturbSpace::Logit);
        ps.diversity = DiversityForm::Literal;
        let tape = Tape::new();
        let x1 = tape.constant(array![[0.0, 0.0]]).unwrap();
        let x2 = tape.constant(array![[0.6, 0.8]]).unwrap();
        let l = perturb_losses(&tape, &ps, &[x1, x2], &x1).unwrap();
        assert!((tape.item(&l.diversity) - 2.0).abs() < 1e-12);
    }
}
