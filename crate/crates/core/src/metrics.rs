//! Prediction metrics and explanation metrics: surrogate confidence on
//! explanation graphs, random-walk kernel consistency against templates,
//! path stability under feature noise, and path-usage entropy.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Matrix, TensorError};
use crate::coarsening::{normalized_adjacency, LOG_EPS};
use crate::datasets::GroundTruth;
use crate::graph::Graph;
use crate::model::{path_id, ModelError, TifModel, TreeTrace};
use crate::params::{ForwardCtx, ParamGrads, ParamId, ParamStore};
use crate::train::Adam;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("explanation graph has feature width {got}, surrogate expects {expected}")]
    FeatureDim { expected: usize, got: usize },
    #[error("kernel: {0}")]
    Kernel(String),
    #[error("dataset has no ground-truth templates")]
    NoGroundTruth,
    #[error("nothing to evaluate")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type MetricsResult<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    /// `counts[truth][predicted]`.
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_pairs(classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut cm = Self::new(classes);
        for (t, p) in pairs {
            cm.add(t, p);
        }
        cm
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }
}

/// Accuracy and macro-F1; a class with `P + R = 0` scores F1 0.
pub fn accuracy_f1(cm: &ConfusionMatrix) -> (f64, f64) {
    let c = cm.counts.len();
    let total = cm.total() as f64;
    let trace: usize = (0..c).map(|i| cm.counts[i][i]).sum();
    let mut f1_sum = 0.0;
    for k in 0..c {
        let tp = cm.counts[k][k] as f64;
        let predicted: usize = (0..c).map(|t| cm.counts[t][k]).sum();
        let actual: usize = cm.counts[k].iter().sum();
        let p = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let r = if actual > 0 { tp / actual as f64 } else { 0.0 };
        f1_sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    (trace as f64 / total, f1_sum / c as f64)
}

/// Plain two-layer GCN with a column-mean readout, used to score explanations.
#[derive(Debug, Clone)]
pub struct SurrogateGcn {
    pub store: ParamStore,
    layers: Vec<ParamId>,
    out_w: ParamId,
    out_b: ParamId,
    pub feat_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 2,
            epochs: 100,
            lr: 0.01,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl SurrogateGcn {
    pub fn new(feat_dim: usize, classes: usize, cfg: &SurrogateConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let layers = (0..cfg.layers.max(1))
            .map(|i| {
                let rows = if i == 0 { feat_dim } else { cfg.hidden };
                store.add_glorot(format!("surrogate.gcn.{i}"), rows, cfg.hidden, &mut rng)
            })
            .collect();
        let out_w = store.add_glorot("surrogate.out.w", cfg.hidden, classes, &mut rng);
        let out_b = store.add_zeros("surrogate.out.b", 1, classes);
        Self {
            store,
            layers,
            out_w,
            out_b,
            feat_dim,
        }
    }

    fn forward(&self, ctx: &ForwardCtx, g: &Graph) -> MetricsResult<crate::autodiff::Tensor> {
        if g.feature_dim() != self.feat_dim {
            return Err(MetricsError::FeatureDim {
                expected: self.feat_dim,
                got: g.feature_dim(),
            });
        }
        let tape = &ctx.tape;
        let a = tape.constant(g.adjacency().clone())?;
        let norm = normalized_adjacency(tape, &a)?;
        let mut h = tape.constant(g.features().clone())?;
        for &w in &self.layers {
            h = tape.relu(&tape.matmul(&norm, &tape.matmul(&h, &ctx.param(w)?)?)?)?;
        }
        let pooled = tape.mean_over_rows(&h)?;
        let scores = tape.add(&tape.matmul(&pooled, &ctx.param(self.out_w)?)?, &ctx.param(self.out_b)?)?;
        Ok(tape.row_softmax(&scores)?)
    }

    pub fn probs(&self, g: &Graph) -> MetricsResult<Vec<f64>> {
        let ctx = ForwardCtx::new(&self.store, false);
        let p = self.forward(&ctx, g)?;
        let v = ctx.tape.value(&p).row(0).to_vec();
        Ok(v)
    }

    fn loss_and_grad(&self, g: &Graph) -> MetricsResult<(f64, ParamGrads)> {
        let ctx = ForwardCtx::new(&self.store, true);
        let p = self.forward(&ctx, g)?;
        let tape = &ctx.tape;
        let pl = tape.slice_columns(&p, g.label, g.label + 1)?;
        let loss = tape.scale(&tape.log(&tape.clamp(&pl, LOG_EPS, 1.0 - LOG_EPS)?)?, -1.0)?;
        let v = tape.item(&loss);
        Ok((v, ctx.backward(&loss).map_err(MetricsError::Tensor)?))
    }

    /// Cross-entropy training with Adam on the given graphs.
    pub fn fit(graphs: &[Graph], indices: &[usize], classes: usize, cfg: &SurrogateConfig) -> MetricsResult<Self> {
        use rand::seq::SliceRandom;
        let first = indices.first().ok_or(MetricsError::Empty)?;
        let mut model = Self::new(graphs[*first].feature_dim(), classes, cfg);
        let mut adam = Adam::new(cfg.lr, model.store.len());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5077);
        let mut order = indices.to_vec();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size.max(1)) {
                let steps = batch
                    .par_iter()
                    .map(|&i| model.loss_and_grad(&graphs[i]))
                    .collect::<MetricsResult<Vec<_>>>()?;
                let mut acc = ParamGrads::zeros_like(&model.store);
                for (_, g) in &steps {
                    acc.add_scaled(g, 1.0 / batch.len() as f64);
                }
                adam.step(&mut model.store, &acc);
            }
        }
        Ok(model)
    }
}

/// Mean surrogate confidence in the true class, fed each trace's coarsest graph.
pub fn explanation_accuracy(surrogate: &SurrogateGcn, traces: &[TreeTrace], labels: &[usize]) -> MetricsResult<f64> {
    if traces.is_empty() {
        return Err(MetricsError::Empty);
    }
    let conf = traces
        .par_iter()
        .zip(labels)
        .map(|(t, &y)| Ok(surrogate.probs(t.coarsest())?[y]))
        .collect::<MetricsResult<Vec<f64>>>()?;
    Ok(conf.iter().sum::<f64>() / conf.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMode {
    /// `1^T (I - lambda A_x)^-1 1` by LU solve.
    Exact,
    /// Power series truncated after the given walk length.
    Truncated(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    /// Walk decay; `None` picks `0.9 / (d1 * d2)` from the max weighted degrees.
    pub lambda: Option<f64>,
    pub mode: KernelMode,
    pub normalize: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            mode: KernelMode::Exact,
            normalize: true,
        }
    }
}

fn max_degree(g: &Graph) -> f64 {
    g.adjacency()
        .rows()
        .into_iter()
        .map(|r| r.sum())
        .fold(0.0, f64::max)
}

fn product_adjacency(a: &Matrix, b: &Matrix) -> DMatrix<f64> {
    let (n, m) = (a.nrows(), b.nrows());
    DMatrix::from_fn(n * m, n * m, |r, c| a[[r / m, c / m]] * b[[r % m, c % m]])
}

fn raw_kernel(g1: &Graph, g2: &Graph, lambda: f64, mode: KernelMode) -> MetricsResult<f64> {
    let ax = product_adjacency(g1.adjacency(), g2.adjacency());
    let size = ax.nrows();
    let ones = DVector::from_element(size, 1.0);
    match mode {
        KernelMode::Exact => {
            let sys = DMatrix::identity(size, size) - ax * lambda;
            let x = sys
                .lu()
                .solve(&ones)
                .ok_or_else(|| MetricsError::Kernel("singular walk system".into()))?;
            Ok(x.sum())
        }
        KernelMode::Truncated(depth) => {
            let mut v = ones.clone();
            let mut total = v.sum();
            let mut decay = 1.0;
            for _ in 0..depth {
                v = &ax * v;
                decay *= lambda;
                total += decay * v.sum();
            }
            Ok(total)
        }
    }
}

/// Geometric random-walk kernel on the direct-product graph.
pub fn rw_kernel(g1: &Graph, g2: &Graph, cfg: &KernelConfig) -> MetricsResult<f64> {
    let (d1, d2) = (max_degree(g1), max_degree(g2));
    // Normalising compares each graph with itself too, so the guard must
    // hold for every pairing.
    let bound = if cfg.normalize { d1.max(d2).powi(2) } else { d1 * d2 };
    let lambda = match cfg.lambda {
        Some(l) => l,
        None if bound > 0.0 => 0.9 / bound,
        None => 0.5,
    };
    if !(lambda > 0.0) {
        return Err(MetricsError::Kernel(format!("decay must be positive, got {lambda}")));
    }
    if cfg.mode == KernelMode::Exact && bound > 0.0 && lambda >= 1.0 / bound {
        return Err(MetricsError::Kernel(format!(
            "decay {lambda} violates the convergence bound 1/{bound}"
        )));
    }
    let k12 = raw_kernel(g1, g2, lambda, cfg.mode)?;
    if !cfg.normalize {
        return Ok(k12);
    }
    let k11 = raw_kernel(g1, g1, lambda, cfg.mode)?;
    let k22 = raw_kernel(g2, g2, lambda, cfg.mode)?;
    Ok(k12 / (k11 * k22).sqrt())
}

/// Mean normalised kernel between each trace's binarised coarsest graph and
/// its template.
pub fn consistency(traces: &[TreeTrace], truth: Option<&[GroundTruth]>, cfg: &KernelConfig) -> MetricsResult<f64> {
    let truth = truth.ok_or(MetricsError::NoGroundTruth)?;
    if traces.is_empty() || traces.len() != truth.len() {
        return Err(MetricsError::Empty);
    }
    let cfg = KernelConfig { normalize: true, ..*cfg };
    let vals = traces
        .par_iter()
        .zip(truth)
        .map(|(t, gt)| rw_kernel(&t.coarsest().binarized(0.5), &gt.template, &cfg))
        .collect::<MetricsResult<Vec<f64>>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Mean share of the modal root-to-leaf path over `runs` forwards per graph,
/// each with i.i.d. Gaussian noise of std `sigma` added to the features.
pub fn path_consistency(model: &TifModel, graphs: &[&Graph], runs: usize, sigma: f64, seed: u64) -> MetricsResult<f64> {
    if graphs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let runs = runs.max(1);
    let per_graph = graphs
        .par_iter()
        .enumerate()
        .map(|(gi, g)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(gi as u64 + 1);
            let noise = Normal::new(0.0, sigma.max(0.0)).map_err(|e| MetricsError::Kernel(e.to_string()))?;
            let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
            for _ in 0..runs {
                let path = if sigma > 0.0 {
                    let mut x = g.features().clone();
                    x.mapv_inplace(|v| v + noise.sample(&mut rng));
                    let noisy = g.with_features(x).map_err(ModelError::from)?;
                    model.predict(&noisy)?.path
                } else {
                    model.predict(g)?.path
                };
                *counts.entry(path).or_default() += 1;
            }
            Ok(*counts.values().max().unwrap_or(&0) as f64 / runs as f64)
        })
        .collect::<MetricsResult<Vec<f64>>>()?;
    Ok(per_graph.iter().sum::<f64>() / per_graph.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathImportance {
    pub frequencies: BTreeMap<String, f64>,
    pub normalized_entropy: f64,
    pub distinct_paths: usize,
}

/// Path frequencies and their entropy over `log(#distinct)`; one path scores 1.
pub fn path_importance_from_paths(paths: &[Vec<usize>]) -> MetricsResult<PathImportance> {
    if paths.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for p in paths {
        *counts.entry(path_id(p)).or_default() += 1;
    }
    let n = paths.len() as f64;
    let frequencies: BTreeMap<String, f64> = counts.iter().map(|(k, &c)| (k.clone(), c as f64 / n)).collect();
    let distinct = frequencies.len();
    let normalized_entropy = if distinct == 1 {
        1.0
    } else {
        let h: f64 = frequencies.values().map(|p| -p * p.ln()).sum();
        h / (distinct as f64).ln()
    };
    Ok(PathImportance {
        frequencies,
        normalized_entropy,
        distinct_paths: distinct,
    })
}

pub fn path_importance(model: &TifModel, graphs: &[&Graph]) -> MetricsResult<PathImportance> {
    let paths = graphs
        .par_iter()
        .map(|g| Ok(model.predict(g)?.path))
        .collect::<MetricsResult<Vec<_>>>()?;
    path_importance_from_paths(&paths)
}
