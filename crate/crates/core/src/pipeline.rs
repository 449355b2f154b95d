//! Train-then-score runs shared by the CLI and the sweep harness.

use serde::Serialize;

use crate::datasets::DatasetBundle;
use crate::graph::Graph;
use crate::metrics::{
    accuracy_f1, explanation_accuracy, ConfusionMatrix, MetricsError, MetricsResult, SurrogateConfig,
    SurrogateGcn,
};
use crate::model::{make_variant, ModelError, TifConfig, TifModel, TreeTrace};
use crate::train::{predict_all, train_with, EpochStats, Split, TrainError, TrainingReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Mean negative log-likelihood of the true class.
    pub nll: f64,
    pub count: usize,
}

pub fn split_metrics(model: &TifModel, graphs: &[Graph], indices: &[usize]) -> Result<SplitMetrics, ModelError> {
    let preds = predict_all(model, graphs, indices)?;
    let cm = ConfusionMatrix::from_pairs(
        model.config.classes,
        indices.iter().zip(&preds).map(|(&i, p)| (graphs[i].label, p.class)),
    );
    let (accuracy, macro_f1) = accuracy_f1(&cm);
    let nll = if indices.is_empty() {
        f64::NAN
    } else {
        indices
            .iter()
            .zip(&preds)
            .map(|(&i, p)| -p.probs[graphs[i].label].max(1e-12).ln())
            .sum::<f64>()
            / indices.len() as f64
    };
    Ok(SplitMetrics {
        accuracy,
        macro_f1,
        nll,
        count: indices.len(),
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TifModel,
    pub report: TrainingReport,
    pub train: SplitMetrics,
    pub val: SplitMetrics,
    pub test: SplitMetrics,
}

/// Builds the variant for `cfg`, trains it on `split` and scores every role.
pub fn fit(cfg: &TifConfig, bundle: &DatasetBundle, split: &Split) -> Result<TrainOutcome, TrainError> {
    fit_with(cfg, bundle, split, |_, _| {})
}

pub fn fit_with(
    cfg: &TifConfig,
    bundle: &DatasetBundle,
    split: &Split,
    on_epoch: impl FnMut(&TifModel, &EpochStats),
) -> Result<TrainOutcome, TrainError> {
    let mut model = make_variant(cfg)?;
    let report = train_with(&mut model, &bundle.graphs, split, on_epoch)?;
    let train = split_metrics(&model, &bundle.graphs, &split.train)?;
    let val = split_metrics(&model, &bundle.graphs, &split.val)?;
    let test = split_metrics(&model, &bundle.graphs, &split.test)?;
    Ok(TrainOutcome {
        model,
        report,
        train,
        val,
        test,
    })
}

pub fn traces(model: &TifModel, graphs: &[Graph], indices: &[usize]) -> Result<Vec<TreeTrace>, ModelError> {
    use rayon::prelude::*;
    indices.par_iter().map(|&i| model.explain(&graphs[i])).collect()
}

/// Surrogate GCN on the training role, then its accuracy on the test
/// traces' coarsened graphs.
pub fn explanation_score(
    model: &TifModel,
    bundle: &DatasetBundle,
    split: &Split,
    cfg: &SurrogateConfig,
) -> MetricsResult<f64> {
    let surrogate = SurrogateGcn::fit(&bundle.graphs, &split.train, bundle.num_classes(), cfg)?;
    explanation_score_with(&surrogate, model, bundle, &split.test)
}

pub fn explanation_score_with(
    surrogate: &SurrogateGcn,
    model: &TifModel,
    bundle: &DatasetBundle,
    indices: &[usize],
) -> MetricsResult<f64> {
    if indices.is_empty() {
        return Err(MetricsError::Empty);
    }
    let tr = traces(model, &bundle.graphs, indices)?;
    let labels: Vec<usize> = indices.iter().map(|&i| bundle.graphs[i].label).collect();
    explanation_accuracy(surrogate, &tr, &labels)
}
