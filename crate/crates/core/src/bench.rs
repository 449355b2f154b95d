//! Desk-scale ablation sweeps over compression ratio, branch count and
//! variant profile, reported as CSV and Markdown.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::datasets::{assign_folds, generate, DatasetBundle, DatasetKind, SynthSpec};
use crate::metrics::SurrogateGcn;
use crate::model::{Profile, TifConfig};
use crate::pipeline::{explanation_score_with, fit};
use crate::train::Split;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    /// Compression ratio.
    Q,
    /// Branches per tree node.
    Paths,
    /// Model profile (full, no-iar, no-pm).
    Variant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum AxisValue {
    Q(f64),
    Paths(usize),
    Variant(Profile),
}

impl AxisValue {
    pub fn apply(self, cfg: &mut TifConfig) {
        match self {
            AxisValue::Q(q) => cfg.q = q,
            AxisValue::Paths(m) => cfg.branches = m,
            AxisValue::Variant(p) => cfg.profile = p,
        }
    }

    pub fn label(self) -> String {
        match self {
            AxisValue::Q(q) => format!("{q}"),
            AxisValue::Paths(m) => format!("{m}"),
            AxisValue::Variant(p) => p.name().to_string(),
        }
    }
}

impl Axis {
    pub fn default_values(self) -> Vec<AxisValue> {
        match self {
            Axis::Q => [0.1, 0.2, 0.3, 0.5].map(AxisValue::Q).to_vec(),
            Axis::Paths => [2, 4, 8].map(AxisValue::Paths).to_vec(),
            Axis::Variant => [Profile::Full, Profile::NoIar, Profile::NoPm]
                .map(AxisValue::Variant)
                .to_vec(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Q => "q",
            Axis::Paths => "paths",
            Axis::Variant => "variant",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<AxisValue>,
    /// Model, fold and metrics settings shared by every cell.
    pub base: RunConfig,
    pub kind: DatasetKind,
    pub graphs: usize,
    pub scale: f64,
    /// One dataset and one model seed per entry.
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.values.len() < 2 {
            return Err(format!("sweep needs at least 2 axis values, got {}", self.values.len()));
        }
        if self.seeds.len() < 3 {
            return Err(format!("sweep needs at least 3 seeds per cell, got {}", self.seeds.len()));
        }
        Ok(())
    }

    pub fn dataset(&self, seed: u64) -> Result<DatasetBundle, String> {
        let spec = SynthSpec {
            graphs: self.graphs,
            scale: self.scale,
            seed,
            ..SynthSpec::paper(self.kind)
        };
        let bundle = generate(&spec).map_err(|e| e.to_string())?;
        assign_folds(bundle, self.base.dataset.folds, seed).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRun {
    pub value: String,
    pub seed: u64,
    /// `ok`, or the error that stopped the cell.
    pub status: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub explanation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub value: String,
    pub runs: usize,
    pub failed: usize,
    pub accuracy: (f64, f64),
    pub macro_f1: (f64, f64),
    pub explanation_accuracy: (f64, f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub axis: Axis,
    pub runs: Vec<CellRun>,
    pub cells: Vec<CellSummary>,
}

impl SweepReport {
    pub fn run(&self, value: &str, seed: u64) -> Option<&CellRun> {
        self.runs.iter().find(|r| r.value == value && r.seed == seed)
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct SeedData {
    seed: u64,
    bundle: DatasetBundle,
    split: Split,
    surrogate: SurrogateGcn,
}

fn run_cell(spec: &SweepSpec, data: &SeedData, value: AxisValue) -> Result<(f64, f64, f64), String> {
    let mut rc = spec.base.clone();
    rc.model.seed = data.seed;
    value.apply(&mut rc.model);
    rc.fit_to(&data.bundle).map_err(|e| e.to_string())?;
    let out = fit(&rc.model, &data.bundle, &data.split).map_err(|e| e.to_string())?;
    let expl = explanation_score_with(&data.surrogate, &out.model, &data.bundle, &data.split.test)
        .map_err(|e| e.to_string())?;
    Ok((out.test.accuracy, out.test.macro_f1, expl))
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Every (value, seed) cell runs single-threaded; cells spread over the
/// current pool. A failing cell is recorded and the sweep continues.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepReport, String> {
    spec.validate()?;
    let fold = spec.base.dataset.fold;
    let folds = spec.base.dataset.folds;
    let data: Vec<SeedData> = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            single_threaded(|| {
                let bundle = spec.dataset(seed)?;
                let split = Split::from_folds(&bundle.folds, fold, folds);
                let sc = crate::metrics::SurrogateConfig {
                    seed,
                    ..spec.base.metrics.surrogate
                };
                let surrogate =
                    SurrogateGcn::fit(&bundle.graphs, &split.train, bundle.num_classes(), &sc).map_err(|e| e.to_string())?;
                Ok(SeedData {
                    seed,
                    bundle,
                    split,
                    surrogate,
                })
            })
        })
        .collect::<Result<_, String>>()?;
    let jobs: Vec<(AxisValue, &SeedData)> = spec
        .values
        .iter()
        .flat_map(|&v| data.iter().map(move |d| (v, d)))
        .collect();
    let runs: Vec<CellRun> = jobs
        .par_iter()
        .map(|&(v, d)| {
            let res = single_threaded(|| run_cell(spec, d, v));
            let label = v.label();
            match res {
                Ok((accuracy, macro_f1, expl)) => {
                    info!("{}={label} seed {}: acc {accuracy:.4} f1 {macro_f1:.4} expl {expl:.4}", spec.axis.name(), d.seed);
                    CellRun {
                        value: label,
                        seed: d.seed,
                        status: "ok".into(),
                        accuracy,
                        macro_f1,
                        explanation_accuracy: expl,
                    }
                }
                Err(e) => {
                    warn!("{}={label} seed {} failed: {e}", spec.axis.name(), d.seed);
                    CellRun {
                        value: label,
                        seed: d.seed,
                        status: e,
                        accuracy: f64::NAN,
                        macro_f1: f64::NAN,
                        explanation_accuracy: f64::NAN,
                    }
                }
            }
        })
        .collect();
    let cells = spec
        .values
        .iter()
        .map(|v| {
            let label = v.label();
            let ok: Vec<&CellRun> = runs.iter().filter(|r| r.value == label && r.status == "ok").collect();
            let col = |f: fn(&CellRun) -> f64| mean_std(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
            CellSummary {
                runs: ok.len(),
                failed: runs.iter().filter(|r| r.value == label).count() - ok.len(),
                accuracy: col(|r| r.accuracy),
                macro_f1: col(|r| r.macro_f1),
                explanation_accuracy: col(|r| r.explanation_accuracy),
                value: label,
            }
        })
        .collect();
    Ok(SweepReport {
        axis: spec.axis,
        runs,
        cells,
    })
}

pub fn to_csv(report: &SweepReport) -> String {
    let mut s = format!("{},seed,status,accuracy,macro_f1,explanation_accuracy\n", report.axis.name());
    for r in &report.runs {
        let status = r.status.replace([',', '\n'], ";");
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.value, r.seed, status, r.accuracy, r.macro_f1, r.explanation_accuracy
        );
    }
    s
}

pub fn to_markdown(report: &SweepReport) -> String {
    let mut s = format!(
        "| {} | runs | failed | accuracy | macro-F1 | explanation accuracy |\n|---|---|---|---|---|---|\n",
        report.axis.name()
    );
    let pm = |(m, sd): (f64, f64)| format!("{m:.4} ± {sd:.4}");
    for c in &report.cells {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} |",
            c.value,
            c.runs,
            c.failed,
            pm(c.accuracy),
            pm(c.macro_f1),
            pm(c.explanation_accuracy)
        );
    }
    s
}

/// Writes `sweep_<axis>.csv` and `sweep_<axis>.md` into `dir`.
pub fn write_reports(report: &SweepReport, dir: &Path) -> std::io::Result<(PathBuf, PathBuf)> {
    let csv = dir.join(format!("sweep_{}.csv", report.axis.name()));
    let md = dir.join(format!("sweep_{}.md", report.axis.name()));
    fs::write(&csv, to_csv(report))?;
    fs::write(&md, to_markdown(report))?;
    Ok((csv, md))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn axis_defaults() {
        assert_eq!(Axis::Q.default_values().len(), 4);
        assert_eq!(Axis::Paths.default_values().len(), 3);
        let v: Vec<String> = Axis::Variant.default_values().iter().map(|v| v.label()).collect();
        assert_eq!(v, ["full", "no-iar", "no-pm"]);
    }

    #[test]
    fn rejects_thin_sweeps() {
        let spec = SweepSpec {
            axis: Axis::Paths,
            values: Axis::Paths.default_values(),
            base: RunConfig::default(),
            kind: DatasetKind::GraphCycle,
            graphs: 20,
            scale: 0.1,
            seeds: vec![0, 1],
        };
        assert!(run_sweep(&spec).is_err());
    }

    #[test]
    fn tiny_sweep_reports_every_cell() {
        let mut base = RunConfig::default();
        base.model.epochs = 1;
        base.model.hidden = 8;
        base.model.router_hidden = 4;
        base.dataset.folds = 4;
        base.metrics.surrogate.epochs = 1;
        let spec = SweepSpec {
            axis: Axis::Variant,
            values: Axis::Variant.default_values(),
            base,
            kind: DatasetKind::GraphCycle,
            graphs: 16,
            scale: 0.1,
            seeds: vec![0, 1, 2],
        };
        let r = run_sweep(&spec).unwrap();
        assert_eq!(r.runs.len(), 9);
        assert!(r.runs.iter().all(|c| c.status == "ok"), "{:?}", r.runs);
        let md = to_markdown(&r);
        assert_eq!(md.lines().count(), 5);
        assert_eq!(to_csv(&r).lines().count(), 10);
    }
}
