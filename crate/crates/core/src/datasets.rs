//! Synthetic benchmarks with ground-truth templates, TU flat-file
//! reading/writing, bundle manifests and stratified folds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use ndarray::Array2;
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::Matrix;
use crate::graph::{degree_one_hot, Graph, GraphError};

/// Degree one-hot width used for synthetic graphs and the TU fallback.
pub const DEGREE_BINS: usize = 16;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("node {0} referenced by an edge does not exist")]
    DanglingNode(usize),
    #[error("edge ({0}, {1}) joins two different graphs")]
    CrossGraphEdge(usize, usize),
    #[error("dataset has no ground-truth templates")]
    NoGroundTruth,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type DatasetResult<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    GraphCycle,
    GraphFive,
    MultipleCycle,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::GraphCycle => "graphcycle",
            DatasetKind::GraphFive => "graphfive",
            DatasetKind::MultipleCycle => "multiplecycle",
        }
    }

    pub fn class_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            DatasetKind::GraphCycle => &["Cycle", "Non-Cycle"],
            DatasetKind::GraphFive => &["Wheel", "Grid", "Tree", "Ladder", "Star"],
            DatasetKind::MultipleCycle => &["Pure Cycle", "Pure Chain", "Hybrid Cycle", "Hybrid Chain"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "graphcycle" => Ok(DatasetKind::GraphCycle),
            "graphfive" => Ok(DatasetKind::GraphFive),
            "multiplecycle" => Ok(DatasetKind::MultipleCycle),
            other => Err(format!("unknown dataset `{other}` (expected graphcycle, graphfive or multiplecycle)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub kind: DatasetKind,
    pub graphs: usize,
    pub communities: [usize; 2],
    pub community_size: [usize; 2],
    pub inter_p: [f64; 2],
    pub seed: u64,
    pub scale: f64,
    /// Edges added per new node when growing a BA community.
    pub ba_edges: usize,
    /// Community sizes follow `P(k) ~ k^-exponent` on the size range.
    pub size_exponent: f64,
    /// Node count range of the first- and second-level structures.
    pub structure_size: [usize; 2],
    pub feature_bins: usize,
}

impl SynthSpec {
    /// Full-size settings for `kind`.
    pub fn paper(kind: DatasetKind) -> Self {
        let (graphs, size_exponent) = match kind {
            DatasetKind::GraphCycle => (2000, 2.25),
            DatasetKind::GraphFive => (5000, 1.9),
            DatasetKind::MultipleCycle => (5000, 0.0),
        };
        Self {
            kind,
            graphs,
            communities: [8, 15],
            community_size: [10, 200],
            inter_p: [0.05, 0.15],
            seed: 0,
            scale: 1.0,
            ba_edges: 2,
            size_exponent,
            structure_size: [4, 8],
            feature_bins: DEGREE_BINS,
        }
    }

    pub fn validate(&self) -> DatasetResult<()> {
        let bad = |m: &str| Err(DatasetError::Spec(m.to_string()));
        if self.graphs == 0 {
            return bad("graph count must be positive");
        }
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return bad("scale must lie in (0, 1]");
        }
        for r in [self.communities, self.community_size, self.structure_size] {
            if r[0] == 0 || r[0] > r[1] {
                return bad("integer ranges must be nonempty and positive");
            }
        }
        if !(self.inter_p[0] > 0.0 && self.inter_p[0] <= self.inter_p[1] && self.inter_p[1] < 1.0) {
            return bad("inter-community probability range must lie inside (0, 1)");
        }
        if self.ba_edges == 0 {
            return bad("ba_edges must be positive");
        }
        if !(self.size_exponent.is_finite() && self.size_exponent >= 0.0) {
            return bad("size_exponent must be finite and non-negative");
        }
        if self.feature_bins < 2 {
            return bad("feature_bins must be at least 2");
        }
        let r = self.ranges();
        if self.kind == DatasetKind::GraphFive && r.communities[1] < 4 {
            return bad("graphfive needs at least 4 communities");
        }
        Ok(())
    }

    /// Ranges after applying `scale`. Counts shrink with `sqrt(scale)` and
    /// sizes linearly, with floors that keep every shape buildable.
    pub fn ranges(&self) -> ScaledRanges {
        let shrink = |r: [usize; 2], f: f64, floor: usize| {
            if self.scale >= 1.0 {
                return r;
            }
            let lo = ((r[0] as f64 * f).round() as usize).max(floor);
            let hi = ((r[1] as f64 * f).round() as usize).max(lo);
            [lo, hi]
        };
        let root = self.scale.sqrt();
        ScaledRanges {
            communities: shrink(self.communities, root, 3),
            community_size: shrink(self.community_size, self.scale, self.ba_edges + 3),
            structure_size: shrink(self.structure_size, root, 3),
        }
    }

    fn graph_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64 + 1);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScaledRanges {
    pub communities: [usize; 2],
    pub community_size: [usize; 2],
    pub structure_size: [usize; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureKind {
    Cycle,
    Chain,
}

/// Template a synthetic graph was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub template: Graph,
    /// Second-level structure kinds in first-level order (nested datasets only).
    pub composition: Option<Vec<StructureKind>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub classes: Vec<String>,
    pub folds: Vec<usize>,
    pub ground_truth: Option<Vec<GroundTruth>>,
    pub provenance: serde_json::Value,
}

impl DatasetBundle {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map(|g| g.feature_dim()).unwrap_or(0)
    }

    pub fn max_nodes(&self) -> usize {
        self.graphs.iter().map(|g| g.n()).max().unwrap_or(0)
    }

    pub fn avg_nodes(&self) -> f64 {
        self.graphs.iter().map(|g| g.n() as f64).sum::<f64>() / self.graphs.len().max(1) as f64
    }

    pub fn avg_edges(&self) -> f64 {
        self.graphs.iter().map(|g| g.edge_count() as f64).sum::<f64>() / self.graphs.len().max(1) as f64
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for g in &self.graphs {
            counts[g.label] += 1;
        }
        counts
    }

    pub fn templates(&self) -> DatasetResult<&[GroundTruth]> {
        self.ground_truth.as_deref().ok_or(DatasetError::NoGroundTruth)
    }
}

fn sample_range<R: Rng>(rng: &mut R, r: [usize; 2]) -> usize {
    rng.gen_range(r[0]..=r[1])
}

/// Discrete truncated power law on `r`.
fn size_sampler(r: [usize; 2], exponent: f64) -> WeightedIndex<f64> {
    WeightedIndex::new((r[0]..=r[1]).map(|k| (k as f64).powf(-exponent))).expect("nonempty size range")
}

/// Barabasi-Albert graph on `n` nodes grown from an `m + 1` clique.
pub fn barabasi_albert<R: Rng>(n: usize, m: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let seed = (m + 1).min(n);
    let mut edges = Vec::new();
    let mut ends = Vec::new();
    for i in 0..seed {
        for j in i + 1..seed {
            edges.push((i, j));
            ends.extend([i, j]);
        }
    }
    for v in seed..n {
        let mut targets = BTreeSet::new();
        while targets.len() < m.min(v) {
            let t = if ends.is_empty() { rng.gen_range(0..v) } else { ends[rng.gen_range(0..ends.len())] };
            targets.insert(t);
        }
        for t in targets {
            edges.push((t, v));
            ends.extend([t, v]);
        }
    }
    edges
}

fn ring(c: usize) -> Vec<(usize, usize)> {
    match c {
        0 | 1 => vec![],
        2 => vec![(0, 1)],
        _ => (0..c).map(|i| (i, (i + 1) % c)).collect(),
    }
}

fn chain(c: usize) -> Vec<(usize, usize)> {
    (1..c).map(|i| (i - 1, i)).collect()
}

fn random_tree<R: Rng>(c: usize, rng: &mut R) -> Vec<(usize, usize)> {
    (1..c).map(|i| (rng.gen_range(0..i), i)).collect()
}

pub fn star(c: usize) -> Vec<(usize, usize)> {
    (1..c).map(|i| (0, i)).collect()
}

pub fn wheel(c: usize) -> Vec<(usize, usize)> {
    let mut e = star(c);
    let rim = c - 1;
    e.extend(ring(rim).into_iter().map(|(a, b)| (a + 1, b + 1)));
    e
}

/// Row-major lattice with `floor(sqrt(c))` rows; the last row may be partial.
pub fn grid(c: usize) -> Vec<(usize, usize)> {
    let rows = ((c as f64).sqrt().floor() as usize).max(1);
    let cols = c.div_ceil(rows);
    let mut e = Vec::new();
    for i in 0..c {
        let (r, col) = (i / cols, i % cols);
        if col + 1 < cols && i + 1 < c {
            e.push((i, i + 1));
        }
        if (r + 1) * cols + col < c {
            e.push((i, i + cols));
        }
    }
    e
}

/// Complete binary tree in heap order.
pub fn binary_tree(c: usize) -> Vec<(usize, usize)> {
    (1..c).map(|i| ((i - 1) / 2, i)).collect()
}

/// Two rails joined by rungs; an odd node extends the first rail.
pub fn ladder(c: usize) -> Vec<(usize, usize)> {
    let half = c / 2;
    let top = c - half;
    let mut e = chain(top);
    e.extend(chain(half).into_iter().map(|(a, b)| (a + top, b + top)));
    e.extend((0..half).map(|i| (i, i + top)));
    e
}

fn template_graph(c: usize, edges: &[(usize, usize)], label: usize) -> DatasetResult<Graph> {
    Ok(Graph::from_edges(c, edges, Array2::ones((c, 1)), label)?)
}

/// Builds the full graph: one BA community per backbone node, anchors
/// joined along the backbone, plus noise edges per backbone edge: every node
/// of either community, with probability `p`, links `ba_edges` times to
/// random nodes of the other.
fn communities_on_backbone<R: Rng>(
    spec: &SynthSpec,
    backbone: &[(usize, usize)],
    c: usize,
    label: usize,
    rng: &mut R,
) -> DatasetResult<Graph> {
    let r = spec.ranges();
    let sizes = size_sampler(r.community_size, spec.size_exponent);
    let mut offsets = Vec::with_capacity(c + 1);
    let mut edges = Vec::new();
    let mut n = 0;
    for _ in 0..c {
        let size = r.community_size[0] + sizes.sample(rng);
        offsets.push(n);
        edges.extend(barabasi_albert(size, spec.ba_edges, rng).into_iter().map(|(a, b)| (a + n, b + n)));
        n += size;
    }
    offsets.push(n);
    let p = rng.gen_range(spec.inter_p[0]..=spec.inter_p[1]);
    for &(a, b) in backbone {
        edges.push((offsets[a], offsets[b]));
        for (from, to) in [(a, b), (b, a)] {
            for u in offsets[from]..offsets[from + 1] {
                if rng.gen_bool(p) {
                    for _ in 0..spec.ba_edges {
                        edges.push((u, rng.gen_range(offsets[to]..offsets[to + 1])));
                    }
                }
            }
        }
    }
    let mut adj = Array2::zeros((n, n));
    for (u, v) in edges {
        if u != v {
            adj[[u, v]] = 1.0;
            adj[[v, u]] = 1.0;
        }
    }
    let feats = degree_one_hot(&adj, spec.feature_bins);
    Ok(Graph::new(adj, feats, label)?)
}

fn balanced_labels(spec: &SynthSpec, classes: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..spec.graphs).map(|i| i % classes).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    labels
}

fn assemble(
    spec: &SynthSpec,
    built: Vec<(Graph, GroundTruth)>,
) -> DatasetResult<DatasetBundle> {
    let (graphs, truth): (Vec<_>, Vec<_>) = built.into_iter().unzip();
    Ok(DatasetBundle {
        name: spec.kind.name().to_string(),
        folds: vec![0; graphs.len()],
        graphs,
        classes: spec.kind.class_names(),
        ground_truth: Some(truth),
        provenance: serde_json::json!({ "spec": spec, "ranges": spec.ranges() }),
    })
}

fn check_kind(spec: &SynthSpec, kind: DatasetKind) -> DatasetResult<()> {
    spec.validate()?;
    if spec.kind != kind {
        return Err(DatasetError::Spec(format!("expected a {kind} spec, got {}", spec.kind)));
    }
    Ok(())
}

pub fn gen_graphcycle(spec: &SynthSpec) -> DatasetResult<DatasetBundle> {
    check_kind(spec, DatasetKind::GraphCycle)?;
    let labels = balanced_labels(spec, 2);
    let built = (0..spec.graphs)
        .into_par_iter()
        .map(|i| {
            let mut rng = spec.graph_rng(i);
            let c = sample_range(&mut rng, spec.ranges().communities);
            let mut order: Vec<usize> = (0..c).collect();
            order.shuffle(&mut rng);
            let shape = if labels[i] == 0 { ring(c) } else { random_tree(c, &mut rng) };
            let backbone: Vec<_> = shape.iter().map(|&(a, b)| (order[a], order[b])).collect();
            let g = communities_on_backbone(spec, &backbone, c, labels[i], &mut rng)?;
            let truth = GroundTruth {
                template: template_graph(c, &backbone, labels[i])?,
                composition: None,
            };
            Ok((g, truth))
        })
        .collect::<DatasetResult<Vec<_>>>()?;
    assemble(spec, built)
}

pub fn gen_graphfive(spec: &SynthSpec) -> DatasetResult<DatasetBundle> {
    check_kind(spec, DatasetKind::GraphFive)?;
    let labels = balanced_labels(spec, 5);
    let built = (0..spec.graphs)
        .into_par_iter()
        .map(|i| {
            let mut rng = spec.graph_rng(i);
            let c = loop {
                let c = sample_range(&mut rng, spec.ranges().communities);
                if c >= 4 {
                    break c;
                }
            };
            let shape = match labels[i] {
                0 => wheel(c),
                1 => grid(c),
                2 => binary_tree(c),
                3 => ladder(c),
                _ => star(c),
            };
            let g = communities_on_backbone(spec, &shape, c, labels[i], &mut rng)?;
            let truth = GroundTruth {
                template: template_graph(c, &shape, labels[i])?,
                composition: None,
            };
            Ok((g, truth))
        })
        .collect::<DatasetResult<Vec<_>>>()?;
    assemble(spec, built)
}

/// Third-level motifs: triangle, star, trapezoid and 6-cycle. Node 0 is the
/// attachment point.
fn motif(kind: usize) -> (usize, Vec<(usize, usize)>) {
    match kind {
        0 => (3, ring(3)),
        1 => (6, star(6)),
        2 => (4, vec![(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]),
        _ => (6, ring(6)),
    }
}

fn structure(kind: StructureKind, n: usize) -> Vec<(usize, usize)> {
    match kind {
        StructureKind::Cycle => ring(n),
        StructureKind::Chain => chain(n),
    }
}

/// Class of a nested graph, or `None` for combinations no class covers.
pub fn multiplecycle_class(top: StructureKind, inner: &[StructureKind]) -> Option<usize> {
    let all_same = inner.iter().all(|k| *k == top);
    let mixed = inner.contains(&StructureKind::Cycle) && inner.contains(&StructureKind::Chain);
    match (top, all_same, mixed) {
        (StructureKind::Cycle, true, _) => Some(0),
        (StructureKind::Chain, true, _) => Some(1),
        (StructureKind::Cycle, false, true) => Some(2),
        (StructureKind::Chain, false, true) => Some(3),
        _ => None,
    }
}

pub fn gen_multiplecycle(spec: &SynthSpec) -> DatasetResult<DatasetBundle> {
    check_kind(spec, DatasetKind::MultipleCycle)?;
    let labels = balanced_labels(spec, 4);
    let built = (0..spec.graphs)
        .into_par_iter()
        .map(|i| {
            let mut rng = spec.graph_rng(i);
            let r = spec.ranges().structure_size;
            let label = labels[i];
            let top = if label % 2 == 0 { StructureKind::Cycle } else { StructureKind::Chain };
            let s1 = sample_range(&mut rng, r);
            let inner: Vec<StructureKind> = if label < 2 {
                vec![top; s1]
            } else {
                loop {
                    let kinds: Vec<_> = (0..s1)
                        .map(|_| if rng.gen_bool(0.5) { StructureKind::Cycle } else { StructureKind::Chain })
                        .collect();
                    if multiplecycle_class(top, &kinds) == Some(label) {
                        break kinds;
                    }
                }
            };
            let mut edges = Vec::new();
            let mut n = 0;
            let mut anchors = Vec::with_capacity(s1);
            for kind in &inner {
                let s2 = sample_range(&mut rng, r);
                let mut motif_anchor = Vec::with_capacity(s2);
                for _ in 0..s2 {
                    let (size, e) = motif(rng.gen_range(0..4));
                    motif_anchor.push(n);
                    edges.extend(e.into_iter().map(|(a, b)| (a + n, b + n)));
                    n += size;
                }
                edges.extend(structure(*kind, s2).into_iter().map(|(a, b)| (motif_anchor[a], motif_anchor[b])));
                anchors.push(motif_anchor[0]);
            }
            let top_edges = structure(top, s1);
            edges.extend(top_edges.iter().map(|&(a, b)| (anchors[a], anchors[b])));
            let mut adj = Array2::zeros((n, n));
            for (u, v) in edges {
                adj[[u, v]] = 1.0;
                adj[[v, u]] = 1.0;
            }
            let feats = degree_one_hot(&adj, spec.feature_bins);
            let g = Graph::new(adj, feats, label)?;
            let truth = GroundTruth {
                template: template_graph(s1, &top_edges, label)?,
                composition: Some(inner),
            };
            Ok((g, truth))
        })
        .collect::<DatasetResult<Vec<_>>>()?;
    assemble(spec, built)
}

pub fn generate(spec: &SynthSpec) -> DatasetResult<DatasetBundle> {
    match spec.kind {
        DatasetKind::GraphCycle => gen_graphcycle(spec),
        DatasetKind::GraphFive => gen_graphfive(spec),
        DatasetKind::MultipleCycle => gen_multiplecycle(spec),
    }
}

/// Stratified shuffled folds: per-class counts across folds differ by at most one.
pub fn assign_folds(mut bundle: DatasetBundle, k: usize, seed: u64) -> DatasetResult<DatasetBundle> {
    if k < 2 {
        return Err(DatasetError::Spec("fold count must be at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, g) in bundle.graphs.iter().enumerate() {
        by_class.entry(g.label).or_default().push(i);
    }
    let mut folds = vec![0; bundle.graphs.len()];
    let mut next = 0;
    for (class, mut members) in by_class {
        if members.len() < k {
            warn!("class {class} has {} graphs, fewer than {k} folds", members.len());
        }
        members.shuffle(&mut rng);
        for i in members {
            folds[i] = next % k;
            next += 1;
        }
    }
    bundle.folds = folds;
    Ok(bundle)
}

fn read_lines(path: &Path) -> DatasetResult<Vec<String>> {
    if !path.exists() {
        return Err(DatasetError::MissingFile(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

fn parse_num<T: FromStr>(s: &str, file: &Path, line: usize) -> DatasetResult<T>
where
    T::Err: fmt::Display,
{
    s.trim().parse().map_err(|e: T::Err| DatasetError::Parse {
        file: file.display().to_string(),
        line: line + 1,
        msg: format!("`{s}`: {e}"),
    })
}

/// Dataset prefix of a TU directory, taken from its `*_A.txt` file.
pub fn tu_prefix(dir: &Path) -> DatasetResult<String> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(p) = name.strip_suffix("_A.txt") {
            found.push(p.to_string());
        }
    }
    found.sort();
    found
        .into_iter()
        .next()
        .ok_or_else(|| DatasetError::MissingFile(dir.join("DS_A.txt")))
}

pub fn load_tu(dir: &Path) -> DatasetResult<DatasetBundle> {
    let ds = tu_prefix(dir)?;
    let file = |suffix: &str| dir.join(format!("{ds}_{suffix}.txt"));
    let indicator_path = file("graph_indicator");
    let indicator: Vec<usize> = read_lines(&indicator_path)?
        .iter()
        .enumerate()
        .map(|(i, l)| parse_num(l, &indicator_path, i))
        .collect::<DatasetResult<_>>()?;
    let labels_path = file("graph_labels");
    let raw_labels: Vec<i64> = read_lines(&labels_path)?
        .iter()
        .enumerate()
        .map(|(i, l)| parse_num(l, &labels_path, i))
        .collect::<DatasetResult<_>>()?;
    let num_graphs = raw_labels.len();
    let total = indicator.len();

    // Global node -> (graph, local index).
    let mut sizes = vec![0usize; num_graphs];
    let mut local = Vec::with_capacity(total);
    for (i, &g) in indicator.iter().enumerate() {
        if g == 0 || g > num_graphs {
            return Err(DatasetError::Parse {
                file: indicator_path.display().to_string(),
                line: i + 1,
                msg: format!("graph id {g} outside 1..={num_graphs}"),
            });
        }
        local.push((g - 1, sizes[g - 1]));
        sizes[g - 1] += 1;
    }
    let mut adjs: Vec<Matrix> = sizes.iter().map(|&n| Array2::zeros((n, n))).collect();
    let a_path = file("A");
    let mut asymmetric = false;
    let mut self_loops = 0;
    for (line, l) in read_lines(&a_path)?.iter().enumerate() {
        let (a, b) = l.split_once(',').ok_or_else(|| DatasetError::Parse {
            file: a_path.display().to_string(),
            line: line + 1,
            msg: "expected `i, j`".into(),
        })?;
        let (a, b): (usize, usize) = (parse_num(a, &a_path, line)?, parse_num(b, &a_path, line)?);
        for x in [a, b] {
            if x == 0 || x > total {
                return Err(DatasetError::DanglingNode(x));
            }
        }
        let ((ga, ia), (gb, ib)) = (local[a - 1], local[b - 1]);
        if ga != gb {
            return Err(DatasetError::CrossGraphEdge(a, b));
        }
        if ia == ib {
            self_loops += 1;
            continue;
        }
        adjs[ga][[ia, ib]] = 1.0;
    }
    for adj in &mut adjs {
        let n = adj.nrows();
        for i in 0..n {
            for j in 0..n {
                if adj[[i, j]] != adj[[j, i]] {
                    asymmetric = true;
                    adj[[i, j]] = 1.0;
                    adj[[j, i]] = 1.0;
                }
            }
        }
    }
    if asymmetric {
        warn!("{}: edge list was not symmetric; symmetrized", a_path.display());
    }
    if self_loops > 0 {
        warn!("{}: dropped {self_loops} self-loops", a_path.display());
    }

    let attr_path = file("node_attributes");
    let node_label_path = file("node_labels");
    let attrs = if attr_path.exists() { read_lines(&attr_path)? } else { vec![] };
    let node_labels = if node_label_path.exists() { read_lines(&node_label_path)? } else { vec![] };
    let mut feats: Vec<Matrix> = Vec::with_capacity(num_graphs);
    let feature_source;
    if !attrs.is_empty() {
        feature_source = "attributes";
        let rows: Vec<Vec<f64>> = attrs
            .iter()
            .enumerate()
            .map(|(i, l)| l.split(',').map(|v| parse_num(v, &attr_path, i)).collect())
            .collect::<DatasetResult<_>>()?;
        let d = rows[0].len();
        if rows.len() != total || rows.iter().any(|r| r.len() != d) {
            return Err(DatasetError::Parse {
                file: attr_path.display().to_string(),
                line: 0,
                msg: "attribute rows must match node count and share one width".into(),
            });
        }
        feats.extend(sizes.iter().map(|&n| Array2::zeros((n, d))));
        for (i, row) in rows.iter().enumerate() {
            let (g, j) = local[i];
            for (c, v) in row.iter().enumerate() {
                feats[g][[j, c]] = *v;
            }
        }
    } else if !node_labels.is_empty() {
        feature_source = "node-labels";
        if node_labels.len() != total {
            return Err(DatasetError::Parse {
                file: node_label_path.display().to_string(),
                line: 0,
                msg: format!("{} node labels for {total} nodes", node_labels.len()),
            });
        }
        let vals: Vec<i64> = node_labels
            .iter()
            .enumerate()
            .map(|(i, l)| parse_num(l.split(',').next().unwrap_or(l), &node_label_path, i))
            .collect::<DatasetResult<_>>()?;
        let vocab: BTreeSet<i64> = vals.iter().copied().collect();
        let index: BTreeMap<i64, usize> = vocab.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        feats.extend(sizes.iter().map(|&n| Array2::zeros((n, vocab.len()))));
        for (i, v) in vals.iter().enumerate() {
            let (g, j) = local[i];
            feats[g][[j, index[v]]] = 1.0;
        }
    } else {
        feature_source = "degree-one-hot";
        feats.extend(adjs.iter().map(|a| degree_one_hot(a, DEGREE_BINS)));
    }

    let vocab: BTreeSet<i64> = raw_labels.iter().copied().collect();
    let label_index: BTreeMap<i64, usize> = vocab.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let graphs = adjs
        .into_iter()
        .zip(feats)
        .zip(&raw_labels)
        .map(|((a, x), l)| Graph::new(a, x, label_index[l]))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DatasetBundle {
        name: ds.clone(),
        folds: vec![0; graphs.len()],
        graphs,
        classes: vocab.iter().map(|v| v.to_string()).collect(),
        ground_truth: None,
        provenance: serde_json::json!({ "source": dir.display().to_string(), "features": feature_source }),
    })
}

/// Writes `DS_A`, `DS_graph_indicator`, `DS_graph_labels` and
/// `DS_node_attributes`. Edge weights are not stored.
pub fn save_tu(bundle: &DatasetBundle, dir: &Path) -> DatasetResult<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let ds = &bundle.name;
    let (mut a, mut ind, mut lab, mut att) = (String::new(), String::new(), String::new(), String::new());
    let mut offset = 0;
    for (gi, g) in bundle.graphs.iter().enumerate() {
        let n = g.n();
        for i in 0..n {
            ind.push_str(&format!("{}\n", gi + 1));
            let row: Vec<String> = g.features().row(i).iter().map(|v| v.to_string()).collect();
            att.push_str(&row.join(", "));
            att.push('\n');
            for j in 0..n {
                if g.adjacency()[[i, j]] != 0.0 {
                    a.push_str(&format!("{}, {}\n", offset + i + 1, offset + j + 1));
                }
            }
        }
        lab.push_str(&format!("{}\n", g.label));
        offset += n;
    }
    let mut written = Vec::new();
    for (suffix, body) in [("A", a), ("graph_indicator", ind), ("graph_labels", lab), ("node_attributes", att)] {
        let p = dir.join(format!("{ds}_{suffix}.txt"));
        fs::write(&p, body)?;
        written.push(p);
    }
    Ok(written)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TemplateRecord {
    n: usize,
    edges: Vec<(usize, usize)>,
    composition: Option<Vec<StructureKind>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub classes: Vec<String>,
    pub class_counts: Vec<usize>,
    pub graphs: usize,
    pub avg_nodes: f64,
    pub avg_edges: f64,
    pub folds: Vec<usize>,
    pub provenance: serde_json::Value,
    /// sha256 over the TU payload files in write order.
    pub checksum: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

/// TU files, manifest and (when present) the ground-truth templates.
pub fn save_bundle(bundle: &DatasetBundle, dir: &Path) -> DatasetResult<Manifest> {
    let files = save_tu(bundle, dir)?;
    let mut hasher = Sha256::new();
    for f in &files {
        hasher.update(fs::read(f)?);
    }
    let checksum: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    let manifest = Manifest {
        name: bundle.name.clone(),
        classes: bundle.classes.clone(),
        class_counts: bundle.class_counts(),
        graphs: bundle.graphs.len(),
        avg_nodes: bundle.avg_nodes(),
        avg_edges: bundle.avg_edges(),
        folds: bundle.folds.clone(),
        provenance: bundle.provenance.clone(),
        checksum,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    if let Some(truth) = &bundle.ground_truth {
        let records: Vec<TemplateRecord> = truth
            .iter()
            .map(|t| TemplateRecord {
                n: t.template.n(),
                edges: t.template.edges(),
                composition: t.composition.clone(),
            })
            .collect();
        fs::write(dir.join(GROUND_TRUTH_FILE), serde_json::to_string(&records)? + "\n")?;
    }
    Ok(manifest)
}

/// Reads a TU directory plus the optional manifest (folds, class names)
/// and ground-truth file written by [`save_bundle`].
pub fn load_bundle(dir: &Path) -> DatasetResult<DatasetBundle> {
    let mut bundle = load_tu(dir)?;
    let mpath = dir.join(MANIFEST_FILE);
    if mpath.exists() {
        let m: Manifest = serde_json::from_str(&fs::read_to_string(&mpath)?)?;
        if m.folds.len() == bundle.graphs.len() {
            bundle.folds = m.folds;
        }
        if m.classes.len() == bundle.classes.len() {
            bundle.classes = m.classes;
        }
        bundle.name = m.name;
        bundle.provenance = m.provenance;
    }
    let tpath = dir.join(GROUND_TRUTH_FILE);
    if tpath.exists() {
        let records: Vec<TemplateRecord> = serde_json::from_str(&fs::read_to_string(&tpath)?)?;
        let truth = records
            .into_iter()
            .zip(&bundle.graphs)
            .map(|(r, g)| {
                Ok(GroundTruth {
                    template: template_graph(r.n, &r.edges, g.label)?,
                    composition: r.composition,
                })
            })
            .collect::<DatasetResult<Vec<_>>>()?;
        bundle.ground_truth = Some(truth);
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mini(kind: DatasetKind, graphs: usize) -> SynthSpec {
        SynthSpec {
            graphs,
            scale: 0.1,
            seed: 11,
            ..SynthSpec::paper(kind)
        }
    }

    #[test]
    fn scaled_ranges() {
        let r = mini(DatasetKind::GraphCycle, 1).ranges();
        assert_eq!(r.communities, [3, 5]);
        assert_eq!(r.community_size, [5, 20]);
        let full = SynthSpec::paper(DatasetKind::GraphCycle).ranges();
        assert_eq!(full.communities, [8, 15]);
        assert_eq!(full.community_size, [10, 200]);
    }

    #[test]
    fn mini_graphcycle_connected_and_balanced() {
        let b = gen_graphcycle(&mini(DatasetKind::GraphCycle, 60)).unwrap();
        assert_eq!(b.class_counts(), vec![30, 30]);
        assert!(b.graphs.iter().all(|g| g.is_connected()));
        for (g, t) in b.graphs.iter().zip(b.templates().unwrap()) {
            let c = t.template.n();
            let e = t.template.edge_count();
            if g.label == 0 {
                assert_eq!(e, c);
            } else {
                assert_eq!(e, c - 1);
                assert!(t.template.is_connected());
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        let s = mini(DatasetKind::GraphFive, 20);
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
        let other = SynthSpec { seed: 12, ..s };
        assert_ne!(generate(&other).unwrap().graphs, generate(&mini(DatasetKind::GraphFive, 20)).unwrap().graphs);
    }

    #[test]
    fn backbone_shapes() {
        assert_eq!(star(6).len(), 5);
        assert_eq!(grid(9).len(), 12);
        assert_eq!(grid(6).len(), 7);
        assert_eq!(wheel(5).len(), 8);
        assert_eq!(ladder(6).len(), 7);
        assert_eq!(ladder(5).len(), 5);
        assert_eq!(binary_tree(7).len(), 6);
        for c in 4..12 {
            for e in [grid(c), ladder(c), wheel(c), binary_tree(c), star(c)] {
                let g = template_graph(c, &e, 0).unwrap();
                assert!(g.is_connected(), "{c}");
            }
        }
    }

    #[test]
    fn ba_graph_edge_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = barabasi_albert(30, 2, &mut rng);
        assert_eq!(e.len(), 3 + 2 * 27);
        let g = Graph::from_edges(30, &e, Array2::ones((30, 1)), 0).unwrap();
        assert!(g.is_connected());
    }

    #[test]
    fn multiplecycle_classes() {
        use StructureKind::*;
        assert_eq!(multiplecycle_class(Cycle, &[Cycle, Cycle, Cycle]), Some(0));
        assert_eq!(multiplecycle_class(Chain, &[Chain, Chain]), Some(1));
        assert_eq!(multiplecycle_class(Cycle, &[Cycle, Chain, Cycle, Cycle]), Some(2));
        assert_eq!(multiplecycle_class(Chain, &[Cycle, Chain]), Some(3));
        assert_eq!(multiplecycle_class(Chain, &[Cycle, Cycle]), None);
        let b = gen_multiplecycle(&mini(DatasetKind::MultipleCycle, 40)).unwrap();
        assert_eq!(b.class_counts(), vec![10; 4]);
        for (g, t) in b.graphs.iter().zip(b.templates().unwrap()) {
            assert!(g.is_connected());
            let comp = t.composition.as_ref().unwrap();
            assert_eq!(comp.len(), t.template.n());
            let top = if t.template.edge_count() == t.template.n() { Cycle } else { Chain };
            assert_eq!(multiplecycle_class(top, comp), Some(g.label));
        }
    }

    #[test]
    fn folds_are_stratified() {
        let b = gen_graphcycle(&mini(DatasetKind::GraphCycle, 100)).unwrap();
        let b = assign_folds(b, 10, 3).unwrap();
        for f in 0..10 {
            for c in 0..2 {
                let n = b.graphs.iter().zip(&b.folds).filter(|(g, &k)| k == f && g.label == c).count();
                assert_eq!(n, 5);
            }
        }
        let again = assign_folds(b.clone(), 10, 3).unwrap();
        assert_eq!(again.folds, b.folds);
    }

    #[test]
    fn tu_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = assign_folds(gen_graphfive(&mini(DatasetKind::GraphFive, 15)).unwrap(), 3, 1).unwrap();
        let m1 = save_bundle(&b, dir.path()).unwrap();
        let back = load_bundle(dir.path()).unwrap();
        assert_eq!(back.graphs, b.graphs);
        assert_eq!(back.folds, b.folds);
        assert_eq!(back.classes, b.classes);
        assert_eq!(back.ground_truth, b.ground_truth);
        let dir2 = tempfile::tempdir().unwrap();
        assert_eq!(save_bundle(&back, dir2.path()).unwrap().checksum, m1.checksum);
    }

    #[test]
    fn tu_fixture_and_fallback() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        fs::write(p.join("FX_A.txt"), "1, 2\n2, 1\n2, 3\n3, 2\n1, 3\n3, 1\n4, 5\n5, 4\n").unwrap();
        fs::write(p.join("FX_graph_indicator.txt"), "1\n1\n1\n2\n2\n").unwrap();
        fs::write(p.join("FX_graph_labels.txt"), "-1\n1\n").unwrap();
        fs::write(p.join("FX_node_labels.txt"), "").unwrap();
        let b = load_tu(p).unwrap();
        assert_eq!(b.graphs.len(), 2);
        assert_eq!(b.graphs[0].adjacency(), &ndarray::array![[0., 1., 1.], [1., 0., 1.], [1., 1., 0.]]);
        assert_eq!(b.graphs[1].adjacency(), &ndarray::array![[0., 1.], [1., 0.]]);
        assert_eq!((b.graphs[0].label, b.graphs[1].label), (0, 1));
        assert_eq!(b.graphs[0].features(), &degree_one_hot(b.graphs[0].adjacency(), DEGREE_BINS));
        assert_eq!(b.provenance["features"], "degree-one-hot");

        fs::write(p.join("FX_node_labels.txt"), "0\n2\n0\n2\n2\n").unwrap();
        fs::write(p.join("FX_A.txt"), "1, 2\n2, 3\n1, 3\n4, 5\n").unwrap();
        let b = load_tu(p).unwrap();
        assert_eq!(b.graphs[0].adjacency()[[1, 0]], 1.0);
        assert_eq!(b.graphs[1].features(), &ndarray::array![[0., 1.], [0., 1.]]);

        fs::write(p.join("FX_A.txt"), "1, 9\n").unwrap();
        assert!(matches!(load_tu(p), Err(DatasetError::DanglingNode(9))));
        fs::remove_file(p.join("FX_graph_labels.txt")).unwrap();
        assert!(matches!(load_tu(p), Err(DatasetError::MissingFile(_))));
    }
}
