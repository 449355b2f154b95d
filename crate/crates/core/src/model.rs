//! The full tree: per-level coarsening, branch perturbation and routing along
//! the chosen root-to-leaf path, the class readout, the training objective,
//! explanation traces and checkpoints.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::autodiff::{Matrix, Tensor, TensorError};
use crate::coarsening::{
    assignment_logits, cluster_count, gcn_forward, link_loss, minmax_rescale, normalized_adjacency, pool_features,
    AssignmentHead, GcnStack, LOG_EPS,
};
use crate::graph::{coarsen_raw, Graph, GraphError};
use crate::params::{ForwardCtx, ParamGrads, ParamId, ParamStore};
use crate::perturbation::{branch_embeddings, perturb_assignments, perturb_losses, PerturbSettings, PerturbationSet};
use crate::routing::{
    apply_selection, route, routing_entropy, summarize_branches, Branch, GateMode, Router, RouterVariant,
    RoutingDecision,
};

pub const CHECKPOINT_HEADER: &str = "TIF1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("graph has feature width {got}, model expects {expected}")]
    FeatureDim { expected: usize, got: usize },
    #[error("level {level} needs {k} clusters but the model was built for at most {k_max}")]
    TooLarge { level: usize, k: usize, k_max: usize },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type ModelResult<T> = std::result::Result<T, ModelError>;

/// Which model variant to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Profile {
    #[default]
    #[serde(rename = "full")]
    Full,
    /// Two branches, frozen per-level perturbations, linear routers.
    #[serde(rename = "bitree")]
    BiTree,
    /// Linear routers.
    #[serde(rename = "no-iar")]
    NoIar,
    /// Zero perturbations, no perturbation loss.
    #[serde(rename = "no-pm")]
    NoPm,
    /// One learnable perturbation set shared by every parent in a level.
    #[serde(rename = "sv")]
    Sv,
}

impl Profile {
    pub const ALL: [Profile; 5] = [Profile::Full, Profile::BiTree, Profile::NoIar, Profile::NoPm, Profile::Sv];

    pub fn name(self) -> &'static str {
        match self {
            Profile::Full => "full",
            Profile::BiTree => "bitree",
            Profile::NoIar => "no-iar",
            Profile::NoPm => "no-pm",
            Profile::Sv => "sv",
        }
    }

    /// At most one flag may be set; none selects the full model.
    pub fn from_flags(bitree: bool, no_iar: bool, no_pm: bool, sv: bool) -> ModelResult<Self> {
        let picked: Vec<Profile> = [
            (bitree, Profile::BiTree),
            (no_iar, Profile::NoIar),
            (no_pm, Profile::NoPm),
            (sv, Profile::Sv),
        ]
        .into_iter()
        .filter_map(|(on, p)| on.then_some(p))
        .collect();
        match picked.as_slice() {
            [] => Ok(Profile::Full),
            [p] => Ok(*p),
            many => Err(ModelError::Config(format!(
                "conflicting variant flags: {}",
                many.iter().map(|p| p.name()).collect::<Vec<_>>().join(", ")
            ))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Profile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (expected full, bitree, no-iar, no-pm or sv)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TifConfig {
    pub levels: usize,
    pub branches: usize,
    pub q: f64,
    pub hidden: usize,
    pub gcn_layers: usize,
    pub feat_dim: usize,
    pub classes: usize,
    /// Largest input graph the assignment heads are sized for.
    pub max_nodes: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    /// Link loss at every level; `false` keeps it on the first level only.
    pub link_all_levels: bool,
    /// Multiplies the entropy term; `-1` rewards spread-out routing.
    pub entropy_sign: f64,
    pub router_variant: RouterVariant,
    pub router_hidden: usize,
    pub gate: GateMode,
    pub perturb: PerturbSettings,
    pub perturb_init_std: f64,
    /// Init std of the frozen perturbations in the bitree profile.
    pub fixed_perturb_std: f64,
    pub profile: Profile,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TifConfig {
    fn default() -> Self {
        Self {
            levels: 2,
            branches: 4,
            q: 0.2,
            hidden: 64,
            gcn_layers: 2,
            feat_dim: 16,
            classes: 2,
            max_nodes: 64,
            alpha1: 0.3,
            alpha2: 0.2,
            alpha3: 0.1,
            link_all_levels: true,
            entropy_sign: -1.0,
            router_variant: RouterVariant::Mlp,
            router_hidden: 32,
            gate: GateMode::Prob,
            perturb: PerturbSettings::default(),
            perturb_init_std: 0.01,
            fixed_perturb_std: 0.5,
            profile: Profile::Full,
            lr: 0.01,
            batch_size: 64,
            epochs: 500,
            seed: 0,
        }
    }
}

impl TifConfig {
    pub fn validate(&self) -> ModelResult<()> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.levels < 1 {
            return bad("levels must be at least 1".into());
        }
        if self.branches < 2 {
            return bad("branches must be at least 2".into());
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad(format!("q must lie in (0, 1), got {}", self.q));
        }
        for (name, v) in [
            ("hidden", self.hidden),
            ("gcn_layers", self.gcn_layers),
            ("feat_dim", self.feat_dim),
            ("max_nodes", self.max_nodes),
            ("router_hidden", self.router_hidden),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.classes < 2 {
            return bad("classes must be at least 2".into());
        }
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
            ("perturb_init_std", self.perturb_init_std),
            ("fixed_perturb_std", self.fixed_perturb_std),
            ("perturb.lambda", self.perturb.lambda),
            ("perturb.mu", self.perturb.mu),
            ("perturb.margin", self.perturb.margin),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.entropy_sign != 1.0 && self.entropy_sign != -1.0 {
            return bad(format!("entropy_sign must be 1 or -1, got {}", self.entropy_sign));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.profile == Profile::BiTree && (self.branches != 2 || self.router_variant != RouterVariant::Linear) {
            return bad("bitree requires 2 branches and linear routers".into());
        }
        Ok(())
    }

    /// The config with the profile's structural overrides applied.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        match c.profile {
            Profile::BiTree => {
                c.branches = 2;
                c.router_variant = RouterVariant::Linear;
            }
            Profile::NoIar => c.router_variant = RouterVariant::Linear,
            Profile::Full | Profile::NoPm | Profile::Sv => {}
        }
        c
    }

    /// Upper bound on the cluster count at each level.
    pub fn cluster_widths(&self) -> Vec<usize> {
        let mut n = self.max_nodes;
        (0..self.levels)
            .map(|_| {
                n = cluster_count(self.q, n);
                n
            })
            .collect()
    }

    pub fn perturb_loss_active(&self) -> bool {
        self.profile != Profile::NoPm
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelParams {
    pub gcn: GcnStack,
    pub head: AssignmentHead,
    /// One set per tree node, or a single set shared by the whole level.
    pub perturb: Vec<PerturbationSet>,
    /// One router per tree node at this level.
    pub routers: Vec<Router>,
}

impl LevelParams {
    pub fn perturb_for(&self, node: usize) -> &PerturbationSet {
        if self.perturb.len() == 1 {
            &self.perturb[0]
        } else {
            &self.perturb[node]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TifModel {
    pub config: TifConfig,
    pub store: ParamStore,
    pub levels: Vec<LevelParams>,
    pub readout_w: ParamId,
    pub readout_b: ParamId,
}

/// Builds a freshly initialised model for the config's profile.
pub fn make_variant(config: &TifConfig) -> ModelResult<TifModel> {
    let cfg = config.effective();
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let m = cfg.branches;
    let mut levels = Vec::with_capacity(cfg.levels);
    let mut nodes = 1usize;
    for (l, k_max) in cfg.cluster_widths().into_iter().enumerate() {
        let prefix = format!("level{l}");
        let d_in = if l == 0 { cfg.feat_dim } else { cfg.hidden };
        let gcn = GcnStack::new(&mut store, &prefix, d_in, cfg.hidden, cfg.gcn_layers, &mut rng);
        let head = AssignmentHead::new(&mut store, &prefix, cfg.hidden, k_max, &mut rng);
        let shared = |store: &mut ParamStore, rng: &mut ChaCha8Rng, std: f64, trainable: bool| {
            vec![PerturbationSet::new(
                store,
                &format!("{prefix}.shared"),
                m,
                k_max,
                std,
                trainable,
                &cfg.perturb,
                rng,
            )]
        };
        let perturb = match cfg.profile {
            Profile::Full | Profile::NoIar => (0..nodes)
                .map(|j| {
                    PerturbationSet::new(
                        &mut store,
                        &format!("{prefix}.node{j}"),
                        m,
                        k_max,
                        cfg.perturb_init_std,
                        true,
                        &cfg.perturb,
                        &mut rng,
                    )
                })
                .collect(),
            Profile::Sv => shared(&mut store, &mut rng, cfg.perturb_init_std, true),
            Profile::BiTree => shared(&mut store, &mut rng, cfg.fixed_perturb_std, false),
            Profile::NoPm => shared(&mut store, &mut rng, 0.0, false),
        };
        let routers = (0..nodes)
            .map(|j| {
                Router::new(
                    &mut store,
                    &format!("{prefix}.node{j}"),
                    m * cfg.hidden,
                    cfg.router_hidden,
                    m,
                    cfg.router_variant,
                    &mut rng,
                )
            })
            .collect();
        levels.push(LevelParams {
            gcn,
            head,
            perturb,
            routers,
        });
        nodes *= m;
    }
    let readout_w = store.add_glorot("readout.w", cfg.hidden, cfg.classes, &mut rng);
    let readout_b = store.add_zeros("readout.b", 1, cfg.classes);
    Ok(TifModel {
        config: cfg,
        store,
        levels,
        readout_w,
        readout_b,
    })
}

/// Regularisers accumulated over one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub link: Tensor,
    pub perturb: Tensor,
    pub entropy: Tensor,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `1 x C` class probabilities.
    pub class_probs: Tensor,
    pub parts: LossParts,
    /// Selected branch per level.
    pub path: Vec<usize>,
    pub decisions: Vec<RoutingDecision>,
    /// Selected assignment per level.
    pub assignments: Vec<Tensor>,
}

pub fn forward(ctx: &ForwardCtx, model: &TifModel, g: &Graph) -> ModelResult<ForwardOutput> {
    let cfg = &model.config;
    if g.feature_dim() != cfg.feat_dim {
        return Err(ModelError::FeatureDim {
            expected: cfg.feat_dim,
            got: g.feature_dim(),
        });
    }
    let tape = &ctx.tape;
    let mut x = tape.constant(g.features().clone())?;
    let mut a = tape.constant(g.adjacency().clone())?;
    let mut link = tape.scalar(0.0)?;
    let mut perturb = tape.scalar(0.0)?;
    let mut node = 0usize;
    let mut path = Vec::with_capacity(cfg.levels);
    let mut decisions = Vec::with_capacity(cfg.levels);
    let mut assignments = Vec::with_capacity(cfg.levels);
    for (l, lp) in model.levels.iter().enumerate() {
        let k = cluster_count(cfg.q, x.rows());
        if k > lp.head.k_max {
            return Err(ModelError::TooLarge {
                level: l,
                k,
                k_max: lp.head.k_max,
            });
        }
        let norm = normalized_adjacency(tape, &a)?;
        let z = gcn_forward(ctx, &lp.gcn, &norm, &x)?;
        let logits = assignment_logits(ctx, &lp.head, &z)?;
        let base = tape.row_softmax(&tape.slice_columns(&logits, 0, k)?)?;
        if l == 0 || cfg.link_all_levels {
            let target = if l == 0 { a } else { minmax_rescale(tape, &a)? };
            link = tape.add(&link, &link_loss(tape, &target, &base)?)?;
        }

        let ps = lp.perturb_for(node);
        let branch_s = perturb_assignments(ctx, ps, &logits, k)?;
        let branch_x = branch_embeddings(tape, &branch_s, &z)?;
        if cfg.perturb_loss_active() {
            let base_x = pool_features(tape, &z, &base)?;
            let pl = perturb_losses(tape, ps, &branch_x, &base_x)?;
            perturb = tape.add(&perturb, &pl.total)?;
        }

        let summary = summarize_branches(tape, &branch_x)?;
        let decision = route(ctx, &lp.routers[node], &summary)?;
        let branches: Vec<Branch> = branch_s
            .iter()
            .zip(&branch_x)
            .map(|(s, f)| Branch {
                assignment: *s,
                features: *f,
            })
            .collect();
        let sel = apply_selection(tape, &decision, &branches, &a)?;
        x = match cfg.gate {
            GateMode::Prob => tape.mul(&sel.features, &sel.gate)?,
            GateMode::None => sel.features,
        };
        a = sel.adjacency;
        node = node * cfg.branches + sel.index;
        path.push(sel.index);
        assignments.push(sel.assignment);
        decisions.push(decision);
    }
    let entropy = routing_entropy(tape, &decisions)?;
    let pooled = tape.mean_over_rows(&x)?;
    let scores = tape.add(
        &tape.matmul(&pooled, &ctx.param(model.readout_w)?)?,
        &ctx.param(model.readout_b)?,
    )?;
    let class_probs = tape.row_softmax(&scores)?;
    Ok(ForwardOutput {
        class_probs,
        parts: LossParts { link, perturb, entropy },
        path,
        decisions,
        assignments,
    })
}

/// Cross-entropy plus the weighted regularisers for one graph.
pub fn total_loss(
    ctx: &ForwardCtx,
    cfg: &TifConfig,
    parts: &LossParts,
    class_probs: &Tensor,
    label: usize,
) -> ModelResult<Tensor> {
    let tape = &ctx.tape;
    if label >= class_probs.cols() {
        return Err(ModelError::Label {
            label,
            classes: class_probs.cols(),
        });
    }
    let p = tape.slice_columns(class_probs, label, label + 1)?;
    let ce = tape.scale(&tape.log(&tape.clamp(&p, LOG_EPS, 1.0 - LOG_EPS)?)?, -1.0)?;
    let mut total = ce;
    for (weight, term) in [
        (cfg.alpha1, &parts.link),
        (if cfg.perturb_loss_active() { cfg.alpha2 } else { 0.0 }, &parts.perturb),
        (cfg.entropy_sign * cfg.alpha3, &parts.entropy),
    ] {
        if weight != 0.0 {
            total = tape.add(&total, &tape.scale(term, weight)?)?;
        }
    }
    Ok(total)
}

/// Inference result without gradient tracking.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub class: usize,
    pub path: Vec<usize>,
    pub routing: Vec<Vec<f64>>,
    pub assignments: Vec<Matrix>,
    /// Loss components as plain numbers: `[link, perturb, entropy]`.
    pub parts: [f64; 3],
}

fn prediction(ctx: &ForwardCtx, out: &ForwardOutput) -> Prediction {
    let tape = &ctx.tape;
    let probs = tape.value(&out.class_probs).row(0).to_vec();
    Prediction {
        class: crate::routing::argmax(&probs),
        probs,
        path: out.path.clone(),
        routing: out.decisions.iter().map(|d| d.probabilities.clone()).collect(),
        assignments: out.assignments.iter().map(|s| tape.to_matrix(s)).collect(),
        parts: [
            tape.item(&out.parts.link),
            tape.item(&out.parts.perturb),
            tape.item(&out.parts.entropy),
        ],
    }
}

#[derive(Debug, Clone)]
pub struct GraphStep {
    pub loss: f64,
    pub correct: bool,
    pub grads: ParamGrads,
}

impl TifModel {
    pub fn num_scalars(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn predict(&self, g: &Graph) -> ModelResult<Prediction> {
        let ctx = ForwardCtx::new(&self.store, false);
        let out = forward(&ctx, self, g)?;
        Ok(prediction(&ctx, &out))
    }

    /// Total loss on one labelled graph, no gradients.
    pub fn loss(&self, g: &Graph) -> ModelResult<(f64, Prediction)> {
        let ctx = ForwardCtx::new(&self.store, false);
        let out = forward(&ctx, self, g)?;
        let loss = total_loss(&ctx, &self.config, &out.parts, &out.class_probs, g.label)?;
        Ok((ctx.tape.item(&loss), prediction(&ctx, &out)))
    }

    pub fn loss_and_grad(&self, g: &Graph) -> ModelResult<GraphStep> {
        let ctx = ForwardCtx::new(&self.store, true);
        let out = forward(&ctx, self, g)?;
        let loss_t = total_loss(&ctx, &self.config, &out.parts, &out.class_probs, g.label)?;
        let loss = ctx.tape.item(&loss_t);
        let correct = crate::routing::argmax(&ctx.tape.value(&out.class_probs).row(0).to_vec()) == g.label;
        let grads = ctx.backward(&loss_t)?;
        Ok(GraphStep { loss, correct, grads })
    }

    pub fn explain(&self, g: &Graph) -> ModelResult<TreeTrace> {
        let p = self.predict(g)?;
        let mut levels = Vec::with_capacity(p.path.len());
        let mut node = 0;
        for (l, sel) in p.path.iter().enumerate() {
            node = node * self.config.branches + sel;
            levels.push(TraceLevel {
                selected: *sel,
                node,
                probs: p.routing[l].clone(),
                assignment: p.assignments[l].clone(),
                graph: coarsen_raw(g, &p.assignments[..=l])?,
            });
        }
        Ok(TreeTrace {
            levels,
            pred: p.class,
            probs: p.probs,
        })
    }

    pub fn to_checkpoint(&self) -> ModelResult<String> {
        let params = self
            .store
            .iter()
            .map(|(_, p)| ParamRecord {
                name: p.name.clone(),
                shape: [p.value.nrows(), p.value.ncols()],
                trainable: p.trainable,
                values: p.value.iter().copied().collect(),
            })
            .collect();
        let body = Checkpoint {
            config: self.config.clone(),
            params,
        };
        Ok(format!("{CHECKPOINT_HEADER}\n{}\n", serde_json::to_string(&body)?))
    }

    pub fn from_checkpoint(text: &str) -> ModelResult<Self> {
        let (header, body) = text
            .split_once('\n')
            .ok_or_else(|| ModelError::Checkpoint("missing header line".into()))?;
        if header.trim_end() != CHECKPOINT_HEADER {
            return Err(ModelError::Checkpoint(format!("unsupported header `{header}`")));
        }
        let body: Checkpoint = serde_json::from_str(body)?;
        let mut model = make_variant(&body.config)?;
        if body.params.len() != model.store.len() {
            return Err(ModelError::Checkpoint(format!(
                "{} parameters stored, model has {}",
                body.params.len(),
                model.store.len()
            )));
        }
        for rec in body.params {
            let id = model
                .store
                .find(&rec.name)
                .ok_or_else(|| ModelError::Checkpoint(format!("unknown parameter `{}`", rec.name)))?;
            let p = model.store.get_mut(id);
            if p.value.dim() != (rec.shape[0], rec.shape[1]) || rec.values.len() != p.value.len() {
                return Err(ModelError::Checkpoint(format!("shape mismatch for `{}`", rec.name)));
            }
            p.value = Matrix::from_shape_vec((rec.shape[0], rec.shape[1]), rec.values)
                .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> ModelResult<()> {
        fs::write(path, self.to_checkpoint()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> ModelResult<Self> {
        Self::from_checkpoint(&fs::read_to_string(path)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: [usize; 2],
    trainable: bool,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    config: TifConfig,
    params: Vec<ParamRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceLevel {
    pub selected: usize,
    /// Tree node reached at this level, `parent * M + selected`.
    pub node: usize,
    pub probs: Vec<f64>,
    pub assignment: Matrix,
    /// Raw graph coarsened by every assignment up to this level.
    pub graph: Graph,
}

/// One root-to-leaf explanation.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeTrace {
    pub levels: Vec<TraceLevel>,
    pub pred: usize,
    pub probs: Vec<f64>,
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

impl TreeTrace {
    pub fn path(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.selected).collect()
    }

    pub fn path_id(&self) -> String {
        path_id(&self.path())
    }

    /// Graph at the deepest level, the one the explanation metrics score.
    pub fn coarsest(&self) -> &Graph {
        &self.levels.last().expect("trace has at least one level").graph
    }

    pub fn to_json(&self) -> serde_json::Value {
        let levels: Vec<_> = self
            .levels
            .iter()
            .map(|l| {
                json!({
                    "selected": l.selected,
                    "probs": l.probs,
                    "graph": {
                        "n": l.graph.n(),
                        "adj": rows(l.graph.adjacency()),
                        "feat": rows(l.graph.features()),
                    }
                })
            })
            .collect();
        json!({ "levels": levels, "pred": self.pred, "probs": self.probs })
    }

    /// Tree nodes are `level:branch`; the chosen path is drawn bold.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph trace {\n  node [shape=box];\n  \"0:0\" [label=\"0:0\"];\n");
        let mut parent = "0:0".to_string();
        for (l, level) in self.levels.iter().enumerate() {
            let depth = l + 1;
            for (b, p) in level.probs.iter().enumerate() {
                let id = format!("{depth}:{b}");
                let chosen = b == level.selected;
                out.push_str(&format!(
                    "  \"{id}\" [label=\"{id}\"{}];\n",
                    if chosen { ", style=bold" } else { "" }
                ));
                out.push_str(&format!(
                    "  \"{parent}\" -> \"{id}\" [label=\"{p:.4}\", style={}];\n",
                    if chosen { "bold" } else { "dashed" }
                ));
            }
            parent = format!("{depth}:{}", level.selected);
        }
        out.push_str(&format!("  \"pred\" [shape=ellipse, label=\"class {}\"];\n", self.pred));
        out.push_str(&format!("  \"{parent}\" -> \"pred\" [style=bold];\n}}\n"));
        out
    }
}

pub fn path_id(path: &[usize]) -> String {
    path.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("-")
}
