//! Model assembly and the training harness: the meta-weight network, GCN and
//! MLP baselines, full-batch Adam training with early stopping, and the
//! ablation variants.

use std::rc::Rc;
use std::time::Instant;

use mwgnn_autodiff::{
    AdamConfig, AdamState, Binding, EdgeIndex, ParamStore, Tape, TensorError, TensorId,
};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::GraphBundle;
use crate::conv::{
    adaptive_layer, decoupled_edge_weights, fuse_weights, init_channel_embeddings,
    ChannelWeights, PsiIds,
};
use crate::graph::{Graph, GraphError};
use crate::meta::{
    attention_integrate, feature_distribution_average, feature_distribution_gru,
    position_distribution, topo_distribution, GruIds,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("train mask selects no nodes")]
    EmptyTrainMask,
    #[error("evaluation mask selects no nodes")]
    EmptyEvalMask,
    #[error("training diverged: non-finite loss at epoch {0}")]
    Diverged(usize),
    #[error("unknown ablation variant '{0}'")]
    UnknownVariant(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    Average,
    Gru,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    None,
    NoMeta,
    NoDf,
    NoDt,
    NoDp,
    NoChannels,
}

impl std::str::FromStr for Ablation {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Ablation::None,
            "no_meta" => Ablation::NoMeta,
            "no_df" => Ablation::NoDf,
            "no_dt" => Ablation::NoDt,
            "no_dp" => Ablation::NoDp,
            "no_channels" => Ablation::NoChannels,
            other => return Err(ModelError::UnknownVariant(other.to_string())),
        })
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Ablation::None => "none",
            Ablation::NoMeta => "no_meta",
            Ablation::NoDf => "no_df",
            Ablation::NoDt => "no_dt",
            Ablation::NoDp => "no_dp",
            Ablation::NoChannels => "no_channels",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MwgnnConfig {
    pub k: usize,
    pub alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub beta: f64,
    pub d_meta: usize,
    pub d_hidden: usize,
    pub d_q: usize,
    /// Hidden width of the position perceptron.
    pub d_phi: usize,
    /// Hidden width of the scoring perceptrons.
    pub d_psi: usize,
    pub num_layers: usize,
    pub feature_mode: FeatureMode,
    pub ablation: Ablation,
    /// Context sequences longer than this keep the highest-degree members.
    pub l_max: usize,
}

impl Default for MwgnnConfig {
    fn default() -> Self {
        MwgnnConfig {
            k: 2,
            alpha: 0.5,
            lambda1: 0.1,
            lambda2: 0.1,
            beta: 0.5,
            d_meta: 32,
            d_hidden: 128,
            d_q: 16,
            d_phi: 32,
            d_psi: 32,
            num_layers: 2,
            feature_mode: FeatureMode::Average,
            ablation: Ablation::None,
            l_max: 64,
        }
    }
}

impl MwgnnConfig {
    /// The no-channels variant is exactly the base model at
    /// lambda1 = lambda2 = 0, beta = 1.
    pub fn resolved(&self) -> MwgnnConfig {
        let mut cfg = self.clone();
        if cfg.ablation == Ablation::NoChannels {
            cfg.lambda1 = 0.0;
            cfg.lambda2 = 0.0;
            cfg.beta = 1.0;
            cfg.ablation = Ablation::None;
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(ModelError::InvalidConfig("num_layers must be >= 1".into()));
        }
        for (name, v) in [
            ("d_meta", self.d_meta),
            ("d_hidden", self.d_hidden),
            ("d_q", self.d_q),
            ("d_phi", self.d_phi),
            ("d_psi", self.d_psi),
            ("l_max", self.l_max),
        ] {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ModelError::InvalidConfig(format!(
                "alpha {} outside [0,1]",
                self.alpha
            )));
        }
        let cw = ChannelWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            beta: self.beta,
        };
        let resolved = self.resolved();
        let cw = if self.ablation == Ablation::NoChannels {
            ChannelWeights {
                lambda1: resolved.lambda1,
                lambda2: resolved.lambda2,
                beta: resolved.beta,
            }
        } else {
            cw
        };
        cw.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-2,
            weight_decay: 5e-4,
            max_epochs: 200,
            patience: 30,
            seed: 0,
        }
    }
}

/// Outcome of one training run; `test_acc` is taken at the epoch with the
/// best validation accuracy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub best_epoch: usize,
    pub val_acc_history: Vec<f64>,
    pub train_loss_history: Vec<f64>,
    pub best_val_acc: f64,
    pub test_acc: f64,
    pub wall_time_ms: f64,
}

/// Which model to train.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Mwgnn(MwgnnConfig),
    Gcn { layers: usize, d_hidden: usize },
    Mlp { layers: usize, d_hidden: usize },
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Mwgnn(_) => "mwgnn",
            ModelSpec::Gcn { .. } => "gcn",
            ModelSpec::Mlp { .. } => "mlp",
        }
    }
}

/// Directed CSR edge index of an undirected graph: one edge per (dst, src)
/// neighbor pair, grouped by destination.
pub fn csr_edge_index(g: &Graph) -> EdgeIndex {
    let n = g.num_nodes();
    let mut dst = Vec::with_capacity(2 * g.num_edges());
    let mut src = Vec::with_capacity(2 * g.num_edges());
    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0);
    for v in 0..n {
        for &u in g.neighbors(v) {
            dst.push(v);
            src.push(u);
        }
        offsets.push(dst.len());
    }
    EdgeIndex {
        num_nodes: n,
        dst,
        src,
        offsets,
    }
}

/// Everything about a bundle the meta-weight model reuses across epochs.
pub struct MwgnnPrecomp {
    pub ldp: Array2<f64>,
    pub spd_real: Option<Array2<f64>>,
    pub contexts: Vec<Vec<usize>>,
    pub edges: Rc<EdgeIndex>,
    pub khop_edges: Rc<EdgeIndex>,
    pub khop_weights: Array2<f64>,
}

pub fn precompute(bundle: &GraphBundle, cfg: &MwgnnConfig) -> Result<MwgnnPrecomp> {
    let cfg = cfg.resolved();
    let g = &bundle.graph;
    let n = g.num_nodes();
    let ldp = g.local_degree_profile().0;
    let spd_real = if cfg.ablation == Ablation::NoDp || cfg.ablation == Ablation::NoMeta {
        None
    } else {
        Some(g.shortest_path_matrix(None).to_real())
    };

    let needs_contexts = cfg.ablation != Ablation::NoMeta;
    let mut contexts = Vec::with_capacity(if needs_contexts { n } else { 0 });
    if needs_contexts {
        for v in 0..n {
            let mut ctx = g.sorted_context(v, cfg.k)?;
            if ctx.len() > cfg.l_max {
                // Ascending degree order: the tail holds the highest degrees.
                ctx = ctx.split_off(ctx.len() - cfg.l_max);
            }
            contexts.push(ctx);
        }
    }

    // k-hop mean edges for the average feature field.
    let mut dst = Vec::new();
    let mut src = Vec::new();
    let mut weights = Vec::new();
    let mut offsets = vec![0usize];
    for v in 0..n {
        let members = g.k_hop_neighbors(v, cfg.k)?;
        let w = 1.0 / members.len() as f64;
        for u in members {
            dst.push(v);
            src.push(u);
            weights.push(w);
        }
        offsets.push(dst.len());
    }
    let khop_edges = Rc::new(EdgeIndex {
        num_nodes: n,
        dst,
        src,
        offsets,
    });
    let khop_weights = Array2::from_shape_vec((weights.len(), 1), weights).expect("column");

    Ok(MwgnnPrecomp {
        ldp,
        spd_real,
        contexts,
        edges: Rc::new(csr_edge_index(g)),
        khop_edges,
        khop_weights,
    })
}

fn register_gru(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    for gate in ["w_u", "w_r", "w_h"] {
        store.insert_glorot(format!("{prefix}.{gate}"), hidden + input, hidden, rng)?;
    }
    for gate in ["b_u", "b_r", "b_h"] {
        store.insert_zeros(format!("{prefix}.{gate}"), 1, hidden)?;
    }
    Ok(())
}

fn register_psi(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    store.insert_glorot(format!("{prefix}.w1"), input, hidden, rng)?;
    store.insert_zeros(format!("{prefix}.b1"), 1, hidden)?;
    store.insert_glorot(format!("{prefix}.w2"), hidden, 1, rng)?;
    store.insert_zeros(format!("{prefix}.b2"), 1, 1)?;
    Ok(())
}

fn register_linear(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    output: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    store.insert_glorot(format!("{prefix}.w"), input, output, rng)?;
    store.insert_zeros(format!("{prefix}.b"), 1, output)?;
    Ok(())
}

pub fn init_mwgnn_params(
    bundle: &GraphBundle,
    cfg: &MwgnnConfig,
    seed: u64,
) -> Result<ParamStore> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let n = bundle.num_nodes();
    let f = bundle.feature_dim();
    let c = bundle.num_classes();

    if cfg.ablation != Ablation::NoMeta {
        if cfg.ablation != Ablation::NoDt {
            register_gru(&mut store, "gru_t", 5, cfg.d_meta, &mut rng)?;
        }
        if cfg.ablation != Ablation::NoDf {
            match cfg.feature_mode {
                FeatureMode::Average => {
                    register_linear(&mut store, "proj_f", f, cfg.d_meta, &mut rng)?;
                }
                FeatureMode::Gru => {
                    register_gru(&mut store, "gru_f", f, cfg.d_meta, &mut rng)?;
                }
            }
        }
        if cfg.ablation != Ablation::NoDp {
            store.insert_glorot("phi.w1", n, cfg.d_phi, &mut rng)?;
            store.insert_zeros("phi.b1", 1, cfg.d_phi)?;
            store.insert_glorot("phi.w2", cfg.d_phi, cfg.d_meta, &mut rng)?;
            store.insert_zeros("phi.b2", 1, cfg.d_meta)?;
        }
        store.insert_glorot("att.w_a", cfg.d_meta, cfg.d_q, &mut rng)?;
        store.insert_zeros("att.b", 1, cfg.d_q)?;
        store.insert_glorot("att.q", cfg.d_q, 1, &mut rng)?;
        register_psi(&mut store, "psi_f", cfg.d_meta + f, cfg.d_psi, &mut rng)?;
        register_psi(&mut store, "psi_t", cfg.d_meta + 5, cfg.d_psi, &mut rng)?;
    } else {
        // Scores fall back to feature/LDP pairs.
        register_psi(&mut store, "psi_f", 2 * f, cfg.d_psi, &mut rng)?;
        register_psi(&mut store, "psi_t", 2 * 5, cfg.d_psi, &mut rng)?;
    }

    register_linear(&mut store, "fc_f", f, cfg.d_hidden, &mut rng)?;
    register_linear(&mut store, "fc_t", n, cfg.d_hidden, &mut rng)?;
    for l in 0..cfg.num_layers {
        store.insert_glorot(format!("layer{l}.w"), cfg.d_hidden, cfg.d_hidden, &mut rng)?;
    }
    register_linear(&mut store, "clf", cfg.d_hidden, c, &mut rng)?;
    Ok(store)
}

/// Tape handles of interest from one forward pass.
pub struct MwgnnForward {
    pub logits: TensorId,
    pub w_meta: Option<TensorId>,
    pub attention: Option<TensorId>,
    pub s_f: TensorId,
    pub s_t: TensorId,
    pub s: TensorId,
}

pub fn mwgnn_forward(
    tape: &mut Tape,
    binding: &Binding,
    bundle: &GraphBundle,
    pre: &MwgnnPrecomp,
    cfg: &MwgnnConfig,
) -> Result<MwgnnForward> {
    let cfg = cfg.resolved();
    let x = tape.constant(bundle.features.clone());
    let ldp = tape.constant(pre.ldp.clone());

    let (w_meta, attention) = if cfg.ablation == Ablation::NoMeta {
        (None, None)
    } else {
        let mut fields = Vec::new();
        if cfg.ablation != Ablation::NoDt {
            let gru = GruIds::bind(binding, "gru_t")?;
            fields.push(topo_distribution(tape, ldp, &pre.contexts, &gru, cfg.d_meta)?);
        }
        if cfg.ablation != Ablation::NoDf {
            let d_f = match cfg.feature_mode {
                FeatureMode::Average => {
                    let w = tape.constant(pre.khop_weights.clone());
                    feature_distribution_average(
                        tape,
                        x,
                        pre.khop_edges.clone(),
                        w,
                        binding.id("proj_f.w")?,
                        binding.id("proj_f.b")?,
                    )?
                }
                FeatureMode::Gru => {
                    let gru = GruIds::bind(binding, "gru_f")?;
                    feature_distribution_gru(tape, x, &pre.contexts, &gru, cfg.d_meta)?
                }
            };
            fields.push(d_f);
        }
        if cfg.ablation != Ablation::NoDp {
            let spd = tape.constant(pre.spd_real.clone().expect("spd precomputed"));
            fields.push(position_distribution(
                tape,
                spd,
                binding.id("phi.w1")?,
                binding.id("phi.b1")?,
                binding.id("phi.w2")?,
                binding.id("phi.b2")?,
            )?);
        }
        let att = attention_integrate(
            tape,
            &fields,
            binding.id("att.w_a")?,
            binding.id("att.b")?,
            binding.id("att.q")?,
        )?;
        (Some(att.w_meta), Some(att.attention))
    };

    let psi_f = PsiIds::bind(binding, "psi_f")?;
    let psi_t = PsiIds::bind(binding, "psi_t")?;
    let (dst_f, dst_t) = match w_meta {
        Some(w) => (w, w),
        None => (x, ldp),
    };
    let mut scores =
        decoupled_edge_weights(tape, dst_f, dst_t, x, ldp, &psi_f, &psi_t, &pre.edges)?;
    let s = fuse_weights(tape, &mut scores, cfg.alpha)?;

    let edge_ones = tape.constant(Array2::ones((pre.edges.num_edges(), 1)));
    let ch = init_channel_embeddings(
        tape,
        x,
        binding.id("fc_f.w")?,
        binding.id("fc_f.b")?,
        binding.id("fc_t.w")?,
        binding.id("fc_t.b")?,
        edge_ones,
        pre.edges.clone(),
    )?;

    let cw = ChannelWeights {
        lambda1: cfg.lambda1,
        lambda2: cfg.lambda2,
        beta: cfg.beta,
    };
    let mut h = ch.h_f0;
    for l in 0..cfg.num_layers {
        let w_l = binding.id(&format!("layer{l}.w"))?;
        let activate = l + 1 < cfg.num_layers;
        h = adaptive_layer(tape, h, s, pre.edges.clone(), &ch, w_l, cw, activate)?;
    }
    let logits = tape.matmul(h, binding.id("clf.w")?)?;
    let logits = tape.add_row(logits, binding.id("clf.b")?)?;

    Ok(MwgnnForward {
        logits,
        w_meta,
        attention,
        s_f: scores.s_f,
        s_t: scores.s_t,
        s,
    })
}

/// Symmetric renormalized propagation structure for the GCN baseline:
/// self-looped edges with 1/sqrt((d_u+1)(d_v+1)) weights.
pub struct GcnPrecomp {
    pub edges: Rc<EdgeIndex>,
    pub weights: Array2<f64>,
}

pub fn gcn_precompute(g: &Graph) -> GcnPrecomp {
    let n = g.num_nodes();
    let mut dst = Vec::new();
    let mut src = Vec::new();
    let mut w = Vec::new();
    let mut offsets = vec![0usize];
    for v in 0..n {
        let dv = (g.degree(v) + 1) as f64;
        for &u in g.neighbors(v) {
            let du = (g.degree(u) + 1) as f64;
            dst.push(v);
            src.push(u);
            w.push(1.0 / (dv * du).sqrt());
        }
        dst.push(v);
        src.push(v);
        w.push(1.0 / dv);
        offsets.push(dst.len());
    }
    GcnPrecomp {
        edges: Rc::new(EdgeIndex {
            num_nodes: n,
            dst,
            src,
            offsets,
        }),
        weights: Array2::from_shape_vec((w.len(), 1), w).expect("column"),
    }
}

pub fn init_gcn_params(
    bundle: &GraphBundle,
    layers: usize,
    d_hidden: usize,
    seed: u64,
) -> Result<ParamStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut width = bundle.feature_dim();
    for l in 0..layers {
        store.insert_glorot(format!("layer{l}.w"), width, d_hidden, &mut rng)?;
        width = d_hidden;
    }
    register_linear(&mut store, "clf", width, bundle.num_classes(), &mut rng)?;
    Ok(store)
}

pub fn gcn_forward(
    tape: &mut Tape,
    binding: &Binding,
    bundle: &GraphBundle,
    pre: &GcnPrecomp,
    layers: usize,
) -> Result<TensorId> {
    let x = tape.constant(bundle.features.clone());
    let w_hat = tape.constant(pre.weights.clone());
    let mut h = x;
    for l in 0..layers {
        let agg = tape.edge_aggregate(h, w_hat, pre.edges.clone())?;
        let lin = tape.matmul(agg, binding.id(&format!("layer{l}.w"))?)?;
        h = tape.relu(lin)?;
    }
    let logits = tape.matmul(h, binding.id("clf.w")?)?;
    Ok(tape.add_row(logits, binding.id("clf.b")?)?)
}

pub fn init_mlp_params(
    bundle: &GraphBundle,
    layers: usize,
    d_hidden: usize,
    seed: u64,
) -> Result<ParamStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut width = bundle.feature_dim();
    for l in 0..layers {
        register_linear(&mut store, &format!("layer{l}"), width, d_hidden, &mut rng)?;
        width = d_hidden;
    }
    register_linear(&mut store, "clf", width, bundle.num_classes(), &mut rng)?;
    Ok(store)
}

pub fn mlp_forward(
    tape: &mut Tape,
    binding: &Binding,
    bundle: &GraphBundle,
    layers: usize,
) -> Result<TensorId> {
    let mut h = tape.constant(bundle.features.clone());
    for l in 0..layers {
        let lin = tape.matmul(h, binding.id(&format!("layer{l}.w"))?)?;
        let lin = tape.add_row(lin, binding.id(&format!("layer{l}.b"))?)?;
        h = tape.relu(lin)?;
    }
    let logits = tape.matmul(h, binding.id("clf.w")?)?;
    Ok(tape.add_row(logits, binding.id("clf.b")?)?)
}

/// Fraction of masked nodes whose argmax logit matches the label. Argmax
/// ties resolve to the lowest class index.
pub fn evaluate(logits: &Array2<f64>, labels: &[usize], mask: &[bool]) -> Result<f64> {
    let m = mask.iter().filter(|&&b| b).count();
    if m == 0 {
        return Err(ModelError::EmptyEvalMask);
    }
    let mut hits = 0usize;
    for i in 0..logits.nrows() {
        if !mask[i] {
            continue;
        }
        let row = logits.row(i);
        let mut best = 0usize;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        hits += (best == labels[i]) as usize;
    }
    Ok(hits as f64 / m as f64)
}

enum Prepared {
    Mwgnn(Box<MwgnnPrecomp>, MwgnnConfig),
    Gcn(GcnPrecomp, usize),
    Mlp(usize),
}

/// Full-batch transductive training with Adam and best-validation early
/// stopping. Deterministic given (bundle, configs, seed); only wall time
/// varies between reruns.
pub fn train(
    model: &ModelSpec,
    bundle: &GraphBundle,
    tcfg: &TrainConfig,
) -> Result<(TrainReport, ParamStore)> {
    if !bundle.train_mask.iter().any(|&b| b) {
        return Err(ModelError::EmptyTrainMask);
    }
    let started = Instant::now();
    let (mut params, prepared) = match model {
        ModelSpec::Mwgnn(cfg) => {
            let pre = precompute(bundle, cfg)?;
            (
                init_mwgnn_params(bundle, cfg, tcfg.seed)?,
                Prepared::Mwgnn(Box::new(pre), cfg.clone()),
            )
        }
        ModelSpec::Gcn { layers, d_hidden } => (
            init_gcn_params(bundle, *layers, *d_hidden, tcfg.seed)?,
            Prepared::Gcn(gcn_precompute(&bundle.graph), *layers),
        ),
        ModelSpec::Mlp { layers, d_hidden } => (
            init_mlp_params(bundle, *layers, *d_hidden, tcfg.seed)?,
            Prepared::Mlp(*layers),
        ),
    };
    let mut adam = AdamState::new(AdamConfig::new(tcfg.lr, tcfg.weight_decay), &params);

    let labels = Rc::new(bundle.labels.clone());
    let train_mask = Rc::new(bundle.train_mask.clone());

    let mut report = TrainReport {
        best_epoch: 0,
        val_acc_history: Vec::new(),
        train_loss_history: Vec::new(),
        best_val_acc: f64::NEG_INFINITY,
        test_acc: 0.0,
        wall_time_ms: 0.0,
    };
    let mut since_best = 0usize;

    for epoch in 1..=tcfg.max_epochs {
        let mut tape = Tape::new();
        let binding = params.bind(&mut tape);
        let logits = match &prepared {
            Prepared::Mwgnn(pre, cfg) => {
                mwgnn_forward(&mut tape, &binding, bundle, pre, cfg)?.logits
            }
            Prepared::Gcn(pre, layers) => gcn_forward(&mut tape, &binding, bundle, pre, *layers)?,
            Prepared::Mlp(layers) => mlp_forward(&mut tape, &binding, bundle, *layers)?,
        };
        let loss = tape
            .masked_cross_entropy(logits, labels.clone(), train_mask.clone())
            .map_err(|e| match e {
                TensorError::NonFinite { .. } => ModelError::Diverged(epoch),
                other => ModelError::Tensor(other),
            })?;
        let loss_value = tape.value(loss)[(0, 0)];

        let logit_values = tape.value(logits);
        let val_acc = evaluate(logit_values, &bundle.labels, &bundle.val_mask)?;
        let test_acc = evaluate(logit_values, &bundle.labels, &bundle.test_mask)?;
        report.val_acc_history.push(val_acc);
        report.train_loss_history.push(loss_value);
        if val_acc > report.best_val_acc {
            report.best_val_acc = val_acc;
            report.best_epoch = epoch;
            report.test_acc = test_acc;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= tcfg.patience {
            break;
        }

        tape.backward(loss)?;
        let grads = binding.grads(&tape)?;
        adam.step(&mut params, &grads)?;
    }
    report.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok((report, params))
}

/// Mean/std test accuracy of one ablation variant over seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub variant: String,
    pub accs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

pub fn run_ablation(
    bundle: &GraphBundle,
    base: &MwgnnConfig,
    variant: Ablation,
    tcfg: &TrainConfig,
    seeds: &[u64],
) -> Result<AblationOutcome> {
    let mut cfg = base.clone();
    cfg.ablation = variant;
    let mut accs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let t = TrainConfig {
            seed,
            ..tcfg.clone()
        };
        let (report, _) = train(&ModelSpec::Mwgnn(cfg.clone()), bundle, &t)?;
        accs.push(report.test_acc);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / accs.len() as f64;
    Ok(AblationOutcome {
        variant: variant.to_string(),
        accs,
        mean,
        std: var.sqrt(),
    })
}
