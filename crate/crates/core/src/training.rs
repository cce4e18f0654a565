//! Total-loss assembly, Adam optimization over the multi-graph corpus,
//! checkpoint round-tripping, and evaluation against exact labels.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Value};
use crate::clustering::{self, derive_seed, ClusterConfig};
use crate::contrastive::{self, ContrastConfig};
use crate::error::{Error, Result};
use crate::graph::{InstanceIndex, TemporalGraph};
use crate::metrics::{self, MetricsReport};
use crate::model::{
    self, forward_tape, mae_loss_tape, predictions_tape, total_loss_tape, ModelHyper, ModelParams,
};
use crate::oracle::{LabelSet, OptimalityCriterion, PathSemantics};

pub const LEARNING_RATE_GRID: [f64; 3] = [0.1, 0.01, 0.001];

/// Full training configuration. The mixing coefficient `lambda` lives inside
/// the model hyperparameters; everything has a default and can be overridden
/// from a flat `key=value` config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Contrastive-vs-regression weight in `[0, 1]`.
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Semantics the training labels were generated under.
    pub semantics: PathSemantics,
    pub hyper: ModelHyper,
    pub contrast: ContrastConfig,
    pub cluster_rate: f64,
    pub cluster_pairs: usize,
    pub cluster_k_max: usize,
    pub cluster_kmeans_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            learning_rate: 0.01,
            epochs: 15,
            seed: 0,
            semantics: PathSemantics::new(OptimalityCriterion::ShortestForemost),
            hyper: ModelHyper::default(),
            contrast: ContrastConfig::default(),
            cluster_rate: 0.4,
            cluster_pairs: 20,
            cluster_k_max: 10,
            cluster_kmeans_iters: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !LEARNING_RATE_GRID.contains(&self.learning_rate) {
            return Err(Error::Config(format!(
                "learning_rate must be one of {LEARNING_RATE_GRID:?}, got {}",
                self.learning_rate
            )));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        self.semantics.validate()?;
        self.hyper.validate()?;
        self.contrast.validate()?;
        self.cluster_config().validate()?;
        Ok(())
    }

    fn cluster_config(&self) -> ClusterConfig {
        ClusterConfig {
            rate: self.cluster_rate,
            pairs: self.cluster_pairs,
            k_max: self.cluster_k_max,
            kmeans_iters: self.cluster_kmeans_iters,
            seed: derive_seed(self.seed, "cluster", 0),
        }
    }

    /// Parse a flat `key=value` config file; `#` starts a comment line.
    /// Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected `key=value`, found `{trimmed}`"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| Error::Parse {
                line: lineno,
                msg: format!("invalid {what} `{value}` for key `{key}`"),
            };
            match key {
                "alpha" => cfg.alpha = value.parse().map_err(|_| bad("number"))?,
                "lambda" => cfg.hyper.lambda = value.parse().map_err(|_| bad("number"))?,
                "learning_rate" => {
                    cfg.learning_rate = value.parse().map_err(|_| bad("number"))?
                }
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad("integer"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("integer"))?,
                "semantics" => cfg.semantics.criterion = OptimalityCriterion::parse(value)?,
                "delta" => cfg.semantics.delta = crate::oracle::parse_delta(value)?,
                "max_hops" => {
                    cfg.semantics.max_hops = value.parse().map_err(|_| bad("integer"))?
                }
                "d" => cfg.hyper.d = value.parse().map_err(|_| bad("integer"))?,
                "d_t" => cfg.hyper.d_t = value.parse().map_err(|_| bad("integer"))?,
                "d_p" => cfg.hyper.d_p = value.parse().map_err(|_| bad("integer"))?,
                "d_h" => cfg.hyper.d_h = value.parse().map_err(|_| bad("integer"))?,
                "layers" => cfg.hyper.layers = value.parse().map_err(|_| bad("integer"))?,
                "heads" => cfg.hyper.heads = value.parse().map_err(|_| bad("integer"))?,
                "neighbor_limit" => {
                    cfg.hyper.neighbor_limit = value.parse().map_err(|_| bad("integer"))?
                }
                "gamma_pos" => cfg.contrast.gamma_pos = value.parse().map_err(|_| bad("number"))?,
                "gamma_neg" => cfg.contrast.gamma_neg = value.parse().map_err(|_| bad("number"))?,
                "tau" => cfg.contrast.tau = value.parse().map_err(|_| bad("number"))?,
                "cluster_rate" => {
                    cfg.cluster_rate = value.parse().map_err(|_| bad("number"))?
                }
                "cluster_pairs" => {
                    cfg.cluster_pairs = value.parse().map_err(|_| bad("integer"))?
                }
                "cluster_k_max" => {
                    cfg.cluster_k_max = value.parse().map_err(|_| bad("integer"))?
                }
                "cluster_kmeans_iters" => {
                    cfg.cluster_kmeans_iters = value.parse().map_err(|_| bad("integer"))?
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown config key `{other}` at line {lineno}"
                    )));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Emit the fully resolved configuration as the same flat format.
    pub fn to_key_values(&self) -> String {
        let delta = if self.semantics.delta.is_finite() {
            self.semantics.delta.to_string()
        } else {
            "inf".to_string()
        };
        format!(
            "alpha={}\nlambda={}\nlearning_rate={}\nepochs={}\nseed={}\nsemantics={}\ndelta={}\nmax_hops={}\nd={}\nd_t={}\nd_p={}\nd_h={}\nlayers={}\nheads={}\nneighbor_limit={}\ngamma_pos={}\ngamma_neg={}\ntau={}\ncluster_rate={}\ncluster_pairs={}\ncluster_k_max={}\ncluster_kmeans_iters={}\n",
            self.alpha,
            self.hyper.lambda,
            self.learning_rate,
            self.epochs,
            self.seed,
            self.semantics.criterion.as_str(),
            delta,
            self.semantics.max_hops,
            self.hyper.d,
            self.hyper.d_t,
            self.hyper.d_p,
            self.hyper.d_h,
            self.hyper.layers,
            self.hyper.heads,
            self.hyper.neighbor_limit,
            self.contrast.gamma_pos,
            self.contrast.gamma_neg,
            self.contrast.tau,
            self.cluster_rate,
            self.cluster_pairs,
            self.cluster_k_max,
            self.cluster_kmeans_iters,
        )
    }
}

/// Mean absolute error (the regression objective).
pub fn regression_loss(preds: &[f64], labels: &[f64]) -> Result<f64> {
    metrics::mae(preds, labels)
}

/// `alpha * contrast + (1 - alpha) * regress`.
pub fn total_loss(alpha: f64, contrast: f64, regress: f64) -> f64 {
    assert!((0.0..=1.0).contains(&alpha));
    alpha * contrast + (1.0 - alpha) * regress
}

/// Adam with the published default moment coefficients.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(lr: f64, shapes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &[Vec<f64>]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (ti, tensor) in params.tensors_mut().into_iter().enumerate() {
            let g = &grads[ti];
            for (k, slot) in tensor.data.iter_mut().enumerate() {
                let m = &mut self.m[ti][k];
                let v = &mut self.v[ti][k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g[k];
                *v = self.beta2 * *v + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *slot -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Serialized training artifact; round-trips bit-exactly through JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub params: ModelParams,
    pub config: TrainConfig,
    /// Per-epoch, per-graph total losses.
    pub loss_trace: Vec<Vec<f64>>,
    pub seed: u64,
    /// Digests of every training graph, for inductive-evaluation checks.
    pub training_digests: Vec<String>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }
}

/// Non-parameter observations from a training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainDiagnostics {
    pub warnings: Vec<String>,
    pub select_k_invocations: usize,
    pub kmeans_invocations: usize,
    pub k_hat_per_graph: Vec<Option<usize>>,
    /// Pair-set diagnostics per graph from the final epoch.
    pub contrast_diagnostics: Vec<serde_json::Value>,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub diagnostics: TrainDiagnostics,
}

/// Train over a corpus of labeled graphs. Per epoch and per graph: one full
/// forward pass, clustering of current embeddings (cluster count selected at
/// the first epoch and frozen), contrastive pair construction, total loss,
/// one Adam step. Graphs with all-zero labels fall back to pure regression.
pub fn train(cfg: &TrainConfig, corpus: &[(TemporalGraph, LabelSet)]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Domain("training needs at least one graph".into()));
    }
    for (gi, (g, labels)) in corpus.iter().enumerate() {
        if labels.len() != g.node_count() {
            return Err(Error::Domain(format!(
                "graph {gi}: {} labels for {} nodes",
                labels.len(),
                g.node_count()
            )));
        }
        if labels.semantics != cfg.semantics {
            return Err(Error::Config(format!(
                "graph {gi}: labels were generated under different path semantics"
            )));
        }
        if labels.source_graph_digest != g.digest() {
            return Err(Error::Config(format!(
                "graph {gi}: label set does not match the graph digest"
            )));
        }
    }

    let mut diagnostics = TrainDiagnostics {
        k_hat_per_graph: vec![None; corpus.len()],
        contrast_diagnostics: vec![serde_json::Value::Null; corpus.len()],
        ..Default::default()
    };

    let indices: Vec<InstanceIndex> = corpus.iter().map(|(g, _)| InstanceIndex::build(g)).collect();
    // Per-graph nonzero-label medians; `None` marks the regression-only fallback.
    let mut medians: Vec<Option<f64>> = Vec::with_capacity(corpus.len());
    for (gi, (_, labels)) in corpus.iter().enumerate() {
        if cfg.alpha == 0.0 {
            medians.push(None);
            continue;
        }
        match contrastive::tbc_median_ref(labels.values()) {
            Ok(m) => medians.push(Some(m)),
            Err(_) => {
                diagnostics.warnings.push(format!(
                    "graph {gi}: all labels are zero; contrastive term disabled (alpha = 0 fallback)"
                ));
                medians.push(None);
            }
        }
    }

    let mut params = ModelParams::init(cfg.hyper, derive_seed(cfg.seed, "init", 0))?;
    let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut adam = Adam::new(cfg.learning_rate, &shapes);
    let cluster_cfg = cfg.cluster_config();

    let mut loss_trace: Vec<Vec<f64>> = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut epoch_losses = Vec::with_capacity(corpus.len());
        for (gi, (g, labels)) in corpus.iter().enumerate() {
            let mut tape = Tape::new();
            let out = forward_tape(&mut tape, &params, g, &indices[gi], g.t_max(), None);
            let preds = predictions_tape(&mut tape, &out.bound, &out.embeddings);
            let regress = mae_loss_tape(&mut tape, &preds, labels.values());

            let loss = match medians[gi] {
                Some(median) => {
                    let emb: Vec<Vec<f64>> = out
                        .embeddings
                        .iter()
                        .map(|&e| tape.value(e).vector().to_vec())
                        .collect();
                    let k_hat = match diagnostics.k_hat_per_graph[gi] {
                        Some(k) => k,
                        None => {
                            let mut sel_cfg = cluster_cfg;
                            sel_cfg.seed = derive_seed(cluster_cfg.seed, "select", gi as u64);
                            // Bootstrap resamples of the stratified subset
                            // carry ~63% distinct points; cap the candidate
                            // range so small graphs keep feasible k-means runs.
                            let subset_cap =
                                ((sel_cfg.rate * g.node_count() as f64 / 2.0).floor() as usize)
                                    .max(2);
                            sel_cfg.k_max = sel_cfg.k_max.min(subset_cap).max(2);
                            let sel = clustering::select_k(&emb, labels.values(), &sel_cfg)?;
                            diagnostics.select_k_invocations += 1;
                            diagnostics.k_hat_per_graph[gi] = Some(sel.k_hat);
                            sel.k_hat
                        }
                    };
                    // Embeddings can collapse onto each other mid-training
                    // (shared structure, saturated activations); keep the
                    // clustering feasible by capping at the distinct count.
                    let k_epoch = k_hat.min(clustering::distinct_point_count(&emb)).max(1);
                    let assignment = clustering::kmeans(
                        &emb,
                        k_epoch,
                        derive_seed(cluster_cfg.seed, "epoch", (gi * 100_000 + epoch) as u64),
                        cluster_cfg.kmeans_iters,
                    )?;
                    diagnostics.kmeans_invocations += 1;
                    let sets = contrastive::build_pair_sets(
                        &assignment.labels,
                        labels.values(),
                        median,
                        &cfg.contrast,
                    );
                    if epoch + 1 == cfg.epochs {
                        diagnostics.contrast_diagnostics[gi] = sets.diagnostics();
                    }
                    let (closs, no_anchors) = contrastive::contrastive_loss_tape(
                        &mut tape,
                        &out.embeddings,
                        &sets,
                        labels.values(),
                        median,
                        &cfg.contrast,
                    );
                    if no_anchors && epoch == 0 {
                        diagnostics
                            .warnings
                            .push(format!("graph {gi}: no eligible contrastive anchors"));
                    }
                    total_loss_tape(&mut tape, cfg.alpha, closs, regress)
                }
                None => regress,
            };

            let loss_value = tape.value(loss).scalar();
            if !loss_value.is_finite() {
                return Err(Error::Estimation(format!(
                    "training diverged at epoch {epoch}, graph {gi}: loss {loss_value}; trace so far: {loss_trace:?}"
                )));
            }
            epoch_losses.push(loss_value);

            let grads = tape.backward(loss);
            let grad_vecs: Vec<Vec<f64>> = out
                .leaves
                .iter()
                .zip(&shapes)
                .map(|(&leaf, &len)| match grads.wrt(leaf) {
                    Some(Value::Vector(v)) => v.to_vec(),
                    Some(Value::Matrix(m)) => m.iter().copied().collect(),
                    Some(Value::Scalar(s)) => vec![*s],
                    None => vec![0.0; len],
                })
                .collect();
            adam.step(&mut params, &grad_vecs);
        }
        loss_trace.push(epoch_losses);
    }

    let checkpoint = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        params,
        config: cfg.clone(),
        loss_trace,
        seed: cfg.seed,
        training_digests: corpus.iter().map(|(g, _)| g.digest()).collect(),
    };
    Ok(TrainOutcome {
        checkpoint,
        diagnostics,
    })
}

/// Forward + predict on every node and score against the labels. The report
/// flags whether the graph participated in training (digest comparison).
pub fn evaluate(ckpt: &Checkpoint, g: &TemporalGraph, labels: &LabelSet) -> Result<MetricsReport> {
    if labels.len() != g.node_count() {
        return Err(Error::Domain(format!(
            "{} labels for {} nodes",
            labels.len(),
            g.node_count()
        )));
    }
    let idx = InstanceIndex::build(g);
    let preds = model::predict_all(&ckpt.params, g, &idx);
    let mut report = metrics::metrics_report(&preds, labels.values())?;
    report.graph_in_training_set = Some(ckpt.training_digests.contains(&g.digest()));
    Ok(report)
}
