//! Temporal message-passing model: path-count-gated messages, dual
//! aggregation (per-neighbor weighted mean and edge-to-node multi-head
//! attention), lambda-weighted branch combination, and a 3-layer ReLU
//! regression head. All parameters are differentiated through the tape.

use std::collections::BTreeMap;

use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Value, Var};
use crate::contrastive::{self, ContrastConfig, PairSets};
use crate::encoders::{
    encode_path_count_var, encode_time_var, PathEncoderParams, TimeEncoderParams,
};
use crate::error::{Error, Result};
use crate::graph::{InstanceIndex, TemporalGraph};
use crate::nn::{
    linear_forward, mlp_forward, Binder, BoundLinear, BoundMlp, LinearParams, MlpParams, Tensor,
};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelHyper {
    /// Node embedding width.
    pub d: usize,
    /// Time-encoder frequency count (output width `2 * d_t`).
    pub d_t: usize,
    /// Path-count embedding width.
    pub d_p: usize,
    /// Attention hidden width.
    pub d_h: usize,
    /// Message-passing rounds.
    pub layers: usize,
    /// Attention heads; must divide `d_h`.
    pub heads: usize,
    /// Per-node cap on sampled incoming events.
    pub neighbor_limit: usize,
    /// Mean-vs-attention mixing coefficient in `[0, 1]`.
    pub lambda: f64,
}

impl Default for ModelHyper {
    fn default() -> Self {
        Self {
            d: 128,
            d_t: 64,
            d_p: 128,
            d_h: 128,
            layers: 3,
            heads: 2,
            neighbor_limit: 20,
            lambda: 0.4,
        }
    }
}

impl ModelHyper {
    pub fn message_dim(&self) -> usize {
        2 * self.d + 2 * self.d_t + self.d_p
    }

    pub fn head_width(&self) -> usize {
        self.d_h / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d_t == 0 || self.d_p == 0 || self.d_h == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("need at least one layer".into()));
        }
        if self.heads == 0 || self.d_h % self.heads != 0 {
            return Err(Error::Config(format!(
                "heads ({}) must evenly divide d_h ({})",
                self.heads, self.d_h
            )));
        }
        if self.neighbor_limit == 0 {
            return Err(Error::Config("neighbor limit must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// One message-passing layer: query/key/value projections over the message
/// width plus the two branch MLPs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub attn_mlp: MlpParams,
    pub mean_mlp: MlpParams,
}

/// All learnable state of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub hyper: ModelHyper,
    pub feature_proj: LinearParams,
    pub time_enc: TimeEncoderParams,
    pub path_enc: PathEncoderParams,
    pub layers: Vec<LayerParams>,
    pub value_head: MlpParams,
}

fn init_proj(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    // fan-in is the row count here: projections act as `x * W`
    let bound = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data)
}

impl ModelParams {
    pub fn init(hyper: ModelHyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let msg = hyper.message_dim();
        let layers = (0..hyper.layers)
            .map(|_| LayerParams {
                w_q: init_proj(&mut rng, msg, hyper.d_h),
                w_k: init_proj(&mut rng, msg, hyper.d_h),
                w_v: init_proj(&mut rng, msg, hyper.d_h),
                attn_mlp: MlpParams::init(&mut rng, &[hyper.d_h + hyper.d, hyper.d, hyper.d]),
                mean_mlp: MlpParams::init(&mut rng, &[msg + hyper.d, hyper.d, hyper.d]),
            })
            .collect();
        Ok(Self {
            hyper,
            feature_proj: LinearParams::init(&mut rng, hyper.d, 4),
            time_enc: TimeEncoderParams::geometric(hyper.d_t),
            path_enc: PathEncoderParams::init(&mut rng, hyper.d_p),
            layers,
            value_head: MlpParams::init(&mut rng, &[hyper.d, hyper.d, hyper.d, 1]),
        })
    }

    /// Tensors in a fixed traversal order (the tape binds leaves in the same
    /// order).
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.feature_proj.w, &self.feature_proj.b, &self.time_enc.omega];
        for l in &self.path_enc.mlp.layers {
            out.push(&l.w);
            out.push(&l.b);
        }
        for layer in &self.layers {
            out.push(&layer.w_q);
            out.push(&layer.w_k);
            out.push(&layer.w_v);
            for l in &layer.attn_mlp.layers {
                out.push(&l.w);
                out.push(&l.b);
            }
            for l in &layer.mean_mlp.layers {
                out.push(&l.w);
                out.push(&l.b);
            }
        }
        for l in &self.value_head.layers {
            out.push(&l.w);
            out.push(&l.b);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.feature_proj.w,
            &mut self.feature_proj.b,
            &mut self.time_enc.omega,
        ];
        for l in &mut self.path_enc.mlp.layers {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        for layer in &mut self.layers {
            out.push(&mut layer.w_q);
            out.push(&mut layer.w_k);
            out.push(&mut layer.w_v);
            for l in &mut layer.attn_mlp.layers {
                out.push(&mut l.w);
                out.push(&mut l.b);
            }
            for l in &mut layer.mean_mlp.layers {
                out.push(&mut l.w);
                out.push(&mut l.b);
            }
        }
        for l in &mut self.value_head.layers {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Tape-bound mirror of [`ModelParams`].
pub struct BoundModel {
    pub feature_proj: BoundLinear,
    pub omega: Var,
    pub path_mlp: BoundMlp,
    pub layers: Vec<BoundLayer>,
    pub value_head: BoundMlp,
}

pub struct BoundLayer {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub attn_mlp: BoundMlp,
    pub mean_mlp: BoundMlp,
}

pub fn bind_model(tape: &mut Tape, params: &ModelParams) -> (BoundModel, Vec<Var>) {
    let mut binder = Binder::new(tape);
    let feature_proj = binder.linear(&params.feature_proj);
    let omega = binder.tensor(&params.time_enc.omega);
    let path_mlp = binder.mlp(&params.path_enc.mlp);
    let layers = params
        .layers
        .iter()
        .map(|l| BoundLayer {
            w_q: binder.tensor(&l.w_q),
            w_k: binder.tensor(&l.w_k),
            w_v: binder.tensor(&l.w_v),
            attn_mlp: binder.mlp(&l.attn_mlp),
            mean_mlp: binder.mlp(&l.mean_mlp),
        })
        .collect();
    let value_head = binder.mlp(&params.value_head);
    let leaves = binder.leaves;
    (
        BoundModel {
            feature_proj,
            omega,
            path_mlp,
            layers,
            value_head,
        },
        leaves,
    )
}

/// A sampled incoming event of a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledEvent {
    pub u: usize,
    pub t: f64,
    pub p: u64,
    /// Delta to the most recent valid event strictly before `t` (0 when none).
    pub delta_t: f64,
}

/// Per-node sampled events plus query-side context at the reference time.
#[derive(Debug, Clone)]
pub struct NodeEvents {
    pub events: Vec<SampledEvent>,
    pub query_delta: f64,
    pub query_total_p: u64,
}

#[derive(Debug, Clone)]
pub struct EventContext {
    pub per_node: Vec<NodeEvents>,
    pub suppressed_zero_p_events: usize,
}

/// Sample up to `limit` valid incoming events per node at `t_ref`
/// (most-recent-first, ties by ascending source id) and compute the
/// time-delta context.
pub fn build_event_context(
    g: &TemporalGraph,
    idx: &InstanceIndex,
    t_ref: f64,
    limit: usize,
) -> EventContext {
    let n = g.node_count();
    let mut per_node = Vec::with_capacity(n);
    let mut suppressed = 0usize;
    for v in 0..n {
        suppressed += idx
            .in_events(v)
            .iter()
            .filter(|e| e.t < t_ref && e.p == 0)
            .count();
        let sampled = crate::graph::temporal_neighbors(idx, g, v, t_ref, limit);
        let events = sampled
            .into_iter()
            .map(|(u, t)| {
                let p = idx.path_count(u, v, t).expect("sampled event exists");
                debug_assert!(p > 0, "zero-P events must never become messages");
                let delta_t = t - idx.prev_valid_event_time(v, t).unwrap_or(t);
                SampledEvent { u, t, p, delta_t }
            })
            .collect();
        per_node.push(NodeEvents {
            events,
            query_delta: t_ref - idx.prev_valid_event_time(v, t_ref).unwrap_or(t_ref),
            query_total_p: idx.total_valid_incoming_p(v, t_ref),
        });
    }
    EventContext {
        per_node,
        suppressed_zero_p_events: suppressed,
    }
}

/// Raw structural node features: `log(1+x)` of in-degree, out-degree,
/// distinct outgoing timestamps, and total outgoing continuation count.
pub fn raw_structural_features(g: &TemporalGraph, idx: &InstanceIndex) -> Vec<[f64; 4]> {
    let n = g.node_count();
    let mut in_deg = vec![0usize; n];
    let mut out_deg = vec![0usize; n];
    let mut p_sum = vec![0u64; n];
    for (i, e) in g.edges().iter().enumerate() {
        in_deg[e.v] += 1;
        out_deg[e.u] += 1;
        p_sum[e.u] += idx.edge_path_count(i);
    }
    (0..n)
        .map(|v| {
            [
                (1.0 + in_deg[v] as f64).ln(),
                (1.0 + out_deg[v] as f64).ln(),
                (1.0 + idx.t_out(v).len() as f64).ln(),
                (1.0 + p_sum[v] as f64).ln(),
            ]
        })
        .collect()
}

/// Projected layer-0 features (plain evaluation).
pub fn initial_features(
    params: &ModelParams,
    g: &TemporalGraph,
    idx: &InstanceIndex,
) -> Vec<Vec<f64>> {
    let raw = raw_structural_features(g, idx);
    raw.iter()
        .map(|r| {
            let w = &params.feature_proj.w;
            let d = params.hyper.d;
            let mut out = params.feature_proj.b.data.clone();
            for (i, slot) in out.iter_mut().enumerate().take(d) {
                for j in 0..4 {
                    *slot += w.data[i * 4 + j] * r[j];
                }
            }
            out
        })
        .collect()
}

/// Diagnostic record of one forward pass.
#[derive(Debug, Default, Clone)]
pub struct ForwardTrace {
    pub messages_built: usize,
    pub suppressed_zero_p_events: usize,
    pub min_message_p: Option<u64>,
    /// One softmax row per (node, layer, head) that had events.
    pub attention_rows: Vec<Vec<f64>>,
    /// One row of per-timestamp weights per (node, layer, neighbor).
    pub neighbor_weight_rows: Vec<Vec<f64>>,
}

/// Message for one incoming event: `h_u || h_v || time_enc || path_enc`,
/// width `2 d + 2 d_t + d_p`. Only built for events with `P > 0`; the event
/// context filters zero-`P` events before any message exists.
pub fn compose_message(
    tape: &mut Tape,
    h_u: Var,
    h_v: Var,
    time_enc: Var,
    path_enc: Var,
) -> Var {
    tape.concat(&[h_u, h_v, time_enc, path_enc])
}

/// Per-neighbor weighted mean: within each neighbor's event group the
/// messages combine with weights `P / sum(P)`, and the per-neighbor results
/// average uniformly. Returns the aggregate and the weight rows used.
pub fn aggregate_mean(
    tape: &mut Tape,
    groups: &[(usize, Vec<(Var, u64)>)],
) -> (Var, Vec<Vec<f64>>) {
    let mut per_neighbor = Vec::with_capacity(groups.len());
    let mut weight_rows = Vec::with_capacity(groups.len());
    for (_u, items) in groups {
        let total: u64 = items.iter().map(|(_, p)| p).sum();
        let weights: Vec<f64> = items
            .iter()
            .map(|(_, p)| *p as f64 / total as f64)
            .collect();
        let vars: Vec<Var> = items.iter().map(|(m, _)| *m).collect();
        per_neighbor.push(tape.weighted_sum(&vars, &weights));
        weight_rows.push(weights);
    }
    let uniform = vec![1.0 / per_neighbor.len() as f64; per_neighbor.len()];
    (tape.weighted_sum(&per_neighbor, &uniform), weight_rows)
}

/// Scaled dot-product attention over the stacked message matrix, one softmax
/// per head, heads concatenated. Returns the concat and the softmax rows.
pub fn aggregate_attention(
    tape: &mut Tape,
    layer: &BoundLayer,
    query_input: Var,
    messages: &[Var],
    d_h: usize,
    heads: usize,
) -> (Var, Vec<Vec<f64>>) {
    let m = tape.stack_rows(messages);
    let q = tape.vecmat(query_input, layer.w_q);
    let k = tape.matmul(m, layer.w_k);
    let v = tape.matmul(m, layer.w_v);
    let hw = d_h / heads;
    let scale = 1.0 / (d_h as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut rows = Vec::with_capacity(heads);
    for j in 0..heads {
        let q_j = tape.slice_vec(q, j * hw, (j + 1) * hw);
        let k_j = tape.slice_cols(k, j * hw, (j + 1) * hw);
        let v_j = tape.slice_cols(v, j * hw, (j + 1) * hw);
        let scores = tape.matvec(k_j, q_j);
        let scaled = tape.scale(scores, scale);
        let alpha = tape.softmax(scaled);
        rows.push(tape.value(alpha).vector().to_vec());
        outs.push(tape.vecmat(alpha, v_j));
    }
    (tape.concat(&outs), rows)
}

/// `lambda * MLP(mean_agg || h_prev) + (1 - lambda) * MLP(heads || h_prev)`.
pub fn combine_embeddings(
    tape: &mut Tape,
    layer: &BoundLayer,
    mean_agg: Var,
    attn_cat: Var,
    h_prev: Var,
    lambda: f64,
) -> Var {
    let mean_in = tape.concat(&[mean_agg, h_prev]);
    let mean_branch = mlp_forward(tape, &layer.mean_mlp, mean_in);
    let attn_in = tape.concat(&[attn_cat, h_prev]);
    let attn_branch = mlp_forward(tape, &layer.attn_mlp, attn_in);
    let a = tape.scale(mean_branch, lambda);
    let b = tape.scale(attn_branch, 1.0 - lambda);
    tape.add(a, b)
}

/// Everything the tape forward produces.
pub struct ForwardOutput {
    pub bound: BoundModel,
    /// Parameter leaves in `ModelParams::tensors()` order.
    pub leaves: Vec<Var>,
    /// Final-layer embedding per node.
    pub embeddings: Vec<Var>,
}

/// Full layered forward pass for every node at reference time `t_ref`.
pub fn forward_tape(
    tape: &mut Tape,
    params: &ModelParams,
    g: &TemporalGraph,
    idx: &InstanceIndex,
    t_ref: f64,
    mut trace: Option<&mut ForwardTrace>,
) -> ForwardOutput {
    let hyper = params.hyper;
    let n = g.node_count();
    let (bound, leaves) = bind_model(tape, params);
    let ctx = build_event_context(g, idx, t_ref, hyper.neighbor_limit);
    if let Some(tr) = trace.as_deref_mut() {
        tr.suppressed_zero_p_events = ctx.suppressed_zero_p_events;
    }

    // Event encodings are layer-independent; compute them once.
    let mut event_time_enc: Vec<Vec<Var>> = Vec::with_capacity(n);
    let mut event_path_enc: Vec<Vec<Var>> = Vec::with_capacity(n);
    let mut query_time_enc: Vec<Var> = Vec::with_capacity(n);
    let mut query_path_enc: Vec<Var> = Vec::with_capacity(n);
    for v in 0..n {
        let ne = &ctx.per_node[v];
        event_time_enc.push(
            ne.events
                .iter()
                .map(|e| encode_time_var(tape, bound.omega, hyper.d_t, e.delta_t))
                .collect(),
        );
        event_path_enc.push(
            ne.events
                .iter()
                .map(|e| encode_path_count_var(tape, &bound.path_mlp, e.p as f64))
                .collect(),
        );
        query_time_enc.push(encode_time_var(tape, bound.omega, hyper.d_t, ne.query_delta));
        query_path_enc.push(encode_path_count_var(
            tape,
            &bound.path_mlp,
            ne.query_total_p as f64,
        ));
    }

    let raw = raw_structural_features(g, idx);
    let mut h: Vec<Var> = raw
        .iter()
        .map(|r| {
            let x = tape.vector(Array1::from(r.to_vec()));
            linear_forward(tape, &bound.feature_proj, x)
        })
        .collect();

    let zero_msg = tape.zeros(hyper.message_dim());
    let zero_attn = tape.zeros(hyper.d_h);

    for layer in &bound.layers {
        let mut next = Vec::with_capacity(n);
        for v in 0..n {
            let ne = &ctx.per_node[v];
            let (mean_agg, attn_cat) = if ne.events.is_empty() {
                (zero_msg, zero_attn)
            } else {
                let mut messages = Vec::with_capacity(ne.events.len());
                let mut groups: BTreeMap<usize, Vec<(Var, u64)>> = BTreeMap::new();
                for (i, ev) in ne.events.iter().enumerate() {
                    let msg = compose_message(
                        tape,
                        h[ev.u],
                        h[v],
                        event_time_enc[v][i],
                        event_path_enc[v][i],
                    );
                    messages.push(msg);
                    groups.entry(ev.u).or_default().push((msg, ev.p));
                    if let Some(tr) = trace.as_deref_mut() {
                        tr.messages_built += 1;
                        tr.min_message_p = Some(match tr.min_message_p {
                            Some(cur) => cur.min(ev.p),
                            None => ev.p,
                        });
                    }
                }
                let group_vec: Vec<(usize, Vec<(Var, u64)>)> = groups.into_iter().collect();
                let (mean_agg, weight_rows) = aggregate_mean(tape, &group_vec);
                let query_input = tape.concat(&[h[v], h[v], query_time_enc[v], query_path_enc[v]]);
                let (attn_cat, alpha_rows) = aggregate_attention(
                    tape,
                    layer,
                    query_input,
                    &messages,
                    hyper.d_h,
                    hyper.heads,
                );
                if let Some(tr) = trace.as_deref_mut() {
                    tr.neighbor_weight_rows.extend(weight_rows);
                    tr.attention_rows.extend(alpha_rows);
                }
                (mean_agg, attn_cat)
            };
            next.push(combine_embeddings(
                tape,
                layer,
                mean_agg,
                attn_cat,
                h[v],
                hyper.lambda,
            ));
        }
        h = next;
    }

    ForwardOutput {
        bound,
        leaves,
        embeddings: h,
    }
}

/// Raw (unclamped) regression outputs for every node on the tape.
pub fn predictions_tape(tape: &mut Tape, bound: &BoundModel, embeddings: &[Var]) -> Vec<Var> {
    embeddings
        .iter()
        .map(|&e| {
            let out = mlp_forward(tape, &bound.value_head, e);
            tape.sum_vec(out) // (1)-vector to scalar
        })
        .collect()
}

/// Final embeddings for the requested nodes at `t_ref`.
pub fn forward(
    params: &ModelParams,
    g: &TemporalGraph,
    idx: &InstanceIndex,
    targets: &[usize],
    t_ref: f64,
) -> Vec<(usize, Vec<f64>)> {
    let mut tape = Tape::new();
    let out = forward_tape(&mut tape, params, g, idx, t_ref, None);
    targets
        .iter()
        .map(|&v| (v, tape.value(out.embeddings[v]).vector().to_vec()))
        .collect()
}

/// Regression head on a final embedding, clamped to be non-negative
/// (inference only; training differentiates the raw output).
pub fn predict_tbc(params: &ModelParams, embedding: &[f64]) -> f64 {
    let raw = params.value_head.eval(embedding)[0];
    raw.max(0.0)
}

/// Clamped predictions for every node at `t_max`.
pub fn predict_all(params: &ModelParams, g: &TemporalGraph, idx: &InstanceIndex) -> Vec<f64> {
    let targets: Vec<usize> = (0..g.node_count()).collect();
    forward(params, g, idx, &targets, g.t_max())
        .into_iter()
        .map(|(_, e)| predict_tbc(params, &e))
        .collect()
}

/// Mean absolute error between raw prediction nodes and constant labels.
pub fn mae_loss_tape(tape: &mut Tape, preds: &[Var], labels: &[f64]) -> Var {
    assert_eq!(preds.len(), labels.len());
    assert!(!preds.is_empty());
    let diffs: Vec<Var> = preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let yv = tape.scalar(y);
            let d = tape.sub(p, yv);
            tape.abs(d)
        })
        .collect();
    let stacked = tape.stack_scalars(&diffs);
    let total = tape.sum_vec(stacked);
    tape.scale(total, 1.0 / preds.len() as f64)
}

/// `alpha * contrast + (1 - alpha) * regress` on the tape.
pub fn total_loss_tape(tape: &mut Tape, alpha: f64, contrast: Var, regress: Var) -> Var {
    tape.weighted_sum(&[contrast, regress], &[alpha, 1.0 - alpha])
}

/// Outcome of a finite-difference gradient validation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub probes_used: usize,
    pub probes_rejected: usize,
    /// Whether the loss included a contrastive term with eligible anchors.
    pub contrast_active: bool,
}

/// Probe threshold: a probe is rejected when any ReLU/abs input comes within
/// this distance of its kink during any of the three evaluations.
const KINK_REJECT_DISTANCE: f64 = 1e-6;

/// Validate reverse-mode gradients of the total loss against central finite
/// differences on up to `max_probes` randomly chosen parameter coordinates.
///
/// The pair sets and cluster assignment are frozen from the unperturbed
/// forward pass, exactly as a training step holds them fixed.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    params: &ModelParams,
    g: &TemporalGraph,
    labels: &[f64],
    alpha: f64,
    contrast_cfg: &ContrastConfig,
    eps: f64,
    max_probes: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let idx = InstanceIndex::build(g);

    // Frozen contrastive structure from the base embeddings.
    let frozen: Option<(PairSets, f64)> = if alpha > 0.0 {
        match contrastive::tbc_median_ref(labels) {
            Ok(median) => {
                let mut tape = Tape::new();
                let out = forward_tape(&mut tape, params, g, &idx, g.t_max(), None);
                let emb: Vec<Vec<f64>> = out
                    .embeddings
                    .iter()
                    .map(|&e| tape.value(e).vector().to_vec())
                    .collect();
                let assignment = crate::clustering::kmeans(&emb, 2.min(emb.len()), seed, 100)?;
                let sets =
                    contrastive::build_pair_sets(&assignment.labels, labels, median, contrast_cfg);
                if sets.anchors.is_empty() {
                    None
                } else {
                    Some((sets, median))
                }
            }
            Err(_) => None,
        }
    } else {
        None
    };

    let assemble = |p: &ModelParams| -> (f64, f64) {
        let mut tape = Tape::new();
        let out = forward_tape(&mut tape, p, g, &idx, g.t_max(), None);
        let preds = predictions_tape(&mut tape, &out.bound, &out.embeddings);
        let regress = mae_loss_tape(&mut tape, &preds, labels);
        let loss = match &frozen {
            Some((sets, median)) => {
                let (closs, _) = contrastive::contrastive_loss_tape(
                    &mut tape,
                    &out.embeddings,
                    sets,
                    labels,
                    *median,
                    contrast_cfg,
                );
                total_loss_tape(&mut tape, alpha, closs, regress)
            }
            None => tape.scale(regress, 1.0),
        };
        (tape.value(loss).scalar(), tape.kink_min_abs())
    };

    // Base tape with analytic gradients.
    let mut tape = Tape::new();
    let out = forward_tape(&mut tape, params, g, &idx, g.t_max(), None);
    let preds = predictions_tape(&mut tape, &out.bound, &out.embeddings);
    let regress = mae_loss_tape(&mut tape, &preds, labels);
    let loss = match &frozen {
        Some((sets, median)) => {
            let (closs, _) = contrastive::contrastive_loss_tape(
                &mut tape,
                &out.embeddings,
                sets,
                labels,
                *median,
                contrast_cfg,
            );
            total_loss_tape(&mut tape, alpha, closs, regress)
        }
        None => tape.scale(regress, 1.0),
    };
    let base_value = tape.value(loss).scalar();
    if !base_value.is_finite() {
        return Err(Error::Check(format!("non-finite loss {base_value}")));
    }
    let base_kink = tape.kink_min_abs();
    let grads = tape.backward(loss);

    // Flat coordinate space across all tensors.
    let tensor_lens: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let total_coords: usize = tensor_lens.iter().sum();
    let mut coords: Vec<usize> = (0..total_coords).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..coords.len().saturating_sub(1) {
        let j = rng.gen_range(i..coords.len());
        coords.swap(i, j);
    }
    coords.truncate(max_probes);

    let locate = |flat: usize| -> (usize, usize) {
        let mut rest = flat;
        for (ti, &len) in tensor_lens.iter().enumerate() {
            if rest < len {
                return (ti, rest);
            }
            rest -= len;
        }
        unreachable!("coordinate out of range");
    };

    let mut max_rel_err = 0.0f64;
    let mut used = 0usize;
    let mut rejected = 0usize;
    for &flat in &coords {
        let (ti, off) = locate(flat);
        let poke = |delta: f64| -> (f64, f64) {
            let mut p = params.clone();
            p.tensors_mut()[ti].data[off] += delta;
            assemble(&p)
        };
        let (up, kink_up) = poke(eps);
        let (down, kink_down) = poke(-eps);
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Check("non-finite perturbed loss".into()));
        }
        if base_kink < KINK_REJECT_DISTANCE
            || kink_up < KINK_REJECT_DISTANCE
            || kink_down < KINK_REJECT_DISTANCE
        {
            rejected += 1;
            continue;
        }
        let fd = (up - down) / (2.0 * eps);
        let analytic = match grads.wrt(tape_leaf(&out.leaves, ti)) {
            Some(Value::Vector(v)) => v[off],
            Some(Value::Matrix(m)) => {
                let cols = m.ncols();
                m[(off / cols, off % cols)]
            }
            Some(Value::Scalar(s)) => *s,
            None => 0.0,
        };
        // Floor absorbs central-difference rounding noise on near-zero
        // gradients; real gradients above it are compared relatively.
        let denom = analytic.abs().max(fd.abs()).max(1e-3);
        max_rel_err = max_rel_err.max((analytic - fd).abs() / denom);
        used += 1;
    }

    Ok(GradCheckReport {
        max_rel_err,
        probes_used: used,
        probes_rejected: rejected,
        contrast_active: frozen.is_some(),
    })
}

fn tape_leaf(leaves: &[Var], tensor_index: usize) -> Var {
    leaves[tensor_index]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::random_temporal_graph;

    fn small_hyper() -> ModelHyper {
        ModelHyper {
            d: 8,
            d_t: 4,
            d_p: 8,
            d_h: 8,
            layers: 2,
            heads: 2,
            neighbor_limit: 20,
            lambda: 0.4,
        }
    }

    fn toy_graph() -> TemporalGraph {
        TemporalGraph::from_edges(
            5,
            &[
                (1, 0, 1.0),
                (2, 0, 2.0),
                (2, 0, 3.0),
                (0, 3, 5.0),
                (0, 4, 6.0),
                (3, 4, 7.0),
                (4, 1, 8.0),
                (1, 2, 9.0),
                (2, 3, 10.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn default_message_width() {
        assert_eq!(ModelHyper::default().message_dim(), 512);
    }

    #[test]
    fn default_hyperparameters() {
        let h = ModelHyper::default();
        assert_eq!(h.d, 128);
        assert_eq!(h.d_t, 64);
        assert_eq!(h.d_p, 128);
        assert_eq!(h.d_h, 128);
        assert_eq!(h.layers, 3);
        assert_eq!(h.heads, 2);
        assert_eq!(h.neighbor_limit, 20);
        assert_eq!(h.lambda, 0.4);
    }

    #[test]
    fn hyper_validation() {
        let mut h = small_hyper();
        h.heads = 3; // does not divide 8
        assert!(h.validate().is_err());
        h = small_hyper();
        h.lambda = 1.5;
        assert!(h.validate().is_err());
    }

    #[test]
    fn isolated_node_features_are_bias() {
        let g = TemporalGraph::from_edges(3, &[(0, 1, 1.0)]).unwrap();
        let idx = InstanceIndex::build(&g);
        let params = ModelParams::init(small_hyper(), 1).unwrap();
        let feats = initial_features(&params, &g, &idx);
        assert_eq!(feats[2], params.feature_proj.b.data);
    }

    #[test]
    fn isomorphic_nodes_share_raw_features() {
        // 0 -> 1 and 2 -> 3 are disjoint copies
        let g =
            TemporalGraph::from_edges(4, &[(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
        let idx = InstanceIndex::build(&g);
        let raw = raw_structural_features(&g, &idx);
        assert_eq!(raw[0], raw[2]);
        assert_eq!(raw[1], raw[3]);
    }

    #[test]
    fn nine_distinct_out_edges_hit_log_ten() {
        let edges: Vec<(usize, usize, f64)> =
            (0..9).map(|i| (0usize, 1usize, i as f64 + 1.0)).collect();
        let g = TemporalGraph::from_edges(2, &edges).unwrap();
        let idx = InstanceIndex::build(&g);
        let raw = raw_structural_features(&g, &idx);
        assert!((raw[0][2] - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn event_context_deltas_and_totals() {
        let g = toy_graph();
        let idx = InstanceIndex::build(&g);
        let ctx = build_event_context(&g, &idx, g.t_max(), 20);
        for ne in &ctx.per_node {
            for ev in &ne.events {
                assert!(ev.p > 0);
                assert!(ev.delta_t >= 0.0);
            }
        }
        // first-ever event of a node has delta 0
        let first_events = &ctx.per_node[0].events;
        let earliest = first_events.last().unwrap();
        assert_eq!(earliest.delta_t, 0.0);
    }

    #[test]
    fn message_layout_and_zero_delta_contract() {
        let hyper = small_hyper();
        let params = ModelParams::init(hyper, 21).unwrap();
        let mut tape = Tape::new();
        let (bound, _) = bind_model(&mut tape, &params);
        let h_u = tape.vector(Array1::from_elem(hyper.d, 0.3));
        let h_v = tape.vector(Array1::from_elem(hyper.d, -0.2));
        let te = crate::encoders::encode_time_var(&mut tape, bound.omega, hyper.d_t, 0.0);
        let pe = crate::encoders::encode_path_count_var(&mut tape, &bound.path_mlp, 3.0);
        let msg = compose_message(&mut tape, h_u, h_v, te, pe);
        let value = tape.value(msg).vector();
        assert_eq!(value.len(), hyper.message_dim());
        // zero time delta fills the time slot with the encoding of 0
        let expected = crate::encoders::encode_time(&params.time_enc, 0.0);
        let slot = value
            .iter()
            .skip(2 * hyper.d)
            .take(2 * hyper.d_t)
            .copied()
            .collect::<Vec<f64>>();
        assert_eq!(slot, expected);
    }

    #[test]
    fn mean_aggregation_matches_hand_weights() {
        let mut tape = Tape::new();
        let m1 = tape.vector(ndarray::array![1.0, 0.0]);
        let m2 = tape.vector(ndarray::array![0.0, 1.0]);
        // one neighbor, messages with P = 1 and P = 3
        let groups = vec![(0usize, vec![(m1, 1u64), (m2, 3u64)])];
        let (agg, rows) = aggregate_mean(&mut tape, &groups);
        assert_eq!(rows, vec![vec![0.25, 0.75]]);
        let v = tape.value(agg).vector();
        assert!((v[0] - 0.25).abs() < 1e-12);
        assert!((v[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn single_message_passes_through_mean() {
        let mut tape = Tape::new();
        let m = tape.vector(ndarray::array![2.5, -1.0, 0.5]);
        let groups = vec![(3usize, vec![(m, 7u64)])];
        let (agg, rows) = aggregate_mean(&mut tape, &groups);
        assert_eq!(rows, vec![vec![1.0]]);
        assert_eq!(tape.value(agg).vector(), tape.value(m).vector());
    }

    #[test]
    fn two_neighbors_average_uniformly() {
        let mut tape = Tape::new();
        let m1 = tape.vector(ndarray::array![2.0, 0.0]);
        let m2 = tape.vector(ndarray::array![0.0, 4.0]);
        let groups = vec![(0usize, vec![(m1, 5u64)]), (1usize, vec![(m2, 1u64)])];
        let (agg, _) = aggregate_mean(&mut tape, &groups);
        let v = tape.value(agg).vector();
        assert!((v[0] - 1.0).abs() < 1e-12);
        assert!((v[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn attention_singleton_softmax_is_one() {
        let params = ModelParams::init(small_hyper(), 2).unwrap();
        let mut tape = Tape::new();
        let (bound, _) = bind_model(&mut tape, &params);
        let msg_dim = params.hyper.message_dim();
        let msg = tape.vector(Array1::from_elem(msg_dim, 0.3));
        let query = tape.vector(Array1::from_elem(msg_dim, 0.1));
        let (_, rows) = aggregate_attention(
            &mut tape,
            &bound.layers[0],
            query,
            &[msg],
            params.hyper.d_h,
            params.hyper.heads,
        );
        for row in rows {
            assert_eq!(row, vec![1.0]);
        }
    }

    #[test]
    fn attention_identical_keys_are_uniform() {
        let params = ModelParams::init(small_hyper(), 3).unwrap();
        let mut tape = Tape::new();
        let (bound, _) = bind_model(&mut tape, &params);
        let msg_dim = params.hyper.message_dim();
        let msg = tape.vector(Array1::from_elem(msg_dim, 0.2));
        let query = tape.vector(Array1::from_elem(msg_dim, -0.4));
        let msgs = vec![msg; 4];
        let (_, rows) = aggregate_attention(
            &mut tape,
            &bound.layers[0],
            query,
            &msgs,
            params.hyper.d_h,
            params.hyper.heads,
        );
        for row in rows {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            for w in row {
                assert!((w - 0.25).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn combine_is_exactly_affine_in_lambda() {
        let params = ModelParams::init(small_hyper(), 4).unwrap();
        let eval_at = |lambda: f64| -> Vec<f64> {
            let mut tape = Tape::new();
            let (bound, _) = bind_model(&mut tape, &params);
            let mean = tape.vector(Array1::from_elem(params.hyper.message_dim(), 0.7));
            let attn = tape.vector(Array1::from_elem(params.hyper.d_h, -0.3));
            let prev = tape.vector(Array1::from_elem(params.hyper.d, 0.5));
            let out = combine_embeddings(&mut tape, &bound.layers[0], mean, attn, prev, lambda);
            tape.value(out).vector().to_vec()
        };
        let at0 = eval_at(0.0);
        let at1 = eval_at(1.0);
        for &lambda in &[0.0, 0.4, 1.0] {
            let direct = eval_at(lambda);
            for i in 0..direct.len() {
                let recon = lambda * at1[i] + (1.0 - lambda) * at0[i];
                assert_eq!(direct[i], recon, "lambda {lambda} slot {i}");
            }
        }
    }

    #[test]
    fn edgeless_graph_flows_through_zero_aggregates() {
        let g = TemporalGraph::from_edges(4, &[]).unwrap();
        let idx = InstanceIndex::build(&g);
        let params = ModelParams::init(small_hyper(), 5).unwrap();
        let mut trace = ForwardTrace::default();
        let mut tape = Tape::new();
        let out = forward_tape(&mut tape, &params, &g, &idx, 0.0, Some(&mut trace));
        assert_eq!(trace.messages_built, 0);
        // all nodes share the same structural features, hence embeddings
        let e0 = tape.value(out.embeddings[0]).vector();
        for v in 1..4 {
            assert_eq!(e0, tape.value(out.embeddings[v]).vector());
        }
    }

    #[test]
    fn forward_is_invariant_to_edge_list_permutation() {
        let text = "10 20 1\n20 30 2\n30 40 3\n10 30 2\n40 10 5\n";
        let permuted = "40 10 5\n10 30 2\n30 40 3\n20 30 2\n10 20 1\n";
        let g1 = TemporalGraph::parse_edge_list(text).unwrap();
        let g2 = TemporalGraph::parse_edge_list(permuted).unwrap();
        let params = ModelParams::init(small_hyper(), 6).unwrap();
        let idx1 = InstanceIndex::build(&g1);
        let idx2 = InstanceIndex::build(&g2);
        let all1: Vec<usize> = (0..g1.node_count()).collect();
        let all2: Vec<usize> = (0..g2.node_count()).collect();
        let e1 = forward(&params, &g1, &idx1, &all1, g1.t_max());
        let e2 = forward(&params, &g2, &idx2, &all2, g2.t_max());
        for orig in [10u64, 20, 30, 40] {
            let d1 = g1.dense_id(orig).unwrap();
            let d2 = g2.dense_id(orig).unwrap();
            assert_eq!(e1[d1].1, e2[d2].1, "node {orig}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let g = toy_graph();
        let idx = InstanceIndex::build(&g);
        let params = ModelParams::init(small_hyper(), 7).unwrap();
        let a = predict_all(&params, &g, &idx);
        let b = predict_all(&params, &g, &idx);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_p_events_never_become_messages() {
        let g = random_temporal_graph(11, 12, 60, 6);
        let idx = InstanceIndex::build(&g);
        let params = ModelParams::init(small_hyper(), 8).unwrap();
        let mut trace = ForwardTrace::default();
        let mut tape = Tape::new();
        forward_tape(&mut tape, &params, &g, &idx, g.t_max(), Some(&mut trace));
        assert!(trace.suppressed_zero_p_events > 0, "fixture needs zero-P events");
        if let Some(p) = trace.min_message_p {
            assert!(p >= 1);
        }
    }

    #[test]
    fn predict_clamps_at_inference() {
        let mut params = ModelParams::init(small_hyper(), 9).unwrap();
        // force a negative raw output via the last bias
        {
            let last = params.value_head.layers.last_mut().unwrap();
            last.w.data.iter_mut().for_each(|w| *w = 0.0);
            last.b.data[0] = -0.3;
        }
        let emb = vec![0.1; params.hyper.d];
        assert_eq!(predict_tbc(&params, &emb), 0.0);
        params.value_head.layers.last_mut().unwrap().b.data[0] = 0.25;
        assert_eq!(predict_tbc(&params, &emb), 0.25);
    }

    #[test]
    fn zero_value_head_predicts_zero() {
        let mut params = ModelParams::init(small_hyper(), 10).unwrap();
        for l in &mut params.value_head.layers {
            l.w.data.iter_mut().for_each(|w| *w = 0.0);
            l.b.data.iter_mut().for_each(|b| *b = 0.0);
        }
        let emb = vec![0.7; params.hyper.d];
        assert_eq!(predict_tbc(&params, &emb), 0.0);
    }

    #[test]
    fn attention_rows_sum_to_one_in_full_forward() {
        let g = toy_graph();
        let idx = InstanceIndex::build(&g);
        let params = ModelParams::init(small_hyper(), 12).unwrap();
        let mut trace = ForwardTrace::default();
        let mut tape = Tape::new();
        forward_tape(&mut tape, &params, &g, &idx, g.t_max(), Some(&mut trace));
        assert!(!trace.attention_rows.is_empty());
        for row in &trace.attention_rows {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
        for row in &trace.neighbor_weight_rows {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_check_on_piecewise_linear_path() {
        // Edgeless graph with alpha = 0: the whole loss is piecewise linear,
        // so central differences are exact to rounding.
        let g = TemporalGraph::from_edges(3, &[]).unwrap();
        let params = ModelParams::init(small_hyper(), 13).unwrap();
        let labels = vec![0.1, 0.4, 0.2];
        let report = gradient_check(
            &params,
            &g,
            &labels,
            0.0,
            &ContrastConfig::default(),
            1e-5,
            120,
            99,
        )
        .unwrap();
        assert!(report.probes_used > 0);
        assert!(
            report.max_rel_err < 1e-8,
            "piecewise-linear rel err {}",
            report.max_rel_err
        );
    }

    #[test]
    fn gradient_check_full_model() {
        let g = toy_graph();
        let params = ModelParams::init(small_hyper(), 14).unwrap();
        let labels = vec![0.2, 0.25, 0.8, 0.22, 0.9];
        let report = gradient_check(
            &params,
            &g,
            &labels,
            0.2,
            &ContrastConfig::default(),
            1e-5,
            150,
            7,
        )
        .unwrap();
        assert!(report.probes_used > 50);
        assert!(report.contrast_active);
        assert!(
            report.max_rel_err < 1e-4,
            "full model rel err {}",
            report.max_rel_err
        );
    }

    #[test]
    fn gradient_check_rejects_kink_probes() {
        let g = TemporalGraph::from_edges(3, &[]).unwrap();
        let mut params = ModelParams::init(small_hyper(), 15).unwrap();
        // zero projection makes every layer-0 feature exactly 0, parking all
        // downstream ReLU inputs of the first MLP layer on their kink
        params.feature_proj.w.data.iter_mut().for_each(|w| *w = 0.0);
        params.feature_proj.b.data.iter_mut().for_each(|b| *b = 0.0);
        for layer in &mut params.layers {
            for l in &mut layer.mean_mlp.layers {
                l.b.data.iter_mut().for_each(|b| *b = 0.0);
            }
            for l in &mut layer.attn_mlp.layers {
                l.b.data.iter_mut().for_each(|b| *b = 0.0);
            }
        }
        for l in &mut params.value_head.layers {
            l.b.data.iter_mut().for_each(|b| *b = 0.0);
        }
        let labels = vec![0.0, 0.1, 0.2];
        let report = gradient_check(
            &params,
            &g,
            &labels,
            0.0,
            &ContrastConfig::default(),
            1e-5,
            40,
            3,
        )
        .unwrap();
        assert!(report.probes_rejected > 0);
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(24))]

        #[test]
        fn forward_stays_finite_on_random_graphs(seed in 0u64..5000) {
            let g = random_temporal_graph(seed, 8, 30, 7);
            let idx = InstanceIndex::build(&g);
            let params = ModelParams::init(small_hyper(), seed ^ 0xabcd).unwrap();
            let preds = predict_all(&params, &g, &idx);
            for p in preds {
                proptest::prop_assert!(p.is_finite());
                proptest::prop_assert!(p >= 0.0);
            }
        }
    }

    #[test]
    fn binder_order_matches_tensors_order() {
        let params = ModelParams::init(small_hyper(), 16).unwrap();
        let mut tape = Tape::new();
        let (_, leaves) = bind_model(&mut tape, &params);
        let tensors = params.tensors();
        assert_eq!(leaves.len(), tensors.len());
        for (leaf, tensor) in leaves.iter().zip(&tensors) {
            match tape.value(*leaf) {
                Value::Vector(v) => assert_eq!(v.len(), tensor.len()),
                Value::Matrix(m) => assert_eq!(m.len(), tensor.len()),
                Value::Scalar(_) => assert_eq!(1, tensor.len()),
            }
        }
    }
}
