//! Intra-cluster contrastive objective: positive/negative pair selection by
//! label distance, difference-proportional pair weights, and the re-weighted
//! InfoNCE-style loss over node embeddings.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastConfig {
    /// Positive-pair threshold factor in (0, 1).
    pub gamma_pos: f64,
    /// Negative-pair threshold factor.
    pub gamma_neg: f64,
    /// Softmax temperature.
    pub tau: f64,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        Self {
            gamma_pos: 0.5,
            gamma_neg: 0.5,
            tau: 0.1,
        }
    }
}

impl ContrastConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_pos > 0.0 && self.gamma_pos < 1.0) {
            return Err(Error::Config(format!(
                "gamma_pos must lie in (0, 1), got {}",
                self.gamma_pos
            )));
        }
        if self.gamma_neg <= 0.0 {
            return Err(Error::Config("gamma_neg must be positive".into()));
        }
        if self.tau <= 0.0 {
            return Err(Error::Config("tau must be positive".into()));
        }
        Ok(())
    }
}

/// Median of the nonzero label values. Heavily zero-inflated label sets make
/// the all-label median collapse to 0, which would void both pair
/// thresholds, so zeros are excluded; an all-zero label set is an error.
pub fn tbc_median_ref(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("median needs at least one label".into()));
    }
    let mut nonzero: Vec<f64> = values.iter().copied().filter(|&x| x != 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::Config(
            "all labels are zero; contrastive thresholds are degenerate, train with alpha = 0"
                .into(),
        ));
    }
    nonzero.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = nonzero.len();
    Ok(if m % 2 == 1 {
        nonzero[m / 2]
    } else {
        0.5 * (nonzero[m / 2 - 1] + nonzero[m / 2])
    })
}

/// Positive-pair weight `median * gamma_pos / |delta|`.
pub fn pair_weight_pos(delta_abs: f64, median: f64, cfg: &ContrastConfig) -> f64 {
    assert!(delta_abs > 0.0, "positive pairs require |delta| > 0");
    median * cfg.gamma_pos / delta_abs
}

/// Negative-pair weight `|delta| / (median * gamma_neg)`.
pub fn pair_weight_neg(delta_abs: f64, median: f64, cfg: &ContrastConfig) -> f64 {
    delta_abs / (median * cfg.gamma_neg)
}

/// One anchor's positive and negative sample lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorPairs {
    pub node: usize,
    pub pos: Vec<usize>,
    pub neg: Vec<usize>,
}

/// Eligible anchors (nonempty positive and negative sets) plus diagnostics
/// about skipped nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSets {
    pub anchors: Vec<AnchorPairs>,
    pub eligible: usize,
    pub skipped: usize,
}

impl PairSets {
    pub fn diagnostics(&self) -> serde_json::Value {
        let mut pos_hist = std::collections::BTreeMap::new();
        let mut neg_hist = std::collections::BTreeMap::new();
        for a in &self.anchors {
            *pos_hist.entry(a.pos.len()).or_insert(0usize) += 1;
            *neg_hist.entry(a.neg.len()).or_insert(0usize) += 1;
        }
        serde_json::json!({
            "anchors_eligible": self.eligible,
            "anchors_skipped": self.skipped,
            "pos_set_size_histogram": pos_hist,
            "neg_set_size_histogram": neg_hist,
        })
    }
}

/// Build per-anchor pair sets within clusters:
/// positives satisfy `0 < |delta| <= gamma_pos * median`, negatives satisfy
/// `|delta| >= gamma_neg * median`. Anchors missing either set are excluded
/// from the loss and only counted in diagnostics.
pub fn build_pair_sets(
    cluster_labels: &[usize],
    tbc: &[f64],
    median: f64,
    cfg: &ContrastConfig,
) -> PairSets {
    assert_eq!(cluster_labels.len(), tbc.len());
    let n = tbc.len();
    let pos_cut = cfg.gamma_pos * median;
    let neg_cut = cfg.gamma_neg * median;
    let mut anchors = Vec::new();
    let mut skipped = 0usize;
    for u in 0..n {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for v in 0..n {
            if v == u || cluster_labels[v] != cluster_labels[u] {
                continue;
            }
            let delta = (tbc[u] - tbc[v]).abs();
            if delta > 0.0 && delta <= pos_cut {
                pos.push(v);
            }
            if delta >= neg_cut {
                neg.push(v);
            }
        }
        if pos.is_empty() || neg.is_empty() {
            skipped += 1;
        } else {
            anchors.push(AnchorPairs { node: u, pos, neg });
        }
    }
    let eligible = anchors.len();
    PairSets {
        anchors,
        eligible,
        skipped,
    }
}

/// Tape construction of the contrastive loss:
/// `sum_u -log( A_u / (A_u + B_u) )` with
/// `A_u = sum_{v in pos} exp(beta_uv sim(h_u, h_v) / tau)` and
/// `B_u` the matching negative sum; similarity is the raw dot product and
/// both log-sums are max-shift stabilized.
///
/// Returns the loss node and whether no anchor was eligible (loss 0).
pub fn contrastive_loss_tape(
    tape: &mut Tape,
    embeddings: &[Var],
    pairs: &PairSets,
    tbc: &[f64],
    median: f64,
    cfg: &ContrastConfig,
) -> (Var, bool) {
    if pairs.anchors.is_empty() {
        return (tape.scalar(0.0), true);
    }
    let mut per_anchor = Vec::with_capacity(pairs.anchors.len());
    for anchor in &pairs.anchors {
        let u = anchor.node;
        let mut pos_terms = Vec::with_capacity(anchor.pos.len());
        for &v in &anchor.pos {
            let delta = (tbc[u] - tbc[v]).abs();
            let beta = pair_weight_pos(delta, median, cfg);
            let sim = tape.dot(embeddings[u], embeddings[v]);
            pos_terms.push(tape.scale(sim, beta / cfg.tau));
        }
        let mut all_terms = pos_terms.clone();
        for &w in &anchor.neg {
            let delta = (tbc[u] - tbc[w]).abs();
            let beta = pair_weight_neg(delta, median, cfg);
            let sim = tape.dot(embeddings[u], embeddings[w]);
            all_terms.push(tape.scale(sim, beta / cfg.tau));
        }
        let pos_vec = tape.stack_scalars(&pos_terms);
        let all_vec = tape.stack_scalars(&all_terms);
        let lse_all = tape.logsumexp(all_vec);
        let lse_pos = tape.logsumexp(pos_vec);
        per_anchor.push(tape.sub(lse_all, lse_pos));
    }
    let ones = vec![1.0; per_anchor.len()];
    (tape.weighted_sum(&per_anchor, &ones), false)
}

/// Convenience wrapper evaluating the loss on plain embedding vectors.
pub fn contrastive_loss_value(
    embeddings: &[Vec<f64>],
    pairs: &PairSets,
    tbc: &[f64],
    median: f64,
    cfg: &ContrastConfig,
) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = embeddings
        .iter()
        .map(|e| tape.vector(ndarray::Array1::from(e.clone())))
        .collect();
    let (loss, _) = contrastive_loss_tape(&mut tape, &vars, pairs, tbc, median, cfg);
    tape.value(loss).scalar()
}
