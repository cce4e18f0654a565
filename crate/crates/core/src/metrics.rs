//! Evaluation metrics: mean absolute error, Spearman rank correlation with
//! fractional tie ranks, and top-k overlap counts with an explicit id
//! tie-break.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean absolute error over aligned prediction/label vectors.
pub fn mae(preds: &[f64], labels: &[f64]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Domain(format!(
            "prediction/label length mismatch: {} vs {}",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Domain("mae needs at least one pair".into()));
    }
    let sum: f64 = preds
        .iter()
        .zip(labels)
        .map(|(p, y)| (p - y).abs())
        .sum();
    Ok(sum / preds.len() as f64)
}

/// Fractional (average) ranks, 1-based; tied values share the mean of the
/// positions they occupy.
pub fn fractional_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman coefficient with its degeneracy flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    /// Set when either input is constant; `rho` is reported as 0 then.
    pub degenerate: bool,
}

/// Pearson correlation of fractional ranks. A constant input vector has no
/// defined ranking; the result is 0 with the degeneracy flag set.
pub fn spearman(preds: &[f64], labels: &[f64]) -> Result<SpearmanResult> {
    if preds.len() != labels.len() {
        return Err(Error::Domain("spearman needs aligned vectors".into()));
    }
    if preds.len() < 2 {
        return Err(Error::Domain("spearman needs at least 2 pairs".into()));
    }
    let ra = fractional_ranks(preds);
    let rb = fractional_ranks(labels);
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for i in 0..ra.len() {
        let xa = ra[i] - ma;
        let xb = rb[i] - mb;
        num += xa * xb;
        da += xa * xa;
        db += xb * xb;
    }
    if da == 0.0 || db == 0.0 {
        return Ok(SpearmanResult {
            rho: 0.0,
            degenerate: true,
        });
    }
    Ok(SpearmanResult {
        rho: num / (da * db).sqrt(),
        degenerate: false,
    })
}

/// Indices of the top-k values, descending, ties broken by ascending index.
pub fn top_k_indices(xs: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[b].partial_cmp(&xs[a]).unwrap().then(a.cmp(&b)));
    order.truncate(k.min(xs.len()));
    order
}

/// `|top_k(preds) ∩ top_k(labels)|`; `k` larger than the vector length is
/// truncated.
pub fn hits_in_k(preds: &[f64], labels: &[f64], k: usize) -> usize {
    assert!(k >= 1);
    assert_eq!(preds.len(), labels.len());
    let a = top_k_indices(preds, k);
    let b: std::collections::HashSet<usize> = top_k_indices(labels, k).into_iter().collect();
    a.iter().filter(|i| b.contains(i)).count()
}

/// Per-range MAE split: exact zeros, then the nonzero labels split at their
/// median into mid and high.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeMae {
    pub zero: Option<f64>,
    pub mid: Option<f64>,
    pub high: Option<f64>,
}

pub fn range_mae(preds: &[f64], labels: &[f64]) -> RangeMae {
    let mut nonzero: Vec<f64> = labels.iter().copied().filter(|&y| y != 0.0).collect();
    nonzero.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if nonzero.is_empty() {
        f64::NAN
    } else {
        let m = nonzero.len();
        if m % 2 == 1 {
            nonzero[m / 2]
        } else {
            0.5 * (nonzero[m / 2 - 1] + nonzero[m / 2])
        }
    };
    let bucket_mae = |select: &dyn Fn(f64) -> bool| -> Option<f64> {
        let pairs: Vec<(f64, f64)> = preds
            .iter()
            .zip(labels)
            .filter(|(_, &y)| select(y))
            .map(|(&p, &y)| (p, y))
            .collect();
        if pairs.is_empty() {
            None
        } else {
            Some(
                pairs.iter().map(|(p, y)| (p - y).abs()).sum::<f64>() / pairs.len() as f64,
            )
        }
    };
    RangeMae {
        zero: bucket_mae(&|y| y == 0.0),
        mid: bucket_mae(&|y| y != 0.0 && y <= median),
        high: bucket_mae(&|y| y != 0.0 && y > median),
    }
}

/// Full evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub spearman: f64,
    pub spearman_degenerate: bool,
    pub hits: BTreeMap<usize, usize>,
    pub range_mae: RangeMae,
    /// Whether the evaluated graph's digest appeared in the checkpoint's
    /// training set (inductive evaluations expect `false`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph_in_training_set: Option<bool>,
}

pub const HITS_KS: [usize; 3] = [10, 30, 50];

pub fn metrics_report(preds: &[f64], labels: &[f64]) -> Result<MetricsReport> {
    let sp = spearman(preds, labels)?;
    let mut hits = BTreeMap::new();
    for k in HITS_KS {
        hits.insert(k, hits_in_k(preds, labels, k));
    }
    Ok(MetricsReport {
        mae: mae(preds, labels)?,
        spearman: sp.rho,
        spearman_degenerate: sp.degenerate,
        hits,
        range_mae: range_mae(preds, labels),
        graph_in_training_set: None,
    })
}

/// Round every float in a report to 6 significant digits for emission.
pub fn report_to_json(report: &MetricsReport) -> serde_json::Value {
    let mut v = serde_json::to_value(report).expect("report serializes");
    round_floats(&mut v);
    v
}

fn round_floats(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) => {
            if let Some(x) = n.as_f64() {
                if n.is_f64() {
                    let rounded: f64 = format!("{x:.5e}").parse().unwrap();
                    if let Some(num) = serde_json::Number::from_f64(rounded) {
                        *n = num;
                    }
                }
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(round_floats),
        serde_json::Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}
