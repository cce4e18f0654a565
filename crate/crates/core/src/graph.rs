//! Temporal graph data model: edge-list ingestion, instance-index construction
//! (per-node outgoing-timestamp sets and valid-continuation counts), temporal
//! neighbor retrieval, and label-distribution statistics.

use std::collections::{BTreeSet, HashMap};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A directed timestamped edge over dense node ids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalEdge {
    pub u: usize,
    pub v: usize,
    pub t: f64,
}

/// Directed temporal graph. Node ids are dense `[0, n)`; every node keeps the
/// original id it carried in the input file so reports can be emitted in the
/// caller's id space.
///
/// Exact duplicate `(u, v, t)` triples are collapsed to a single edge; the
/// same pair may repeat at distinct timestamps.
#[derive(Debug, Clone)]
pub struct TemporalGraph {
    n: usize,
    edges: Vec<TemporalEdge>,
    t_max: f64,
    original_ids: Vec<u64>,
}

impl TemporalGraph {
    /// Build a graph from dense-id edges. Original ids default to the dense ids.
    pub fn from_edges(n: usize, raw: &[(usize, usize, f64)]) -> Result<Self> {
        let mut edges = Vec::with_capacity(raw.len());
        let mut seen: BTreeSet<(usize, usize, u64)> = BTreeSet::new();
        let mut t_max = 0.0f64;
        for &(u, v, t) in raw {
            if u >= n || v >= n {
                return Err(Error::Domain(format!(
                    "edge ({u}, {v}) has endpoint outside [0, {n})"
                )));
            }
            if !t.is_finite() || t < 0.0 {
                return Err(Error::Domain(format!("timestamp {t} is not a non-negative finite value")));
            }
            if seen.insert((u, v, t.to_bits())) {
                edges.push(TemporalEdge { u, v, t });
                t_max = t_max.max(t);
            }
        }
        Ok(Self {
            n,
            edges,
            t_max,
            original_ids: (0..n as u64).collect(),
        })
    }

    /// Parse the whitespace-separated `u v t` edge-list format. Lines starting
    /// with `#` are comments; blank lines are skipped. Node ids are compacted
    /// to a dense `[0, n)` range in first-appearance order.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut remap: HashMap<u64, usize> = HashMap::new();
        let mut original_ids: Vec<u64> = Vec::new();
        let mut edges: Vec<TemporalEdge> = Vec::new();
        let mut seen: BTreeSet<(usize, usize, u64)> = BTreeSet::new();
        let mut t_max = 0.0f64;

        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected `u v t`, found {} fields", fields.len()),
                });
            }
            let parse_id = |s: &str| -> Result<u64> {
                s.parse::<u64>().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("invalid node id `{s}`"),
                })
            };
            let u_orig = parse_id(fields[0])?;
            let v_orig = parse_id(fields[1])?;
            let t: f64 = fields[2].parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("invalid timestamp `{}`", fields[2]),
            })?;
            if !t.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("non-finite timestamp `{}`", fields[2]),
                });
            }
            if t < 0.0 {
                return Err(Error::Domain(format!(
                    "negative timestamp {t} at line {lineno}"
                )));
            }
            let mut dense = |orig: u64| -> usize {
                *remap.entry(orig).or_insert_with(|| {
                    original_ids.push(orig);
                    original_ids.len() - 1
                })
            };
            let u = dense(u_orig);
            let v = dense(v_orig);
            if seen.insert((u, v, t.to_bits())) {
                edges.push(TemporalEdge { u, v, t });
                t_max = t_max.max(t);
            }
        }

        Ok(Self {
            n: original_ids.len(),
            edges,
            t_max,
            original_ids,
        })
    }

    /// Emit the edge list in the stored (first-appearance) order using the
    /// original node ids. `parse_edge_list(serialize_edge_list(g))` reproduces
    /// the dense-id edge multiset exactly.
    pub fn serialize_edge_list(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            out.push_str(&format!(
                "{} {} {}\n",
                self.original_ids[e.u], self.original_ids[e.v], e.t
            ));
        }
        out
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[TemporalEdge] {
        &self.edges
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn original_id(&self, dense: usize) -> u64 {
        self.original_ids[dense]
    }

    pub fn dense_id(&self, original: u64) -> Option<usize> {
        self.original_ids.iter().position(|&o| o == original)
    }

    /// Content hash of the edge multiset in original-id space. Invariant to
    /// input line order, so it identifies the dataset rather than the file.
    pub fn digest(&self) -> String {
        let mut canon: Vec<(u64, u64, u64)> = self
            .edges
            .iter()
            .map(|e| (self.original_ids[e.u], self.original_ids[e.v], e.t.to_bits()))
            .collect();
        canon.sort_unstable();
        let mut hasher = Sha256::new();
        hasher.update(b"temporal-graph-v1");
        hasher.update((self.n as u64).to_le_bytes());
        for (u, v, t) in canon {
            hasher.update(u.to_le_bytes());
            hasher.update(v.to_le_bytes());
            hasher.update(t.to_le_bytes());
        }
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// An incoming edge event `(u, v, t)` seen from the target node `v`, with its
/// valid-continuation count `P(u, v, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InEvent {
    pub u: usize,
    pub t: f64,
    pub p: u64,
}

/// Instance-level structure over a temporal graph: per-node sorted sets of
/// outgoing timestamps `T_out(v)` and, for every edge `(u, v, t)`, the count
/// `P(u, v, t)` of timestamps in `T_out(v)` strictly greater than `t`.
///
/// `P` uses only the strict "later" condition; the waiting bound of the path
/// semantics is not folded in here.
#[derive(Debug, Clone)]
pub struct InstanceIndex {
    t_out: Vec<Vec<f64>>,
    edge_p: Vec<u64>,
    in_events: Vec<Vec<InEvent>>,
    valid_in_times: Vec<Vec<f64>>,
}

impl InstanceIndex {
    pub fn build(g: &TemporalGraph) -> Self {
        let n = g.node_count();
        let mut t_out_sets: Vec<BTreeSet<u64>> = vec![BTreeSet::new(); n];
        for e in g.edges() {
            t_out_sets[e.u].insert(e.t.to_bits());
        }
        let t_out: Vec<Vec<f64>> = t_out_sets
            .into_iter()
            .map(|s| s.into_iter().map(f64::from_bits).collect())
            .collect();

        let mut edge_p = Vec::with_capacity(g.edge_count());
        let mut in_events: Vec<Vec<InEvent>> = vec![Vec::new(); n];
        for e in g.edges() {
            let times = &t_out[e.v];
            let first_later = times.partition_point(|&x| x <= e.t);
            let p = (times.len() - first_later) as u64;
            edge_p.push(p);
            in_events[e.v].push(InEvent { u: e.u, t: e.t, p });
        }
        for evs in &mut in_events {
            evs.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap().then(a.u.cmp(&b.u)));
        }
        let valid_in_times: Vec<Vec<f64>> = in_events
            .iter()
            .map(|evs| evs.iter().filter(|e| e.p > 0).map(|e| e.t).collect())
            .collect();

        Self {
            t_out,
            edge_p,
            in_events,
            valid_in_times,
        }
    }

    /// Sorted, deduplicated outgoing timestamps of `v`.
    pub fn t_out(&self, v: usize) -> &[f64] {
        &self.t_out[v]
    }

    /// `P` for the edge at position `i` of the graph's edge list.
    pub fn edge_path_count(&self, i: usize) -> u64 {
        self.edge_p[i]
    }

    /// `P(u, v, t)` for an existing edge, or `None` when no such edge exists.
    pub fn path_count(&self, u: usize, v: usize, t: f64) -> Option<u64> {
        self.in_events[v]
            .iter()
            .find(|e| e.u == u && e.t == t)
            .map(|e| e.p)
    }

    /// All incoming events of `v` sorted by `(t, u)`, including zero-`P` ones.
    pub fn in_events(&self, v: usize) -> &[InEvent] {
        &self.in_events[v]
    }

    /// Timestamp of the most recent valid (`P > 0`) incoming event of `v`
    /// strictly before `t`, or `None` when no such event exists.
    pub fn prev_valid_event_time(&self, v: usize, t: f64) -> Option<f64> {
        let times = &self.valid_in_times[v];
        let k = times.partition_point(|&x| x < t);
        if k == 0 {
            None
        } else {
            Some(times[k - 1])
        }
    }

    /// Sum of `P` over all valid incoming events of `v` strictly before `t`.
    pub fn total_valid_incoming_p(&self, v: usize, t: f64) -> u64 {
        self.in_events[v]
            .iter()
            .filter(|e| e.t < t && e.p > 0)
            .map(|e| e.p)
            .sum()
    }
}

/// Incoming events `(u, t_x)` of `v` with `t_x < t` and `P(u, v, t_x) > 0`,
/// most-recent-first, ties on `t_x` broken by ascending `u`, truncated to
/// `limit` entries.
pub fn temporal_neighbors(
    idx: &InstanceIndex,
    _g: &TemporalGraph,
    v: usize,
    t: f64,
    limit: usize,
) -> Vec<(usize, f64)> {
    assert!(limit >= 1, "neighbor limit must be at least 1");
    let mut events: Vec<&InEvent> = idx
        .in_events(v)
        .iter()
        .filter(|e| e.t < t && e.p > 0)
        .collect();
    events.sort_by(|a, b| b.t.partial_cmp(&a.t).unwrap().then(a.u.cmp(&b.u)));
    events.truncate(limit);
    events.into_iter().map(|e| (e.u, e.t)).collect()
}

/// Label-distribution histogram: a dedicated bucket for exact zeros plus nine
/// equal-width buckets over the nonzero range, right-closed on the last.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Histogram {
    pub zero_count: usize,
    /// Ten boundaries over `[min_nonzero, max]`; empty when no nonzero labels.
    pub bucket_edges: Vec<f64>,
    /// Nine counts; empty when no nonzero labels.
    pub bucket_counts: Vec<usize>,
}

pub const NONZERO_BUCKETS: usize = 9;

impl Histogram {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("histogram needs at least one label".into()));
        }
        let zero_count = values.iter().filter(|&&x| x == 0.0).count();
        let nonzero: Vec<f64> = values.iter().copied().filter(|&x| x != 0.0).collect();
        if nonzero.is_empty() {
            return Ok(Self {
                zero_count,
                bucket_edges: Vec::new(),
                bucket_counts: Vec::new(),
            });
        }
        let min = nonzero.iter().copied().fold(f64::INFINITY, f64::min);
        let max = nonzero.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (max - min) / NONZERO_BUCKETS as f64;
        let bucket_edges: Vec<f64> = (0..=NONZERO_BUCKETS)
            .map(|i| min + width * i as f64)
            .collect();
        let mut bucket_counts = vec![0usize; NONZERO_BUCKETS];
        for &x in &nonzero {
            bucket_counts[nonzero_bucket(x, min, width)] += 1;
        }
        Ok(Self {
            zero_count,
            bucket_edges,
            bucket_counts,
        })
    }

    /// Stratum id of a label value: 0 for exact zeros, `1 + bucket` otherwise.
    pub fn stratum_of(&self, x: f64) -> usize {
        if x == 0.0 || self.bucket_edges.is_empty() {
            return 0;
        }
        let min = self.bucket_edges[0];
        let width = (self.bucket_edges[NONZERO_BUCKETS] - min) / NONZERO_BUCKETS as f64;
        1 + nonzero_bucket(x, min, width)
    }

    pub fn labeled_total(&self) -> usize {
        self.zero_count + self.bucket_counts.iter().sum::<usize>()
    }

    pub fn zero_fraction(&self) -> f64 {
        self.zero_count as f64 / self.labeled_total() as f64
    }
}

fn nonzero_bucket(x: f64, min: f64, width: f64) -> usize {
    if width == 0.0 {
        // Degenerate single-value range: everything lands in the first bucket.
        return 0;
    }
    (((x - min) / width).floor() as usize).min(NONZERO_BUCKETS - 1)
}

/// Distribution of a TBC label set: exact zeros in their own bucket, the
/// nonzero range split into nine equal-width buckets.
pub fn tbc_histogram(labels: &crate::oracle::LabelSet) -> Result<Histogram> {
    Histogram::from_values(labels.values())
}
