//! Exact temporal betweenness centrality under configurable optimal-path
//! semantics.
//!
//! Two independent engines are provided: an exhaustive enumerator over
//! node-simple time-respecting paths (the default), and a subset-state
//! dynamic program used as a cross-check. Both count optimal paths per
//! source/destination pair and normalize by `|V| * (|V| - 1)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TemporalGraph;

/// Default cap on partial path extensions per source before the enumerator
/// aborts with a resource error.
pub const DEFAULT_EXTENSION_CEILING: u64 = 10_000_000;

/// Which temporal paths count as optimal for a source/destination pair.
///
/// Each criterion is a lexicographic order over (arrival time, departure
/// time, hop count) projections:
/// - `Shortest`: fewest hops.
/// - `ShortestForemost`: earliest arrival, then fewest hops.
/// - `ShortestLatestDepartureForemost`: earliest arrival, then latest
///   departure, then fewest hops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimalityCriterion {
    Shortest,
    ShortestForemost,
    ShortestLatestDepartureForemost,
}

impl OptimalityCriterion {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "shortest" => Ok(Self::Shortest),
            "shortest-foremost" => Ok(Self::ShortestForemost),
            "shortest-latest-foremost" => Ok(Self::ShortestLatestDepartureForemost),
            other => Err(Error::Config(format!(
                "unknown semantics `{other}` (expected shortest | shortest-foremost | shortest-latest-foremost)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Shortest => "shortest",
            Self::ShortestForemost => "shortest-foremost",
            Self::ShortestLatestDepartureForemost => "shortest-latest-foremost",
        }
    }
}

/// Optimal-path configuration: criterion, maximum waiting time between
/// consecutive edges (`delta`, `inf` for unbounded) and a hop cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSemantics {
    pub criterion: OptimalityCriterion,
    #[serde(with = "delta_serde")]
    pub delta: f64,
    pub max_hops: usize,
}

impl PathSemantics {
    pub fn new(criterion: OptimalityCriterion) -> Self {
        Self {
            criterion,
            delta: f64::INFINITY,
            max_hops: usize::MAX,
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_max_hops(mut self, max_hops: usize) -> Self {
        self.max_hops = max_hops;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta.is_nan() || self.delta <= 0.0 {
            return Err(Error::Domain(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        if self.max_hops < 1 {
            return Err(Error::Domain("max_hops must be at least 1".into()));
        }
        Ok(())
    }
}

/// Serialize the waiting bound as a number when finite and as the string
/// `"inf"` otherwise (JSON has no infinity literal).
mod delta_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str("inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(x),
            Raw::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Parse a waiting-bound flag value: `inf` or a positive decimal.
pub fn parse_delta(s: &str) -> Result<f64> {
    if s == "inf" {
        return Ok(f64::INFINITY);
    }
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Config(format!("invalid delta `{s}`")))?;
    if v.is_nan() || v <= 0.0 {
        return Err(Error::Config(format!("delta must be positive, got `{s}`")));
    }
    Ok(v)
}

/// A concrete time-respecting path: `nodes.len() == times.len() + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalPath {
    pub nodes: Vec<usize>,
    pub times: Vec<f64>,
}

impl TemporalPath {
    pub fn hops(&self) -> usize {
        self.times.len()
    }

    pub fn departure(&self) -> f64 {
        self.times[0]
    }

    pub fn arrival(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn interior(&self) -> &[usize] {
        &self.nodes[1..self.nodes.len() - 1]
    }
}

/// Node-to-TBC map together with the configuration that produced it.
#[derive(Debug, Clone)]
pub struct LabelSet {
    values: Vec<f64>,
    pub semantics: PathSemantics,
    pub source_graph_digest: String,
}

impl LabelSet {
    pub fn new(values: Vec<f64>, semantics: PathSemantics, source_graph_digest: String) -> Self {
        Self {
            values,
            semantics,
            source_graph_digest,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Lines `node tbc_value` with 12 significant digits, ascending original id.
    pub fn to_label_file(&self, g: &TemporalGraph) -> String {
        let mut rows: Vec<(u64, f64)> = (0..self.values.len())
            .map(|v| (g.original_id(v), self.values[v]))
            .collect();
        rows.sort_unstable_by_key(|r| r.0);
        let mut out = String::new();
        for (id, val) in rows {
            out.push_str(&format!("{id} {:.11e}\n", val));
        }
        out
    }

    /// Parse a `node tbc_value` file back into dense-id order for `g`.
    /// Every node of `g` must be covered exactly once.
    pub fn parse_label_file(text: &str, g: &TemporalGraph, semantics: PathSemantics) -> Result<Self> {
        let mut values = vec![f64::NAN; g.node_count()];
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected `node value`, found {} fields", fields.len()),
                });
            }
            let orig: u64 = fields[0].parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("invalid node id `{}`", fields[0]),
            })?;
            let val: f64 = fields[1].parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("invalid value `{}`", fields[1]),
            })?;
            if !val.is_finite() || !(0.0..=1.0).contains(&val) {
                return Err(Error::Domain(format!(
                    "label {val} for node {orig} is outside [0, 1]"
                )));
            }
            let dense = g.dense_id(orig).ok_or_else(|| Error::Domain(format!(
                "label file references node {orig} which is not in the graph"
            )))?;
            values[dense] = val;
        }
        if let Some(missing) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::Domain(format!(
                "label file is missing node {} (original id {})",
                missing,
                g.original_id(missing)
            )));
        }
        Ok(Self::new(values, semantics, g.digest()))
    }
}

/// Lexicographic ranking tuple of a path under a criterion; smaller is better.
fn criterion_key(c: OptimalityCriterion, arrival: f64, departure: f64, hops: usize) -> [f64; 3] {
    match c {
        OptimalityCriterion::Shortest => [hops as f64, 0.0, 0.0],
        OptimalityCriterion::ShortestForemost => [arrival, hops as f64, 0.0],
        OptimalityCriterion::ShortestLatestDepartureForemost => {
            [arrival, -departure, hops as f64]
        }
    }
}

fn key_cmp(a: &[f64; 3], b: &[f64; 3]) -> std::cmp::Ordering {
    a.partial_cmp(b).expect("criterion keys are always finite")
}

struct OutAdj {
    /// Per node: outgoing `(t, head)` sorted ascending by `(t, head)`.
    out: Vec<Vec<(f64, usize)>>,
}

impl OutAdj {
    fn build(g: &TemporalGraph) -> Self {
        let mut out: Vec<Vec<(f64, usize)>> = vec![Vec::new(); g.node_count()];
        for e in g.edges() {
            out[e.u].push((e.t, e.v));
        }
        for lst in &mut out {
            lst.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        }
        Self { out }
    }
}

struct DfsState<'a> {
    adj: &'a OutAdj,
    sem: PathSemantics,
    ceiling: u64,
    extensions: u64,
    visited: Vec<bool>,
    nodes: Vec<usize>,
    times: Vec<f64>,
}

impl<'a> DfsState<'a> {
    /// Depth-first enumeration of every node-simple time-respecting path
    /// rooted at the current state; `visit` sees each path once, as
    /// `(nodes, times)` slices.
    fn run(&mut self, visit: &mut impl FnMut(&[usize], &[f64])) -> Result<()> {
        if self.times.len() >= self.sem.max_hops {
            return Ok(());
        }
        let cur = *self.nodes.last().unwrap();
        let last_t = self.times.last().copied();
        // Candidate edges leave strictly later than the previous edge and
        // within the waiting bound; the first edge is unconstrained.
        let lo = match last_t {
            Some(lt) => self.adj.out[cur].partition_point(|&(t, _)| t <= lt),
            None => 0,
        };
        for i in lo..self.adj.out[cur].len() {
            let (t, w) = self.adj.out[cur][i];
            if let Some(lt) = last_t {
                if t - lt > self.sem.delta {
                    break; // sorted by t: later edges only get worse
                }
            }
            if self.visited[w] {
                continue;
            }
            self.extensions += 1;
            if self.extensions > self.ceiling {
                return Err(Error::Resource(format!(
                    "path enumeration exceeded {} partial extensions",
                    self.ceiling
                )));
            }
            self.visited[w] = true;
            self.nodes.push(w);
            self.times.push(t);
            visit(&self.nodes, &self.times);
            self.run(visit)?;
            self.nodes.pop();
            self.times.pop();
            self.visited[w] = false;
        }
        Ok(())
    }
}

fn enumerate_from(
    g: &TemporalGraph,
    adj: &OutAdj,
    s: usize,
    sem: PathSemantics,
    ceiling: u64,
    visit: &mut impl FnMut(&[usize], &[f64]),
) -> Result<()> {
    let mut state = DfsState {
        adj,
        sem,
        ceiling,
        extensions: 0,
        visited: vec![false; g.node_count()],
        nodes: vec![s],
        times: Vec::new(),
    };
    state.visited[s] = true;
    state.run(visit)
}

/// All node-simple time-respecting paths from `s` to `z`: timestamps strictly
/// ascend and consecutive gaps satisfy `0 < gap <= delta`.
pub fn enumerate_temporal_paths(
    g: &TemporalGraph,
    s: usize,
    z: usize,
    sem: PathSemantics,
) -> Result<Vec<TemporalPath>> {
    enumerate_temporal_paths_with_ceiling(g, s, z, sem, DEFAULT_EXTENSION_CEILING)
}

pub fn enumerate_temporal_paths_with_ceiling(
    g: &TemporalGraph,
    s: usize,
    z: usize,
    sem: PathSemantics,
    ceiling: u64,
) -> Result<Vec<TemporalPath>> {
    if s == z {
        return Err(Error::Domain("source and destination must differ".into()));
    }
    sem.validate()?;
    let adj = OutAdj::build(g);
    let mut paths = Vec::new();
    enumerate_from(g, &adj, s, sem, ceiling, &mut |nodes, times| {
        if *nodes.last().unwrap() == z {
            paths.push(TemporalPath {
                nodes: nodes.to_vec(),
                times: times.to_vec(),
            });
        }
    })?;
    Ok(paths)
}

/// Per-destination fold that keeps only the current optimum.
#[derive(Clone)]
struct DestAgg {
    best: Option<[f64; 3]>,
    sigma: u64,
    through: Vec<u64>,
}

impl DestAgg {
    fn new(n: usize) -> Self {
        Self {
            best: None,
            sigma: 0,
            through: vec![0; n],
        }
    }

    fn offer(&mut self, key: [f64; 3], interior: &[usize]) {
        let replace = match &self.best {
            None => true,
            Some(b) => match key_cmp(&key, b) {
                std::cmp::Ordering::Less => true,
                std::cmp::Ordering::Equal => {
                    self.sigma += 1;
                    for &v in interior {
                        self.through[v] += 1;
                    }
                    return;
                }
                std::cmp::Ordering::Greater => return,
            },
        };
        if replace {
            self.best = Some(key);
            self.sigma = 1;
            self.through.iter_mut().for_each(|c| *c = 0);
            for &v in interior {
                self.through[v] += 1;
            }
        }
    }
}

/// Number of optimal temporal paths `s -> z` and, per node, how many of them
/// cross it as an interior node.
pub fn optimal_path_counts(
    g: &TemporalGraph,
    s: usize,
    z: usize,
    sem: PathSemantics,
) -> Result<(u64, Vec<u64>)> {
    if s == z {
        return Err(Error::Domain("source and destination must differ".into()));
    }
    sem.validate()?;
    let adj = OutAdj::build(g);
    let mut agg = DestAgg::new(g.node_count());
    enumerate_from(g, &adj, s, sem, DEFAULT_EXTENSION_CEILING, &mut |nodes, times| {
        if *nodes.last().unwrap() == z {
            let key = criterion_key(sem.criterion, *times.last().unwrap(), times[0], times.len());
            agg.offer(key, &nodes[1..nodes.len() - 1]);
        }
    })?;
    Ok((agg.sigma, agg.through))
}

fn source_contribution(
    g: &TemporalGraph,
    adj: &OutAdj,
    s: usize,
    sem: PathSemantics,
    ceiling: u64,
) -> Result<Vec<f64>> {
    let n = g.node_count();
    let mut aggs: Vec<DestAgg> = vec![DestAgg::new(n); n];
    enumerate_from(g, adj, s, sem, ceiling, &mut |nodes, times| {
        let z = *nodes.last().unwrap();
        let key = criterion_key(sem.criterion, *times.last().unwrap(), times[0], times.len());
        aggs[z].offer(key, &nodes[1..nodes.len() - 1]);
    })?;
    let mut contrib = vec![0.0; n];
    for (z, agg) in aggs.iter().enumerate() {
        if z == s || agg.sigma == 0 {
            continue;
        }
        for v in 0..n {
            if agg.through[v] > 0 {
                contrib[v] += agg.through[v] as f64 / agg.sigma as f64;
            }
        }
    }
    Ok(contrib)
}

/// Exact TBC for every node via exhaustive enumeration:
/// `TBC(v) = (1 / (|V| (|V|-1))) * sum over s != v != z of sigma_sz(v) / sigma_sz`.
///
/// Sources are processed independently (in parallel) and their contributions
/// are reduced in fixed source order, so results are bit-stable across runs.
pub fn exact_tbc(g: &TemporalGraph, sem: PathSemantics) -> Result<LabelSet> {
    exact_tbc_with_ceiling(g, sem, DEFAULT_EXTENSION_CEILING)
}

pub fn exact_tbc_with_ceiling(
    g: &TemporalGraph,
    sem: PathSemantics,
    ceiling: u64,
) -> Result<LabelSet> {
    let n = g.node_count();
    if n < 2 {
        return Err(Error::Domain(format!(
            "TBC normalization needs at least 2 nodes, graph has {n}"
        )));
    }
    sem.validate()?;
    let adj = OutAdj::build(g);
    let per_source: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|s| source_contribution(g, &adj, s, sem, ceiling))
        .collect();
    let mut acc = vec![0.0; n];
    for contrib in per_source {
        let contrib = contrib?;
        for v in 0..n {
            acc[v] += contrib[v];
        }
    }
    let norm = 1.0 / (n as f64 * (n as f64 - 1.0));
    let values: Vec<f64> = acc.into_iter().map(|x| x * norm).collect();
    Ok(LabelSet::new(values, sem, g.digest()))
}

pub mod dp {
    //! Independent cross-check engine: a forward dynamic program over
    //! (visited-set, last node, arrival, departure) states, processing edges
    //! in ascending timestamp order. Counting over subset states enforces
    //! node-simplicity exactly, so it agrees with the path enumerator.

    use std::collections::HashMap;

    use super::{LabelSet, OptimalityCriterion, PathSemantics};
    use crate::error::{Error, Result};
    use crate::graph::TemporalGraph;

    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
    struct StateKey {
        mask: u128,
        last: u32,
        arrive_idx: u32,
        depart_idx: u32,
    }

    /// Ranking tuple recomputed here on purpose; the engines share no path
    /// logic beyond the public semantics type.
    fn rank(c: OptimalityCriterion, arrival: f64, departure: f64, hops: u32) -> (f64, f64, f64) {
        match c {
            OptimalityCriterion::Shortest => (hops as f64, 0.0, 0.0),
            OptimalityCriterion::ShortestForemost => (arrival, hops as f64, 0.0),
            OptimalityCriterion::ShortestLatestDepartureForemost => {
                (arrival, -departure, hops as f64)
            }
        }
    }

    fn better(a: (f64, f64, f64), b: (f64, f64, f64)) -> bool {
        a.partial_cmp(&b).unwrap() == std::cmp::Ordering::Less
    }

    /// Exact TBC via the subset-state dynamic program. Supports up to 128
    /// nodes; intended for small cross-check instances.
    pub fn exact_tbc_dp(g: &TemporalGraph, sem: PathSemantics) -> Result<LabelSet> {
        let n = g.node_count();
        if n < 2 {
            return Err(Error::Domain(format!(
                "TBC normalization needs at least 2 nodes, graph has {n}"
            )));
        }
        if n > 128 {
            return Err(Error::Domain(
                "dp engine supports at most 128 nodes".into(),
            ));
        }
        sem.validate()?;

        // Distinct times ascending; edges grouped per time level.
        let mut times: Vec<f64> = g.edges().iter().map(|e| e.t).collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times.dedup();
        let time_idx = |t: f64| times.partition_point(|&x| x < t) as u32;
        let mut by_time: Vec<Vec<(usize, usize)>> = vec![Vec::new(); times.len()];
        for e in g.edges() {
            by_time[time_idx(e.t) as usize].push((e.u, e.v));
        }

        let mut acc = vec![0.0f64; n];
        for s in 0..n {
            // states[last] -> (mask, arrive_idx, depart_idx) -> count
            let mut states: Vec<HashMap<StateKey, u64>> = vec![HashMap::new(); n];
            for (ti, group) in by_time.iter().enumerate() {
                let t = times[ti];
                let mut created: Vec<(StateKey, u64)> = Vec::new();
                for &(u, v) in group {
                    if u == v {
                        continue;
                    }
                    // Start a new path at the source.
                    if u == s && sem.max_hops >= 1 {
                        created.push((
                            StateKey {
                                mask: (1u128 << s) | (1u128 << v),
                                last: v as u32,
                                arrive_idx: ti as u32,
                                depart_idx: ti as u32,
                            },
                            1,
                        ));
                    }
                    // Extend existing paths ending at u strictly earlier.
                    for (key, &count) in &states[u] {
                        let lt = times[key.arrive_idx as usize];
                        if lt >= t || t - lt > sem.delta {
                            continue;
                        }
                        let hops = key.mask.count_ones() - 1;
                        if hops as usize >= sem.max_hops {
                            continue;
                        }
                        if key.mask & (1u128 << v) != 0 {
                            continue;
                        }
                        created.push((
                            StateKey {
                                mask: key.mask | (1u128 << v),
                                last: v as u32,
                                arrive_idx: ti as u32,
                                depart_idx: key.depart_idx,
                            },
                            count,
                        ));
                    }
                }
                // Merge after the whole time level so equal-time edges never chain.
                for (key, count) in created {
                    *states[key.last as usize].entry(key).or_insert(0) += count;
                }
            }

            for z in 0..n {
                if z == s {
                    continue;
                }
                let mut best: Option<(f64, f64, f64)> = None;
                for key in states[z].keys() {
                    let r = rank(
                        sem.criterion,
                        times[key.arrive_idx as usize],
                        times[key.depart_idx as usize],
                        key.mask.count_ones() - 1,
                    );
                    if best.is_none() || better(r, best.unwrap()) {
                        best = Some(r);
                    }
                }
                let Some(best) = best else { continue };
                let mut sigma = 0u64;
                let mut through = vec![0u64; n];
                for (key, &count) in &states[z] {
                    let r = rank(
                        sem.criterion,
                        times[key.arrive_idx as usize],
                        times[key.depart_idx as usize],
                        key.mask.count_ones() - 1,
                    );
                    if r == best {
                        sigma += count;
                        let interior = key.mask & !(1u128 << s) & !(1u128 << z);
                        for v in 0..n {
                            if interior & (1u128 << v) != 0 {
                                through[v] += count;
                            }
                        }
                    }
                }
                if sigma > 0 {
                    for v in 0..n {
                        if through[v] > 0 {
                            acc[v] += through[v] as f64 / sigma as f64;
                        }
                    }
                }
            }
        }

        let norm = 1.0 / (n as f64 * (n as f64 - 1.0));
        let values: Vec<f64> = acc.into_iter().map(|x| x * norm).collect();
        Ok(LabelSet::new(values, sem, g.digest()))
    }
}
