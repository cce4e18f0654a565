//! Stability-based selection of the cluster count: stratified sampling,
//! bootstrap pair generation, k-means, clustering distance, instability
//! estimation and the argmin over candidate counts.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Histogram;

/// Configuration of the selection procedure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    /// Stratified sampling rate.
    pub rate: f64,
    /// Number of bootstrap pairs.
    pub pairs: usize,
    /// Candidate counts run from 2 to `k_max` inclusive.
    pub k_max: usize,
    /// Lloyd iteration cap per k-means run.
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            rate: 0.4,
            pairs: 20,
            k_max: 10,
            kmeans_iters: 100,
            seed: 0,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate < 1.0) {
            return Err(Error::Config(format!(
                "sampling rate must lie in (0, 1), got {}",
                self.rate
            )));
        }
        if self.pairs < 1 {
            return Err(Error::Config("need at least one bootstrap pair".into()));
        }
        if self.k_max < 2 {
            return Err(Error::Config("k_max must be at least 2".into()));
        }
        Ok(())
    }
}

/// Point-to-cluster assignment with centroids and total within-cluster
/// squared distance.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

/// Mix a base seed with a tag and an index into a fresh stream seed.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut h = base ^ 0x9e37_79b9_7f4a_7c15;
    for &b in tag.as_bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
    }
    h ^= index.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    // splitmix64 finalizer
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Proportional per-stratum sampling without replacement. Strata are the
/// label-histogram buckets (zero bucket plus nine nonzero ones); every
/// nonempty stratum keeps at least one point (`max(1, floor(rate * size))`).
pub fn stratified_sample(
    points: &[Vec<f64>],
    tbc_labels: &[f64],
    rate: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    if points.len() != tbc_labels.len() {
        return Err(Error::Domain("points/labels length mismatch".into()));
    }
    if points.len() < 2 {
        return Err(Error::Domain(
            "stratified sampling needs at least 2 points".into(),
        ));
    }
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::Domain(format!("rate must lie in (0, 1), got {rate}")));
    }
    let hist = Histogram::from_values(tbc_labels)?;
    let stratum_count = 1 + crate::graph::NONZERO_BUCKETS;
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); stratum_count];
    for (i, &y) in tbc_labels.iter().enumerate() {
        strata[hist.stratum_of(y)].push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subset = Vec::new();
    for members in strata.iter() {
        if members.is_empty() {
            continue;
        }
        let keep = ((rate * members.len() as f64).floor() as usize).max(1);
        // partial Fisher-Yates over a copy
        let mut pool = members.clone();
        for i in 0..keep {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        subset.extend_from_slice(&pool[..keep]);
    }
    subset.sort_unstable();
    Ok(subset)
}

/// Two independent size-n draws with replacement from `subset`, using
/// decorrelated streams of one seed. Returns original point indices.
pub fn bootstrap_pair(subset: &[usize], seed: u64) -> (Vec<usize>, Vec<usize>) {
    assert!(subset.len() >= 2, "bootstrap needs at least 2 points");
    let n = subset.len();
    let draw = |stream: u64| -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        (0..n).map(|_| subset[rng.gen_range(0..n)]).collect()
    };
    (draw(0), draw(1))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Number of bit-exact distinct points.
pub fn distinct_point_count(points: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|x| x.to_bits()).collect())
        .collect();
    keys.sort();
    keys.dedup();
    keys.len()
}

/// Lloyd's algorithm with k-means++ seeding. Nearest-centroid ties break
/// toward the lowest centroid index; an emptied cluster is re-seeded from
/// the point farthest from its assigned centroid.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    iters: usize,
) -> Result<ClusterAssignment> {
    if k == 0 {
        return Err(Error::Domain("k must be positive".into()));
    }
    if distinct_point_count(points) < k {
        return Err(Error::Domain(format!(
            "k = {k} exceeds the number of distinct points"
        )));
    }
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..n)].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // remaining mass is zero: pick any point distinct from current centroids
            (0..n)
                .find(|&i| centroids.iter().all(|c| sq_dist(&points[i], c) > 0.0))
                .expect("distinct point exists by precondition")
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        let c = points[next].clone();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &c));
        }
        centroids.push(c);
    }

    let assign = |centroids: &[Vec<f64>]| -> Vec<usize> {
        points
            .iter()
            .map(|p| {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (c, centroid) in centroids.iter().enumerate() {
                    let d = sq_dist(p, centroid);
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                best
            })
            .collect()
    };

    let mut labels = assign(&centroids);
    for _ in 0..iters {
        // update step
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed from the point farthest from its assigned centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centroids[labels[a]])
                            .partial_cmp(&sq_dist(&points[b], &centroids[labels[b]]))
                            .unwrap()
                    })
                    .unwrap();
                centroids[c] = points[far].clone();
            } else {
                for (j, s) in sums[c].iter().enumerate() {
                    centroids[c][j] = s / counts[c] as f64;
                }
            }
        }
        let new_labels = assign(&centroids);
        let converged = new_labels == labels;
        labels = new_labels;
        if converged {
            break;
        }
    }

    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, &centroids[l]))
        .sum();
    Ok(ClusterAssignment {
        labels,
        centroids,
        inertia,
    })
}

/// Mean over unordered pairs of common points of the absolute co-membership
/// disagreement between two clusterings. `None` when fewer than two common
/// points exist.
pub fn clustering_distance(
    psi_x: &dyn Fn(usize) -> usize,
    psi_y: &dyn Fn(usize) -> usize,
    common: &[usize],
) -> Option<f64> {
    if common.len() < 2 {
        return None;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..common.len() {
        for j in (i + 1)..common.len() {
            let (x, y) = (common[i], common[j]);
            let same_x = (psi_x(x) == psi_x(y)) as i32;
            let same_y = (psi_y(x) == psi_y(y)) as i32;
            total += (same_x - same_y).abs() as f64;
            pairs += 1;
        }
    }
    Some(total / pairs as f64)
}

fn cluster_resample(
    points: &[Vec<f64>],
    resample: &[usize],
    k: usize,
    seed: u64,
    iters: usize,
) -> Result<std::collections::HashMap<usize, usize>> {
    let vectors: Vec<Vec<f64>> = resample.iter().map(|&i| points[i].clone()).collect();
    let assignment = kmeans(&vectors, k, seed, iters)?;
    let mut label_of = std::collections::HashMap::new();
    for (pos, &orig) in resample.iter().enumerate() {
        // duplicates of the same original point land in the same cluster;
        // keep the first occurrence
        label_of.entry(orig).or_insert(assignment.labels[pos]);
    }
    Ok(label_of)
}

/// Average clustering distance over `pairs` bootstrap pairs drawn from
/// `subset`, each pair clustered independently at `k`.
pub fn estimate_instability(
    points: &[Vec<f64>],
    subset: &[usize],
    k: usize,
    pairs: usize,
    seed: u64,
    kmeans_iters: usize,
) -> Result<f64> {
    if k < 2 {
        return Err(Error::Domain("instability needs k >= 2".into()));
    }
    if subset.len() < 2 {
        return Err(Error::Domain(format!(
            "bootstrap resampling needs at least 2 subset points, got {}",
            subset.len()
        )));
    }
    let mut total = 0.0;
    let mut used = 0usize;
    for i in 0..pairs {
        let (x, y) = bootstrap_pair(subset, derive_seed(seed, "pair", i as u64));
        let labels_x = match cluster_resample(points, &x, k, derive_seed(seed, "kx", i as u64), kmeans_iters) {
            Ok(l) => l,
            Err(Error::Domain(_)) => continue, // resample collapsed below k distinct points
            Err(e) => return Err(e),
        };
        let labels_y = match cluster_resample(points, &y, k, derive_seed(seed, "ky", i as u64), kmeans_iters) {
            Ok(l) => l,
            Err(Error::Domain(_)) => continue,
            Err(e) => return Err(e),
        };
        let mut common: Vec<usize> = labels_x
            .keys()
            .filter(|orig| labels_y.contains_key(orig))
            .copied()
            .collect();
        common.sort_unstable();
        if let Some(d) = clustering_distance(&|i| labels_x[&i], &|i| labels_y[&i], &common) {
            total += d;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Estimation(format!(
            "all {pairs} bootstrap pairs were skipped at k = {k}"
        )));
    }
    Ok(total / used as f64)
}

/// Instability per candidate count and the selected argmin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub k_hat: usize,
    /// `(k, instability)` for every candidate, ascending k.
    pub trace: Vec<(usize, f64)>,
}

/// Select the cluster count with minimum bootstrap instability over
/// candidates `2..=k_max`; ties break toward the smaller count. The same
/// bootstrap pairs (derived from `cfg.seed`) are reused across candidates.
pub fn select_k(
    points: &[Vec<f64>],
    tbc_labels: &[f64],
    cfg: &ClusterConfig,
) -> Result<SelectionTrace> {
    cfg.validate()?;
    if points.len() < 4 {
        return Err(Error::Domain(
            "cluster-count selection needs at least 4 points".into(),
        ));
    }
    let subset = stratified_sample(points, tbc_labels, cfg.rate, derive_seed(cfg.seed, "strata", 0))?;
    let mut trace = Vec::with_capacity(cfg.k_max - 1);
    let mut best: Option<(usize, f64)> = None;
    for k in 2..=cfg.k_max {
        let inst = estimate_instability(points, &subset, k, cfg.pairs, cfg.seed, cfg.kmeans_iters)?;
        trace.push((k, inst));
        let better = match best {
            None => true,
            Some((_, b)) => inst < b,
        };
        if better {
            best = Some((k, inst));
        }
    }
    let (k_hat, _) = best.expect("at least one candidate");
    Ok(SelectionTrace { k_hat, trace })
}
