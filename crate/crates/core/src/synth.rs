//! Seeded generators for desk-scale experiments: random temporal graphs and
//! Gaussian point clouds.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::TemporalGraph;

/// Random directed temporal graph: `m` draws of `(u, v, t)` with `u != v` and
/// integer timestamps in `[1, t_levels]`. Exact duplicate triples collapse,
/// so the edge count may come out below `m`.
pub fn random_temporal_graph(seed: u64, n: usize, m: usize, t_levels: u32) -> TemporalGraph {
    assert!(n >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::with_capacity(m);
    for _ in 0..m {
        let u = rng.gen_range(0..n);
        let mut v = rng.gen_range(0..n);
        while v == u {
            v = rng.gen_range(0..n);
        }
        let t = rng.gen_range(1..=t_levels) as f64;
        edges.push((u, v, t));
    }
    TemporalGraph::from_edges(n, &edges).expect("generated edges are valid")
}

/// Isotropic Gaussian blobs: `per_blob` points around each center.
pub fn gaussian_blobs(
    seed: u64,
    centers: &[(f64, f64)],
    per_blob: usize,
    sigma: f64,
) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(centers.len() * per_blob);
    for &(cx, cy) in centers {
        for _ in 0..per_blob {
            points.push(vec![
                cx + sigma * standard_normal(&mut rng),
                cy + sigma * standard_normal(&mut rng),
            ]);
        }
    }
    points
}

/// Box-Muller standard normal draw.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
