//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them on success).

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tbclab::autodiff::Tape;
use tbclab::clustering::{estimate_instability, select_k, ClusterConfig};
use tbclab::contrastive::{
    build_pair_sets, contrastive_loss_value, pair_weight_neg, pair_weight_pos, tbc_median_ref,
    ContrastConfig, PairSets,
};
use tbclab::encoders::{encode_path_count, encode_time, PathEncoderParams, TimeEncoderParams};
use tbclab::graph::{Histogram, InstanceIndex, TemporalGraph};
use tbclab::metrics::spearman;
use tbclab::model::{
    bind_model, combine_embeddings, forward_tape, gradient_check, predict_all, ForwardTrace,
    ModelHyper, ModelParams,
};
use tbclab::nn::Tensor;
use tbclab::oracle::{dp, exact_tbc, LabelSet, OptimalityCriterion, PathSemantics};
use tbclab::synth::{gaussian_blobs, random_temporal_graph};
use tbclab::training::{evaluate, train, Checkpoint, TrainConfig};

struct Verdict {
    name: &'static str,
}

impl Verdict {
    fn new(name: &'static str) -> Self {
        Self { name }
    }

    fn pass(self) {
        eprintln!("acceptance {}: PASS", self.name);
    }

    fn fail(&self, detail: &str) -> ! {
        eprintln!("acceptance {}: FAIL ({detail})", self.name);
        panic!("acceptance {}: {detail}", self.name);
    }
}

fn all_criteria() -> [OptimalityCriterion; 3] {
    [
        OptimalityCriterion::Shortest,
        OptimalityCriterion::ShortestForemost,
        OptimalityCriterion::ShortestLatestDepartureForemost,
    ]
}

/// Criterion 1: the enumeration engine and the subset-state DP agree on 200
/// seeded random graphs under all three semantics and bounded/unbounded
/// waiting, within 1e-9, in under 60 seconds.
#[test]
fn criterion_01_oracle_cross_check() {
    let v = Verdict::new("1 (oracle cross-check)");
    let start = Instant::now();
    for seed in 0..200u64 {
        let n = 3 + (seed % 6) as usize; // 3..=8
        let m = 5 + (seed % 16) as usize; // 5..=20
        let t_levels = 2 + (seed % 9) as u32; // 2..=10
        let g = random_temporal_graph(seed, n, m, t_levels);
        for criterion in all_criteria() {
            for delta in [f64::INFINITY, 2.0] {
                let sem = PathSemantics::new(criterion).with_delta(delta);
                let a = exact_tbc(&g, sem).unwrap();
                let b = dp::exact_tbc_dp(&g, sem).unwrap();
                for node in 0..n {
                    let diff = (a.value(node) - b.value(node)).abs();
                    if diff >= 1e-9 {
                        v.fail(&format!(
                            "seed {seed} node {node} {criterion:?} delta {delta}: diff {diff}"
                        ));
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    if elapsed.as_secs() >= 60 {
        v.fail(&format!("took {elapsed:?}, budget 60 s"));
    }
    eprintln!("  cross-checked 200 graphs x 6 configs in {elapsed:?}");
    v.pass();
}

/// Criterion 2: the hand-checked chain gives TBC(b) = 1/6 exactly and the
/// reversed chain gives all zeros.
#[test]
fn criterion_02_hand_oracle() {
    let v = Verdict::new("2 (hand oracle)");
    let g = TemporalGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 2.0)]).unwrap();
    for criterion in all_criteria() {
        let labels = exact_tbc(&g, PathSemantics::new(criterion)).unwrap();
        if labels.value(1) != 1.0 / 6.0 || labels.value(0) != 0.0 || labels.value(2) != 0.0 {
            v.fail(&format!("chain labels {:?}", labels.values()));
        }
    }
    let rev = TemporalGraph::from_edges(3, &[(0, 1, 2.0), (1, 2, 1.0)]).unwrap();
    let labels = exact_tbc(&rev, PathSemantics::new(OptimalityCriterion::Shortest)).unwrap();
    if labels.values().iter().any(|&x| x != 0.0) {
        v.fail("reversed chain has nonzero TBC");
    }
    v.pass();
}

/// Criterion 3: P(u, v, t) equals the brute scan on 1000+ random edges, and
/// zero-P edges never emit messages in instrumented forward passes.
#[test]
fn criterion_03_path_count_law() {
    let v = Verdict::new("3 (path-count law)");
    let mut checked = 0usize;
    let mut seed = 0u64;
    let hyper = ModelHyper {
        d: 8,
        d_t: 4,
        d_p: 8,
        d_h: 8,
        layers: 2,
        heads: 2,
        neighbor_limit: 10,
        lambda: 0.4,
    };
    let params = ModelParams::init(hyper, 9).unwrap();
    let mut suppressed_total = 0usize;
    while checked < 1000 {
        let g = random_temporal_graph(7000 + seed, 10, 45, 8);
        let idx = InstanceIndex::build(&g);
        for (i, e) in g.edges().iter().enumerate() {
            let brute = idx.t_out(e.v).iter().filter(|&&x| x > e.t).count() as u64;
            if idx.edge_path_count(i) != brute {
                v.fail(&format!("edge {i} of seed {seed}: P mismatch"));
            }
            checked += 1;
        }
        let mut trace = ForwardTrace::default();
        let mut tape = Tape::new();
        forward_tape(&mut tape, &params, &g, &idx, g.t_max(), Some(&mut trace));
        suppressed_total += trace.suppressed_zero_p_events;
        if let Some(p) = trace.min_message_p {
            if p < 1 {
                v.fail("a zero-P message was constructed");
            }
        }
        seed += 1;
    }
    if suppressed_total == 0 {
        v.fail("fixture produced no zero-P events to suppress");
    }
    eprintln!("  verified {checked} edges; {suppressed_total} zero-P events suppressed");
    v.pass();
}

/// Criterion 4: unit norm of the time encoding over 10^4 random draws, and
/// the zero-count path encoding equals the bias path of its MLP.
#[test]
fn criterion_04_encoding_invariants() {
    let v = Verdict::new("4 (encoding invariants)");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10_000 {
        let d_t = rng.gen_range(1..12);
        let omega = Tensor::vector((0..d_t).map(|_| rng.gen_range(-8.0..8.0)).collect());
        let enc = TimeEncoderParams { omega };
        let t = rng.gen_range(-1e4..1e4);
        let norm: f64 = encode_time(&enc, t).iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() >= 1e-9 {
            v.fail(&format!("norm {norm} at t {t}"));
        }
    }
    let path = PathEncoderParams::init(&mut rng, 6);
    let at_zero = encode_path_count(&path, 0.0);
    let hidden: Vec<f64> = path.mlp.layers[0].b.data.iter().map(|&b| b.max(0.0)).collect();
    let out_layer = &path.mlp.layers[1];
    let mut bias_path = out_layer.b.data.clone();
    for (i, slot) in bias_path.iter_mut().enumerate() {
        for (j, h) in hidden.iter().enumerate() {
            *slot += out_layer.w.data[i * hidden.len() + j] * h;
        }
    }
    for (a, b) in at_zero.iter().zip(&bias_path) {
        // summation order differs between the MLP kernel and the manual
        // expansion; agreement is up to rounding
        if (a - b).abs() >= 1e-12 {
            v.fail("path encoding at 0 is not the bias path");
        }
    }
    v.pass();
}

/// Criterion 5: reverse-mode gradients of the total loss match central
/// finite differences (eps = 1e-5, max rel. err. < 1e-4) on 20 seeded toy
/// instances covering encoders, both aggregators, the combination step, the
/// regression head and the contrastive term.
#[test]
fn criterion_05_differentiation() {
    let v = Verdict::new("5 (differentiation)");
    let hyper = ModelHyper {
        d: 8,
        d_t: 4,
        d_p: 8,
        d_h: 8,
        layers: 2,
        heads: 1,
        neighbor_limit: 10,
        lambda: 0.4,
    };
    let contrast = ContrastConfig::default();
    let mut worst = 0.0f64;
    let mut total_used = 0usize;
    let mut contrast_covered = 0usize;
    for seed in 0..20u64 {
        let g = random_temporal_graph(500 + seed, 6, 25, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let labels: Vec<f64> = (0..6).map(|_| rng.gen_range(0.05..1.0)).collect();
        let params = ModelParams::init(hyper, 300 + seed).unwrap();

        // the instance must actually exercise the aggregators
        let idx = InstanceIndex::build(&g);
        let mut trace = ForwardTrace::default();
        let mut tape = Tape::new();
        forward_tape(&mut tape, &params, &g, &idx, g.t_max(), Some(&mut trace));
        if trace.messages_built == 0 {
            v.fail(&format!("seed {seed}: no messages"));
        }

        let report =
            gradient_check(&params, &g, &labels, 0.2, &contrast, 1e-5, 120, seed).unwrap();
        if report.probes_used == 0 {
            v.fail(&format!("seed {seed}: all probes rejected"));
        }
        if report.max_rel_err >= 1e-4 {
            v.fail(&format!("seed {seed}: rel err {}", report.max_rel_err));
        }
        worst = worst.max(report.max_rel_err);
        total_used += report.probes_used;
        if report.contrast_active {
            contrast_covered += 1;
        }
    }
    if contrast_covered < 15 {
        v.fail(&format!(
            "contrastive term active in only {contrast_covered}/20 instances"
        ));
    }
    eprintln!(
        "  20 instances, {total_used} probes, worst rel err {worst:.3e}, contrast active in {contrast_covered}"
    );
    v.pass();
}

/// Criterion 6: attention rows and per-neighbor temporal weights normalize,
/// and the branch combination is exactly affine in lambda at {0, 0.4, 1}.
#[test]
fn criterion_06_aggregation_normalization() {
    let v = Verdict::new("6 (aggregation normalization)");
    let hyper = ModelHyper {
        d: 8,
        d_t: 4,
        d_p: 8,
        d_h: 8,
        layers: 2,
        heads: 2,
        neighbor_limit: 10,
        lambda: 0.4,
    };
    let params = ModelParams::init(hyper, 17).unwrap();
    let mut rows = 0usize;
    for seed in 0..10u64 {
        let g = random_temporal_graph(600 + seed, 9, 40, 9);
        let idx = InstanceIndex::build(&g);
        let mut trace = ForwardTrace::default();
        let mut tape = Tape::new();
        forward_tape(&mut tape, &params, &g, &idx, g.t_max(), Some(&mut trace));
        for row in &trace.attention_rows {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() >= 1e-6 {
                v.fail(&format!("attention row sums to {sum}"));
            }
            rows += 1;
        }
        for row in &trace.neighbor_weight_rows {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() >= 1e-9 {
                v.fail(&format!("neighbor weights sum to {sum}"));
            }
        }
    }
    if rows == 0 {
        v.fail("no attention rows produced");
    }

    // exact affinity of the combination step
    let eval_at = |lambda: f64| -> Vec<f64> {
        let mut tape = Tape::new();
        let (bound, _) = bind_model(&mut tape, &params);
        let mean = tape.vector(ndarray::Array1::from_elem(hyper.message_dim(), 0.37));
        let attn = tape.vector(ndarray::Array1::from_elem(hyper.d_h, -0.21));
        let prev = tape.vector(ndarray::Array1::from_elem(hyper.d, 0.83));
        let out = combine_embeddings(&mut tape, &bound.layers[0], mean, attn, prev, lambda);
        tape.value(out).vector().to_vec()
    };
    let at0 = eval_at(0.0);
    let at1 = eval_at(1.0);
    for &lambda in &[0.0, 0.4, 1.0] {
        let direct = eval_at(lambda);
        for i in 0..direct.len() {
            let recon = lambda * at1[i] + (1.0 - lambda) * at0[i];
            if direct[i] != recon {
                v.fail(&format!("lambda {lambda}: slot {i} differs"));
            }
        }
    }
    eprintln!("  {rows} attention rows checked");
    v.pass();
}

/// Criterion 7: weight monotonicity on a 100-point grid, non-negativity of
/// the per-anchor loss on 1000 random configurations, and the single-anchor
/// closed form log(1 + B/A) to 1e-9.
#[test]
fn criterion_07_contrastive_lemmas() {
    let v = Verdict::new("7 (contrastive lemmas)");
    let cfg = ContrastConfig::default();
    let median = 0.4;
    let grid: Vec<f64> = (1..=100).map(|i| i as f64 * 0.013).collect();
    for w in grid.windows(2) {
        if pair_weight_pos(w[0], median, &cfg) <= pair_weight_pos(w[1], median, &cfg) {
            v.fail("positive weight is not strictly decreasing");
        }
        if pair_weight_neg(w[0], median, &cfg) >= pair_weight_neg(w[1], median, &cfg) {
            v.fail("negative weight is not strictly increasing");
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut anchors_seen = 0usize;
    for _ in 0..1000 {
        let n = rng.gen_range(3..9);
        let dim = rng.gen_range(2..6);
        let clusters: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let tbc: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
        let median = tbc_median_ref(&tbc).unwrap();
        let embeds: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let sets = build_pair_sets(&clusters, &tbc, median, &cfg);
        for anchor in &sets.anchors {
            let single = PairSets {
                anchors: vec![anchor.clone()],
                eligible: 1,
                skipped: 0,
            };
            let l = contrastive_loss_value(&embeds, &single, &tbc, median, &cfg);
            if l < 0.0 {
                v.fail(&format!("negative per-anchor loss {l}"));
            }
            anchors_seen += 1;
        }
    }
    if anchors_seen < 100 {
        v.fail("too few eligible anchors sampled");
    }

    // single anchor, one positive, one negative: closed form
    let clusters = vec![0, 0, 0];
    let tbc = vec![0.5, 0.65, 3.0];
    let median = 0.5;
    let sets = build_pair_sets(&clusters, &tbc, median, &cfg);
    let anchor = sets.anchors.iter().find(|a| a.node == 0).unwrap();
    let embeds = vec![vec![0.3, -0.1], vec![0.2, 0.4], vec![-0.5, 0.6]];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let a_term = (pair_weight_pos(0.15, median, &cfg) * dot(&embeds[0], &embeds[1]) / cfg.tau).exp();
    let b_term = (pair_weight_neg(2.5, median, &cfg) * dot(&embeds[0], &embeds[2]) / cfg.tau).exp();
    let expected = (1.0 + b_term / a_term).ln();
    let single = PairSets {
        anchors: vec![anchor.clone()],
        eligible: 1,
        skipped: 0,
    };
    let got = contrastive_loss_value(&embeds, &single, &tbc, median, &cfg);
    if (got - expected).abs() >= 1e-9 {
        v.fail(&format!("closed form {expected} vs {got}"));
    }
    eprintln!("  {anchors_seen} anchors checked non-negative");
    v.pass();
}

/// Criterion 8: the instability argmin finds the true blob count on at least
/// 95% of 40 seeds, instability stays in [0, 1], and a doubling test keeps
/// the empirical runtime exponent at or below 2.3.
#[test]
fn criterion_08_clustering_stability() {
    let v = Verdict::new("8 (clustering stability)");
    let mut two_ok = 0;
    let mut three_ok = 0;
    for seed in 0..40u64 {
        let cfg = ClusterConfig {
            seed,
            ..Default::default()
        };
        let two = gaussian_blobs(seed, &[(0.0, 0.0), (100.0, 100.0)], 40, 1.0);
        let labels2 = vec![0.0; two.len()];
        let sel2 = select_k(&two, &labels2, &cfg).unwrap();
        for &(_, inst) in &sel2.trace {
            if !(0.0..=1.0).contains(&inst) {
                v.fail(&format!("instability {inst} out of range"));
            }
        }
        if sel2.k_hat == 2 {
            two_ok += 1;
        }
        let three = gaussian_blobs(
            1000 + seed,
            &[(0.0, 0.0), (100.0, 100.0), (-100.0, 100.0)],
            30,
            1.0,
        );
        let labels3 = vec![0.0; three.len()];
        let sel3 = select_k(&three, &labels3, &cfg).unwrap();
        if sel3.k_hat == 3 {
            three_ok += 1;
        }
    }
    if two_ok < 38 {
        v.fail(&format!("two-blob recovery {two_ok}/40"));
    }
    if three_ok < 38 {
        v.fail(&format!("three-blob recovery {three_ok}/40"));
    }

    // doubling test on the candidate loop
    let time_candidate_loop = |n: usize| -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)])
            .collect();
        let subset: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        for rep in 0..3 {
            let t0 = Instant::now();
            for k in 2..=6 {
                estimate_instability(&points, &subset, k, 8, 11 + rep, 50).unwrap();
            }
            best = best.min(t0.elapsed().as_secs_f64());
        }
        best
    };
    let t_small = time_candidate_loop(600);
    let t_large = time_candidate_loop(1200);
    let exponent = (t_large / t_small).log2();
    if exponent > 2.3 {
        v.fail(&format!(
            "doubling exponent {exponent:.2} (times {t_small:.3}s -> {t_large:.3}s)"
        ));
    }
    eprintln!(
        "  two-blob {two_ok}/40, three-blob {three_ok}/40, doubling exponent {exponent:.2}"
    );
    v.pass();
}

/// Criterion 9: on a seeded corpus of ten 30-node graphs with exact
/// shortest-foremost labels, 15 epochs at lr 0.01 / alpha 0.2 / lambda 0.4
/// cut the mean total loss below 0.8x its initial value and reach train-set
/// Spearman >= 0.5, averaged over 5 seeds, in under 10 minutes.
#[test]
fn criterion_09_training_smoke() {
    let v = Verdict::new("9 (training smoke)");
    let start = Instant::now();
    let sem = PathSemantics::new(OptimalityCriterion::ShortestForemost);
    let corpus: Vec<(TemporalGraph, LabelSet)> = (0..10)
        .map(|i| {
            let g = random_temporal_graph(1000 + i, 30, 100, 20);
            let labels = exact_tbc(&g, sem).unwrap();
            (g, labels)
        })
        .collect();

    let mut ratios = Vec::new();
    let mut rhos = Vec::new();
    for seed in 0..5u64 {
        let cfg = TrainConfig {
            alpha: 0.2,
            learning_rate: 0.01,
            epochs: 15,
            seed,
            semantics: sem,
            hyper: ModelHyper {
                d: 32,
                d_t: 16,
                d_p: 32,
                d_h: 32,
                layers: 3,
                heads: 2,
                neighbor_limit: 20,
                lambda: 0.4,
            },
            ..Default::default()
        };
        let out = train(&cfg, &corpus).unwrap();
        let first: f64 = out.checkpoint.loss_trace.first().unwrap().iter().sum();
        let last: f64 = out.checkpoint.loss_trace.last().unwrap().iter().sum();
        ratios.push(last / first);

        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for (g, l) in &corpus {
            let idx = InstanceIndex::build(g);
            preds.extend(predict_all(&out.checkpoint.params, g, &idx));
            labels.extend_from_slice(l.values());
        }
        rhos.push(spearman(&preds, &labels).unwrap().rho);
    }
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let mean_rho = rhos.iter().sum::<f64>() / rhos.len() as f64;
    let elapsed = start.elapsed();
    if mean_ratio >= 0.8 {
        v.fail(&format!("mean final/initial loss ratio {mean_ratio:.4}"));
    }
    if mean_rho < 0.5 {
        v.fail(&format!("mean train-set Spearman {mean_rho:.4}"));
    }
    if elapsed.as_secs() >= 600 {
        v.fail(&format!("took {elapsed:?}, budget 10 min"));
    }
    eprintln!(
        "  mean loss ratio {mean_ratio:.4}, mean Spearman {mean_rho:.4}, elapsed {elapsed:?}"
    );
    v.pass();
}

/// Criterion 10: a synthetic label set with 962 zeros out of 1000 reports a
/// zero fraction of 0.962 within 0.001.
#[test]
fn criterion_10_imbalance_shape() {
    let v = Verdict::new("10 (imbalance shape)");
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut values = vec![0.0; 962];
    for _ in 0..38 {
        values.push(rng.gen_range(1e-4..0.3));
    }
    let hist = Histogram::from_values(&values).unwrap();
    let frac = hist.zero_fraction();
    if (frac - 0.962).abs() > 0.001 {
        v.fail(&format!("zero fraction {frac}"));
    }
    if hist.labeled_total() != 1000 {
        v.fail("histogram lost labels");
    }
    if hist.bucket_counts.len() != 9 || hist.bucket_edges.len() != 10 {
        v.fail("bucket layout is wrong");
    }
    v.pass();
}

/// Criterion 11: identical seeds reproduce bit-identical label files,
/// checkpoints and metric reports across two consecutive runs.
#[test]
fn criterion_11_determinism() {
    let v = Verdict::new("11 (determinism)");
    let sem = PathSemantics::new(OptimalityCriterion::ShortestForemost);
    let g = random_temporal_graph(42, 16, 60, 10);
    let labels_a = exact_tbc(&g, sem).unwrap();
    let labels_b = exact_tbc(&g, sem).unwrap();
    if labels_a.to_label_file(&g) != labels_b.to_label_file(&g) {
        v.fail("label files differ between runs");
    }

    let cfg = TrainConfig {
        epochs: 3,
        seed: 5,
        semantics: sem,
        hyper: ModelHyper {
            d: 8,
            d_t: 4,
            d_p: 8,
            d_h: 8,
            layers: 2,
            heads: 2,
            neighbor_limit: 10,
            lambda: 0.4,
        },
        cluster_pairs: 5,
        cluster_k_max: 3,
        ..Default::default()
    };
    let corpus = vec![(g.clone(), labels_a.clone())];
    let run1 = train(&cfg, &corpus).unwrap();
    let run2 = train(&cfg, &corpus).unwrap();
    let ckpt1 = run1.checkpoint.to_json().unwrap();
    let ckpt2 = run2.checkpoint.to_json().unwrap();
    if ckpt1 != ckpt2 {
        v.fail("checkpoints differ between runs");
    }

    let rep1 = evaluate(&run1.checkpoint, &g, &labels_a).unwrap();
    let rep2 = evaluate(&run2.checkpoint, &g, &labels_b).unwrap();
    let json1 = serde_json::to_string(&tbclab::metrics::report_to_json(&rep1)).unwrap();
    let json2 = serde_json::to_string(&tbclab::metrics::report_to_json(&rep2)).unwrap();
    if json1 != json2 {
        v.fail("metric reports differ between runs");
    }
    v.pass();
}

/// Criterion 12: checkpoint save/load and edge-list parse/serialize are
/// lossless.
#[test]
fn criterion_12_round_trip() {
    let v = Verdict::new("12 (round-trip)");
    // parse-originated graphs: parse(serialize(g)) preserves the dense edge
    // multiset exactly
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let mut text = String::new();
        for _ in 0..50 {
            text.push_str(&format!(
                "{} {} {}\n",
                rng.gen_range(0..40),
                rng.gen_range(0..40),
                rng.gen_range(0..9) as f64 * 0.5
            ));
        }
        let g = TemporalGraph::parse_edge_list(&text).unwrap();
        let back = TemporalGraph::parse_edge_list(&g.serialize_edge_list()).unwrap();
        if back.edges() != g.edges() || back.node_count() != g.node_count() {
            v.fail(&format!("graph roundtrip failed at seed {seed}"));
        }
    }
    // fractional timestamps survive too
    let g = TemporalGraph::parse_edge_list("0 1 0.125\n1 2 3.75e-2\n").unwrap();
    let back = TemporalGraph::parse_edge_list(&g.serialize_edge_list()).unwrap();
    if back.edges() != g.edges() {
        v.fail("fractional timestamp roundtrip failed");
    }

    let sem = PathSemantics::new(OptimalityCriterion::Shortest).with_delta(2.0);
    let graph = random_temporal_graph(3000, 10, 35, 8);
    let labels = exact_tbc(&graph, sem).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        semantics: sem,
        hyper: ModelHyper {
            d: 8,
            d_t: 4,
            d_p: 8,
            d_h: 8,
            layers: 2,
            heads: 2,
            neighbor_limit: 10,
            lambda: 0.4,
        },
        cluster_pairs: 4,
        cluster_k_max: 3,
        ..Default::default()
    };
    let out = train(&cfg, &[(graph, labels)]).unwrap();
    let json = out.checkpoint.to_json().unwrap();
    let back = Checkpoint::from_json(&json).unwrap();
    if back != out.checkpoint {
        v.fail("checkpoint numeric state changed across save/load");
    }
    if back.to_json().unwrap() != json {
        v.fail("checkpoint JSON is not stable across re-serialization");
    }
    v.pass();
}
