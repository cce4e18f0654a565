//! Command-line surface: exact label generation, label statistics, cluster
//! count selection, training, prediction and evaluation.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error. Every command that
//! writes an output file also writes a `<out>.meta.json` sidecar echoing its
//! fully resolved configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tbclab::clustering::{select_k, ClusterConfig};
use tbclab::error::Error;
use tbclab::graph::{Histogram, TemporalGraph};
use tbclab::metrics;
use tbclab::model::predict_all;
use tbclab::oracle::{
    exact_tbc_with_ceiling, parse_delta, LabelSet, OptimalityCriterion, PathSemantics,
    DEFAULT_EXTENSION_CEILING,
};
use tbclab::training::{evaluate, train, Checkpoint, TrainConfig};

#[derive(Parser)]
#[command(
    name = "tbclab",
    about = "Temporal betweenness centrality lab: exact oracles and a learned predictor",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute exact TBC labels for a temporal graph.
    Exact(ExactArgs),
    /// Summarize a label file as a zero bucket plus nine equal-width buckets.
    Stats(StatsArgs),
    /// Select a cluster count by bootstrap instability over embeddings.
    #[command(name = "select-k")]
    SelectK(SelectKArgs),
    /// Train the predictor on one or more labeled graphs.
    Train(TrainArgs),
    /// Predict TBC values for every node of a graph.
    Predict(PredictArgs),
    /// Score predictions (or a checkpoint) against exact labels.
    Eval(EvalArgs),
}

#[derive(Args)]
struct ExactArgs {
    /// Edge-list file: lines `u v t`, `#` comments.
    #[arg(long)]
    input: PathBuf,
    /// shortest | shortest-foremost | shortest-latest-foremost
    #[arg(long)]
    semantics: String,
    /// Maximum waiting time between consecutive edges: `inf` or a positive decimal.
    #[arg(long, default_value = "inf")]
    delta: String,
    /// Hop cap per path.
    #[arg(long)]
    max_hops: Option<usize>,
    /// Abort enumeration beyond this many partial path extensions.
    #[arg(long, default_value_t = DEFAULT_EXTENSION_CEILING)]
    ceiling: u64,
    /// Output label file (`node tbc_value` per line).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    /// Label file to summarize.
    #[arg(long)]
    labels: PathBuf,
    /// Output histogram JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectKArgs {
    /// Embedding file: lines `node x1 x2 ... xd`.
    #[arg(long)]
    embeddings: PathBuf,
    /// Label file used for stratified sampling.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 0.4)]
    rate: f64,
    #[arg(long, default_value_t = 20)]
    pairs: usize,
    #[arg(long, default_value_t = 10)]
    k_max: usize,
    #[arg(long, default_value_t = 100)]
    kmeans_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON with the selected count and the instability trace.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat `key=value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Training graph files (repeatable).
    #[arg(long = "graph", required = true)]
    graphs: Vec<PathBuf>,
    /// Optional per-graph label files (same order as --graph). When absent,
    /// labels are computed by the exact oracle under the config semantics.
    #[arg(long = "labels")]
    labels: Vec<PathBuf>,
    /// Output checkpoint JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Output predictions file (`node predicted_value`, ascending node id).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Predictions file to score.
    #[arg(long, conflicts_with = "checkpoint")]
    predictions: Option<PathBuf>,
    /// Checkpoint to run on --input before scoring.
    #[arg(long, requires = "input")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    labels: PathBuf,
    /// Optional output path for the report JSON (also printed to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn read(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Domain(format!("cannot read {}: {e}", path.display())))
}

/// Print to stdout, tolerating a closed pipe (e.g. `tbclab eval ... | head`).
fn emit(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn write(path: &Path, content: &str) -> Result<(), Error> {
    std::fs::write(path, content)
        .map_err(|e| Error::Domain(format!("cannot write {}: {e}", path.display())))
}

fn write_sidecar(out: &Path, config: serde_json::Value) -> Result<(), Error> {
    let sidecar = PathBuf::from(format!("{}.meta.json", out.display()));
    write(&sidecar, &format!("{:#}\n", config))
}

fn parse_semantics(criterion: &str, delta: &str, max_hops: Option<usize>) -> Result<PathSemantics, Error> {
    let mut sem = PathSemantics::new(OptimalityCriterion::parse(criterion)?);
    sem.delta = parse_delta(delta)?;
    if let Some(h) = max_hops {
        sem.max_hops = h;
    }
    sem.validate()?;
    Ok(sem)
}

/// Generic `id value...` row parser shared by label/prediction/embedding files.
fn parse_rows(text: &str, min_fields: usize) -> Result<Vec<(u64, Vec<f64>)>, Error> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() < min_fields + 1 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected a node id and at least {min_fields} values"),
            });
        }
        let id: u64 = fields[0].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("invalid node id `{}`", fields[0]),
        })?;
        let values = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("invalid value `{f}`"),
                })
            })
            .collect::<Result<Vec<f64>, Error>>()?;
        rows.push((id, values));
    }
    Ok(rows)
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Exact(args) => cmd_exact(args),
        Command::Stats(args) => cmd_stats(args),
        Command::SelectK(args) => cmd_select_k(args),
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

fn cmd_exact(args: ExactArgs) -> Result<(), Error> {
    let sem = parse_semantics(&args.semantics, &args.delta, args.max_hops)?;
    let g = TemporalGraph::parse_edge_list(&read(&args.input)?)?;
    let labels = exact_tbc_with_ceiling(&g, sem, args.ceiling)?;
    write(&args.out, &labels.to_label_file(&g))?;
    write_sidecar(
        &args.out,
        serde_json::json!({
            "command": "exact",
            "input": args.input.display().to_string(),
            "out": args.out.display().to_string(),
            "semantics": sem,
            "extension_ceiling": args.ceiling,
            "graph_digest": g.digest(),
            "nodes": g.node_count(),
            "edges": g.edge_count(),
        }),
    )?;
    eprintln!(
        "wrote {} labels for {} nodes to {}",
        labels.len(),
        g.node_count(),
        args.out.display()
    );
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<(), Error> {
    let rows = parse_rows(&read(&args.labels)?, 1)?;
    if rows.is_empty() {
        return Err(Error::Domain("label file contains no rows".into()));
    }
    let values: Vec<f64> = rows.iter().map(|(_, v)| v[0]).collect();
    let hist = Histogram::from_values(&values)?;
    let json = serde_json::json!({
        "total": hist.labeled_total(),
        "zero_count": hist.zero_count,
        "zero_fraction": hist.zero_fraction(),
        "bucket_edges": hist.bucket_edges,
        "bucket_counts": hist.bucket_counts,
    });
    write(&args.out, &format!("{json:#}\n"))?;
    write_sidecar(
        &args.out,
        serde_json::json!({
            "command": "stats",
            "labels": args.labels.display().to_string(),
            "out": args.out.display().to_string(),
        }),
    )?;
    emit(&format!("{json:#}"));
    Ok(())
}

fn cmd_select_k(args: SelectKArgs) -> Result<(), Error> {
    let emb_rows = parse_rows(&read(&args.embeddings)?, 1)?;
    let label_rows = parse_rows(&read(&args.labels)?, 1)?;
    let label_map: BTreeMap<u64, f64> = label_rows.iter().map(|(id, v)| (*id, v[0])).collect();
    let mut points = Vec::with_capacity(emb_rows.len());
    let mut labels = Vec::with_capacity(emb_rows.len());
    for (id, vector) in &emb_rows {
        let y = label_map.get(id).ok_or_else(|| {
            Error::Domain(format!("embedding row {id} has no matching label"))
        })?;
        points.push(vector.clone());
        labels.push(*y);
    }
    let cfg = ClusterConfig {
        rate: args.rate,
        pairs: args.pairs,
        k_max: args.k_max,
        kmeans_iters: args.kmeans_iters,
        seed: args.seed,
    };
    let sel = select_k(&points, &labels, &cfg)?;
    let trace: BTreeMap<String, f64> = sel
        .trace
        .iter()
        .map(|(k, inst)| (k.to_string(), *inst))
        .collect();
    let json = serde_json::json!({ "k_hat": sel.k_hat, "trace": trace });
    write(&args.out, &format!("{json:#}\n"))?;
    write_sidecar(
        &args.out,
        serde_json::json!({
            "command": "select-k",
            "embeddings": args.embeddings.display().to_string(),
            "labels": args.labels.display().to_string(),
            "out": args.out.display().to_string(),
            "config": cfg,
        }),
    )?;
    emit(&format!("{json:#}"));
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let cfg = TrainConfig::parse(&read(&args.config)?)?;
    if !args.labels.is_empty() && args.labels.len() != args.graphs.len() {
        return Err(Error::Config(format!(
            "{} label files for {} graphs",
            args.labels.len(),
            args.graphs.len()
        )));
    }
    let mut corpus = Vec::with_capacity(args.graphs.len());
    for (i, path) in args.graphs.iter().enumerate() {
        let g = TemporalGraph::parse_edge_list(&read(path)?)?;
        let labels = if args.labels.is_empty() {
            tbclab::oracle::exact_tbc(&g, cfg.semantics)?
        } else {
            LabelSet::parse_label_file(&read(&args.labels[i])?, &g, cfg.semantics)?
        };
        corpus.push((g, labels));
    }
    let outcome = train(&cfg, &corpus)?;
    for w in &outcome.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    write(&args.out, &outcome.checkpoint.to_json()?)?;
    write_sidecar(
        &args.out,
        serde_json::json!({
            "command": "train",
            "config": cfg,
            "resolved_config_flat": cfg.to_key_values(),
            "graphs": args.graphs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "out": args.out.display().to_string(),
            "diagnostics": outcome.diagnostics,
            "training_digests": outcome.checkpoint.training_digests,
        }),
    )?;
    let final_loss: f64 = outcome
        .checkpoint
        .loss_trace
        .last()
        .map(|e| e.iter().sum::<f64>() / e.len() as f64)
        .unwrap_or(f64::NAN);
    eprintln!(
        "trained {} epochs over {} graphs; final mean loss {final_loss:.6}",
        cfg.epochs,
        corpus.len()
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), Error> {
    let ckpt = Checkpoint::from_json(&read(&args.checkpoint)?)?;
    let g = TemporalGraph::parse_edge_list(&read(&args.input)?)?;
    let idx = tbclab::graph::InstanceIndex::build(&g);
    let preds = predict_all(&ckpt.params, &g, &idx);
    let mut rows: Vec<(u64, f64)> = (0..g.node_count())
        .map(|v| (g.original_id(v), preds[v]))
        .collect();
    rows.sort_unstable_by_key(|r| r.0);
    let mut out = String::new();
    for (id, val) in rows {
        out.push_str(&format!("{id} {val:.11e}\n"));
    }
    write(&args.out, &out)?;
    write_sidecar(
        &args.out,
        serde_json::json!({
            "command": "predict",
            "checkpoint": args.checkpoint.display().to_string(),
            "input": args.input.display().to_string(),
            "out": args.out.display().to_string(),
            "graph_digest": g.digest(),
            "graph_in_training_set": ckpt.training_digests.contains(&g.digest()),
            "config": ckpt.config,
        }),
    )?;
    eprintln!("wrote {} predictions to {}", g.node_count(), args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    let report = match (&args.predictions, &args.checkpoint) {
        (Some(pred_path), None) => {
            let pred_rows = parse_rows(&read(pred_path)?, 1)?;
            let label_rows = parse_rows(&read(&args.labels)?, 1)?;
            let preds: BTreeMap<u64, f64> = pred_rows.iter().map(|(id, v)| (*id, v[0])).collect();
            let labels: BTreeMap<u64, f64> =
                label_rows.iter().map(|(id, v)| (*id, v[0])).collect();
            if preds.len() != labels.len() || !preds.keys().eq(labels.keys()) {
                return Err(Error::Domain(
                    "prediction and label files cover different node sets".into(),
                ));
            }
            let p: Vec<f64> = preds.values().copied().collect();
            let y: Vec<f64> = labels.values().copied().collect();
            metrics::metrics_report(&p, &y)?
        }
        (None, Some(ckpt_path)) => {
            let input = args.input.as_ref().expect("clap enforces --input");
            let ckpt = Checkpoint::from_json(&read(ckpt_path)?)?;
            let g = TemporalGraph::parse_edge_list(&read(input)?)?;
            let labels = LabelSet::parse_label_file(&read(&args.labels)?, &g, ckpt.config.semantics)?;
            let report = evaluate(&ckpt, &g, &labels)?;
            if report.graph_in_training_set == Some(true) {
                eprintln!("warning: evaluation graph was part of the training set");
            }
            report
        }
        _ => {
            return Err(Error::Config(
                "eval needs either --predictions or --checkpoint with --input".into(),
            ));
        }
    };
    let json = metrics::report_to_json(&report);
    emit(&format!("{json:#}"));
    if let Some(out) = &args.out {
        write(out, &format!("{json:#}\n"))?;
        write_sidecar(
            out,
            serde_json::json!({
                "command": "eval",
                "predictions": args.predictions.as_ref().map(|p| p.display().to_string()),
                "checkpoint": args.checkpoint.as_ref().map(|p| p.display().to_string()),
                "input": args.input.as_ref().map(|p| p.display().to_string()),
                "labels": args.labels.display().to_string(),
                "out": out.display().to_string(),
            }),
        )?;
    }
    Ok(())
}
