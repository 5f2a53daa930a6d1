//! Command-line front end: dataset generation, classifier training,
//! explanation runs and sweeps.
//!
//! Exit codes: 0 success, 2 usage error, 1 runtime failure.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gnnexplain::classifier::{train, ClassifierModel, TrainConfig};
use gnnexplain::config::ExperimentConfig;
use gnnexplain::datasets::{self, GraphDataset, IsAcyclicConfig};
use gnnexplain::explain::{explain, ExplainConfig, ExplainOutcome};
use gnnexplain::graph::LabeledGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "gnnexplain",
    version,
    about = "Model-level explanations for graph classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a dataset as dataset.json plus TU text files.
    GenerateDataset(GenerateArgs),
    /// Train a graph classifier and save its weights.
    TrainClassifier(TrainArgs),
    /// Train a generator against a classifier and export the final graph.
    Explain(ExplainArgs),
    /// Run explain over several node budgets and initial nodes.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetName {
    #[value(name = "is_acyclic")]
    IsAcyclic,
    #[value(name = "mutag")]
    Mutag,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    name: DatasetName,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Built-in dataset; `is_acyclic` is regenerated from --seed.
    #[arg(long, value_enum, conflicts_with = "data")]
    dataset: Option<DatasetName>,
    /// Dataset directory (dataset.json or TU files) or dataset JSON file.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Output weights file.
    #[arg(long, default_value = "model.bin")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment config (JSON); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Target class, by index or name.
    #[arg(long)]
    class: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    rollouts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    max_nodes: Option<usize>,
    /// Node type of the single-node initial graph.
    #[arg(long)]
    initial_node: Option<String>,
    /// Output directory, or a `.json` path for the graph file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trace file (JSON lines); defaults to trace.jsonl next to the graph.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Node budgets, e.g. `3-8` or `3,5,7`.
    #[arg(long, default_value = "3-8")]
    max_nodes: String,
    /// Initial node types, comma separated, or `all`.
    #[arg(long)]
    initial_nodes: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<gnnexplain::Error> for Failure {
    fn from(e: gnnexplain::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateDataset(a) => cmd_generate_dataset(a),
        Command::TrainClassifier(a) => cmd_train(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn builtin_dataset(name: DatasetName, seed: u64) -> gnnexplain::Result<GraphDataset> {
    match name {
        DatasetName::IsAcyclic => datasets::generate_is_acyclic(seed, &IsAcyclicConfig::default()),
        DatasetName::Mutag => datasets::mutag(),
    }
}

fn cmd_generate_dataset(args: GenerateArgs) -> CmdResult {
    let ds = builtin_dataset(args.name, args.seed)?;
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    fs::write(args.out.join("dataset.json"), ds.to_json()?).context("writing dataset.json")?;
    ds.write_tu(&args.out, &ds.name.to_uppercase())?;
    let stats = ds.stats();
    println!("graphs={}", stats.graphs);
    println!("mean_nodes={:.4}", stats.mean_nodes);
    println!("mean_edges={:.4}", stats.mean_edges);
    Ok(())
}

/// Loads a dataset JSON file, a directory holding dataset.json, or a
/// directory of TU files named `<PREFIX>_A.txt` etc.
fn load_dataset_path(path: &Path) -> Result<GraphDataset, Failure> {
    if !path.exists() {
        return Err(usage(format!("dataset path {} does not exist", path.display())));
    }
    if path.is_file() {
        return Ok(GraphDataset::load_json(path)?);
    }
    let json = path.join("dataset.json");
    if json.is_file() {
        return Ok(GraphDataset::load_json(&json)?);
    }
    let prefix = fs::read_dir(path)
        .with_context(|| format!("cannot list {}", path.display()))?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .find_map(|name| name.strip_suffix("_A.txt").map(str::to_string))
        .ok_or_else(|| usage(format!("{} holds neither dataset.json nor TU files", path.display())))?;
    Ok(datasets::load_tu_with_prefix(path, &prefix)?)
}

fn cmd_train(args: TrainArgs) -> CmdResult {
    let ds = match (&args.dataset, &args.data) {
        (Some(name), None) => builtin_dataset(*name, args.seed)?,
        (None, Some(path)) => load_dataset_path(path)?,
        _ => return Err(usage("give exactly one of --dataset or --data")),
    };
    let mut cfg = TrainConfig {
        seed: args.seed,
        ..TrainConfig::default()
    };
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.learning_rate = lr;
    }
    let (model, report) = train(&ds, &cfg)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    model.save(&args.out)?;
    println!("epochs={}", report.epoch_losses.len());
    println!(
        "final_loss={:.6}",
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    println!("accuracy={:.4}", report.accuracy);
    Ok(())
}

/// Resolved model plus explain settings shared by explain and sweep.
struct Prepared {
    model: ClassifierModel,
    config: ExplainConfig,
}

fn prepare(run: &RunArgs, max_nodes: Option<usize>) -> Result<(Prepared, ExperimentConfig), Failure> {
    let experiment = match &run.config {
        Some(path) => {
            if !path.is_file() {
                return Err(usage(format!("config file {} does not exist", path.display())));
            }
            ExperimentConfig::load(path).map_err(|e| usage(e.to_string()))?
        }
        None => ExperimentConfig::default(),
    };
    let model_path = run
        .model
        .clone()
        .or_else(|| experiment.model.clone())
        .ok_or_else(|| usage("no model given (--model or \"model\" in the config)"))?;
    if !model_path.is_file() {
        return Err(usage(format!("model file {} does not exist", model_path.display())));
    }
    let model = ClassifierModel::load(&model_path)?;

    let mut config =
        ExplainConfig::for_dataset(&model.arch.dataset, 0, 5, 0).unwrap_or_else(|_| ExplainConfig::is_acyclic(0, 5, 0));
    experiment.explain.apply(&mut config);
    if let Some(c) = &run.class {
        config.target_class = parse_class(c, &model)?;
    }
    if let Some(s) = run.steps {
        config.max_steps = s;
    }
    if let Some(m) = run.rollouts {
        config.rollouts = m;
    }
    if let Some(s) = run.seed {
        config.seed = s;
    }
    if let Some(n) = max_nodes {
        config.max_nodes = n;
    }
    config.validate(model.classes()).map_err(|e| usage(e.to_string()))?;
    Ok((Prepared { model, config }, experiment))
}

fn parse_class(text: &str, model: &ClassifierModel) -> Result<usize, Failure> {
    if let Ok(i) = text.parse::<usize>() {
        return if i < model.classes() {
            Ok(i)
        } else {
            Err(usage(format!(
                "class {i} out of range (model has {} classes)",
                model.classes()
            )))
        };
    }
    model.arch.class_names.iter().position(|n| n == text).ok_or_else(|| {
        usage(format!(
            "unknown class {text:?}; known: {}",
            model.arch.class_names.join(", ")
        ))
    })
}

fn initial_graph(name: &str, model: &ClassifierModel) -> Result<LabeledGraph, Failure> {
    let candidates = &model.arch.candidates;
    candidates.id_of(name).map(LabeledGraph::single).ok_or_else(|| {
        let known: Vec<&str> = candidates.types().iter().map(|t| t.name.as_str()).collect();
        usage(format!("unknown node type {name:?}; known: {}", known.join(", ")))
    })
}

/// Writes graph JSON, DOT and trace for one run.
fn write_outputs(
    outcome: &ExplainOutcome,
    model: &ClassifierModel,
    graph_path: &Path,
    trace_path: &Path,
    title: &str,
) -> anyhow::Result<()> {
    for p in [graph_path, trace_path] {
        if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
        }
    }
    fs::write(graph_path, serde_json::to_string_pretty(&outcome.graph)? + "\n")
        .with_context(|| format!("writing {}", graph_path.display()))?;
    let dot = outcome.graph.to_dot(&model.arch.candidates, title);
    fs::write(graph_path.with_extension("dot"), dot).context("writing DOT file")?;
    let file = fs::File::create(trace_path).with_context(|| format!("writing {}", trace_path.display()))?;
    outcome.write_trace(BufWriter::new(file))?;
    Ok(())
}

fn cmd_explain(args: ExplainArgs) -> CmdResult {
    let (Prepared { model, mut config }, experiment) = prepare(&args.run, args.max_nodes)?;
    if let Some(name) = &args.initial_node {
        config.initial_graph = initial_graph(name, &model)?;
    }
    config.validate(model.classes()).map_err(|e| usage(e.to_string()))?;

    let out = args
        .out
        .clone()
        .or_else(|| experiment.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("explain-out"));
    let (graph_path, default_trace) = if out.extension().is_some_and(|e| e == "json") {
        let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
        (out.clone(), dir.join("trace.jsonl"))
    } else {
        (out.join("graph.json"), out.join("trace.jsonl"))
    };
    let trace_path = args
        .trace
        .clone()
        .or_else(|| experiment.output.trace.clone())
        .unwrap_or(default_trace);

    let outcome = explain(&model, &config)?;
    let title = format!("{}_n{}", model.arch.class_names[config.target_class], config.max_nodes);
    write_outputs(&outcome, &model, &graph_path, &trace_path, &title)?;
    let (_, best) = outcome.best_snapshot();
    println!("nodes={}", outcome.graph.node_count());
    println!("edges={}", outcome.graph.edge_count());
    println!("has_cycle={}", outcome.graph.has_cycle());
    println!("best_p={best:.6}");
    println!("p={:.6}", outcome.probability);
    Ok(())
}

fn parse_budgets(text: &str) -> Result<Vec<usize>, Failure> {
    let bad = || usage(format!("cannot parse node budgets {text:?}; use e.g. 3-8 or 3,5,7"));
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim) {
        if let Some((lo, hi)) = part.split_once('-') {
            let lo: usize = lo.trim().parse().map_err(|_| bad())?;
            let hi: usize = hi.trim().parse().map_err(|_| bad())?;
            if lo > hi {
                return Err(bad());
            }
            out.extend(lo..=hi);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

#[derive(Serialize)]
struct SummaryRow {
    setting: String,
    max_nodes: usize,
    initial_node: String,
    seed: u64,
    p: f64,
    best_p: f64,
    nodes: usize,
    edges: usize,
    has_cycle: bool,
}

fn cmd_sweep(args: SweepArgs) -> CmdResult {
    let (Prepared { model, config }, _) = prepare(&args.run, None)?;
    let budgets = parse_budgets(&args.max_nodes)?;
    let initial: Vec<String> = match args.initial_nodes.as_deref() {
        None => {
            let t = config.initial_graph.node_type(0);
            vec![model.arch.candidates.name(t).to_string()]
        }
        Some("all") => model.arch.candidates.types().iter().map(|t| t.name.clone()).collect(),
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
    };

    let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
    let mut settings = Vec::new();
    for &n in &budgets {
        for name in &initial {
            let mut cfg = config.clone();
            cfg.max_nodes = n;
            cfg.initial_graph = initial_graph(name, &model)?;
            cfg.seed = seeds.gen();
            cfg.validate(model.classes()).map_err(|e| usage(e.to_string()))?;
            settings.push((format!("n{n}_{name}"), name.clone(), cfg));
        }
    }

    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let class_name = &model.arch.class_names[config.target_class];
    let rows: Vec<SummaryRow> = settings
        .par_iter()
        .map(|(setting, name, cfg)| -> anyhow::Result<SummaryRow> {
            let outcome = explain(&model, cfg)?;
            let dir = args.out.join(setting);
            write_outputs(
                &outcome,
                &model,
                &dir.join("graph.json"),
                &dir.join("trace.jsonl"),
                &format!("{class_name}_{setting}"),
            )?;
            Ok(SummaryRow {
                setting: setting.clone(),
                max_nodes: cfg.max_nodes,
                initial_node: name.clone(),
                seed: cfg.seed,
                p: outcome.probability,
                best_p: outcome.best_snapshot().1,
                nodes: outcome.graph.node_count(),
                edges: outcome.graph.edge_count(),
                has_cycle: outcome.graph.has_cycle(),
            })
        })
        .collect::<anyhow::Result<_>>()?;

    let summary = args.out.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary).with_context(|| format!("writing {}", summary.display()))?;
    for row in &rows {
        w.serialize(row).map_err(|e| anyhow!(e))?;
    }
    w.flush().context("writing summary.csv")?;
    for row in &rows {
        println!("{} p={:.6}", row.setting, row.p);
    }
    println!("summary={}", summary.display());
    Ok(())
}
