//! `semdet`: train, evaluate, expand datasets, generate synthetic benchmarks,
//! dump exact marginals, explain predictions, and audit gradients.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use semdet::checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
use semdet::expansion::manifest::{load_manifest, resolve_labels, MANIFEST_FORMAT_VERSION};
use semdet::expansion::{expand, write_expand_artifacts, AugRegion, ExpandConfig};
use semdet::explain::{explain, DEFAULT_EXPLAIN_THRESHOLD};
use semdet::hierarchy::{load_graph, GRAPH_FORMAT_VERSION};
use semdet::image::{read_ppm, resize_bilinear};
use semdet::inference::all_marginals;
use semdet::metrics::evaluate;
use semdet::synth::{generate, read_examples, write_examples, SynthSpec};
use semdet::trainer::{run_training, RunConfig, RUN_CONFIG_FORMAT_VERSION};
use semdet::{Error, Example, HierarchyGraph, Model, Scores};

#[derive(Parser)]
#[command(
    name = "semdet",
    about = "Semantics-oriented face-forgery detection toolkit",
    disable_version_flag = true
)]
struct Cli {
    /// Print tool and file-format versions, then exit.
    #[arg(long)]
    version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a detector; writes checkpoint.json and trainlog.jsonl.
    Train(TrainArgs),
    /// Score a dataset with a checkpoint; writes a per-node AUC report.
    Eval(EvalArgs),
    /// Expand a real-face manifest with local-region manipulations.
    Expand(ExpandArgs),
    /// Print the explanation sentence and marginals for one input.
    Explain(ExplainArgs),
    /// Generate synthetic train/test datasets from a spec.
    Synth(SynthArgs),
    /// Dump exact marginals for a graph and a raw score vector.
    Oracle(OracleArgs),
    /// Audit every analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Dataset: synthetic examples (JSONL) or a face manifest (JSONL).
    #[arg(long)]
    data: PathBuf,
    /// Hierarchy graph (JSON).
    #[arg(long)]
    graph: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output directory for report.json.
    #[arg(long)]
    out: PathBuf,
    /// Downsampling side for manifest images.
    #[arg(long, default_value_t = 32)]
    image_side: usize,
}

#[derive(Args)]
struct ExpandArgs {
    /// Manifest of real faces to augment.
    #[arg(long)]
    real: PathBuf,
    /// Manifest of source candidates.
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    /// Comma-separated regions: eye, lip_and_mouth, nose.
    #[arg(long, value_delimiter = ',')]
    regions: Vec<String>,
    /// Augmented images per region.
    #[arg(long)]
    quota: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    /// A `.ppm` image or a JSON feature vector.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EXPLAIN_THRESHOLD)]
    threshold: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic benchmark spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Hierarchy graph; defaults to the built-in ten-node graph.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Raw scores as a JSON array, e.g. "[0, 0.5, -1, ...]".
    #[arg(long)]
    scores: String,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn exit_code_for(error: &Error) -> u8 {
    match error {
        Error::Domain(_)
        | Error::DegenerateInput(_)
        | Error::NonFiniteGradient { .. }
        | Error::Schedule { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help output
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    if cli.version {
        println!("semdet {}", env!("CARGO_PKG_VERSION"));
        println!("graph format version:      {GRAPH_FORMAT_VERSION}");
        println!("checkpoint format version: {CHECKPOINT_FORMAT_VERSION}");
        println!("manifest format version:   {MANIFEST_FORMAT_VERSION}");
        println!("run config format version: {RUN_CONFIG_FORMAT_VERSION}");
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: a subcommand is required; run with --help for usage");
        return ExitCode::from(1);
    };
    match run(command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn run(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Expand(args) => cmd_expand(args),
        Command::Explain(args) => cmd_explain(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    }
}

/// Loads either synthetic examples or a face manifest, sniffed from the first
/// record.
fn load_dataset(path: &Path, graph: &HierarchyGraph, image_side: usize) -> Result<Vec<Example>, Error> {
    match read_examples(path, graph) {
        Ok(examples) => Ok(examples),
        Err(feature_err) => {
            let records = load_manifest(path).map_err(|_| feature_err)?;
            records
                .iter()
                .map(|record| {
                    let img = read_ppm(&record.image_path)?;
                    let img = resize_bilinear(&img, image_side, image_side);
                    let (y, observed) = resolve_labels(graph, &record.labels)?;
                    Ok(Example {
                        x: img.to_features(),
                        y,
                        observed,
                    })
                })
                .collect()
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode, Error> {
    let mut config = RunConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let graph = load_graph(&args.graph)?;
    let dataset = load_dataset(&args.data, &graph, config.image_side)?;
    let output = run_training(&config, &graph, &dataset, &args.out)?;
    println!(
        "trained {} steps; final lambda = {:?}; wrote {}",
        output.log.len(),
        output.lambda.as_array(),
        args.out.join("checkpoint.json").display()
    );
    Ok(ExitCode::SUCCESS)
}

fn load_model(path: &Path) -> Result<(Model, Checkpoint), Error> {
    let checkpoint = Checkpoint::load(path)?;
    let (model, _) = checkpoint.to_model()?;
    Ok((model, checkpoint))
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode, Error> {
    let (model, _) = load_model(&args.checkpoint)?;
    let graph = load_graph(&args.graph)?;
    let dataset = load_dataset(&args.data, &graph, args.image_side)?;
    let report = evaluate(&model, &graph, &dataset)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::io(args.out.display().to_string(), e))?;
    let path = args.out.join("report.json");
    std::fs::write(&path, format!("{json}\n"))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    println!("{json}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_expand(args: ExpandArgs) -> Result<ExitCode, Error> {
    let regions = args
        .regions
        .iter()
        .map(|r| AugRegion::parse(r))
        .collect::<Result<Vec<_>, _>>()?;
    if regions.is_empty() {
        return Err(Error::Config("at least one region is required".into()));
    }
    let real = load_manifest(&args.real)?;
    let candidates = load_manifest(&args.candidates)?;
    let graph = load_graph(&args.graph)?;
    let config = ExpandConfig::new(regions, args.quota, args.seed);
    let output = expand(&real, &candidates, &graph, &config, &args.out)?;
    write_expand_artifacts(&args.out, &output)?;
    println!(
        "wrote {} augmented records ({} errors) to {}",
        output.provenance.records_written,
        output.provenance.errors.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_explain(args: ExplainArgs) -> Result<ExitCode, Error> {
    let (model, checkpoint) = load_model(&args.checkpoint)?;
    let graph = load_graph(&args.graph)?;
    let features = load_feature_input(&args.input, checkpoint.embedding.input_dim)?;
    let scores = model.scores(&features)?;
    let marginals = all_marginals(&graph, &scores)?;
    println!("{}", explain(&graph, &marginals, args.threshold)?);
    println!();
    for node in graph.nodes() {
        println!("{:>24}  {:.4}", node.name, marginals.get(node.id));
    }
    Ok(ExitCode::SUCCESS)
}

/// Reads a `.ppm` image (downsampled to match the model input) or a JSON
/// feature vector (either a bare array or `{"features": [...]}`).
fn load_feature_input(path: &Path, input_dim: usize) -> Result<Vec<f64>, Error> {
    if path.extension().is_some_and(|e| e == "ppm") {
        let side_sq = input_dim / 3;
        let side = (side_sq as f64).sqrt().round() as usize;
        if side * side * 3 != input_dim {
            return Err(Error::Config(format!(
                "model input dimension {input_dim} is not 3 * side^2 for any integer side; \
cannot feed a raster image"
            )));
        }
        let img = read_ppm(path)?;
        return Ok(resize_bilinear(&img, side, side).to_features());
    }
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let features: Vec<f64> = match serde_json::from_str::<serde_json::Value>(&text) {
        Ok(serde_json::Value::Object(map)) => serde_json::from_value(
            map.get("features")
                .cloned()
                .ok_or_else(|| Error::parse(path.display().to_string(), "missing \"features\""))?,
        )
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?,
        Ok(value) => serde_json::from_value(value)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?,
        Err(e) => return Err(Error::parse(path.display().to_string(), e.to_string())),
    };
    if features.len() != input_dim {
        return Err(Error::DimensionMismatch {
            expected: input_dim,
            actual: features.len(),
        });
    }
    Ok(features)
}

fn cmd_synth(args: SynthArgs) -> Result<ExitCode, Error> {
    let text = std::fs::read_to_string(&args.spec)
        .map_err(|e| Error::io(args.spec.display().to_string(), e))?;
    let spec: SynthSpec = serde_json::from_str(&text)
        .map_err(|e| Error::parse(args.spec.display().to_string(), e.to_string()))?;
    let graph = match &args.graph {
        Some(path) => load_graph(path)?,
        None => semdet::build_expanded_ffpp_graph(),
    };
    let (train, test) = generate(&spec, &graph)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::io(args.out.display().to_string(), e))?;
    write_examples(args.out.join("train.jsonl"), &graph, &train.examples)?;
    write_examples(args.out.join("test.jsonl"), &graph, &test.examples)?;
    println!(
        "wrote {} train and {} test examples to {}",
        train.examples.len(),
        test.examples.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_oracle(args: OracleArgs) -> Result<ExitCode, Error> {
    let graph = load_graph(&args.graph)?;
    let values: Vec<f64> = serde_json::from_str(&args.scores)
        .map_err(|e| Error::parse("--scores", e.to_string()))?;
    let scores = Scores::new(values)?;
    let marginals = all_marginals(&graph, &scores)?;
    let by_name: serde_json::Map<String, serde_json::Value> = graph
        .nodes()
        .iter()
        .map(|n| (n.name.clone(), serde_json::json!(marginals.get(n.id))))
        .collect();
    let output = serde_json::json!({
        "marginals": marginals.values(),
        "by_name": by_name,
    });
    println!("{}", serde_json::to_string_pretty(&output).expect("serializes"));
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode, Error> {
    let report = semdet::gradcheck::run_all(args.seed)?;
    for check in &report.checks {
        println!(
            "{:<32} max error {:<12.3e} tolerance {:<9.0e} {}",
            check.name,
            check.max_error,
            check.tolerance,
            if check.passed() { "PASS" } else { "FAIL" }
        );
    }
    if report.all_passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: gradient check failed");
        Ok(ExitCode::from(3))
    }
}
