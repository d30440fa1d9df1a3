use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use legs::data::{
    export_features, parse_tudataset_with, synth_scales_dataset, write_tudataset, LabelKind, NodeFeatureSpec,
    RunReport,
};
use legs::filterbank::ScaleSequence;
use legs::graph::build_graph;
use legs::heads::{HeadKind, Task};
use legs::scattering::ScatterConfig;
use legs::train::{crossval, Mode, TrainConfig};
use legs::verify::{
    frame_suite, permutation_suite, pipeline_outcome, pipeline_suite, random_graph, telescoping_suite,
};
use legs::{DatasetBundle, Graph, SelectionParams};

#[derive(Parser)]
#[command(name = "legs", version, about = "Learnable geometric scattering on graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Frame-bound, telescoping and permutation suites on one graph.
    Check(CheckArgs),
    /// Export graph-level scattering features as CSV.
    Features(FeaturesArgs),
    /// Cross-validated training; writes a run report.
    Train(TrainArgs),
    /// Finite-difference check of the full training pipeline.
    Gradcheck(GradcheckArgs),
    /// Write the synthetic two-scale dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct CheckArgs {
    /// Edge-list file (`i j [weight]`, 0-based ids) or `random:n=<count>`.
    #[arg(long)]
    graph: String,
    #[arg(long, default_value = "1,2,4,8,16", value_delimiter = ',')]
    scales: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct NodeArgs {
    /// Append one-hot node labels to the node signal.
    #[arg(long)]
    use_node_labels: bool,
    /// Append `<DS>_node_attributes.txt` channels to the node signal.
    #[arg(long)]
    use_node_attributes: bool,
    /// Drop the eccentricity and clustering channels.
    #[arg(long)]
    no_structural: bool,
}

impl NodeArgs {
    fn spec(&self) -> NodeFeatureSpec {
        NodeFeatureSpec {
            structural: !self.no_structural,
            node_labels: self.use_node_labels,
            attributes: self.use_node_attributes,
        }
    }
}

#[derive(Args)]
struct ScatterArgs {
    /// Number of wavelets.
    #[arg(long = "J", default_value_t = 5)]
    j: usize,
    /// Diffusion steps available to the selection.
    #[arg(long, default_value_t = 16)]
    m: usize,
    #[arg(long, default_value_t = 2)]
    max_order: usize,
    #[arg(long, default_value = "1,2,3,4", value_delimiter = ',')]
    q: Vec<u32>,
}

impl ScatterArgs {
    fn config(&self) -> ScatterConfig {
        ScatterConfig {
            num_wavelets: self.j,
            max_order: self.max_order,
            q_list: self.q.clone(),
            ..ScatterConfig::default()
        }
    }
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    scatter: ScatterArgs,
    /// Frozen one-hot dyadic selection instead of the training start point.
    #[arg(long)]
    fixed: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    nodes: NodeArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    head: HeadKind,
    #[arg(long)]
    mode: Mode,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = Task::Classify)]
    task: Task,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Early-stopping patience in epochs; 0 disables.
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[command(flatten)]
    scatter: ScatterArgs,
    #[command(flatten)]
    nodes: NodeArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random parameter points per head.
    #[arg(long, default_value_t = 10)]
    points: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Check(a) => check(a),
        Command::Features(a) => features(a),
        Command::Train(a) => train(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Synth(a) => synth(a),
    }
}

fn load_graph(spec: &str, seed: u64) -> Result<Graph> {
    if let Some(rest) = spec.strip_prefix("random:") {
        let n: usize = rest
            .strip_prefix("n=")
            .and_then(|v| v.parse().ok())
            .with_context(|| format!("expected random:n=<count>, got `{spec}`"))?;
        if n < 2 {
            bail!("random graph needs at least two nodes");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        return Ok(random_graph(n, 0.15, &mut rng));
    }
    let text = std::fs::read_to_string(spec).with_context(|| format!("reading {spec}"))?;
    let mut edges = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        let parse = || -> Option<(usize, usize, f64)> {
            match parts.as_slice() {
                [i, j] => Some((i.parse().ok()?, j.parse().ok()?, 1.0)),
                [i, j, w] => Some((i.parse().ok()?, j.parse().ok()?, w.parse().ok()?)),
                _ => None,
            }
        };
        edges.push(parse().with_context(|| format!("{spec}:{}: expected `i j [weight]`", no + 1))?);
    }
    let n = edges.iter().map(|&(i, j, _)| i.max(j) + 1).max().unwrap_or(0);
    Ok(build_graph(n, &edges)?)
}

fn check(a: CheckArgs) -> Result<bool> {
    let g = load_graph(&a.graph, a.seed)?;
    let scales = ScaleSequence::new(a.scales.clone())?;
    println!("graph: {} nodes, {} edges; scales {:?}", g.n(), g.edges().len(), scales.as_slice());
    let mut suites = vec![
        frame_suite(&g, &scales, a.trials, a.seed)?,
        telescoping_suite(&g, &scales, a.trials, a.seed)?,
    ];
    suites.extend(permutation_suite(&g, &scales, a.trials, a.seed)?);
    for s in &suites {
        println!("{s}");
    }
    Ok(suites.iter().all(|s| s.pass))
}

fn load_dataset(dir: &Path, task: Task) -> Result<DatasetBundle> {
    let kind = match task {
        Task::Classify => LabelKind::Classes,
        Task::Regress => LabelKind::Targets,
    };
    parse_tudataset_with(dir, kind).with_context(|| format!("loading {}", dir.display()))
}

fn features(a: FeaturesArgs) -> Result<bool> {
    let bundle = load_dataset(&a.data, Task::Classify)?;
    let cfg = a.scatter.config();
    let selection = if a.fixed {
        SelectionParams::fixed(a.scatter.j, a.scatter.m)?
    } else {
        SelectionParams::learnable_init(a.scatter.j, a.scatter.m)?
    };
    let s = export_features(&bundle, a.nodes.spec(), &selection, &cfg, &a.out)?;
    println!("wrote {} rows x {} columns to {}", s.rows, s.columns, a.out.display());
    Ok(true)
}

fn train(a: TrainArgs) -> Result<bool> {
    let start = Instant::now();
    let bundle = load_dataset(&a.data, a.task)?;
    let data = bundle.training_data(a.nodes.spec())?;
    let cfg = TrainConfig {
        lr: a.lr,
        momentum: a.momentum,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        head: a.head,
        mode: a.mode,
        task: a.task,
        folds: a.folds,
        patience: a.patience,
        max_step: a.scatter.m,
        scatter: a.scatter.config(),
        ..TrainConfig::default()
    };
    let result = crossval(&data, &cfg)?;
    for f in &result.folds {
        println!(
            "fold {}: {} {:.4} ({} epochs, kept {})",
            f.fold, result.metric_name, f.metric, f.epochs_run, f.best_epoch
        );
    }
    println!("{} {:.4} ± {:.4}", result.metric_name, result.mean, result.std);
    let mut config = RunReport::config_echo(&cfg)?;
    let spec = a.nodes.spec();
    config.insert("nodes.structural".into(), spec.structural.to_string());
    config.insert("nodes.node_labels".into(), spec.node_labels.to_string());
    config.insert("nodes.attributes".into(), spec.attributes.to_string());
    let report = RunReport {
        version: env!("CARGO_PKG_VERSION").into(),
        command: "train".into(),
        dataset: bundle.name.clone(),
        graphs: bundle.len(),
        seed: a.seed,
        config,
        result,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    report.write(&a.report)?;
    println!("report written to {}", a.report.display());
    Ok(true)
}

fn gradcheck(a: GradcheckArgs) -> Result<bool> {
    let checks = pipeline_suite(a.seed, a.points)?;
    for c in &checks {
        let (checked, excluded) = c.probes();
        println!(
            "{} point {}: max relative error {:.3e} ({checked} probes, {excluded} excluded)",
            c.head,
            c.point,
            c.check.max_rel_error()
        );
    }
    let outcome = pipeline_outcome(&checks);
    println!("max relative error: {:.3e}", outcome.worst);
    Ok(outcome.pass)
}

fn synth(a: SynthArgs) -> Result<bool> {
    let bundle: DatasetBundle = synth_scales_dataset(a.n, a.seed)?;
    write_tudataset(&bundle, &a.out)?;
    println!("wrote {} graphs to {}", bundle.len(), a.out.display());
    Ok(true)
}
