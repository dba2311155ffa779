//! Command-line front end: simulate benchmark datasets, fit graphs, evaluate
//! scores against ground truth, run replicated experiments, and compare
//! fitted graphs.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fsgm_core::{
    bench::{self, ExperimentPlan},
    config::Tuning,
    error::{Error, Result},
    graph, io, simgen, DimensionRule, GridMode, ModelId, ModelSpec, PipelineConfig,
};

#[derive(Parser)]
#[command(name = "fsgm", version, about = "Graph structure learning for multivariate functional data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset with its true edge set
    Simulate(SimulateArgs),
    /// Fit a graph to a dataset file
    Fit(FitArgs),
    /// Evaluate scores (from a fitted graph or an external file) against a
    /// true edge set
    Eval(EvalArgs),
    /// Run a replicated experiment plan and report AUC statistics
    Bench(BenchArgs),
    /// Compare the edge sets of two fitted graphs
    Compare(CompareArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Model id: I, II, III, IV, or primed variants like I', III'' (p works
    /// for a prime mark: Ip, IIIpp)
    #[arg(long)]
    model: String,
    /// Number of subjects
    #[arg(long)]
    n: usize,
    /// Time-grid design
    #[arg(long, value_enum, default_value_t = GridArg::Balanced)]
    grid: GridArg,
    /// Observation points per subject
    #[arg(long, default_value_t = 10)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (dataset.csv, truth.csv)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, ValueEnum)]
enum GridArg {
    Balanced,
    Unbalanced,
}

impl From<GridArg> for GridMode {
    fn from(g: GridArg) -> Self {
        match g {
            GridArg::Balanced => GridMode::Balanced,
            GridArg::Unbalanced => GridMode::Unbalanced,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Dataset CSV (subject,node,time,value)
    #[arg(long)]
    data: PathBuf,
    /// Pipeline config JSON; omitted fields use defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fix the edge threshold instead of selecting it by GCV
    #[arg(long)]
    rho: Option<f64>,
    /// Fix the predictor dimension for every pair
    #[arg(long)]
    d: Option<usize>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Recorded in the output; the fit itself is deterministic
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (graph.json, edges.csv)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Fitted graph JSON produced by `fit`
    #[arg(long, conflicts_with = "scores")]
    graph: Option<PathBuf>,
    /// External per-pair score CSV (i,j,score)
    #[arg(long)]
    scores: Option<PathBuf>,
    /// True edge list CSV (i,j)
    #[arg(long)]
    truth: PathBuf,
    /// Output directory (roc.csv, metrics.json)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment plan JSON
    #[arg(long)]
    plan: PathBuf,
    /// Output directory (report.json, report.csv)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// First fitted graph JSON
    #[arg(long)]
    a: PathBuf,
    /// Second fitted graph JSON
    #[arg(long)]
    b: PathBuf,
    /// Output directory (diff.json, diff.csv)
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let model = ModelId::parse(&args.model)?;
    let spec = ModelSpec {
        model,
        n: args.n,
        grid_mode: args.grid.into(),
        m: args.m,
        seed: args.seed,
    };
    let (dataset, truth) = simgen::gen_model(&spec)?;
    ensure_dir(&args.out)?;
    let data_path = args.out.join("dataset.csv");
    let truth_path = args.out.join("truth.csv");
    io::write_dataset_csv(&data_path, &dataset)?;
    io::write_truth_csv(&truth_path, &truth)?;
    println!(
        "model {} n={} p={} -> {} and {}",
        model,
        dataset.n(),
        dataset.p(),
        data_path.display(),
        truth_path.display()
    );
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<PipelineConfig>(&text)
                .map_err(|e| Error::parse(format!("{}: {e}", path.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(rho) = args.rho {
        config.rho = Tuning::Fixed(rho);
    }
    if let Some(d) = args.d {
        config.d = DimensionRule::Fixed(d);
    }
    if let Some(threads) = args.threads {
        config.threads = Some(threads);
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let dataset = io::read_dataset_csv(&args.data)?;
    let fitted = graph::fit(&dataset, &config)?;
    ensure_dir(&args.out)?;
    let graph_path = args.out.join("graph.json");
    io::write_graph_json(&graph_path, &fitted)?;
    io::write_edges_csv(&args.out.join("edges.csv"), &fitted)?;
    println!(
        "p={} pairs={} threshold={} edges={} -> {}",
        fitted.p,
        fitted.scores.len(),
        fitted.threshold,
        fitted.edges.len(),
        graph_path.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let score_map: Vec<((usize, usize), f64)> = match (&args.graph, &args.scores) {
        (Some(path), None) => io::read_graph_json(path)?.score_map()?,
        (None, Some(path)) => io::read_scores_csv(path, None)?,
        _ => {
            return Err(Error::validation(
                "provide exactly one of --graph or --scores",
            ))
        }
    };
    let p = score_map.iter().map(|((_, j), _)| j + 1).max().unwrap_or(0);
    let truth = io::read_truth_csv(&args.truth, Some(p))?;
    let points = graph::roc_points(&score_map, &truth.edges)?;
    let auc = graph::auc(&points);
    ensure_dir(&args.out)?;
    io::write_roc_csv(&args.out.join("roc.csv"), &points)?;
    let metrics = serde_json::json!({
        "auc": auc,
        "pairs": score_map.len(),
        "true_edges": truth.edges.len(),
    });
    io::write_json(&args.out.join("metrics.json"), &metrics)?;
    println!("auc={auc}");
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.plan)?;
    let plan: ExperimentPlan = serde_json::from_str(&text)
        .map_err(|e| Error::parse(format!("{}: {e}", args.plan.display())))?;
    let report = bench::run_experiment(&plan)?;
    ensure_dir(&args.out)?;
    io::write_json(&args.out.join("report.json"), &report)?;
    io::write_report_csv(&args.out.join("report.csv"), &report)?;
    println!("{}", bench::format_summary(&report));
    if !report.complete {
        log::warn!("some replicates failed; report marked incomplete");
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let a = io::read_graph_json(&args.a)?;
    let b = io::read_graph_json(&args.b)?;
    if a.p != b.p {
        return Err(Error::validation(format!(
            "graphs disagree on node count: {} vs {}",
            a.p, b.p
        )));
    }
    let ea: BTreeSet<(usize, usize)> = a.edge_set();
    let eb: BTreeSet<(usize, usize)> = b.edge_set();
    let up = |s: &(usize, usize)| (s.0 + 1, s.1 + 1);
    let diff = graph::GraphDiff {
        only_a: ea.difference(&eb).map(up).collect(),
        only_b: eb.difference(&ea).map(up).collect(),
        common: ea.intersection(&eb).map(up).collect(),
    };
    ensure_dir(&args.out)?;
    io::write_json(&args.out.join("diff.json"), &diff)?;
    io::write_diff_csv(&args.out.join("diff.csv"), &diff)?;
    println!(
        "a_only={} b_only={} common={}",
        diff.only_a.len(),
        diff.only_b.len(),
        diff.common.len()
    );
    Ok(())
}
