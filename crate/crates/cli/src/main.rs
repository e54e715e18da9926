use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pathmp::chem::SubstructureContext;
use pathmp::geometry::geometry_path_features;
use pathmp::graph::{build_graph, Graph};
use pathmp::io::{read_molecule_file, MoleculeFile, RunConfig};
use pathmp::model::{gradcheck_full_model, FeatureMode};
use pathmp::paths::{enumerate_paths_with, PathQuery, PathSampler};
use pathmp::run::{replay, run_repeat, same_outcome};
use pathmp::synth::SynthTask;
use pathmp::tensor::gradcheck::{check_op, GradcheckReport, DEFAULT_TOLERANCE, OP_NAMES};
use pathmp::tensor::Checkpoint;
use pathmp::train::{evaluate, load_regression, mean_std, TrainReport};
use pathmp::{Error, Result};

/// Path-augmented message passing networks for molecules and citation graphs.
#[derive(Parser)]
#[command(name = "pathmp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the simple paths starting at one atom, one per line.
    Paths(PathsArgs),
    /// Dump per-path substructure or geometry features as JSON lines.
    Featurize(FeaturizeArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Train from a TOML run configuration.
    Train(TrainArgs),
    /// Score a saved regression model on a molecule file.
    Eval(EvalArgs),
    /// Write a synthetic molecule data set.
    Synth(SynthArgs),
}

#[derive(Args)]
struct PathsArgs {
    #[arg(long)]
    input: PathBuf,
    /// Index of the molecule within the file.
    #[arg(long, default_value_t = 0)]
    molecule: usize,
    #[arg(long)]
    node: usize,
    #[arg(long)]
    length: usize,
    /// Only paths of exactly `length` edges.
    #[arg(long)]
    exact: bool,
    /// Sample at most K paths instead of enumerating all of them.
    #[arg(long, value_name = "K")]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum PathFeatureMode {
    Substructure,
    Geometry,
}

#[derive(Args)]
struct FeaturizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    mode: PathFeatureMode,
    #[arg(long)]
    length: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// A single primitive; all primitives when omitted.
    #[arg(long, conflicts_with = "full_model")]
    op: Option<String>,
    /// The whole network on a five-atom molecule, in every feature mode.
    #[arg(long)]
    full_model: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, required_unless_present = "replay")]
    config: Option<PathBuf>,
    /// Report destination; overrides the configuration's output.report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Overrides the configuration's repeat count.
    #[arg(long)]
    repeats: Option<usize>,
    /// Re-run every run recorded in a report and check the outcome matches.
    #[arg(long, value_name = "REPORT", conflicts_with = "config")]
    replay: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    task: SynthTask,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Paths(a) => paths(a),
        Command::Featurize(a) => featurize(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn graphs(file: &MoleculeFile, bond_lengths: bool) -> Result<Vec<Graph>> {
    let mut featurizer = pathmp::graph::FeaturizerConfig::new(file.vocabulary(false));
    featurizer.bond_lengths = bond_lengths;
    file.molecules.iter().map(|m| build_graph(m, &featurizer)).collect()
}

fn paths(a: PathsArgs) -> Result<ExitCode> {
    let file = read_molecule_file(&a.input)?;
    let record = file.molecules.get(a.molecule).ok_or_else(|| {
        Error::Config(format!("molecule {} requested, file has {}", a.molecule, file.molecules.len()))
    })?;
    let featurizer = pathmp::graph::FeaturizerConfig::new(file.vocabulary(false));
    let graph = build_graph(record, &featurizer)?;
    if a.node >= graph.n() {
        return Err(Error::NodeOutOfRange { node: a.node, n: graph.n() });
    }
    let mut found = match a.sample {
        Some(k) => PathSampler::new(a.seed).sample(&graph, a.node, a.length, k),
        None => {
            let query = if a.exact { PathQuery::exact(a.length) } else { PathQuery::up_to(a.length) };
            enumerate_paths_with(&graph, a.node, query)?
        }
    };
    if a.exact {
        found.retain(|p| p.len() == a.length);
    }
    let mut out = std::io::stdout().lock();
    for p in found {
        writeln!(out, "{p}")?;
    }
    Ok(ExitCode::SUCCESS)
}

fn featurize(a: FeaturizeArgs) -> Result<ExitCode> {
    let file = read_molecule_file(&a.input)?;
    let geometry = matches!(a.mode, PathFeatureMode::Geometry);
    let mut out = String::new();
    for (record, graph) in file.molecules.iter().zip(graphs(&file, false)?) {
        if geometry && graph.coords().is_none() {
            return Err(Error::Config(format!("molecule `{}` has no coordinates", record.id)));
        }
        let context = SubstructureContext::new(&graph);
        for v in 0..graph.n() {
            for p in enumerate_paths_with(&graph, v, PathQuery::up_to(a.length))? {
                let features = if geometry {
                    geometry_path_features(&graph, &p)?.to_vec()
                } else {
                    context.path_features(&p).to_vec()
                };
                let line = serde_json::json!({"molecule": record.id, "path": p.nodes(), "features": features});
                out.push_str(&line.to_string());
                out.push('\n');
            }
        }
    }
    write_file(&a.out, out.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let mut rows: Vec<(String, GradcheckReport)> = Vec::new();
    if a.full_model {
        for mode in [FeatureMode::Base, FeatureMode::Substructure, FeatureMode::Geometry] {
            rows.push((format!("full-model/{}", mode.as_str()), gradcheck_full_model(mode, a.seed)?));
        }
    } else {
        let ops: Vec<&str> = match &a.op {
            Some(op) => vec![op.as_str()],
            None => OP_NAMES.to_vec(),
        };
        for op in ops {
            rows.push((op.to_string(), check_op(op, a.seed)?));
        }
    }
    let mut ok = true;
    println!("{:<24} {:>10} {:>14}  result", "check", "entries", "max rel error");
    for (name, r) in &rows {
        let pass = r.passed(DEFAULT_TOLERANCE);
        ok &= pass;
        println!(
            "{:<24} {:>10} {:>14.3e}  {}",
            name,
            r.checked,
            r.max_rel_error,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn numbered(path: &Path, r: usize) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{r}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{r}"),
    };
    path.with_file_name(name)
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    if let Some(path) = a.replay {
        let text = fs::read_to_string(&path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let reports = TrainReport::parse_jsonl(&text)?;
        let mut ok = true;
        for (k, r) in reports.iter().enumerate() {
            let again = replay(r)?;
            let same = same_outcome(r, &again);
            ok &= same;
            println!("run {k} (seed {}): {}", r.final_metrics.seed, if same { "identical" } else { "DIFFERS" });
        }
        return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) });
    }
    let mut config = RunConfig::read(a.config.as_ref().unwrap())?;
    if let Some(n) = a.repeats {
        config.repeats = n;
    }
    if let Some(r) = a.report {
        config.output.report = Some(std::path::absolute(r)?);
    }
    config.validate()?;
    let report_path = config
        .output
        .report
        .clone()
        .ok_or_else(|| Error::Config("no report path: pass --report or set output.report".into()))?;

    let mut text = String::new();
    let mut scores = Vec::new();
    for r in 0..config.repeats {
        let out = run_repeat(&config, r)?;
        let f = &out.report.final_metrics;
        let (name, score) = match (f.test_accuracy, f.test_mae) {
            (Some(acc), _) => ("test accuracy", acc),
            (None, Some(mae)) => ("test MAE", mae),
            _ => ("best validation metric", f.best_val_metric),
        };
        eprintln!(
            "run {r} seed {}: {name} {score:.6} (best epoch {}, {:.1}s)",
            f.seed, f.best_epoch, f.wall_seconds
        );
        scores.push((name, score));
        text.push_str(&out.report.to_jsonl()?);
        if let (Some(path), Some(ck)) = (&config.output.checkpoint, &out.checkpoint) {
            let path = if config.repeats > 1 { numbered(path, r) } else { path.clone() };
            write_file(&path, &ck.to_bytes())?;
        }
    }
    write_file(&report_path, text.as_bytes())?;
    let values: Vec<f64> = scores.iter().map(|s| s.1).collect();
    let (mean, std) = mean_std(&values);
    println!("{}: {mean:.6} ± {std:.6} over {} run(s)", scores[0].0, values.len());
    Ok(ExitCode::SUCCESS)
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let ck = Checkpoint::read(&a.checkpoint).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read {}: {io}", a.checkpoint.display())),
        other => other,
    })?;
    let (model, featurizer, scaler) = load_regression(&ck)?;
    let file = read_molecule_file(&a.input)?;
    let graphs = file
        .molecules
        .iter()
        .map(|m| build_graph(m, &featurizer))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<Vec<f64>> = file.molecules.iter().map(|m| m.targets.clone()).collect();
    if graphs.is_empty() {
        return Err(Error::Config("the molecule file is empty".into()));
    }
    let (mae, rmse) = evaluate(&model, &scaler, &graphs, &targets)?;
    println!("{}", serde_json::json!({"molecules": graphs.len(), "mae": mae, "rmse": rmse}));
    Ok(ExitCode::SUCCESS)
}

fn synth(a: SynthArgs) -> Result<ExitCode> {
    let file = MoleculeFile {
        header: Some(pathmp::io::DatasetHeader {
            elements: a.task.elements(),
            targets: vec![],
            units: Some(a.task.units().to_string()),
        }),
        molecules: a.task.generate(a.n, a.seed),
    };
    write_file(&a.out, file.to_jsonl().as_bytes())?;
    Ok(ExitCode::SUCCESS)
}
