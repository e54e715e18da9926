//! Executes a [`RunConfig`].

use crate::citation::{planetoid_split, train_node_classification};
use crate::error::{Error, Result};
use crate::graph::{build_graph, Graph};
use crate::io::{read_citation_files, read_molecule_file, MoleculeFile, RunConfig, TaskKind};
use crate::tensor::Checkpoint;
use crate::train::{split_dataset, train_regression, TrainReport};

/// One finished run: its report and, for regression, the trained model.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: TrainReport,
    pub checkpoint: Option<Checkpoint>,
}

pub fn load_molecules(config: &RunConfig) -> Result<MoleculeFile> {
    match (&config.data.path, &config.data.synth) {
        (Some(p), _) => read_molecule_file(p),
        (None, Some(s)) => Ok(MoleculeFile {
            header: Some(crate::io::DatasetHeader {
                elements: s.task.elements(),
                targets: vec![],
                units: Some(s.task.units().to_string()),
            }),
            molecules: s.task.generate(s.n, s.seed),
        }),
        (None, None) => Err(Error::config("no molecule source configured")),
    }
}

/// Runs repeat `r` of `config` (seed `config.seed + r`).
pub fn run_repeat(config: &RunConfig, r: usize) -> Result<RunOutput> {
    run_single(&config.for_repeat(r))
}

/// Runs a configuration with `repeats = 1` exactly as given.
pub fn run_single(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let snapshot = serde_json::to_value(config).expect("configuration serialises");
    match config.task {
        TaskKind::Regression => {
            let file = load_molecules(config)?;
            if file.molecules.is_empty() {
                return Err(Error::config("the molecule file is empty"));
            }
            let featurizer = config.featurizer(file.vocabulary(config.data.explicit_hydrogens));
            let graphs = file
                .molecules
                .iter()
                .map(|m| build_graph(m, &featurizer))
                .collect::<Result<Vec<Graph>>>()?;
            let targets: Vec<Vec<f64>> = file.molecules.iter().map(|m| m.targets.clone()).collect();
            if targets.iter().any(|t| t.is_empty() || t.len() != targets[0].len()) {
                return Err(Error::config("every molecule needs the same, non-zero number of targets"));
            }
            let split = split_dataset(graphs.len(), config.train.split, config.seed)?;
            let run = train_regression(&graphs, &targets, &config.model, &config.train, &split)?;
            let mut report = run.report.clone();
            if file.units() == Some("%") {
                report.final_metrics.test_percent = report.final_metrics.test_mae;
            }
            report.final_metrics.config = snapshot;
            Ok(RunOutput {
                report,
                checkpoint: Some(run.checkpoint(&featurizer)),
            })
        }
        TaskKind::NodeClassification => {
            let (content, cites) = (config.data.content.as_ref(), config.data.cites.as_ref());
            let files = read_citation_files(content.unwrap(), cites.unwrap())?;
            let g = &config.gcn;
            let split = planetoid_split(&files.data.labels, g.train_per_class, g.val_size, g.test_size, config.seed);
            let run = train_node_classification(&files.data, g, &split)?;
            let mut report = run.report;
            report.final_metrics.config = snapshot;
            Ok(RunOutput {
                report,
                checkpoint: None,
            })
        }
    }
}

/// Re-executes the run a report was produced by.
pub fn replay(report: &TrainReport) -> Result<TrainReport> {
    let config: RunConfig = serde_json::from_value(report.final_metrics.config.clone())
        .map_err(|e| Error::config(format!("report carries no usable configuration: {e}")))?;
    Ok(run_single(&config)?.report)
}

/// Equality of everything but wall-clock time.
pub fn same_outcome(a: &TrainReport, b: &TrainReport) -> bool {
    let strip = |r: &TrainReport| {
        let mut r = r.clone();
        r.final_metrics.wall_seconds = 0.0;
        r
    };
    strip(a) == strip(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        RunConfig::from_toml(
            "task = \"regression\"\nseed = 3\n[data]\nsynth = { task = \"alcohol-count\", n = 30 }\n\
             [model]\nhidden_dim = 8\nsteps = 1\nmax_path_len = 2\nmode = \"substructure\"\n\
             [train]\nmax_epochs = 4\n",
        )
        .unwrap()
    }

    #[test]
    fn replay_reproduces_the_run() {
        let out = run_repeat(&small(), 1).unwrap();
        assert_eq!(out.report.final_metrics.seed, 4);
        let again = replay(&out.report).unwrap();
        assert!(same_outcome(&out.report, &again));
        let text = out.report.to_jsonl().unwrap();
        let parsed = TrainReport::parse_jsonl(&text).unwrap();
        assert_eq!(parsed, vec![out.report.clone()]);
        assert!(out.checkpoint.is_some());
    }

    #[test]
    fn missing_dataset_is_a_validation_error() {
        let c = RunConfig::from_toml("task = \"regression\"\n[data]\npath = \"/nonexistent/m.jsonl\"\n").unwrap();
        let e = run_single(&c).unwrap_err();
        assert!(e.is_validation(), "{e}");
    }
}
