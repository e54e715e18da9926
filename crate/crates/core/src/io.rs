//! File formats: molecule JSON lines, citation content/cites files and
//! TOML run configurations.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::citation::{CitationGraph, GcnConfig};
use crate::error::{Error, Result};
use crate::graph::{Atom, Bond, BondOrder, FeaturizerConfig, MoleculeRecord, Point};
use crate::model::ModelConfig;
use crate::synth::SynthTask;
use crate::tensor::Tensor;
use crate::train::TrainConfig;

/// Optional first line of a molecule file: `{"header": {...}}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    /// Element vocabulary, in one-hot order.
    pub elements: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub targets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    header: DatasetHeader,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MoleculeLine {
    id: String,
    elements: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coords: Option<Vec<Point>>,
    bonds: Vec<(usize, usize, BondOrder)>,
    #[serde(default)]
    targets: Vec<f64>,
}

impl MoleculeLine {
    fn into_record(self) -> std::result::Result<MoleculeRecord, String> {
        if let Some(c) = &self.coords {
            if c.len() != self.elements.len() {
                return Err(format!(
                    "field `coords`: {} positions for {} atoms",
                    c.len(),
                    self.elements.len()
                ));
            }
        }
        let atoms = self
            .elements
            .into_iter()
            .enumerate()
            .map(|(k, element)| Atom {
                element,
                coords: self.coords.as_ref().map(|c| c[k]),
            })
            .collect();
        let record = MoleculeRecord {
            id: self.id,
            atoms,
            bonds: self.bonds.into_iter().map(|(i, j, order)| Bond { i, j, order }).collect(),
            targets: self.targets,
        };
        record.validate().map_err(|e| e.to_string())?;
        Ok(record)
    }

    fn from_record(r: &MoleculeRecord) -> Self {
        MoleculeLine {
            id: r.id.clone(),
            elements: r.atoms.iter().map(|a| a.element.clone()).collect(),
            coords: r.has_coords().then(|| r.atoms.iter().map(|a| a.coords.unwrap()).collect()),
            bonds: r.bonds.iter().map(|b| (b.i, b.j, b.order)).collect(),
            targets: r.targets.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MoleculeFile {
    pub header: Option<DatasetHeader>,
    pub molecules: Vec<MoleculeRecord>,
}

impl MoleculeFile {
    /// The header's element list, or else the sorted distinct elements of
    /// the file (hydrogen only when it is kept explicitly).
    pub fn vocabulary(&self, explicit_hydrogens: bool) -> Vec<String> {
        if let Some(h) = &self.header {
            return h.elements.clone();
        }
        let set: BTreeSet<&str> = self
            .molecules
            .iter()
            .flat_map(|m| m.atoms.iter().map(|a| a.element.as_str()))
            .filter(|&e| explicit_hydrogens || e != "H")
            .collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn units(&self) -> Option<&str> {
        self.header.as_ref().and_then(|h| h.units.as_deref())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if let Some(h) = &self.header {
            out.push_str(&serde_json::to_string(&HeaderLine { header: h.clone() }).unwrap());
            out.push('\n');
        }
        for m in &self.molecules {
            out.push_str(&serde_json::to_string(&MoleculeLine::from_record(m)).unwrap());
            out.push('\n');
        }
        out
    }
}

/// Parses a molecule file. Blank lines are skipped; a header is accepted
/// only as the first non-blank line.
pub fn parse_molecules(text: &str) -> Result<MoleculeFile> {
    let mut file = MoleculeFile::default();
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if first && line.trim_start().starts_with("{\"header\"") {
            let h: HeaderLine = serde_json::from_str(line).map_err(|e| Error::parse(lineno, format!("header: {e}")))?;
            file.header = Some(h.header);
            first = false;
            continue;
        }
        first = false;
        let m: MoleculeLine = serde_json::from_str(line).map_err(|e| Error::parse(lineno, e.to_string()))?;
        let id = m.id.clone();
        let record = m.into_record().map_err(|e| Error::parse(lineno, format!("molecule `{id}`: {e}")))?;
        file.molecules.push(record);
    }
    Ok(file)
}

pub fn read_molecule_file(path: impl AsRef<Path>) -> Result<MoleculeFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| missing(path, e))?;
    parse_molecules(&text)
}

// A missing or unreadable input is the caller's mistake, not a runtime fault.
fn missing(path: &Path, e: std::io::Error) -> Error {
    Error::config(format!("cannot read {}: {e}", path.display()))
}

/// A citation data set with its original identifiers.
#[derive(Clone, Debug)]
pub struct CitationFiles {
    pub data: CitationGraph,
    /// Original id of every node, in index order.
    pub ids: Vec<String>,
    /// Class names, sorted; labels index into this list.
    pub class_names: Vec<String>,
    /// Cite lines naming an id absent from the content file.
    pub unknown_cites: usize,
    pub duplicate_cites: usize,
    pub self_cites: usize,
}

/// Parses the content file (`id f1 .. fF label` per line) and the cites
/// file (`cited citing` per line). Nodes are numbered by first appearance
/// in the content file; links are undirected.
pub fn parse_citation(content: &str, cites: &str) -> Result<CitationFiles> {
    let mut ids = Vec::new();
    let mut index = HashMap::new();
    let mut features = Vec::new();
    let mut label_names = Vec::new();
    let mut width = None;
    for (i, line) in content.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 2 {
            return Err(Error::parse(lineno, "expected an id, features and a label"));
        }
        let f = fields.len() - 2;
        if *width.get_or_insert(f) != f {
            return Err(Error::parse(lineno, format!("{f} features, earlier lines have {}", width.unwrap())));
        }
        let id = fields[0];
        if index.insert(id.to_string(), ids.len()).is_some() {
            return Err(Error::parse(lineno, format!("duplicate paper id `{id}`")));
        }
        ids.push(id.to_string());
        for (k, tok) in fields[1..=f].iter().enumerate() {
            let v: f64 = tok
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::parse(lineno, format!("feature {k}: `{tok}` is not a number")))?;
            features.push(v);
        }
        label_names.push(fields[f + 1].to_string());
    }
    let class_names: Vec<String> = label_names.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let labels = label_names
        .iter()
        .map(|l| class_names.binary_search(l).unwrap())
        .collect();

    let mut links = BTreeSet::new();
    let (mut unknown, mut duplicate, mut selfs) = (0, 0, 0);
    for (i, line) in cites.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 2 {
            return Err(Error::parse(i + 1, format!("expected two ids, found {}", fields.len())));
        }
        let (Some(&a), Some(&b)) = (index.get(fields[0]), index.get(fields[1])) else {
            unknown += 1;
            continue;
        };
        if a == b {
            selfs += 1;
        } else if !links.insert((a.min(b), a.max(b))) {
            duplicate += 1;
        }
    }
    let n = ids.len();
    let links: Vec<(usize, usize)> = links.into_iter().collect();
    let features = Tensor::from_vec(n, width.unwrap_or(0), features)?;
    Ok(CitationFiles {
        data: CitationGraph::new(n, &links, features, labels)?,
        ids,
        class_names,
        unknown_cites: unknown,
        duplicate_cites: duplicate,
        self_cites: selfs,
    })
}

pub fn read_citation_files(content: impl AsRef<Path>, cites: impl AsRef<Path>) -> Result<CitationFiles> {
    let (content, cites) = (content.as_ref(), cites.as_ref());
    let c = std::fs::read_to_string(content).map_err(|e| missing(content, e))?;
    let l = std::fs::read_to_string(cites).map_err(|e| missing(cites, e))?;
    parse_citation(&c, &l)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Regression,
    NodeClassification,
}

/// Generated in place of a data file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSource {
    pub task: SynthTask,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Molecule file, for regression.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSource>,
    /// Citation content and cites files, for node classification.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub content: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cites: Option<PathBuf>,
    pub explicit_hydrogens: bool,
    pub bond_lengths: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ring_flags: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

/// Everything a `train` run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub repeats: usize,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub gcn: GcnConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn one() -> usize {
    1
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a TOML file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| missing(path, e))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = std::fs::canonicalize(base).unwrap_or_else(|_| base.to_path_buf());
        config.resolve_paths(&base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        fix(&mut self.data.path);
        fix(&mut self.data.content);
        fix(&mut self.data.cites);
        fix(&mut self.output.report);
        fix(&mut self.output.checkpoint);
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::config("repeats must be at least 1"));
        }
        let d = &self.data;
        match self.task {
            TaskKind::Regression => {
                if d.path.is_some() == d.synth.is_some() {
                    return Err(Error::config("regression needs exactly one of data.path and data.synth"));
                }
                if d.content.is_some() || d.cites.is_some() {
                    return Err(Error::config("data.content and data.cites belong to node classification"));
                }
                self.model.validate()?;
                self.train.validate()
            }
            TaskKind::NodeClassification => {
                if d.content.is_none() || d.cites.is_none() {
                    return Err(Error::config("node classification needs data.content and data.cites"));
                }
                if d.path.is_some() || d.synth.is_some() {
                    return Err(Error::config("data.path and data.synth belong to regression"));
                }
                self.gcn.validate()
            }
        }
    }

    /// The single-run configuration for repeat `r`, seeds made explicit.
    pub fn for_repeat(&self, r: usize) -> RunConfig {
        let mut c = self.clone();
        c.seed = self.seed + r as u64;
        c.repeats = 1;
        c.model.seed = c.seed;
        c.gcn.seed = c.seed;
        c
    }

    pub fn featurizer(&self, elements: Vec<String>) -> FeaturizerConfig {
        let mut f = FeaturizerConfig::new(elements);
        f.explicit_hydrogens = self.data.explicit_hydrogens;
        f.bond_lengths = self.data.bond_lengths;
        if let Some(r) = self.data.ring_flags {
            f.ring_flags = r;
        }
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = r#"{"header": {"elements": ["C", "N", "O"], "targets": ["y"]}}
{"id": "ethanol", "elements": ["C", "C", "O"], "bonds": [[0, 1, "single"], [1, 2, "single"]], "targets": [1.0]}

{"id": "acetonitrile", "elements": ["C", "C", "N"], "bonds": [[0, 1, "single"], [1, 2, "triple"]], "targets": [2.5]}
{"id": "cyclopropane", "elements": ["C", "C", "C"], "coords": [[0,0,0],[1.5,0,0],[0.75,1.3,0]], "bonds": [[0, 1, "single"], [1, 2, "single"], [2, 0, "single"]], "targets": [-1]}
"#;

    #[test]
    fn empty_file() {
        assert_eq!(parse_molecules("").unwrap(), MoleculeFile::default());
        assert_eq!(parse_molecules("\n  \n").unwrap().molecules.len(), 0);
    }

    #[test]
    fn three_molecule_fixture() {
        let f = parse_molecules(THREE).unwrap();
        assert_eq!(f.vocabulary(false), ["C", "N", "O"]);
        let bonds: Vec<usize> = f.molecules.iter().map(|m| m.bonds.len()).collect();
        assert_eq!(bonds, [2, 2, 3]);
        assert_eq!(f.molecules[1].bonds[1].order, BondOrder::Triple);
        assert!(f.molecules[2].has_coords() && !f.molecules[0].has_coords());
        let again = parse_molecules(&f.to_jsonl()).unwrap();
        assert_eq!(again, f);
    }

    #[test]
    fn vocabulary_without_header() {
        let text = r#"{"id": "w", "elements": ["O", "H", "H"], "bonds": [[0, 1, "single"], [0, 2, "single"]]}
{"id": "m", "elements": ["C", "Cl"], "bonds": [[0, 1, "single"]]}"#;
        let f = parse_molecules(text).unwrap();
        assert_eq!(f.vocabulary(false), ["C", "Cl", "O"]);
        assert_eq!(f.vocabulary(true), ["C", "Cl", "H", "O"]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("{\"id\": \"a\", \"elements\": [\"C\"], \"bonds\": []}\n{\"id\": \"b\"", 2),
            ("{\"id\": \"a\", \"elements\": [\"C\"], \"bonds\": [[0, 1, \"single\"]]}", 1),
            ("\n\n{\"id\": \"a\", \"elements\": [\"C\"], \"bonds\": [], \"charge\": 1}", 3),
            ("{\"id\": \"a\", \"elements\": [\"C\", \"C\"], \"bonds\": [[0, 1, \"quadruple\"]]}", 1),
            ("{\"id\": \"a\", \"elements\": [\"C\"], \"coords\": [], \"bonds\": []}", 1),
            ("{\"id\": \"a\", \"elements\": [], \"bonds\": []}\n{\"header\": {\"elements\": []}}", 2),
        ];
        for (text, line) in cases {
            match parse_molecules(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    const CONTENT: &str = "p31 1 0 1 Theory\np7 0 1 0 Neural\np2 1 1 0 Theory\np9 0 0 1 Rules\n";

    #[test]
    fn tiny_citation_fixture() {
        let cites = "p31 p7\np7 p31\np2 p7\np9 p9\np9 ghost\np2 p9\n\np31 p7\n";
        let f = parse_citation(CONTENT, cites).unwrap();
        assert_eq!(f.ids, ["p31", "p7", "p2", "p9"]);
        assert_eq!(f.class_names, ["Neural", "Rules", "Theory"]);
        assert_eq!(f.data.labels, [2, 0, 2, 1]);
        assert_eq!(f.data.features.row_slice(2), &[1.0, 1.0, 0.0]);
        let g = &f.data.graph;
        let adjacency: Vec<Vec<usize>> = (0..4).map(|v| g.neighbors(v).to_vec()).collect();
        assert_eq!(adjacency, [vec![1], vec![0, 2], vec![1, 3], vec![2]]);
        assert_eq!((f.unknown_cites, f.duplicate_cites, f.self_cites), (1, 2, 1));
    }

    #[test]
    fn malformed_citation_lines() {
        assert!(matches!(parse_citation("a 1 0 X\nb 1 X\n", ""), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_citation("a 1 X\na 0 Y\n", ""), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_citation("a 1 X\n", "a\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_citation("a z X\n", ""), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn run_config_defaults_and_rejections() {
        let c = RunConfig::from_toml("task = \"regression\"\n[data]\npath = \"x.jsonl\"\n").unwrap();
        assert_eq!(c.repeats, 1);
        assert_eq!(c.model, ModelConfig::default());
        assert!(RunConfig::from_toml("task = \"regression\"\nextra = 1\n[data]\npath = \"x\"\n").is_err());
        assert!(RunConfig::from_toml("task = \"regression\"\n[data]\n").is_err());
        assert!(RunConfig::from_toml("task = \"node-classification\"\n[data]\npath = \"x\"\n").is_err());
        assert!(RunConfig::from_toml("task = \"regression\"\n[data]\npath = \"x\"\n[model]\nhidden = 3\n").is_err());
        assert!(RunConfig::from_toml("task = \"regression\"\n[data]\npath = \"x\"\n[model]\nmax_path_len = 9\n").is_err());
    }

    #[test]
    fn relative_paths_follow_the_config() {
        let mut c = RunConfig::from_toml(
            "task = \"node-classification\"\n[data]\ncontent = \"c\"\ncites = \"/abs/l\"\n[output]\nreport = \"out/r.jsonl\"\n",
        )
        .unwrap();
        c.resolve_paths(Path::new("/base"));
        assert_eq!(c.data.content.as_deref(), Some(Path::new("/base/c")));
        assert_eq!(c.data.cites.as_deref(), Some(Path::new("/abs/l")));
        assert_eq!(c.output.report.as_deref(), Some(Path::new("/base/out/r.jsonl")));
    }

    #[test]
    fn snapshot_round_trips_through_json() {
        let c = RunConfig::from_toml(
            "task = \"regression\"\nseed = 4\nrepeats = 3\n[data]\nsynth = { task = \"alcohol-count\", n = 20 }\n",
        )
        .unwrap();
        let r = c.for_repeat(2);
        assert_eq!((r.seed, r.model.seed, r.repeats), (6, 6, 1));
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(serde_json::from_value::<RunConfig>(json).unwrap(), r);
    }
}
