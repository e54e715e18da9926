//! Synthetic datasets whose targets are functions of path features.
//!
//! * `alcohol-count`: heavy-atom molecules of fixed size with 0–3 hydroxyl
//!   groups among look-alike distractors (carbonyl oxygens, ethers, amines,
//!   hydroxylamines); the target is the number of alcohol groups.
//! * `dihedral-sum`: small trees embedded with fixed bond lengths and
//!   tetrahedral angles but random torsions; the target is the sum of
//!   `cos φ` over every torsion quadruple, each counted once.
//! * a planted-partition citation graph with bag-of-words features.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chem::detect_alcohol;
use crate::error::{Error, Result};
use crate::geometry::dihedral;
use crate::graph::{build_graph, Atom, Bond, BondOrder, FeaturizerConfig, MoleculeRecord, Point};
use crate::paths::enumerate_paths;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthTask {
    AlcoholCount,
    DihedralSum,
}

impl std::str::FromStr for SynthTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alcohol-count" => Ok(SynthTask::AlcoholCount),
            "dihedral-sum" => Ok(SynthTask::DihedralSum),
            other => Err(Error::config(format!(
                "unknown task `{other}` (expected alcohol-count or dihedral-sum)"
            ))),
        }
    }
}

impl SynthTask {
    /// Element vocabulary of the generated molecules.
    pub fn elements(self) -> Vec<String> {
        let e: &[&str] = match self {
            SynthTask::AlcoholCount => &["C", "N", "O"],
            SynthTask::DihedralSum => &["C"],
        };
        e.iter().map(|s| s.to_string()).collect()
    }

    pub fn units(self) -> &'static str {
        match self {
            SynthTask::AlcoholCount => "count",
            SynthTask::DihedralSum => "dimensionless",
        }
    }

    pub fn generate(self, n: usize, seed: u64) -> Vec<MoleculeRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| match self {
                SynthTask::AlcoholCount => alcohol_molecule(&mut rng, i),
                SynthTask::DihedralSum => torsion_tree(&mut rng, i),
            })
            .collect()
    }
}

/// Heavy atoms per alcohol-count molecule.
pub const ALCOHOL_ATOMS: usize = 18;

struct Builder {
    elements: Vec<&'static str>,
    bonds: Vec<(usize, usize, BondOrder)>,
    degree: Vec<usize>,
}

impl Builder {
    fn atom(&mut self, el: &'static str) -> usize {
        self.elements.push(el);
        self.degree.push(0);
        self.elements.len() - 1
    }

    fn bond(&mut self, i: usize, j: usize, order: BondOrder) {
        self.bonds.push((i, j, order));
        self.degree[i] += 1;
        self.degree[j] += 1;
    }

    fn carbon_with_room(&self, rng: &mut ChaCha8Rng, max_degree: usize, carbons: usize) -> Option<usize> {
        let options: Vec<usize> = (0..carbons).filter(|&c| self.degree[c] < max_degree).collect();
        options.choose(rng).copied()
    }
}

#[derive(Clone, Copy)]
enum Group {
    Alcohol,
    Carbonyl,
    Ether,
    Amine,
    Hydroxylamine,
}

impl Group {
    fn size(self) -> usize {
        match self {
            Group::Alcohol | Group::Carbonyl | Group::Amine => 1,
            Group::Ether | Group::Hydroxylamine => 2,
        }
    }
}

fn alcohol_molecule(rng: &mut ChaCha8Rng, index: usize) -> MoleculeRecord {
    // crowded skeletons occasionally leave no room for a group; redraw
    loop {
        if let Some(m) = try_alcohol_molecule(rng, index) {
            return m;
        }
    }
}

fn try_alcohol_molecule(rng: &mut ChaCha8Rng, index: usize) -> Option<MoleculeRecord> {
    let alcohols = rng.gen_range(0..=5);
    let mut groups = vec![Group::Alcohol; alcohols];
    let distractors = rng.gen_range(2..=6);
    for _ in 0..distractors {
        groups.push(*[Group::Carbonyl, Group::Ether, Group::Amine, Group::Hydroxylamine].choose(rng).unwrap());
    }
    let carbons = ALCOHOL_ATOMS - groups.iter().map(|g| g.size()).sum::<usize>();
    let mut b = Builder {
        elements: Vec::new(),
        bonds: Vec::new(),
        degree: Vec::new(),
    };
    b.atom("C");
    for i in 1..carbons {
        let parent = b.carbon_with_room(rng, 3, i).unwrap_or(0);
        let c = b.atom("C");
        b.bond(parent, c, BondOrder::Single);
    }
    // sometimes close a 5- to 7-membered ring
    if rng.gen_bool(0.5) {
        let topo = crate::graph::Graph::from_edges(
            carbons,
            &b.bonds.iter().map(|&(i, j, _)| (i, j)).collect::<Vec<_>>(),
        )
        .unwrap();
        let mut candidates = Vec::new();
        for v in 0..carbons {
            for p in enumerate_paths(&topo, v, 6).unwrap() {
                let (s, t) = (p.root(), p.last());
                if p.len() >= 4 && s < t && b.degree[s] < 3 && b.degree[t] < 3 && !topo.has_edge(s, t) {
                    candidates.push((s, t));
                }
            }
        }
        if let Some(&(s, t)) = candidates.choose(rng) {
            b.bond(s, t, BondOrder::Single);
        }
    }
    groups.shuffle(rng);
    for g in groups {
        let max_degree = if matches!(g, Group::Carbonyl) { 3 } else { 4 };
        let c = b.carbon_with_room(rng, max_degree, carbons)?;
        match g {
            Group::Alcohol => {
                let o = b.atom("O");
                b.bond(c, o, BondOrder::Single);
            }
            Group::Carbonyl => {
                let o = b.atom("O");
                b.bond(c, o, BondOrder::Double);
            }
            Group::Ether => {
                let o = b.atom("O");
                let m = b.atom("C");
                b.bond(c, o, BondOrder::Single);
                b.bond(o, m, BondOrder::Single);
            }
            Group::Amine => {
                let n = b.atom("N");
                b.bond(c, n, BondOrder::Single);
            }
            Group::Hydroxylamine => {
                let n = b.atom("N");
                let o = b.atom("O");
                b.bond(c, n, BondOrder::Single);
                b.bond(n, o, BondOrder::Single);
            }
        }
    }
    let mut record = MoleculeRecord {
        id: format!("alcohol-{index}"),
        atoms: b
            .elements
            .iter()
            .map(|e| Atom {
                element: e.to_string(),
                coords: None,
            })
            .collect(),
        bonds: b.bonds.iter().map(|&(i, j, order)| Bond { i, j, order }).collect(),
        targets: vec![],
    };
    let graph = build_graph(&record, &FeaturizerConfig::new(SynthTask::AlcoholCount.elements()))
        .expect("generator emits valid molecules");
    record.targets = vec![detect_alcohol(&graph).len() as f64];
    Some(record)
}

pub const BOND_LENGTH: f64 = 1.5;

fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: &Point, b: &Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn unit(a: Point) -> Point {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Places `d` bonded to `c` so that `b-c-d` has angle `theta` and
/// `a-b-c-d` has torsion `phi`.
fn place(a: &Point, b: &Point, c: &Point, r: f64, theta: f64, phi: f64) -> Point {
    let bc = unit(sub(c, b));
    let n = unit(cross(&sub(b, a), &bc));
    let m = cross(&n, &bc);
    let d = [-r * theta.cos(), r * theta.sin() * phi.cos(), r * theta.sin() * phi.sin()];
    [
        c[0] + d[0] * bc[0] + d[1] * m[0] + d[2] * n[0],
        c[1] + d[0] * bc[1] + d[1] * m[1] + d[2] * n[1],
        c[2] + d[0] * bc[2] + d[1] * m[2] + d[2] * n[2],
    ]
}

fn torsion_tree(rng: &mut ChaCha8Rng, index: usize) -> MoleculeRecord {
    let n = rng.gen_range(6..=7);
    let mut parent = vec![usize::MAX; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for v in 1..n {
        let options: Vec<usize> = (0..v).filter(|&u| children[u].len() + usize::from(u != 0) < 3).collect();
        let p = *options.choose(rng).unwrap();
        parent[v] = p;
        children[p].push(v);
    }
    let theta = (-1.0f64 / 3.0).acos();
    // two virtual ancestors above the root anchor the first placements
    let virt_b: Point = [-BOND_LENGTH, 0.0, 0.0];
    let virt_a: Point = place(&[0.0, 1.0, 1.0], &[0.0, 0.0, 0.0], &virt_b, BOND_LENGTH, theta, 1.0);
    let mut coords: Vec<Point> = vec![[0.0; 3]; n];
    let anc = |v: usize, coords: &[Point]| -> (Point, Point) {
        let p = parent[v];
        if p == usize::MAX {
            (virt_a, virt_b)
        } else if parent[p] == usize::MAX {
            (virt_b, coords[p])
        } else {
            (coords[parent[p]], coords[p])
        }
    };
    for v in 0..n {
        let start = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let (a, b) = anc(v, &coords);
        for (j, &c) in children[v].iter().enumerate() {
            let phi = start + j as f64 * 2.0 * std::f64::consts::PI / 3.0;
            coords[c] = place(&a, &b, &coords[v], BOND_LENGTH, theta, phi);
        }
    }
    let bonds: Vec<(usize, usize)> = (1..n).map(|v| (parent[v], v)).collect();
    let topo = crate::graph::Graph::from_edges(n, &bonds).unwrap();
    let mut target = 0.0;
    for v in 0..n {
        for p in enumerate_paths(&topo, v, 3).unwrap() {
            let q = p.nodes();
            if q.len() == 4 && q[0] < q[3] {
                target += dihedral(&coords, q[0], q[1], q[2], q[3]).unwrap().cos();
            }
        }
    }
    MoleculeRecord {
        id: format!("torsion-{index}"),
        atoms: coords
            .iter()
            .map(|&c| Atom {
                element: "C".into(),
                coords: Some(c),
            })
            .collect(),
        bonds: bonds
            .iter()
            .map(|&(i, j)| Bond {
                i,
                j,
                order: BondOrder::Single,
            })
            .collect(),
        targets: vec![target],
    }
}

/// Parameters of the planted-partition citation generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedCitation {
    pub nodes: usize,
    pub classes: usize,
    pub features: usize,
    /// Expected number of citation links per node.
    pub mean_degree: f64,
    /// Probability that a link joins two nodes of the same class.
    pub homophily: f64,
    /// Words per document.
    pub words: usize,
    /// Probability that a word is drawn from the document's class topic.
    pub topic_rate: f64,
}

impl Default for PlantedCitation {
    /// Sizes of the classic machine-learning citation benchmark.
    fn default() -> Self {
        PlantedCitation {
            nodes: 2708,
            classes: 7,
            features: 1433,
            mean_degree: 3.9,
            homophily: 0.8,
            words: 18,
            topic_rate: 0.2,
        }
    }
}

/// Raw planted citation data: binary features, labels and undirected links.
#[derive(Clone, Debug)]
pub struct PlantedGraph {
    pub features: Vec<Vec<u8>>,
    pub labels: Vec<usize>,
    pub links: Vec<(usize, usize)>,
}

impl PlantedCitation {
    pub fn generate(&self, seed: u64) -> PlantedGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..self.nodes).map(|_| rng.gen_range(0..self.classes)).collect();
        let topic = self.features / self.classes;
        let features = labels
            .iter()
            .map(|&c| {
                let mut row = vec![0u8; self.features];
                for _ in 0..self.words {
                    let w = if rng.gen_bool(self.topic_rate) {
                        c * topic + rng.gen_range(0..topic)
                    } else {
                        rng.gen_range(0..self.features)
                    };
                    row[w] = 1;
                }
                row
            })
            .collect();
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.classes];
        for (v, &c) in labels.iter().enumerate() {
            by_class[c].push(v);
        }
        let target = (self.mean_degree * self.nodes as f64 / 2.0).round() as usize;
        let mut seen = std::collections::BTreeSet::new();
        while seen.len() < target {
            let u = rng.gen_range(0..self.nodes);
            let v = if rng.gen_bool(self.homophily) {
                *by_class[labels[u]].choose(&mut rng).unwrap()
            } else {
                rng.gen_range(0..self.nodes)
            };
            if u != v {
                seen.insert((u.min(v), u.max(v)));
            }
        }
        PlantedGraph {
            features,
            labels,
            links: seen.into_iter().collect(),
        }
    }
}
