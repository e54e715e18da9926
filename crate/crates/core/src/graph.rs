//! Molecule records and the undirected feature graph built from them.
//!
//! A [`Graph`] carries node features `x_v`, symmetric edge features `e_vw`,
//! optional 3D coordinates and optional per-node class labels. It is
//! immutable once built and can be shared freely between threads.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::chem::{self, RING_FLAG_WIDTH};
use crate::error::{Error, Result};

pub type Point = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        match self {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BondOrder::Single => "single",
            BondOrder::Double => "double",
            BondOrder::Triple => "triple",
            BondOrder::Aromatic => "aromatic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "single" => Some(BondOrder::Single),
            "double" => Some(BondOrder::Double),
            "triple" => Some(BondOrder::Triple),
            "aromatic" => Some(BondOrder::Aromatic),
            _ => None,
        }
    }

    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self.index()] = 1.0;
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub element: String,
    pub coords: Option<Point>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub order: BondOrder,
}

/// A parsed molecule: atoms, bonds and regression targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoleculeRecord {
    pub id: String,
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    pub targets: Vec<f64>,
}

impl MoleculeRecord {
    pub fn has_coords(&self) -> bool {
        !self.atoms.is_empty() && self.atoms.iter().all(|a| a.coords.is_some())
    }

    /// Checks bond endpoints, duplicates and coordinate completeness.
    pub fn validate(&self) -> Result<()> {
        let n = self.atoms.len();
        let mut seen = BTreeSet::new();
        for b in &self.bonds {
            if b.i >= n || b.j >= n {
                return Err(Error::DanglingBond { i: b.i, j: b.j, n });
            }
            if b.i == b.j {
                return Err(Error::SelfBond(b.i));
            }
            let key = (b.i.min(b.j), b.i.max(b.j));
            if !seen.insert(key) {
                return Err(Error::DuplicateBond(key.0, key.1));
            }
        }
        let with_coords = self.atoms.iter().filter(|a| a.coords.is_some()).count();
        if with_coords != 0 && with_coords != n {
            return Err(Error::InvalidCoords(format!(
                "{with_coords} of {n} atoms have coordinates"
            )));
        }
        for (idx, a) in self.atoms.iter().enumerate() {
            if let Some(c) = a.coords {
                if c.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidCoords(format!("atom {idx} has non-finite coordinates")));
                }
            }
        }
        if self.targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::config(format!("molecule `{}` has a non-finite target", self.id)));
        }
        Ok(())
    }
}

/// Controls how a [`MoleculeRecord`] becomes a [`Graph`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturizerConfig {
    /// Element vocabulary for the atom one-hot, taken from the dataset header.
    pub elements: Vec<String>,
    #[serde(default)]
    pub explicit_hydrogens: bool,
    /// Append the bond length (Å) to every edge feature vector.
    #[serde(default)]
    pub bond_lengths: bool,
    /// Append ring-size membership flags to every atom feature vector.
    #[serde(default = "default_true")]
    pub ring_flags: bool,
}

fn default_true() -> bool {
    true
}

impl FeaturizerConfig {
    pub fn new(elements: Vec<String>) -> Self {
        FeaturizerConfig {
            elements,
            explicit_hydrogens: false,
            bond_lengths: false,
            ring_flags: true,
        }
    }

    pub fn node_dim(&self) -> usize {
        self.elements.len() + 1 + if self.ring_flags { RING_FLAG_WIDTH } else { 0 }
    }

    pub fn edge_dim(&self) -> usize {
        BondOrder::COUNT + usize::from(self.bond_lengths)
    }
}

/// One undirected edge, stored once with `u < v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub order: Option<BondOrder>,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GraphData {
    n: usize,
    node_dim: usize,
    edge_dim: usize,
    node_features: Vec<f64>,
    edges: Vec<Edge>,
    elements: Option<Vec<String>>,
    explicit_hydrogens: bool,
    coords: Option<Vec<Point>>,
    labels: Option<Vec<usize>>,
}

/// Undirected graph with node features, symmetric edge features and
/// optional coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "GraphData", try_from = "GraphData")]
pub struct Graph {
    data: GraphData,
    adjacency: Vec<Vec<usize>>,
    edge_lookup: HashMap<(usize, usize), usize>,
}

impl From<Graph> for GraphData {
    fn from(g: Graph) -> Self {
        g.data
    }
}

impl TryFrom<GraphData> for Graph {
    type Error = Error;

    fn try_from(data: GraphData) -> Result<Self> {
        Graph::assemble(data)
    }
}

impl Graph {
    /// Featureless topology, mostly useful for path algorithms.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let edges = edges
            .iter()
            .map(|&(u, v)| (u, v, Vec::new()))
            .collect::<Vec<_>>();
        Graph::with_features(n, 0, Vec::new(), 0, edges)
    }

    /// Builds a graph from a row-major `n × node_dim` feature buffer and
    /// edges given as `(u, v, features)`.
    pub fn with_features(
        n: usize,
        node_dim: usize,
        node_features: Vec<f64>,
        edge_dim: usize,
        edges: Vec<(usize, usize, Vec<f64>)>,
    ) -> Result<Self> {
        let edges = edges
            .into_iter()
            .map(|(u, v, features)| Edge {
                u: u.min(v),
                v: u.max(v),
                order: None,
                features,
            })
            .collect();
        Graph::assemble(GraphData {
            n,
            node_dim,
            edge_dim,
            node_features,
            edges,
            elements: None,
            explicit_hydrogens: false,
            coords: None,
            labels: None,
        })
    }

    fn assemble(mut data: GraphData) -> Result<Self> {
        let n = data.n;
        if data.node_features.len() != n * data.node_dim {
            return Err(Error::config(format!(
                "node feature buffer has {} values, expected {} x {}",
                data.node_features.len(),
                n,
                data.node_dim
            )));
        }
        let mut adjacency = vec![Vec::new(); n];
        let mut edge_lookup = HashMap::with_capacity(data.edges.len() * 2);
        for (idx, e) in data.edges.iter_mut().enumerate() {
            if e.u > e.v {
                std::mem::swap(&mut e.u, &mut e.v);
            }
            if e.v >= n {
                return Err(Error::DanglingBond { i: e.u, j: e.v, n });
            }
            if e.u == e.v {
                return Err(Error::SelfBond(e.u));
            }
            if e.features.len() != data.edge_dim {
                return Err(Error::config(format!(
                    "edge ({}, {}) has {} features, expected {}",
                    e.u,
                    e.v,
                    e.features.len(),
                    data.edge_dim
                )));
            }
            if edge_lookup.insert((e.u, e.v), idx).is_some() {
                return Err(Error::DuplicateBond(e.u, e.v));
            }
            edge_lookup.insert((e.v, e.u), idx);
            adjacency[e.u].push(e.v);
            adjacency[e.v].push(e.u);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }
        if let Some(c) = &data.coords {
            if c.len() != n {
                return Err(Error::InvalidCoords(format!("{} coordinates for {} nodes", c.len(), n)));
            }
        }
        if let Some(el) = &data.elements {
            if el.len() != n {
                return Err(Error::config("element list length differs from node count"));
            }
        }
        if let Some(l) = &data.labels {
            if l.len() != n {
                return Err(Error::config("label list length differs from node count"));
            }
        }
        Ok(Graph {
            data,
            adjacency,
            edge_lookup,
        })
    }

    pub fn with_coords(mut self, coords: Vec<Point>) -> Result<Self> {
        if coords.len() != self.n() {
            return Err(Error::InvalidCoords(format!(
                "{} coordinates for {} nodes",
                coords.len(),
                self.n()
            )));
        }
        if coords.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidCoords("non-finite coordinate".into()));
        }
        self.data.coords = Some(coords);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::config("label list length differs from node count"));
        }
        self.data.labels = Some(labels);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.data.n
    }

    pub fn node_dim(&self) -> usize {
        self.data.node_dim
    }

    pub fn edge_dim(&self) -> usize {
        self.data.edge_dim
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edge_lookup.contains_key(&(u, v))
    }

    pub fn edges(&self) -> &[Edge] {
        &self.data.edges
    }

    pub fn edge(&self, u: usize, v: usize) -> Option<&Edge> {
        self.edge_lookup.get(&(u, v)).map(|&i| &self.data.edges[i])
    }

    /// `e_uv`; identical to `e_vu`.
    pub fn edge_features(&self, u: usize, v: usize) -> Option<&[f64]> {
        self.edge(u, v).map(|e| e.features.as_slice())
    }

    pub fn bond_order(&self, u: usize, v: usize) -> Option<BondOrder> {
        self.edge(u, v).and_then(|e| e.order)
    }

    pub fn node_features(&self, v: usize) -> &[f64] {
        let d = self.data.node_dim;
        &self.data.node_features[v * d..(v + 1) * d]
    }

    pub fn node_feature_matrix(&self) -> &[f64] {
        &self.data.node_features
    }

    pub fn coords(&self) -> Option<&[Point]> {
        self.data.coords.as_deref()
    }

    pub fn elements(&self) -> Option<&[String]> {
        self.data.elements.as_deref()
    }

    pub fn element(&self, v: usize) -> Option<&str> {
        self.data.elements.as_ref().map(|e| e[v].as_str())
    }

    pub fn explicit_hydrogens(&self) -> bool {
        self.data.explicit_hydrogens
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.data.labels.as_deref()
    }

    /// Node relabeling: node `i` of the result is node `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        if perm.len() != n || perm.iter().copied().collect::<BTreeSet<_>>().len() != n {
            return Err(Error::config("permutation must be a bijection on node indices"));
        }
        let mut inverse = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n {
                return Err(Error::NodeOutOfRange { node: old, n });
            }
            inverse[old] = new;
        }
        let d = self.node_dim();
        let mut node_features = Vec::with_capacity(n * d);
        for &old in perm {
            node_features.extend_from_slice(self.node_features(old));
        }
        let edges = self
            .edges()
            .iter()
            .map(|e| Edge {
                u: inverse[e.u],
                v: inverse[e.v],
                order: e.order,
                features: e.features.clone(),
            })
            .collect();
        let pick = |xs: &[String]| perm.iter().map(|&o| xs[o].clone()).collect();
        Graph::assemble(GraphData {
            n,
            node_dim: d,
            edge_dim: self.edge_dim(),
            node_features,
            edges,
            elements: self.elements().map(pick),
            explicit_hydrogens: self.explicit_hydrogens(),
            coords: self.coords().map(|c| perm.iter().map(|&o| c[o]).collect()),
            labels: self.labels().map(|l| perm.iter().map(|&o| l[o]).collect()),
        })
    }

    /// Disjoint union; nodes of `other` are shifted by `self.n()`.
    pub fn disjoint_union(&self, other: &Graph) -> Result<Self> {
        if self.node_dim() != other.node_dim() || self.edge_dim() != other.edge_dim() {
            return Err(Error::config("disjoint union needs matching feature widths"));
        }
        let off = self.n();
        let mut data = self.data.clone();
        data.n += other.n();
        data.node_features.extend_from_slice(other.node_feature_matrix());
        data.edges.extend(other.edges().iter().map(|e| Edge {
            u: e.u + off,
            v: e.v + off,
            order: e.order,
            features: e.features.clone(),
        }));
        data.elements = match (self.elements(), other.elements()) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).cloned().collect()),
            _ => None,
        };
        data.coords = match (self.coords(), other.coords()) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        data.labels = match (self.labels(), other.labels()) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Graph::assemble(data)
    }
}

/// Turns a validated record into a feature graph.
///
/// Node features are `[element one-hot | degree | ring flags]`, edge
/// features are `[bond-order one-hot | bond length]`. Hydrogens are dropped
/// unless `explicit_hydrogens` is set.
pub fn build_graph(record: &MoleculeRecord, config: &FeaturizerConfig) -> Result<Graph> {
    record.validate()?;
    if config.bond_lengths && !record.has_coords() {
        return Err(Error::config(format!(
            "molecule `{}` has no coordinates but bond lengths were requested",
            record.id
        )));
    }

    let keep: Vec<usize> = (0..record.atoms.len())
        .filter(|&i| config.explicit_hydrogens || record.atoms[i].element != "H")
        .collect();
    let mut remap = vec![usize::MAX; record.atoms.len()];
    for (new, &old) in keep.iter().enumerate() {
        remap[old] = new;
    }
    let n = keep.len();

    let mut vocab_index = Vec::with_capacity(n);
    for &old in &keep {
        let el = &record.atoms[old].element;
        let idx = config
            .elements
            .iter()
            .position(|e| e == el)
            .ok_or_else(|| Error::UnknownElement(el.clone()))?;
        vocab_index.push(idx);
    }

    let coords: Option<Vec<Point>> = if record.has_coords() {
        Some(keep.iter().map(|&i| record.atoms[i].coords.unwrap()).collect())
    } else {
        None
    };

    let mut edges = Vec::new();
    for b in &record.bonds {
        let (u, v) = (remap[b.i], remap[b.j]);
        if u == usize::MAX || v == usize::MAX {
            continue;
        }
        let mut features = b.order.one_hot().to_vec();
        if config.bond_lengths {
            let c = coords.as_ref().unwrap();
            features.push(distance(&c[u], &c[v]));
        }
        edges.push(Edge {
            u: u.min(v),
            v: u.max(v),
            order: Some(b.order),
            features,
        });
    }

    let topo = Graph::assemble(GraphData {
        n,
        node_dim: 0,
        edge_dim: config.edge_dim(),
        node_features: Vec::new(),
        edges,
        elements: Some(keep.iter().map(|&i| record.atoms[i].element.clone()).collect()),
        explicit_hydrogens: config.explicit_hydrogens,
        coords,
        labels: None,
    })?;

    let rings = config.ring_flags.then(|| chem::ring_membership(&topo));
    let node_dim = config.node_dim();
    let mut node_features = Vec::with_capacity(n * node_dim);
    for (v, &el) in vocab_index.iter().enumerate() {
        let start = node_features.len();
        node_features.resize(start + config.elements.len(), 0.0);
        node_features[start + el] = 1.0;
        node_features.push(topo.degree(v) as f64);
        if let Some(r) = &rings {
            node_features.extend(r.flags(v).iter().map(|&f| if f { 1.0 } else { 0.0 }));
        }
    }

    let mut data = topo.data;
    data.node_dim = node_dim;
    data.node_features = node_features;
    Graph::assemble(data)
}

pub(crate) fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atom(el: &str) -> Atom {
        Atom {
            element: el.into(),
            coords: None,
        }
    }

    fn bond(i: usize, j: usize) -> Bond {
        Bond {
            i,
            j,
            order: BondOrder::Single,
        }
    }

    fn vocab() -> FeaturizerConfig {
        FeaturizerConfig::new(vec!["C".into(), "N".into(), "O".into()])
    }

    #[test]
    fn water_heavy_and_explicit() {
        let water = MoleculeRecord {
            id: "water".into(),
            atoms: vec![atom("O"), atom("H"), atom("H")],
            bonds: vec![bond(0, 1), bond(0, 2)],
            targets: vec![],
        };
        let mut cfg = FeaturizerConfig::new(vec!["H".into(), "O".into()]);
        cfg.explicit_hydrogens = true;
        let g = build_graph(&water, &cfg).unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.neighbors(0), &[1, 2]);
        assert_eq!(g.neighbors(1), &[0]);

        cfg.explicit_hydrogens = false;
        let g = build_graph(&water, &cfg).unwrap();
        assert_eq!(g.n(), 1);
        assert!(g.edges().is_empty());
        // one-hot(O), degree 0, no ring flags
        assert_eq!(g.node_features(0)[..3], [0.0, 1.0, 0.0]);
    }

    #[test]
    fn cyclohexanol_heavy_atoms() {
        let mut atoms: Vec<Atom> = (0..6).map(|_| atom("C")).collect();
        atoms.push(atom("O"));
        let mut bonds: Vec<Bond> = (0..6).map(|i| bond(i, (i + 1) % 6)).collect();
        bonds.push(bond(0, 6));
        let rec = MoleculeRecord {
            id: "cyclohexanol".into(),
            atoms,
            bonds,
            targets: vec![],
        };
        let g = build_graph(&rec, &vocab()).unwrap();
        assert_eq!(g.n(), 7);
        assert_eq!(g.edges().len(), 7);
        assert_eq!(g.neighbors(0), &[1, 5, 6]);
        assert_eq!(g.degree(6), 1);
        // degree feature sits right after the one-hot
        assert_eq!(g.node_features(0)[3], 3.0);
    }

    #[test]
    fn dangling_bond_rejected() {
        let rec = MoleculeRecord {
            id: "bad".into(),
            atoms: vec![atom("C"), atom("C"), atom("C")],
            bonds: vec![bond(0, 5)],
            targets: vec![],
        };
        let err = build_graph(&rec, &vocab()).unwrap_err();
        assert!(matches!(err, Error::DanglingBond { i: 0, j: 5, n: 3 }));
        assert!(err.to_string().contains("dangling bond index"));
    }

    #[test]
    fn unknown_element_named() {
        let rec = MoleculeRecord {
            id: "x".into(),
            atoms: vec![atom("C"), atom("Xe")],
            bonds: vec![bond(0, 1)],
            targets: vec![],
        };
        match build_graph(&rec, &vocab()) {
            Err(Error::UnknownElement(s)) => assert_eq!(s, "Xe"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_self_bonds_rejected() {
        let mut rec = MoleculeRecord {
            id: "x".into(),
            atoms: vec![atom("C"), atom("C")],
            bonds: vec![bond(0, 1), bond(1, 0)],
            targets: vec![],
        };
        assert!(matches!(rec.validate(), Err(Error::DuplicateBond(0, 1))));
        rec.bonds = vec![bond(1, 1)];
        assert!(matches!(rec.validate(), Err(Error::SelfBond(1))));
    }

    #[test]
    fn partial_coordinates_rejected() {
        let rec = MoleculeRecord {
            id: "x".into(),
            atoms: vec![
                Atom {
                    element: "C".into(),
                    coords: Some([0.0; 3]),
                },
                atom("C"),
            ],
            bonds: vec![bond(0, 1)],
            targets: vec![],
        };
        assert!(matches!(rec.validate(), Err(Error::InvalidCoords(_))));
    }

    #[test]
    fn bond_length_appended_with_coords() {
        let rec = MoleculeRecord {
            id: "co".into(),
            atoms: vec![
                Atom {
                    element: "C".into(),
                    coords: Some([0.0, 0.0, 0.0]),
                },
                Atom {
                    element: "O".into(),
                    coords: Some([1.2, 0.0, 0.0]),
                },
            ],
            bonds: vec![Bond {
                i: 0,
                j: 1,
                order: BondOrder::Double,
            }],
            targets: vec![],
        };
        let mut cfg = vocab();
        cfg.bond_lengths = true;
        let g = build_graph(&rec, &cfg).unwrap();
        assert_eq!(g.edge_features(0, 1).unwrap(), &[0.0, 1.0, 0.0, 0.0, 1.2]);
        assert_eq!(g.edge_features(1, 0), g.edge_features(0, 1));
    }

    #[test]
    fn permutation_relabels_consistently() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let p = g.permuted(&[3, 2, 1, 0]).unwrap();
        assert_eq!(p.neighbors(0), &[1]);
        assert_eq!(p.neighbors(1), &[0, 2]);
    }
}
