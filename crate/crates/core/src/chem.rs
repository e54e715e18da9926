//! Substructure path features: ring-size membership and functional groups.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::graph::{BondOrder, Graph};
use crate::paths::Path;

/// Ring sizes that get their own flag.
pub const RING_SIZES: [usize; 6] = [3, 4, 5, 6, 7, 8];
/// Size flags plus the trailing "in any ring" flag.
pub const RING_FLAG_WIDTH: usize = RING_SIZES.len() + 1;
/// Per-path group flags: alcohol bond traversed, any node inside a group.
pub const GROUP_FLAG_WIDTH: usize = 2;

const MAX_RING: usize = 8;

/// Per-node ring membership flags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RingMembership {
    flags: Vec<[bool; RING_FLAG_WIDTH]>,
}

impl RingMembership {
    /// `[size 3, .., size 8, any]` for node `v`.
    pub fn flags(&self, v: usize) -> &[bool; RING_FLAG_WIDTH] {
        &self.flags[v]
    }

    pub fn in_ring_of_size(&self, v: usize, size: usize) -> bool {
        RING_SIZES
            .iter()
            .position(|&s| s == size)
            .is_some_and(|i| self.flags[v][i])
    }

    pub fn in_any_ring(&self, v: usize) -> bool {
        self.flags[v][RING_FLAG_WIDTH - 1]
    }
}

/// Flags every node that lies on a simple cycle of 3 to 8 nodes.
///
/// Cycles are found by a depth-bounded search rooted at each cycle's
/// smallest node, so each cycle is visited once per direction.
pub fn ring_membership(graph: &Graph) -> RingMembership {
    let n = graph.n();
    let mut flags = vec![[false; RING_FLAG_WIDTH]; n];
    let mut on_path = vec![false; n];
    let mut stack = Vec::with_capacity(MAX_RING);
    for start in 0..n {
        stack.push(start);
        on_path[start] = true;
        cycle_dfs(graph, start, &mut stack, &mut on_path, &mut flags);
        on_path[start] = false;
        stack.pop();
    }
    RingMembership { flags }
}

fn cycle_dfs(
    graph: &Graph,
    start: usize,
    stack: &mut Vec<usize>,
    on_path: &mut [bool],
    flags: &mut [[bool; RING_FLAG_WIDTH]],
) {
    let tail = *stack.last().unwrap();
    for &w in graph.neighbors(tail) {
        if w == start && stack.len() >= 3 {
            let slot = stack.len() - RING_SIZES[0];
            for &v in stack.iter() {
                flags[v][slot] = true;
                flags[v][RING_FLAG_WIDTH - 1] = true;
            }
        } else if w > start && !on_path[w] && stack.len() < MAX_RING {
            stack.push(w);
            on_path[w] = true;
            cycle_dfs(graph, start, stack, on_path, flags);
            on_path[w] = false;
            stack.pop();
        }
    }
}

/// A detected functional group: its atoms and the bonds that define it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupMatch {
    pub name: String,
    pub atoms: Vec<usize>,
    /// Defining bonds, each stored with the smaller index first.
    pub bonds: Vec<(usize, usize)>,
}

/// A functional-group predicate over a molecular graph.
pub trait GroupDetector: Send + Sync {
    fn name(&self) -> &str;
    fn detect(&self, graph: &Graph) -> Vec<GroupMatch>;
}

/// Hydroxyl on carbon (R-OH).
///
/// With explicit hydrogens: an O bonded to exactly one H and one C. On a
/// heavy-atom graph: an O whose only bond is a single bond to C, i.e. the
/// remaining valence is an implicit H.
#[derive(Clone, Copy, Debug, Default)]
pub struct Alcohol;

impl GroupDetector for Alcohol {
    fn name(&self) -> &str {
        "alcohol"
    }

    fn detect(&self, graph: &Graph) -> Vec<GroupMatch> {
        let Some(elements) = graph.elements() else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for v in 0..graph.n() {
            if elements[v] != "O" {
                continue;
            }
            let nbrs = graph.neighbors(v);
            let carbons: Vec<usize> = nbrs.iter().copied().filter(|&w| elements[w] == "C").collect();
            let hydrogens: Vec<usize> = nbrs.iter().copied().filter(|&w| elements[w] == "H").collect();
            let single = |w: usize| graph.bond_order(v, w).unwrap_or(BondOrder::Single) == BondOrder::Single;
            let matched = if graph.explicit_hydrogens() {
                nbrs.len() == 2 && carbons.len() == 1 && hydrogens.len() == 1
            } else {
                nbrs.len() == 1 && carbons.len() == 1
            };
            if !matched || !nbrs.iter().all(|&w| single(w)) {
                continue;
            }
            let mut atoms = vec![v];
            atoms.extend(&carbons);
            atoms.extend(&hydrogens);
            let bonds = nbrs.iter().map(|&w| (v.min(w), v.max(w))).collect();
            out.push(GroupMatch {
                name: self.name().to_string(),
                atoms,
                bonds,
            });
        }
        out
    }
}

/// Ordered set of group detectors.
pub struct GroupRegistry {
    detectors: Vec<Box<dyn GroupDetector>>,
}

impl Default for GroupRegistry {
    fn default() -> Self {
        GroupRegistry {
            detectors: vec![Box::new(Alcohol)],
        }
    }
}

impl GroupRegistry {
    pub fn empty() -> Self {
        GroupRegistry { detectors: Vec::new() }
    }

    pub fn register(&mut self, detector: Box<dyn GroupDetector>) {
        self.detectors.push(detector);
    }

    pub fn detect(&self, graph: &Graph) -> Vec<GroupMatch> {
        self.detectors.iter().flat_map(|d| d.detect(graph)).collect()
    }
}

pub fn detect_alcohol(graph: &Graph) -> Vec<GroupMatch> {
    Alcohol.detect(graph)
}

/// Ring and group flags for the nodes of one path.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubstructureFeatures {
    /// One entry per non-root node, in path order.
    pub ring_flags: Vec<[bool; RING_FLAG_WIDTH]>,
    /// The path traverses a bond of a detected alcohol.
    pub alcohol: bool,
    /// Some node of the path (root included) belongs to a detected group.
    pub in_group: bool,
}

impl SubstructureFeatures {
    pub fn width(len: usize) -> usize {
        RING_FLAG_WIDTH * len + GROUP_FLAG_WIDTH
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let bit = |b: bool| if b { 1.0 } else { 0.0 };
        let mut out: Vec<f64> = self.ring_flags.iter().flatten().map(|&b| bit(b)).collect();
        out.push(bit(self.alcohol));
        out.push(bit(self.in_group));
        out
    }
}

/// Precomputed rings and groups for one graph.
#[derive(Clone, Debug)]
pub struct SubstructureContext {
    pub rings: RingMembership,
    pub groups: Vec<GroupMatch>,
    alcohol_bonds: BTreeSet<(usize, usize)>,
    group_atoms: BTreeSet<usize>,
}

impl SubstructureContext {
    pub fn new(graph: &Graph) -> Self {
        SubstructureContext::with_registry(graph, &GroupRegistry::default())
    }

    pub fn with_registry(graph: &Graph, registry: &GroupRegistry) -> Self {
        let groups = registry.detect(graph);
        let alcohol_bonds = groups
            .iter()
            .filter(|g| g.name == "alcohol")
            .flat_map(|g| g.bonds.iter().copied())
            .collect();
        let group_atoms = groups.iter().flat_map(|g| g.atoms.iter().copied()).collect();
        SubstructureContext {
            rings: ring_membership(graph),
            groups,
            alcohol_bonds,
            group_atoms,
        }
    }

    pub fn path_features(&self, path: &Path) -> SubstructureFeatures {
        let nodes = path.nodes();
        SubstructureFeatures {
            ring_flags: nodes[1..].iter().map(|&v| *self.rings.flags(v)).collect(),
            alcohol: nodes
                .windows(2)
                .any(|w| self.alcohol_bonds.contains(&(w[0].min(w[1]), w[0].max(w[1])))),
            in_group: nodes.iter().any(|v| self.group_atoms.contains(v)),
        }
    }
}

pub fn substructure_path_features(context: &SubstructureContext, path: &Path) -> SubstructureFeatures {
    context.path_features(path)
}
