//! Small hand-built graphs and molecules shared by tests, the CLI and the
//! gradient-check suite.

use crate::graph::{Atom, Bond, BondOrder, FeaturizerConfig, Graph, MoleculeRecord, Point};

/// The path graph 0–1–2–3.
pub fn path4() -> Graph {
    Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).expect("valid fixture")
}

/// Vocabulary used by the molecular fixtures.
pub fn elements() -> Vec<String> {
    ["C", "N", "O"].iter().map(|s| s.to_string()).collect()
}

pub fn featurizer(bond_lengths: bool) -> FeaturizerConfig {
    let mut cfg = FeaturizerConfig::new(elements());
    cfg.bond_lengths = bond_lengths;
    cfg
}

fn record(id: &str, atoms: &[(&str, Point)], bonds: &[(usize, usize, BondOrder)], targets: Vec<f64>) -> MoleculeRecord {
    MoleculeRecord {
        id: id.into(),
        atoms: atoms
            .iter()
            .map(|&(e, c)| Atom {
                element: e.into(),
                coords: Some(c),
            })
            .collect(),
        bonds: bonds.iter().map(|&(i, j, order)| Bond { i, j, order }).collect(),
        targets,
    }
}

/// Heavy atoms of 2-butanol with a non-planar conformation.
pub fn five_atom_molecule() -> MoleculeRecord {
    use BondOrder::Single;
    record(
        "butan-2-ol",
        &[
            ("C", [0.0, 0.0, 0.0]),
            ("C", [1.53, 0.0, 0.0]),
            ("C", [2.04, 1.44, 0.0]),
            ("C", [3.57, 1.52, 0.31]),
            ("O", [1.98, -0.71, 1.15]),
        ],
        &[(0, 1, Single), (1, 2, Single), (2, 3, Single), (1, 4, Single)],
        vec![0.7],
    )
}

/// Planar four-carbon chains with unit bonds and right angles, identical
/// except for the side of the last atom: dihedral 0 (cis) and π (trans).
pub fn cis_trans_pair() -> (MoleculeRecord, MoleculeRecord) {
    use BondOrder::Single;
    let bonds = [(0, 1, Single), (1, 2, Single), (2, 3, Single)];
    let chain = |id: &str, last_y: f64| {
        record(
            id,
            &[
                ("C", [1.0, 1.0, 0.0]),
                ("C", [1.0, 0.0, 0.0]),
                ("C", [2.0, 0.0, 0.0]),
                ("C", [2.0, last_y, 0.0]),
            ],
            &bonds,
            vec![0.0],
        )
    };
    (chain("cis", 1.0), chain("trans", -1.0))
}
