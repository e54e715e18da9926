use std::path::PathBuf;

use pathmp::chem::SubstructureContext;
use pathmp::graph::build_graph;
use pathmp::io::read_molecule_file;
use pathmp::paths::enumerate_paths;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

#[test]
fn solubility_subset_parses_and_featurizes() {
    let file = read_molecule_file(data("solubility300.jsonl")).unwrap();
    assert_eq!(file.molecules.len(), 300);
    assert_eq!(file.units(), Some("log mol/L"));
    let elements = file.vocabulary(false);
    assert_eq!(elements[..3], ["Br", "C", "Cl"]);
    let featurizer = pathmp::io::RunConfig::from_toml("task = \"regression\"\n[data]\npath = \"x\"\n")
        .unwrap()
        .featurizer(elements);
    let mut paths = 0;
    for m in &file.molecules {
        assert_eq!(m.targets.len(), 1, "{}", m.id);
        let g = build_graph(m, &featurizer).unwrap();
        assert!(g.elements().unwrap().iter().all(|e| e != "H"), "{}", m.id);
        let context = SubstructureContext::new(&g);
        for v in 0..g.n() {
            for p in enumerate_paths(&g, v, 2).unwrap() {
                assert_eq!(context.path_features(&p).to_vec().len(), 7 * p.len() + 2);
                paths += 1;
            }
        }
    }
    assert!(paths > 10_000);
}
