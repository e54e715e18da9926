#![no_main]
use libfuzzer_sys::fuzz_target;
use pathmp::graph::{build_graph, FeaturizerConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(file) = pathmp::io::parse_molecules(text) else { return };
    // whatever parses must featurize or fail cleanly, and survive a round trip
    let featurizer = FeaturizerConfig::new(file.vocabulary(false));
    for m in &file.molecules {
        let _ = build_graph(m, &featurizer);
    }
    let again = pathmp::io::parse_molecules(&file.to_jsonl()).expect("written files parse");
    assert_eq!(again.molecules.len(), file.molecules.len());
});
