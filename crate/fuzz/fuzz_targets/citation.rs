#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // first blank-line-separated block is the content file, the rest the cites
    let (content, cites) = text.split_once("\n\n").unwrap_or((text, ""));
    if let Ok(f) = pathmp::io::parse_citation(content, cites) {
        assert_eq!(f.ids.len(), f.data.n());
        assert!(f.data.labels.iter().all(|&l| l < f.class_names.len()));
    }
});
