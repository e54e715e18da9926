#![no_main]
use libfuzzer_sys::fuzz_target;
use pathmp::tensor::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::from_bytes(data) {
        let back = Checkpoint::from_bytes(&ck.to_bytes()).expect("re-encoded checkpoint decodes");
        assert_eq!(back.entries.len(), ck.entries.len());
        let _ = pathmp::train::load_regression(&ck);
    }
});
