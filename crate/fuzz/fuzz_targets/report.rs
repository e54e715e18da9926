#![no_main]
use libfuzzer_sys::fuzz_target;
use pathmp::train::TrainReport;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(reports) = TrainReport::parse_jsonl(text) {
        let mut out = String::new();
        for r in &reports {
            match r.to_jsonl() {
                Ok(s) => out.push_str(&s),
                Err(_) => return,
            }
        }
        assert_eq!(TrainReport::parse_jsonl(&out).unwrap(), reports);
    }
});
