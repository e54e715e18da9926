#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = pathmp::io::RunConfig::from_toml(text) {
        let json = serde_json::to_value(config.for_repeat(0)).unwrap();
        let _: pathmp::io::RunConfig = serde_json::from_value(json).expect("snapshot parses");
    }
});
