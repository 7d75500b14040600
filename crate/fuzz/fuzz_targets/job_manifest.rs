#![no_main]

use libfuzzer_sys::fuzz_target;
use segconf::confmap::JobManifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(job) = JobManifest::parse(data) {
        let text = serde_json::to_vec(&job).unwrap();
        assert_eq!(JobManifest::parse(&text).unwrap(), job);
    }
});
