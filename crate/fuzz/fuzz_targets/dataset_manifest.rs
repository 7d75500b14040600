#![no_main]

use libfuzzer_sys::fuzz_target;
use segconf::dataset::DatasetManifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(manifest) = DatasetManifest::parse(data) {
        let again = DatasetManifest::parse(manifest.to_json().as_bytes()).unwrap();
        assert_eq!(again, manifest);
    }
});
