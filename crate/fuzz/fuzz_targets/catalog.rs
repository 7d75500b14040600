#![no_main]

use libfuzzer_sys::fuzz_target;
use segconf::augment::Catalog;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(catalog) = Catalog::from_json(text) {
        assert_eq!(Catalog::from_json(&catalog.to_json()).unwrap(), catalog);
    }
});
