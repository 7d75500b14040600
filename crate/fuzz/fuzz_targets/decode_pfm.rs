#![no_main]

use libfuzzer_sys::fuzz_target;
use segconf::grid::{decode_pfm, encode_pfm};

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = decode_pfm(data) {
        assert!(map.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(decode_pfm(&encode_pfm(&map)).unwrap(), map);
    }
});
