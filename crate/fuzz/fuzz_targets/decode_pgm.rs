#![no_main]

use libfuzzer_sys::fuzz_target;
use segconf::grid::{decode_pgm, encode_pgm};

fuzz_target!(|data: &[u8]| {
    if let Ok(mask) = decode_pgm(data) {
        assert_eq!(decode_pgm(&encode_pgm(&mask)).unwrap(), mask);
    }
});
