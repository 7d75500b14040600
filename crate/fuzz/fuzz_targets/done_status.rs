#![no_main]

use libfuzzer_sys::fuzz_target;
use segconf::confmap::DoneStatus;

fuzz_target!(|data: &[u8]| {
    let _ = DoneStatus::parse(data);
});
