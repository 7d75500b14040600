#![no_main]

use libfuzzer_sys::fuzz_target;
use segconf::report::{calibration_svg, gains_svg, roc_svg, ReportSet};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(set) = ReportSet::parse(text) {
        let _ = (set.calibration_csv(), set.per_image_csv(), set.gains_csv());
        let _ = (calibration_svg(&set), roc_svg(&set), gains_svg(&set));
    }
});
