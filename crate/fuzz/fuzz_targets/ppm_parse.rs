#![no_main]

use conceptdiff::evalharness::parse_ppm;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = parse_ppm(data) {
        assert_eq!(p.pixels.len(), p.width * p.height * 3);
    }
});
