#![no_main]

use conceptdiff::evalharness::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = ExperimentConfig::from_json(data) {
        let _ = cfg.cells();
    }
});
