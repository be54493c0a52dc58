#![no_main]

use conceptdiff::conceptbank::NegativeStrategy;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(strategy) = s.parse::<NegativeStrategy>() {
            assert_eq!(strategy.to_string().parse::<NegativeStrategy>().unwrap(), strategy);
        }
    }
});
