#![no_main]

use conceptdiff::conceptbank::parse_answer;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok((_, phrases)) = parse_answer(text) {
            assert!(phrases.iter().all(|p| !p.is_empty()));
        }
    }
});
