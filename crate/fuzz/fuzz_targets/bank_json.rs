#![no_main]

use conceptdiff::conceptbank::ConceptBank;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(bank) = ConceptBank::from_json(data) {
        let bytes = bank.to_json().expect("accepted bank serializes");
        assert_eq!(ConceptBank::from_json(&bytes).expect("round trip"), bank);
    }
});
