#![no_main]

use conceptdiff::checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = checkpoint::decode(data) {
        // Anything accepted must survive a re-encode unchanged.
        let again = checkpoint::encode(&ck.descriptor, &ck.tensors);
        assert_eq!(checkpoint::decode(&again).expect("re-encoded checkpoint decodes").tensors, ck.tensors);
    }
});
