#![no_main]

//! Input layout: five little-endian u32 lengths, then the contents of
//! manifest.json, train.f32, train.labels.u16, test.f32 and
//! test.labels.u16 back to back. Short inputs truncate the later files.

use std::fs;

use conceptdiff::synthdata::load_dataset;
use libfuzzer_sys::fuzz_target;

const FILES: [&str; 5] = ["manifest.json", "train.f32", "train.labels.u16", "test.f32", "test.labels.u16"];

fuzz_target!(|data: &[u8]| {
    if data.len() < 20 {
        return;
    }
    let dir = std::env::temp_dir().join(format!("conceptdiff-fuzz-loader-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    let mut rest = &data[20..];
    for (i, name) in FILES.iter().enumerate() {
        let len = u32::from_le_bytes(data[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
        let (head, tail) = rest.split_at(len.min(rest.len()));
        fs::write(dir.join(name), head).unwrap();
        rest = tail;
    }
    let _ = load_dataset(&dir);
});
