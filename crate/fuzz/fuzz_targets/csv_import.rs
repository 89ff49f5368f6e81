#![no_main]

use feedkit::store::csv::decode_import;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = decode_import(text);
    }
});
