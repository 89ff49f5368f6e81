#![no_main]

use feedkit::store::log::{decode_record, escape, unescape};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = decode_record(text);
    assert_eq!(unescape(&escape(text)).as_deref(), Ok(text));
});
