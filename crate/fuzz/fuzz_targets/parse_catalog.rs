#![no_main]

use feedkit::dsl::{parse_catalog_file, serialize_catalog};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    match parse_catalog_file("fuzz.kpi", text) {
        Ok(parsed) => {
            // Anything that parses must survive a round trip unchanged.
            let again = serialize_catalog(&parsed.catalog);
            let back = feedkit::dsl::parse_catalog(&again).expect("serialized catalog parses");
            assert_eq!(back, parsed.catalog);
        }
        Err(errors) => {
            assert!(!errors.is_empty());
            for e in errors {
                assert!(e.span.line >= 1 && e.span.column >= 1);
            }
        }
    }
});
