#![no_main]

use feedkit::federation::MetricRef;
use feedkit::model::Duration;
use feedkit::time::{format_timestamp, parse_timestamp};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Some(ts) = parse_timestamp(text) {
        assert_eq!(parse_timestamp(&format_timestamp(&ts)), Some(ts));
    }
    if let Ok(d) = text.parse::<Duration>() {
        assert_eq!(d.to_string().parse::<Duration>(), Ok(d));
    }
    let _ = text.parse::<MetricRef>();
});
