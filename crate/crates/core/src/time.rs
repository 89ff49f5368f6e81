//! UTC instants at second precision and their canonical text form.

use chrono::{DateTime, NaiveDateTime, SubsecRound, Utc};

pub type Timestamp = DateTime<Utc>;

const FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

/// Renders `YYYY-MM-DDThh:mm:ssZ`.
pub fn format_timestamp(ts: &Timestamp) -> String {
    ts.format(FORMAT).to_string()
}

/// Parses the strict `YYYY-MM-DDThh:mm:ssZ` form. Offsets, fractional
/// seconds and lowercase designators are rejected.
pub fn parse_timestamp(text: &str) -> Option<Timestamp> {
    const LAYOUT: &[u8; 20] = b"0000-00-00T00:00:00Z";
    let bytes = text.as_bytes();
    if bytes.len() != LAYOUT.len() {
        return None;
    }
    // Digits only where the layout has them, so chrono never sees a signed
    // or padded year that would not format back the same way.
    let shaped = bytes.iter().zip(LAYOUT).all(|(b, l)| if *l == b'0' { b.is_ascii_digit() } else { b == l });
    if !shaped {
        return None;
    }
    NaiveDateTime::parse_from_str(&text[..19], "%Y-%m-%dT%H:%M:%S")
        .ok()
        .map(|naive| naive.and_utc())
}

/// Truncates to whole seconds.
pub fn truncate(ts: Timestamp) -> Timestamp {
    ts.trunc_subsecs(0)
}

pub fn now() -> Timestamp {
    truncate(Utc::now())
}

pub(crate) mod serde_ts {
    use super::*;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &Timestamp, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_timestamp(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Timestamp, D::Error> {
        let text = String::deserialize(d)?;
        parse_timestamp(&text).ok_or_else(|| D::Error::custom(format!("invalid timestamp `{text}`")))
    }
}
