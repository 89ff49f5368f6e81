//! One accepted observation per line, tab separated, in the fixed order
//! `ingested_at, timestamp, lab_id, measure_id, value, uploader_id, source`.
//! Text fields escape backslash, tab, CR and LF.

use crate::model::{Observation, Source};
use crate::time::{format_timestamp, parse_timestamp, Timestamp};

/// A decoded line whose value has not been typed against a measure yet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub ingested_at: Timestamp,
    pub timestamp: Timestamp,
    pub lab_id: String,
    pub measure_id: String,
    pub value: String,
    pub uploader_id: String,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("expected 7 tab-separated fields, found {0}")]
    FieldCount(usize),
    #[error("invalid {0} timestamp")]
    Timestamp(&'static str),
    #[error("invalid source `{0}`")]
    Source(String),
    #[error("invalid escape sequence")]
    Escape,
}

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape(text: &str) -> Result<String, RecordError> {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        out.push(match chars.next() {
            Some('\\') => '\\',
            Some('t') => '\t',
            Some('n') => '\n',
            Some('r') => '\r',
            _ => return Err(RecordError::Escape),
        });
    }
    Ok(out)
}

/// Encodes one record, including the trailing newline.
pub fn encode_record(obs: &Observation) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
        format_timestamp(&obs.ingested_at),
        format_timestamp(&obs.timestamp),
        escape(&obs.lab_id),
        escape(&obs.measure_id),
        escape(&obs.value.to_string()),
        escape(&obs.uploader_id),
        obs.source.keyword(),
    )
}

/// Decodes one line without its newline.
pub fn decode_record(line: &str) -> Result<RawRecord, RecordError> {
    let fields: Vec<&str> = line.split('\t').collect();
    let [ingested_at, timestamp, lab_id, measure_id, value, uploader_id, source] = fields[..] else {
        return Err(RecordError::FieldCount(fields.len()));
    };
    Ok(RawRecord {
        ingested_at: parse_timestamp(ingested_at).ok_or(RecordError::Timestamp("ingested_at"))?,
        timestamp: parse_timestamp(timestamp).ok_or(RecordError::Timestamp("observation"))?,
        lab_id: unescape(lab_id)?,
        measure_id: unescape(measure_id)?,
        value: unescape(value)?,
        uploader_id: unescape(uploader_id)?,
        source: Source::from_keyword(source).ok_or_else(|| RecordError::Source(source.to_string()))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Value;
    use proptest::prelude::*;

    fn sample(value: Value, uploader: &str) -> Observation {
        Observation {
            measure_id: "soil_ph".into(),
            lab_id: "strovolos".into(),
            timestamp: parse_timestamp("2024-05-01T08:30:00Z").unwrap(),
            value,
            uploader_id: uploader.into(),
            source: Source::Report,
            ingested_at: parse_timestamp("2024-05-01T09:00:00Z").unwrap(),
        }
    }

    #[test]
    fn fixed_field_order() {
        let line = encode_record(&sample(Value::Number(6.5), "maria"));
        assert_eq!(line, "2024-05-01T09:00:00Z\t2024-05-01T08:30:00Z\tstrovolos\tsoil_ph\t6.5\tmaria\treport\n");
    }

    #[test]
    fn rejects_malformed_lines() {
        assert_eq!(decode_record("a\tb"), Err(RecordError::FieldCount(2)));
        assert!(decode_record("x\t2024-05-01T08:30:00Z\tl\tm\t1\tu\tform").is_err());
        assert!(decode_record("2024-05-01T08:30:00Z\t2024-05-01T08:30:00Z\tl\tm\t1\tu\temail").is_err());
        assert_eq!(unescape("bad\\q"), Err(RecordError::Escape));
    }

    proptest! {
        #[test]
        fn text_fields_round_trip(category in any::<String>(), uploader in any::<String>()) {
            let obs = sample(Value::Category(category.clone()), &uploader);
            let line = encode_record(&obs);
            prop_assert_eq!(line.matches('\n').count(), 1);
            let raw = decode_record(line.trim_end_matches('\n')).unwrap();
            prop_assert_eq!(raw.value, category);
            prop_assert_eq!(raw.uploader_id, uploader);
        }
    }
}
