//! The import/export table: header `measure_id,timestamp,value,uploader_id`,
//! UTF-8 without BOM, RFC 4180 quoting. Rows are numbered from 1 with the
//! header as row 1.

use csv::{ReaderBuilder, Terminator, WriterBuilder};

pub const HEADER: [&str; 4] = ["measure_id", "timestamp", "value", "uploader_id"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvFields {
    pub measure_id: String,
    pub timestamp: String,
    pub value: String,
    pub uploader_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvRow {
    /// 1-based, header included.
    pub row: usize,
    /// The four fields, or why the row could not be split into them.
    pub fields: Result<CsvFields, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed header: {0}")]
pub struct MalformedHeader(pub String);

pub fn decode_import(content: &str) -> Result<Vec<CsvRow>, MalformedHeader> {
    if content.starts_with('\u{feff}') {
        return Err(MalformedHeader("byte order mark is not allowed".into()));
    }
    let mut reader = ReaderBuilder::new().has_headers(false).flexible(true).from_reader(content.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(MalformedHeader("file is empty".into())),
        Some(Err(e)) => return Err(MalformedHeader(e.to_string())),
        Some(Ok(h)) => h,
    };
    if header.iter().ne(HEADER) {
        let found: Vec<&str> = header.iter().collect();
        return Err(MalformedHeader(format!("expected `{}`, found `{}`", HEADER.join(","), found.join(","))));
    }
    Ok(records
        .enumerate()
        .map(|(i, record)| CsvRow {
            row: i + 2,
            fields: match record {
                Err(e) => Err(e.to_string()),
                Ok(r) if r.len() != HEADER.len() => Err(format!("expected 4 fields, found {}", r.len())),
                Ok(r) => Ok(CsvFields {
                    measure_id: r[0].to_string(),
                    timestamp: r[1].to_string(),
                    value: r[2].to_string(),
                    uploader_id: r[3].to_string(),
                }),
            },
        })
        .collect())
}

pub fn encode_export<'a>(rows: impl IntoIterator<Item = [&'a str; 4]>) -> String {
    let mut writer = WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(Vec::new());
    // Writing to a Vec cannot fail.
    writer.write_record(HEADER).expect("in-memory write");
    for row in rows {
        writer.write_record(row).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("UTF-8 input")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_must_match_exactly() {
        for bad in [
            "",
            "measure_id,timestamp,uploader_id\n",
            "Measure_id,timestamp,value,uploader_id\n",
            "\u{feff}measure_id,timestamp,value,uploader_id\n",
            "measure_id,timestamp,value,uploader_id,extra\n",
        ] {
            assert!(decode_import(bad).is_err(), "{bad:?}");
        }
        assert_eq!(decode_import("measure_id,timestamp,value,uploader_id").unwrap(), vec![]);
    }

    #[test]
    fn rows_are_numbered_from_two_and_quoting_is_honoured() {
        let rows = decode_import(
            "measure_id,timestamp,value,uploader_id\r\nm,2024-01-01T00:00:00Z,\"a,b\",u\r\nm,t\r\n",
        )
        .unwrap();
        assert_eq!(rows[0].row, 2);
        assert_eq!(rows[0].fields.as_ref().unwrap().value, "a,b");
        assert_eq!(rows[1].row, 3);
        assert!(rows[1].fields.is_err());
    }

    #[test]
    fn export_is_importable() {
        let text = encode_export([["m", "2024-01-01T00:00:00Z", "x,\"y\"", "u"]]);
        assert_eq!(text, "measure_id,timestamp,value,uploader_id\nm,2024-01-01T00:00:00Z,\"x,\"\"y\"\"\",u\n");
        let rows = decode_import(&text).unwrap();
        assert_eq!(rows[0].fields.as_ref().unwrap().value, "x,\"y\"");
    }
}
