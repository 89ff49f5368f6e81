//! Calendar buckets used to check collection against each measure's
//! frequency.

use chrono::{Datelike, Days, Months, NaiveDate, TimeDelta};
use serde::{Deserialize, Serialize};

use crate::model::CollectionFrequency;
use crate::time::{serde_ts, Timestamp};

/// Upper bound on buckets per measure in one coverage query.
pub const MAX_BUCKETS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bucket {
    pub start: Timestamp,
    pub end: Timestamp,
    pub label: String,
}

/// `[start, end)`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    #[serde(with = "serde_ts")]
    pub start: Timestamp,
    #[serde(with = "serde_ts")]
    pub end: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageEntry {
    pub measure_id: String,
    pub frequency: CollectionFrequency,
    pub expected_buckets: usize,
    pub filled_buckets: usize,
    pub missing_buckets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub lab_id: String,
    pub period: Period,
    pub entries: Vec<CoverageEntry>,
}

fn bucket_floor(freq: CollectionFrequency, date: NaiveDate) -> NaiveDate {
    match freq {
        CollectionFrequency::Daily | CollectionFrequency::PerEvent => date,
        CollectionFrequency::Weekly => date - TimeDelta::days(date.weekday().num_days_from_monday() as i64),
        CollectionFrequency::Monthly => date.with_day(1).expect("day 1 exists"),
        CollectionFrequency::Quarterly => {
            let month = (date.month0() / 3) * 3 + 1;
            NaiveDate::from_ymd_opt(date.year(), month, 1).expect("quarter start exists")
        }
    }
}

fn bucket_next(freq: CollectionFrequency, start: NaiveDate) -> Option<NaiveDate> {
    match freq {
        CollectionFrequency::Daily | CollectionFrequency::PerEvent => start.checked_add_days(Days::new(1)),
        CollectionFrequency::Weekly => start.checked_add_days(Days::new(7)),
        CollectionFrequency::Monthly => start.checked_add_months(Months::new(1)),
        CollectionFrequency::Quarterly => start.checked_add_months(Months::new(3)),
    }
}

fn label(freq: CollectionFrequency, start: NaiveDate) -> String {
    match freq {
        CollectionFrequency::Daily | CollectionFrequency::PerEvent => start.format("%Y-%m-%d").to_string(),
        CollectionFrequency::Weekly => {
            let week = start.iso_week();
            format!("{}-W{:02}", week.year(), week.week())
        }
        CollectionFrequency::Monthly => start.format("%Y-%m").to_string(),
        CollectionFrequency::Quarterly => format!("{}-Q{}", start.year(), start.month0() / 3 + 1),
    }
}

/// Calendar buckets of `freq` that overlap `[start, end)`. `per_event`
/// has no buckets. `None` if there would be more than [`MAX_BUCKETS`].
pub fn buckets(freq: CollectionFrequency, period: Period) -> Option<Vec<Bucket>> {
    if freq == CollectionFrequency::PerEvent || period.start >= period.end {
        return Some(Vec::new());
    }
    let mut out = Vec::new();
    let mut day = bucket_floor(freq, period.start.date_naive());
    loop {
        let start = day.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
        if start >= period.end {
            break;
        }
        let next = bucket_next(freq, day)?;
        if out.len() == MAX_BUCKETS {
            return None;
        }
        out.push(Bucket { start, end: next.and_hms_opt(0, 0, 0).expect("midnight").and_utc(), label: label(freq, day) });
        day = next;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::parse_timestamp;

    fn period(a: &str, b: &str) -> Period {
        Period { start: parse_timestamp(a).unwrap(), end: parse_timestamp(b).unwrap() }
    }

    fn labels(freq: CollectionFrequency, p: Period) -> Vec<String> {
        buckets(freq, p).unwrap().into_iter().map(|b| b.label).collect()
    }

    #[test]
    fn seven_days() {
        let p = period("2024-03-04T00:00:00Z", "2024-03-11T00:00:00Z");
        assert_eq!(labels(CollectionFrequency::Daily, p).len(), 7);
        assert_eq!(labels(CollectionFrequency::Daily, p)[6], "2024-03-10");
    }

    #[test]
    fn partial_months_count_whole() {
        // Jan 20 .. Mar 10 touches January, February and March.
        let p = period("2024-01-20T00:00:00Z", "2024-03-10T00:00:00Z");
        assert_eq!(labels(CollectionFrequency::Monthly, p), vec!["2024-01", "2024-02", "2024-03"]);
        assert_eq!(labels(CollectionFrequency::Quarterly, p), vec!["2024-Q1"]);
    }

    #[test]
    fn iso_weeks_cross_the_year() {
        let p = period("2024-12-30T00:00:00Z", "2025-01-13T00:00:00Z");
        assert_eq!(labels(CollectionFrequency::Weekly, p), vec!["2025-W01", "2025-W02"]);
        let p = period("2021-01-01T00:00:00Z", "2021-01-05T00:00:00Z");
        assert_eq!(labels(CollectionFrequency::Weekly, p), vec!["2020-W53", "2021-W01"]);
    }

    #[test]
    fn per_event_and_empty_periods() {
        let p = period("2024-01-01T00:00:00Z", "2024-02-01T00:00:00Z");
        assert!(buckets(CollectionFrequency::PerEvent, p).unwrap().is_empty());
        let empty = period("2024-01-01T00:00:00Z", "2024-01-01T00:00:00Z");
        assert!(buckets(CollectionFrequency::Daily, empty).unwrap().is_empty());
    }

    #[test]
    fn huge_periods_are_refused() {
        let p = period("1000-01-01T00:00:00Z", "9000-01-01T00:00:00Z");
        assert!(buckets(CollectionFrequency::Daily, p).is_none());
    }
}
