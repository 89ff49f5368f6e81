use std::fmt;
use std::str::FromStr;

use chrono::{Days, Months};
use serde::{Deserialize, Serialize};

use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DurationUnit {
    #[serde(rename = "d")]
    Days,
    #[serde(rename = "w")]
    Weeks,
    #[serde(rename = "m")]
    Months,
}

impl DurationUnit {
    pub fn suffix(self) -> char {
        match self {
            DurationUnit::Days => 'd',
            DurationUnit::Weeks => 'w',
            DurationUnit::Months => 'm',
        }
    }

    pub fn from_suffix(c: char) -> Option<Self> {
        match c {
            'd' => Some(DurationUnit::Days),
            'w' => Some(DurationUnit::Weeks),
            'm' => Some(DurationUnit::Months),
            _ => None,
        }
    }
}

/// A calendar length such as `30d`, `2w` or `3m`.
///
/// Month arithmetic is calendar based and clamps to the last day of the
/// target month, so one month before March 31 is the last day of February.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Duration {
    pub count: u32,
    pub unit: DurationUnit,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid duration `{0}`: expected a positive integer followed by d, w or m")]
pub struct DurationParseError(pub String);

impl Duration {
    pub fn new(count: u32, unit: DurationUnit) -> Self {
        Duration { count, unit }
    }

    pub fn days(count: u32) -> Self {
        Duration::new(count, DurationUnit::Days)
    }

    pub fn weeks(count: u32) -> Self {
        Duration::new(count, DurationUnit::Weeks)
    }

    pub fn months(count: u32) -> Self {
        Duration::new(count, DurationUnit::Months)
    }

    pub fn is_valid(&self) -> bool {
        self.count >= 1
    }

    /// `ts - self`, or `None` when the result leaves chrono's range.
    pub fn before(&self, ts: Timestamp) -> Option<Timestamp> {
        self.before_times(ts, 1)
    }

    /// `ts + self`.
    pub fn after(&self, ts: Timestamp) -> Option<Timestamp> {
        self.after_times(ts, 1)
    }

    /// `ts + k * self`, computed from `ts` in one step so month clamping
    /// does not accumulate over repeated additions.
    pub fn after_times(&self, ts: Timestamp, k: u32) -> Option<Timestamp> {
        let n = self.count.checked_mul(k)?;
        match self.unit {
            DurationUnit::Days => ts.checked_add_days(Days::new(n as u64)),
            DurationUnit::Weeks => ts.checked_add_days(Days::new(n as u64 * 7)),
            DurationUnit::Months => ts.checked_add_months(Months::new(n)),
        }
    }

    pub fn before_times(&self, ts: Timestamp, k: u32) -> Option<Timestamp> {
        let n = self.count.checked_mul(k)?;
        match self.unit {
            DurationUnit::Days => ts.checked_sub_days(Days::new(n as u64)),
            DurationUnit::Weeks => ts.checked_sub_days(Days::new(n as u64 * 7)),
            DurationUnit::Months => ts.checked_sub_months(Months::new(n)),
        }
    }
}

impl fmt::Display for Duration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.count, self.unit.suffix())
    }
}

impl FromStr for Duration {
    type Err = DurationParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || DurationParseError(s.to_string());
        let unit = s.chars().last().and_then(DurationUnit::from_suffix).ok_or_else(err)?;
        let digits = &s[..s.len() - 1];
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let count: u32 = digits.parse().map_err(|_| err())?;
        if count == 0 {
            return Err(err());
        }
        Ok(Duration { count, unit })
    }
}

impl TryFrom<String> for Duration {
    type Error = DurationParseError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Duration> for String {
    fn from(value: Duration) -> Self {
        value.to_string()
    }
}
