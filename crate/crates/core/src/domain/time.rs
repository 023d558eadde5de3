use std::fmt;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

/// Logical clock reading in milliseconds since the Unix epoch (UTC).
///
/// The ledger never reads the wall clock on its own; callers inject time so
/// that scenario replays are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogicalTime(pub u64);

impl LogicalTime {
    pub fn from_datetime(dt: NaiveDateTime) -> Self {
        LogicalTime(dt.and_utc().timestamp_millis().max(0) as u64)
    }

    pub fn to_datetime(self) -> NaiveDateTime {
        DateTime::from_timestamp_millis(self.0 as i64)
            .expect("logical time within chrono range")
            .naive_utc()
    }

    pub fn millis(self) -> u64 {
        self.0
    }

    pub fn plus_millis(self, ms: u64) -> Self {
        LogicalTime(self.0.saturating_add(ms))
    }
}

impl fmt::Display for LogicalTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_datetime().format("%Y-%m-%dT%H:%M:%S%.3f"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    #[test]
    fn datetime_round_trip() {
        let dt = NaiveDate::from_ymd_opt(2024, 6, 30)
            .unwrap()
            .and_hms_milli_opt(17, 59, 59, 250)
            .unwrap();
        let t = LogicalTime::from_datetime(dt);
        assert_eq!(t.to_datetime(), dt);
        assert_eq!(t.to_string(), "2024-06-30T17:59:59.250");
    }
}
