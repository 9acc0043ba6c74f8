//! UTC timestamp helpers shared by ingestion, bucketing and exports.

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};

pub const SECONDS_PER_HOUR: i64 = 3_600;
pub const SECONDS_PER_DAY: i64 = 86_400;

/// Parses an epoch-seconds string or an ISO-8601 timestamp into UTC epoch
/// seconds. Timestamps without an offset are read as UTC; bare dates map to
/// midnight UTC.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(secs) = s.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(naive.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

/// Floor division aligned to `step` seconds, correct for negative inputs.
pub fn floor_to(ts: i64, step: i64) -> i64 {
    ts.div_euclid(step) * step
}

pub fn utc_date(ts: i64) -> NaiveDate {
    datetime(ts).date_naive()
}

pub fn datetime(ts: i64) -> DateTime<Utc> {
    DateTime::from_timestamp(ts, 0).unwrap_or(DateTime::UNIX_EPOCH)
}

/// `YYYY-MM-DDTHH:MM:SSZ`
pub fn format_iso(ts: i64) -> String {
    datetime(ts).format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

pub fn format_date(ts: i64) -> String {
    utc_date(ts).format("%Y-%m-%d").to_string()
}

/// Epoch seconds of midnight UTC on the given calendar day.
pub fn day_start(year: i32, month: u32, day: u32) -> i64 {
    NaiveDate::from_ymd_opt(year, month, day)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
        .expect("valid calendar date")
}
