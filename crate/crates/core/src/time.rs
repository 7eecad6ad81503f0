//! UTC timestamps with microsecond resolution.
//!
//! All interval arithmetic in the pipeline (coverage, block tiling, event
//! bounds) is done on integer microseconds so that tiling sums are exact.

use std::fmt;
use std::ops::{Add, Sub};
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDateTime, SecondsFormat, TimeZone, Timelike, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const MICROS_PER_SECOND: i64 = 1_000_000;
pub const MICROS_PER_HOUR: i64 = 3_600 * MICROS_PER_SECOND;

/// Microseconds since the Unix epoch, UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(i64);

#[derive(Debug, thiserror::Error)]
#[error("invalid timestamp '{0}'")]
pub struct TimestampParseError(pub String);

impl Timestamp {
    pub const fn from_micros(us: i64) -> Self {
        Self(us)
    }

    pub const fn micros(self) -> i64 {
        self.0
    }

    pub fn from_seconds_f64(s: f64) -> Self {
        Self((s * MICROS_PER_SECOND as f64).round() as i64)
    }

    /// Current wall-clock time.
    pub fn now() -> Self {
        Self::from_datetime(Utc::now())
    }

    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        Self(dt.timestamp_micros())
    }

    pub fn from_ymd_hms(y: i32, mo: u32, d: u32, h: u32, mi: u32, s: u32) -> Self {
        let dt = Utc
            .with_ymd_and_hms(y, mo, d, h, mi, s)
            .single()
            .expect("valid calendar time");
        Self::from_datetime(dt)
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        DateTime::from_timestamp_micros(self.0).expect("timestamp in chrono range")
    }

    /// Offset by a (possibly fractional) number of seconds, rounded to the microsecond.
    pub fn add_seconds(self, s: f64) -> Self {
        Self(self.0 + (s * MICROS_PER_SECOND as f64).round() as i64)
    }

    pub fn seconds_since(self, origin: Timestamp) -> f64 {
        (self.0 - origin.0) as f64 / MICROS_PER_SECOND as f64
    }

    /// Nearest millisecond, ties toward the earlier instant.
    pub fn round_to_millis(self) -> Self {
        let q = self.0.div_euclid(1000);
        let r = self.0.rem_euclid(1000);
        Self(if r > 500 { (q + 1) * 1000 } else { q * 1000 })
    }

    /// Fractional hour of day in `[0, 24)`.
    pub fn hour_of_day(self) -> f64 {
        let dt = self.to_datetime();
        let secs = dt.num_seconds_from_midnight() as f64 + dt.nanosecond() as f64 * 1e-9;
        secs / 3600.0
    }

    /// Zero-based day of year (Jan 1 is 0).
    pub fn day_of_year0(self) -> u32 {
        self.to_datetime().ordinal0()
    }

    pub fn date(self) -> chrono::NaiveDate {
        self.to_datetime().date_naive()
    }

    pub fn utc_hour(self) -> u32 {
        self.to_datetime().hour()
    }

    /// ISO-8601 with millisecond precision and a `Z` suffix.
    pub fn to_iso_millis(self) -> String {
        self.to_datetime()
            .to_rfc3339_opts(SecondsFormat::Millis, true)
    }

    pub fn to_iso_micros(self) -> String {
        self.to_datetime()
            .to_rfc3339_opts(SecondsFormat::Micros, true)
    }
}

impl FromStr for Timestamp {
    type Err = TimestampParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            return Ok(Self::from_datetime(dt.with_timezone(&Utc)));
        }
        // Naive forms are taken as UTC.
        for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
            if let Ok(ndt) = NaiveDateTime::parse_from_str(s, fmt) {
                return Ok(Self::from_datetime(ndt.and_utc()));
            }
        }
        Err(TimestampParseError(s.to_string()))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_iso_micros())
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_iso_micros())
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Add<i64> for Timestamp {
    type Output = Timestamp;
    fn add(self, us: i64) -> Timestamp {
        Timestamp(self.0 + us)
    }
}

impl Sub for Timestamp {
    type Output = i64;
    fn sub(self, rhs: Timestamp) -> i64 {
        self.0 - rhs.0
    }
}

/// Half-open interval `[start, end)` in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Interval {
    pub fn new(start: Timestamp, end: Timestamp) -> Self {
        Self { start, end }
    }

    pub fn len_micros(&self) -> i64 {
        (self.end - self.start).max(0)
    }

    pub fn hours(&self) -> f64 {
        self.len_micros() as f64 / MICROS_PER_HOUR as f64
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        self.start <= t && t < self.end
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let s = self.start.max(other.start);
        let e = self.end.min(other.end);
        (s < e).then(|| Interval::new(s, e))
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iso_round_trip_millis() {
        let t = Timestamp::from_ymd_hms(2013, 1, 5, 13, 30, 0).add_seconds(0.123);
        let s = t.to_iso_millis();
        assert_eq!(s, "2013-01-05T13:30:00.123Z");
        assert_eq!(s.parse::<Timestamp>().unwrap(), t);
    }

    #[test]
    fn millis_rounding_ties_earlier() {
        assert_eq!(Timestamp::from_micros(1500).round_to_millis().micros(), 1000);
        assert_eq!(Timestamp::from_micros(1501).round_to_millis().micros(), 2000);
        assert_eq!(Timestamp::from_micros(-1500).round_to_millis().micros(), -2000);
    }

    #[test]
    fn hour_of_day_fraction() {
        let t = Timestamp::from_ymd_hms(2014, 6, 1, 6, 30, 0);
        assert!((t.hour_of_day() - 6.5).abs() < 1e-12);
    }
}
