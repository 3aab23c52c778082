//! Calendar-day and hour-of-day interpretation of absolute timestamps.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, FixedOffset, NaiveDate, NaiveDateTime, Offset, TimeZone, Timelike, Utc};
use chrono_tz::Tz;

/// Either a fixed UTC offset (`+08:00`) or an IANA zone name (`Asia/Shanghai`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Zone {
    Fixed(FixedOffset),
    Named(Tz),
}

impl Default for Zone {
    fn default() -> Self {
        Zone::Fixed(Utc.fix())
    }
}

impl Zone {
    pub fn utc() -> Self {
        Self::default()
    }

    pub fn local_date(&self, t: &DateTime<Utc>) -> NaiveDate {
        match self {
            Zone::Fixed(off) => t.with_timezone(off).date_naive(),
            Zone::Named(tz) => t.with_timezone(tz).date_naive(),
        }
    }

    pub fn local_hour(&self, t: &DateTime<Utc>) -> u32 {
        match self {
            Zone::Fixed(off) => t.with_timezone(off).hour(),
            Zone::Named(tz) => t.with_timezone(tz).hour(),
        }
    }

    /// Interprets a wall-clock time in this zone. Ambiguous times resolve to
    /// the earlier instant; nonexistent times yield `None`.
    pub fn from_local(&self, naive: &NaiveDateTime) -> Option<DateTime<Utc>> {
        match self {
            Zone::Fixed(off) => off.from_local_datetime(naive).earliest().map(|t| t.with_timezone(&Utc)),
            Zone::Named(tz) => tz.from_local_datetime(naive).earliest().map(|t| t.with_timezone(&Utc)),
        }
    }
}

impl FromStr for Zone {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("utc") || s == "Z" {
            return Ok(Zone::utc());
        }
        if let Some(rest) = s.strip_prefix(['+', '-']) {
            let sign = if s.starts_with('-') { -1 } else { 1 };
            let (h, m) = rest.split_once(':').unwrap_or((rest, "0"));
            let h: i32 = h.parse().map_err(|_| format!("bad UTC offset '{s}'"))?;
            let m: i32 = m.parse().map_err(|_| format!("bad UTC offset '{s}'"))?;
            return FixedOffset::east_opt(sign * (h * 3600 + m * 60))
                .map(Zone::Fixed)
                .ok_or_else(|| format!("UTC offset out of range '{s}'"));
        }
        s.parse::<Tz>().map(Zone::Named).map_err(|_| format!("unknown time zone '{s}'"))
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Zone::Fixed(off) => write!(f, "{off}"),
            Zone::Named(tz) => write!(f, "{}", tz.name()),
        }
    }
}

/// ISO-8601 rendering with the zone's offset, seconds precision.
pub fn format_time(t: &DateTime<Utc>, zone: &Zone) -> String {
    match zone {
        Zone::Fixed(off) => t.with_timezone(off).format("%Y-%m-%dT%H:%M:%S%:z").to_string(),
        Zone::Named(tz) => t.with_timezone(tz).format("%Y-%m-%dT%H:%M:%S%:z").to_string(),
    }
}

/// Parses RFC 3339 / ISO-8601 with an offset, or a naive local timestamp
/// interpreted in `zone`.
pub fn parse_time(s: &str, zone: &Zone) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    if let Ok(t) = DateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%:z") {
        return Some(t.with_timezone(&Utc));
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M", "%Y/%m/%d %H:%M:%S"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
        .and_then(|naive| zone.from_local(&naive))
}
