//! Delimited-text trajectory parsing, partitioned per user and calendar day.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate, Utc};

use super::IngestError;
use crate::geo::GeoPoint;
use crate::zone::{format_time, parse_time, Zone};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub timestamp: DateTime<Utc>,
    pub position: GeoPoint,
}

/// One user's points on one calendar day, strictly increasing in time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub user_id: String,
    pub day: NaiveDate,
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeFormat {
    #[default]
    Iso8601,
    EpochSeconds,
}

/// Maps logical trajectory columns onto header names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrajectorySchema {
    pub user: String,
    pub time: String,
    pub lat: String,
    pub lon: String,
    pub time_format: TimeFormat,
    pub delimiter: u8,
}

impl Default for TrajectorySchema {
    fn default() -> Self {
        Self {
            user: "user_id".into(),
            time: "time".into(),
            lat: "lat".into(),
            lon: "lon".into(),
            time_format: TimeFormat::Iso8601,
            delimiter: b',',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedTrajectories {
    pub trajectories: Vec<Trajectory>,
    /// Rows rejected as malformed or out of range.
    pub skipped: usize,
    /// Rows dropped because an earlier row had the same user and timestamp.
    pub duplicates: usize,
}

impl ParsedTrajectories {
    pub fn point_count(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }
}

pub fn parse_trajectories<R: Read>(
    source: R,
    schema: &TrajectorySchema,
    zone: &Zone,
) -> Result<ParsedTrajectories, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers().map_err(|e| IngestError::Csv(e.to_string()))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::SchemaMismatch(name.to_string()))
    };
    let (user_col, time_col, lat_col, lon_col) =
        (column(&schema.user)?, column(&schema.time)?, column(&schema.lat)?, column(&schema.lon)?);

    let mut rows = 0usize;
    let mut skipped = 0usize;
    let mut by_user: BTreeMap<String, Vec<TrajectoryPoint>> = BTreeMap::new();
    for record in reader.records() {
        rows += 1;
        let Ok(record) = record else {
            skipped += 1;
            continue;
        };
        let parsed = (|| {
            let user = record.get(user_col)?.to_string();
            if user.is_empty() {
                return None;
            }
            let raw_time = record.get(time_col)?;
            let timestamp = match schema.time_format {
                TimeFormat::Iso8601 => parse_time(raw_time, zone)?,
                TimeFormat::EpochSeconds => {
                    let secs: f64 = raw_time.parse().ok()?;
                    if !secs.is_finite() {
                        return None;
                    }
                    DateTime::from_timestamp(secs.floor() as i64, 0)?
                }
            };
            let lat: f64 = record.get(lat_col)?.parse().ok()?;
            let lon: f64 = record.get(lon_col)?.parse().ok()?;
            let position = GeoPoint::new(lat, lon).ok()?;
            Some((user, TrajectoryPoint { timestamp, position }))
        })();
        match parsed {
            Some((user, point)) => by_user.entry(user).or_default().push(point),
            None => skipped += 1,
        }
    }
    if rows == 0 || by_user.is_empty() {
        return Err(IngestError::EmptyInput);
    }

    let mut duplicates = 0usize;
    let mut trajectories = Vec::new();
    for (user_id, mut points) in by_user {
        // stable: the first occurrence of a timestamp stays first
        points.sort_by_key(|p| p.timestamp);
        let before = points.len();
        points.dedup_by_key(|p| p.timestamp);
        duplicates += before - points.len();

        let mut days: BTreeMap<NaiveDate, Vec<TrajectoryPoint>> = BTreeMap::new();
        for p in points {
            days.entry(zone.local_date(&p.timestamp)).or_default().push(p);
        }
        trajectories.extend(days.into_iter().map(|(day, points)| Trajectory {
            user_id: user_id.clone(),
            day,
            points,
        }));
    }
    Ok(ParsedTrajectories {
        trajectories,
        skipped,
        duplicates,
    })
}

/// Writes `user_id,time,lat,lon` rows readable with the default schema.
/// Coordinates keep their shortest round-trip form.
pub fn write_trajectories<W: Write>(out: W, trajectories: &[Trajectory], zone: &Zone) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| IngestError::Csv(e.to_string());
    w.write_record(["user_id", "time", "lat", "lon"]).map_err(csv_err)?;
    for t in trajectories {
        for p in &t.points {
            w.write_record([
                t.user_id.clone(),
                format_time(&p.timestamp, zone),
                p.position.lat().to_string(),
                p.position.lon().to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| IngestError::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ParsedTrajectories, IngestError> {
        parse_trajectories(text.as_bytes(), &TrajectorySchema::default(), &Zone::utc())
    }

    #[test]
    fn written_trajectories_read_back() {
        let zone: Zone = "+08:00".parse().unwrap();
        let text = "user_id,time,lat,lon\n\
                    u1,2012-10-01T23:59:30+08:00,39.123456789,116.30000001\n\
                    u1,2012-10-02T00:00:30+08:00,39.99,116.3\n\
                    u2,2012-10-01T08:00:00+08:00,40.0,116.0\n";
        let parsed = parse_trajectories(text.as_bytes(), &TrajectorySchema::default(), &zone).unwrap();
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &parsed.trajectories, &zone).unwrap();
        let again = parse_trajectories(buf.as_slice(), &TrajectorySchema::default(), &Zone::utc()).unwrap();
        let flat = |p: &ParsedTrajectories| p.trajectories.iter().flat_map(|t| t.points.clone()).collect::<Vec<_>>();
        assert_eq!(flat(&again), flat(&parsed));
        assert_eq!(parsed.trajectories.len(), 3);
    }

    #[test]
    fn single_user_single_day() {
        let out = parse(
            "user_id,time,lat,lon\n\
             u1,2012-10-01T08:00:00Z,39.99,116.30\n\
             u1,2012-10-01T08:00:30Z,39.99,116.30\n\
             u1,2012-10-01T08:01:00Z,39.99,116.30\n",
        )
        .unwrap();
        assert_eq!(out.trajectories.len(), 1);
        assert_eq!(out.trajectories[0].len(), 3);
        assert_eq!(out.skipped, 0);
    }

    #[test]
    fn sorts_dedups_and_skips() {
        let out = parse(
            "lat,lon,user_id,time\n\
             39.99,116.31,u1,2012-10-01T08:01:00Z\n\
             39.99,116.30,u1,2012-10-01T08:00:00Z\n\
             91.0,116.30,u1,2012-10-01T08:02:00Z\n\
             39.98,116.30,u1,2012-10-01T08:00:00Z\n\
             abc,116.30,u1,2012-10-01T08:03:00Z\n",
        )
        .unwrap();
        let t = &out.trajectories[0];
        assert_eq!(t.len(), 2);
        assert!(t.points[0].timestamp < t.points[1].timestamp);
        assert_eq!(t.points[0].position.lat(), 39.99);
        assert_eq!(out.skipped, 2);
        assert_eq!(out.duplicates, 1);
    }

    #[test]
    fn partitions_by_local_day() {
        let text = "user_id,time,lat,lon\n\
                    u1,2012-10-01T15:30:00Z,39.99,116.30\n\
                    u1,2012-10-01T16:30:00Z,39.99,116.30\n\
                    u2,2012-10-01T10:00:00Z,39.99,116.30\n";
        let utc = parse(text).unwrap();
        assert_eq!(utc.trajectories.len(), 2);
        let beijing = parse_trajectories(text.as_bytes(), &TrajectorySchema::default(), &"+08:00".parse().unwrap())
            .unwrap();
        assert_eq!(beijing.trajectories.len(), 3);
        assert_eq!(beijing.trajectories[0].day.to_string(), "2012-10-01");
        assert_eq!(beijing.trajectories[1].day.to_string(), "2012-10-02");
    }

    #[test]
    fn epoch_seconds_and_custom_columns() {
        let schema = TrajectorySchema {
            user: "uid".into(),
            time: "ts".into(),
            lat: "y".into(),
            lon: "x".into(),
            time_format: TimeFormat::EpochSeconds,
            delimiter: b';',
        };
        let out = parse_trajectories("uid;ts;y;x\na;1349078400;39.9;116.3\n".as_bytes(), &schema, &Zone::utc()).unwrap();
        assert_eq!(out.trajectories[0].points[0].timestamp.timestamp(), 1_349_078_400);
    }

    #[test]
    fn errors() {
        assert!(matches!(parse("user_id,time,lat\n"), Err(IngestError::SchemaMismatch(c)) if c == "lon"));
        assert!(matches!(parse("user_id,time,lat,lon\n"), Err(IngestError::EmptyInput)));
    }
}
