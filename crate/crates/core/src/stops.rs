//! Stop episodes: density-clustered stays, signal-loss gaps, overnight day
//! boundaries, their merging, and candidate-place attachment.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use thiserror::Error;

use crate::exec::{self, Mode};
use crate::geo::{classify_topology, haversine_distance, Circle, GeoPoint, LocalFrame, PlanarPoint, Topology};
use crate::ingest::{PlaceIndex, Trajectory, TrajectoryPoint};
use crate::zone::{format_time, parse_time, Zone};

/// GPS positioning accuracy; stop circles never shrink below it when scored.
pub const MIN_STOP_RADIUS_M: f64 = 15.0;

/// Overnight stops never last longer than one day.
pub const MAX_DAY_BOUNDARY_S: i64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopParams {
    pub d1: f64,
    pub t1: i64,
    pub d2: f64,
    pub t2: i64,
    pub d3: f64,
    pub d_merge: f64,
    pub t_merge: i64,
}

impl Default for StopParams {
    fn default() -> Self {
        Self {
            d1: 100.0,
            t1: 600,
            d2: 200.0,
            t2: 1200,
            d3: 200.0,
            d_merge: 90.0,
            t_merge: 540,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StopSource {
    Cluster,
    SignalLoss,
    DayBoundary,
}

impl StopSource {
    pub const ALL: [StopSource; 3] = [StopSource::Cluster, StopSource::SignalLoss, StopSource::DayBoundary];

    pub fn as_str(self) -> &'static str {
        match self {
            StopSource::Cluster => "cluster",
            StopSource::SignalLoss => "signal_loss",
            StopSource::DayBoundary => "day_boundary",
        }
    }
}

impl fmt::Display for StopSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StopSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StopSource::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown stop source '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stop {
    /// Empty until [`detect_user_stops`] numbers the merged stops.
    pub stop_id: String,
    pub user_id: String,
    pub center: GeoPoint,
    pub radius: f64,
    pub start_time: DateTime<Utc>,
    /// Seconds, always positive.
    pub duration: i64,
    pub source: StopSource,
    pub member_count: usize,
}

impl Stop {
    pub fn end_time(&self) -> DateTime<Utc> {
        self.start_time + Duration::seconds(self.duration)
    }

    /// Radius used for topology and the Gaussian kernel.
    pub fn effective_radius(&self) -> f64 {
        self.radius.max(MIN_STOP_RADIUS_M)
    }

    pub fn local_day(&self, zone: &Zone) -> NaiveDate {
        zone.local_date(&self.start_time)
    }
}

/// Inclusive index range `[start, end]` of a cluster stop within its trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterRun {
    pub start: usize,
    pub end: usize,
}

/// Last index of the longest run starting at `i` whose points all lie
/// strictly within `d1` of point `i`.
pub fn neighborhood_end(points: &[TrajectoryPoint], i: usize, d1: f64) -> usize {
    let mut e = i;
    while e + 1 < points.len() && haversine_distance(&points[i].position, &points[e + 1].position) < d1 {
        e += 1;
    }
    e
}

/// Member ranges of cluster stops, left to right and non-overlapping.
pub fn cluster_runs(traj: &Trajectory, d1: f64, t1: i64) -> Vec<ClusterRun> {
    let pts = &traj.points;
    let n = pts.len();
    let ends: Vec<usize> = (0..n).map(|i| neighborhood_end(pts, i, d1)).collect();
    let core = |i: usize| (pts[ends[i]].timestamp - pts[i].timestamp).num_seconds() >= t1;

    let mut runs = Vec::new();
    let mut i = 0;
    while i < n {
        if !core(i) {
            i += 1;
            continue;
        }
        let mut end = ends[i];
        let mut k = i + 1;
        while k <= end {
            if core(k) {
                end = end.max(ends[k]);
            }
            k += 1;
        }
        runs.push(ClusterRun { start: i, end });
        i = end + 1;
    }
    runs
}

fn stop_from_points(user_id: &str, points: &[TrajectoryPoint], source: StopSource) -> Stop {
    let center = GeoPoint::mean(points.iter().map(|p| &p.position)).expect("non-empty run");
    let radius = points
        .iter()
        .map(|p| haversine_distance(&center, &p.position))
        .fold(0.0, f64::max);
    let first = points.first().expect("non-empty run");
    let last = points.last().expect("non-empty run");
    Stop {
        stop_id: String::new(),
        user_id: user_id.to_string(),
        center,
        radius,
        start_time: first.timestamp,
        duration: (last.timestamp - first.timestamp).num_seconds(),
        source,
        member_count: points.len(),
    }
}

fn pair_stop(user_id: &str, a: &TrajectoryPoint, b: &TrajectoryPoint, duration: i64, source: StopSource) -> Stop {
    Stop {
        stop_id: String::new(),
        user_id: user_id.to_string(),
        center: a.position.midpoint(&b.position),
        radius: 0.5 * haversine_distance(&a.position, &b.position),
        start_time: a.timestamp,
        duration,
        source,
        member_count: 2,
    }
}

pub fn detect_cluster_stops(traj: &Trajectory, d1: f64, t1: i64) -> Vec<Stop> {
    cluster_runs(traj, d1, t1)
        .into_iter()
        .map(|r| stop_from_points(&traj.user_id, &traj.points[r.start..=r.end], StopSource::Cluster))
        .collect()
}

pub fn detect_signal_loss_stops(traj: &Trajectory, d2: f64, t2: i64) -> Vec<Stop> {
    traj.points
        .windows(2)
        .filter_map(|w| {
            let gap = (w[1].timestamp - w[0].timestamp).num_seconds();
            (gap > t2 && haversine_distance(&w[0].position, &w[1].position) < d2)
                .then(|| pair_stop(&traj.user_id, &w[0], &w[1], gap, StopSource::SignalLoss))
        })
        .collect()
}

/// `days` are one user's trajectories sorted by date.
pub fn detect_day_boundary_stops(days: &[Trajectory], d3: f64) -> Vec<Stop> {
    days.windows(2)
        .filter_map(|w| {
            let (a, b) = (w[0].points.last()?, w[1].points.first()?);
            let gap = (b.timestamp - a.timestamp).num_seconds();
            (gap > 0 && haversine_distance(&a.position, &b.position) < d3)
                .then(|| pair_stop(&w[0].user_id, a, b, gap.min(MAX_DAY_BOUNDARY_S), StopSource::DayBoundary))
        })
        .collect()
}

fn mergeable(a: &Stop, b: &Stop, d_merge: f64, t_merge: i64) -> bool {
    haversine_distance(&a.center, &b.center) < d_merge && (b.start_time - a.end_time()).num_seconds() < t_merge
}

fn merge_pair(a: &Stop, b: &Stop) -> Stop {
    let (wa, wb) = (a.member_count.max(1) as f64, b.member_count.max(1) as f64);
    let center = GeoPoint::weighted_mean([(&a.center, wa), (&b.center, wb)]).expect("positive weights");
    let radius = (haversine_distance(&center, &a.center) + a.radius).max(haversine_distance(&center, &b.center) + b.radius);
    let first = if b.start_time < a.start_time { b } else { a };
    let end = a.end_time().max(b.end_time());
    Stop {
        stop_id: first.stop_id.clone(),
        user_id: first.user_id.clone(),
        center,
        radius,
        start_time: first.start_time,
        duration: (end - first.start_time).num_seconds(),
        source: first.source,
        member_count: a.member_count + b.member_count,
    }
}

/// One pass: every maximal run of consecutive mergeable pairs collapses into
/// one stop.
fn merge_pass(stops: Vec<Stop>, d_merge: f64, t_merge: i64) -> (Vec<Stop>, bool) {
    let mut changed = false;
    let mut out: Vec<Stop> = Vec::with_capacity(stops.len());
    let mut prev: Option<Stop> = None;
    for s in stops {
        match (&prev, out.last_mut()) {
            (Some(p), Some(last)) if mergeable(p, &s, d_merge, t_merge) => {
                *last = merge_pair(last, &s);
                changed = true;
            }
            _ => out.push(s.clone()),
        }
        prev = Some(s);
    }
    (out, changed)
}

/// Merges time-consecutive stops closer than `d_merge` whose gap is below
/// `t_merge`, repeating until nothing changes.
pub fn merge_stops(stops: Vec<Stop>, d_merge: f64, t_merge: i64) -> Vec<Stop> {
    let mut stops = stops;
    stops.sort_by_key(|s| s.start_time);
    loop {
        let (next, changed) = merge_pass(stops, d_merge, t_merge);
        stops = next;
        if !changed {
            return stops;
        }
    }
}

/// All stops of one user: per-day cluster and signal-loss stops, overnight
/// stops between consecutive days, merged and numbered `{user}-{seq}`.
pub fn detect_user_stops(days: &[Trajectory], params: &StopParams) -> Vec<Stop> {
    let mut stops = Vec::new();
    for day in days {
        stops.extend(detect_cluster_stops(day, params.d1, params.t1));
        stops.extend(detect_signal_loss_stops(day, params.d2, params.t2));
    }
    stops.extend(detect_day_boundary_stops(days, params.d3));
    let mut merged = merge_stops(stops, params.d_merge, params.t_merge);
    for (i, s) in merged.iter_mut().enumerate() {
        s.stop_id = format!("{}-{}", s.user_id, i);
    }
    merged
}

/// Runs [`detect_user_stops`] for every user, users in lexicographic order.
pub fn detect_all_stops(trajectories: &[Trajectory], params: &StopParams) -> Vec<Stop> {
    detect_all_stops_with(Mode::default(), trajectories, params)
}

pub fn detect_all_stops_with(mode: Mode, trajectories: &[Trajectory], params: &StopParams) -> Vec<Stop> {
    let mut by_user: BTreeMap<&str, Vec<Trajectory>> = BTreeMap::new();
    for t in trajectories {
        by_user.entry(&t.user_id).or_default().push(t.clone());
    }
    let users: Vec<Vec<Trajectory>> = by_user
        .into_values()
        .map(|mut days| {
            days.sort_by_key(|d| d.day);
            days
        })
        .collect();
    exec::map(mode, &users, |days| detect_user_stops(days, params)).into_iter().flatten().collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidatePlace {
    /// Position in the [`PlaceIndex`].
    pub place: usize,
    pub distance: f64,
    pub topology: Topology,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopWithCandidates {
    pub stop: Stop,
    /// Ascending distance, ties by place id.
    pub candidates: Vec<CandidatePlace>,
}

impl StopWithCandidates {
    pub fn has_candidates(&self) -> bool {
        !self.candidates.is_empty()
    }
}

pub fn attach_candidates(stop: Stop, index: &PlaceIndex, search_radius: f64) -> StopWithCandidates {
    let frame = LocalFrame::new(stop.center);
    let circle = Circle::new(PlanarPoint::ORIGIN, stop.effective_radius()).expect("floored radius");
    let candidates = index
        .radius_query(&stop.center, search_radius)
        .into_iter()
        .map(|hit| CandidatePlace {
            place: hit.place,
            distance: hit.distance,
            topology: classify_topology(&circle, &index.place(hit.place).geometry_in(&frame)),
        })
        .collect();
    StopWithCandidates { stop, candidates }
}

pub fn attach_all(stops: Vec<Stop>, index: &PlaceIndex, search_radius: f64) -> Vec<StopWithCandidates> {
    attach_all_with(Mode::default(), stops, index, search_radius)
}

pub fn attach_all_with(mode: Mode, stops: Vec<Stop>, index: &PlaceIndex, search_radius: f64) -> Vec<StopWithCandidates> {
    exec::map(mode, &stops, |s| attach_candidates(s.clone(), index, search_radius))
}

#[derive(Debug, Error)]
pub enum StopIoError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("delimited text: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
}

const STOP_HEADER: [&str; 9] =
    ["stop_id", "user_id", "lat", "lon", "radius_m", "start_time", "duration_s", "source", "member_count"];

pub fn write_stops<W: Write>(out: W, stops: &[Stop], zone: &Zone) -> Result<(), StopIoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STOP_HEADER)?;
    for s in stops {
        w.write_record([
            s.stop_id.clone(),
            s.user_id.clone(),
            s.center.lat().to_string(),
            s.center.lon().to_string(),
            s.radius.to_string(),
            format_time(&s.start_time, zone),
            s.duration.to_string(),
            s.source.to_string(),
            s.member_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_stops<R: Read>(source: R, zone: &Zone) -> Result<Vec<Stop>, StopIoError> {
    let mut r = csv::Reader::from_reader(source);
    let mut stops = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| StopIoError::Row { line, message };
        let field = |i: usize| rec.get(i).ok_or_else(|| bad(format!("missing column {}", STOP_HEADER[i])));
        let num = |i: usize| field(i)?.parse::<f64>().map_err(|e| bad(format!("{}: {e}", STOP_HEADER[i])));
        let int = |i: usize| field(i)?.parse::<i64>().map_err(|e| bad(format!("{}: {e}", STOP_HEADER[i])));
        let center = GeoPoint::new(num(2)?, num(3)?).map_err(|e| bad(e.to_string()))?;
        stops.push(Stop {
            stop_id: field(0)?.to_string(),
            user_id: field(1)?.to_string(),
            center,
            radius: num(4)?,
            start_time: parse_time(field(5)?, zone).ok_or_else(|| bad("bad start_time".into()))?,
            duration: int(6)?,
            source: field(7)?.parse().map_err(bad)?,
            member_count: int(8)?.max(0) as usize,
        });
    }
    Ok(stops)
}

/// One row per (stop, candidate): `stop_id, place_id, distance_m, topology`.
pub fn write_candidates<W: Write>(out: W, stops: &[StopWithCandidates], index: &PlaceIndex) -> Result<(), StopIoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stop_id", "place_id", "distance_m", "topology"])?;
    for s in stops {
        for c in &s.candidates {
            w.write_record([
                s.stop.stop_id.as_str(),
                index.place(c.place).place_id.as_str(),
                &c.distance.to_string(),
                c.topology.as_str(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Re-joins persisted candidate rows with their stops and the place index.
pub fn read_candidates<R: Read>(source: R, stops: Vec<Stop>, index: &PlaceIndex) -> Result<Vec<StopWithCandidates>, StopIoError> {
    let place_pos: HashMap<&str, usize> =
        index.places().iter().enumerate().map(|(i, p)| (p.place_id.as_str(), i)).collect();
    let stop_pos: HashMap<String, usize> = stops.iter().enumerate().map(|(i, s)| (s.stop_id.clone(), i)).collect();
    let mut out: Vec<StopWithCandidates> =
        stops.into_iter().map(|stop| StopWithCandidates { stop, candidates: Vec::new() }).collect();
    let mut r = csv::Reader::from_reader(source);
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| StopIoError::Row { line, message };
        let get = |i: usize| rec.get(i).ok_or_else(|| bad("short row".into()));
        let s = *stop_pos.get(get(0)?).ok_or_else(|| bad(format!("unknown stop '{}'", &rec[0])))?;
        let place = *place_pos.get(get(1)?).ok_or_else(|| bad(format!("unknown place '{}'", &rec[1])))?;
        let distance = get(2)?.parse::<f64>().map_err(|e| bad(e.to_string()))?;
        let topology = match get(3)? {
            "contain" => Topology::Contain,
            "intersect" => Topology::Intersect,
            "disjoint" => Topology::Disjoint,
            other => return Err(bad(format!("unknown topology '{other}'"))),
        };
        out[s].candidates.push(CandidatePlace { place, distance, topology });
    }
    Ok(out)
}

/// Stop counts per source type.
pub fn source_counts(stops: &[Stop]) -> BTreeMap<StopSource, usize> {
    let mut counts: BTreeMap<StopSource, usize> = StopSource::ALL.iter().map(|&s| (s, 0)).collect();
    for s in stops {
        *counts.entry(s.source).or_default() += 1;
    }
    counts
}
