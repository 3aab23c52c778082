//! Seeded synthetic worlds with planted temporal behaviour: a district place
//! map, a stop-level corpus with ground truth, and a GPS trajectory fixture
//! with activity logs.

use std::fmt::Write as _;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde_json::json;

use crate::evaluation::ActivityLogEntry;
use crate::geo::{GeoPoint, LocalFrame, PlanarPoint};
use crate::ingest::{GeoPolygon, Place, PlaceCategory, PlaceIndex, PlaceShape};
use crate::priors::BinScheme;
use crate::stops::{attach_candidates, Stop, StopSource, StopWithCandidates};
use crate::zone::{format_time, Zone};

const NCAT: usize = PlaceCategory::COUNT;

/// Per-category planted distributions over the bins of a [`BinScheme`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedDistributions {
    pub category_weights: [f64; NCAT],
    /// `duration[category][bin]`
    pub duration: Vec<Vec<f64>>,
    /// `time[category][bin]`
    pub time: Vec<Vec<f64>>,
}

fn bumps(centers: &[(f64, f64, f64)], xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|x| 0.02 + centers.iter().map(|(c, w, sd)| w * (-(x - c).powi(2) / (2.0 * sd * sd)).exp()).sum::<f64>())
        .collect()
}

/// Rescales rows and columns of `weights[j] · rows[j]` until each column
/// carries the same mass, then returns the rows renormalized.
pub fn sinkhorn_balance(rows: &[Vec<f64>], weights: &[f64], iterations: usize) -> Vec<Vec<f64>> {
    let b = rows[0].len();
    let mut a: Vec<Vec<f64>> = rows.iter().zip(weights).map(|(r, w)| r.iter().map(|v| v * w).collect()).collect();
    let total: f64 = weights.iter().sum();
    for _ in 0..iterations {
        for k in 0..b {
            let col: f64 = a.iter().map(|r| r[k]).sum();
            for r in a.iter_mut() {
                r[k] *= total / b as f64 / col;
            }
        }
        for (r, w) in a.iter_mut().zip(weights) {
            let s: f64 = r.iter().sum();
            r.iter_mut().for_each(|v| *v *= w / s);
        }
    }
    a.into_iter().map(|r| {
        let s: f64 = r.iter().sum();
        r.into_iter().map(|v| v / s).collect()
    }).collect()
}

impl PlantedDistributions {
    /// Daily rhythms per category (night-heavy homes, office hours, meal
    /// peaks, ...) balanced so every bin receives the same share of visits
    /// under uniform category weights.
    pub fn daily_rhythms(scheme: &BinScheme) -> Self {
        use PlaceCategory::*;
        let hours: Vec<f64> = (0..scheme.time_bins()).map(|k| if k == 0 { 3.0 } else { k as f64 + 5.5 }).collect();
        let time_shape = |c: PlaceCategory| match c {
            Residential => bumps(&[(5.0, 1.0, 3.0), (21.0, 0.8, 2.2)], &hours),
            Working => bumps(&[(9.5, 1.0, 2.0), (15.0, 0.7, 2.0), (3.0, 0.3, 2.5)], &hours),
            Service => bumps(&[(11.0, 1.0, 2.2), (17.0, 0.6, 2.0), (3.0, 0.4, 2.5)], &hours),
            Dining => bumps(&[(12.5, 1.0, 1.8), (18.5, 0.9, 1.8), (3.0, 0.2, 2.5)], &hours),
            School => bumps(&[(9.0, 1.0, 2.2), (14.0, 0.6, 2.0)], &hours),
            Leisure => bumps(&[(21.5, 1.0, 2.0), (16.0, 0.5, 2.0), (3.0, 0.6, 2.5)], &hours),
            Shopping => bumps(&[(15.5, 1.0, 2.2), (19.5, 0.6, 2.0), (3.0, 0.2, 2.5)], &hours),
        };
        let nd = scheme.duration_bins();
        let mids: Vec<f64> = (0..nd).map(|m| m as f64).collect();
        let duration_shape = |c: PlaceCategory| match c {
            Residential => bumps(&[(4.0, 1.0, 0.8)], &mids),
            Working => bumps(&[(3.3, 1.0, 0.6)], &mids),
            Service => bumps(&[(0.0, 1.0, 0.7)], &mids),
            Dining => bumps(&[(1.0, 1.0, 0.6)], &mids),
            School => bumps(&[(2.7, 1.0, 0.6)], &mids),
            Leisure => bumps(&[(2.0, 1.0, 0.6)], &mids),
            Shopping => bumps(&[(1.3, 1.0, 0.7)], &mids),
        };
        let weights = [1.0 / NCAT as f64; NCAT];
        let time: Vec<Vec<f64>> = PlaceCategory::ALL.iter().map(|&c| time_shape(c)).collect();
        let duration: Vec<Vec<f64>> = PlaceCategory::ALL.iter().map(|&c| duration_shape(c)).collect();
        Self {
            category_weights: weights,
            duration: sinkhorn_balance(&duration, &weights, 500),
            time: sinkhorn_balance(&time, &weights, 500),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceMapConfig {
    pub origin: GeoPoint,
    pub districts_per_side: usize,
    /// Spacing of district centers.
    pub district_m: f64,
    /// Places of a district lie within this distance of its center.
    pub district_radius_m: f64,
    pub places_per_district: usize,
    /// Share of a district's places in its dominant category.
    pub purity: f64,

    /// Share of places drawn as small square regions instead of points.
    pub roi_fraction: f64,
}

impl Default for PlaceMapConfig {
    fn default() -> Self {
        Self {
            origin: GeoPoint::new(40.03, 116.32).expect("valid origin"),
            districts_per_side: 10,
            district_m: 600.0,
            district_radius_m: 150.0,
            places_per_district: 80,
            purity: 0.92,
            roi_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlaceMap {
    pub index: PlaceIndex,
    pub frame: LocalFrame,
    /// Dominant category per district, row-major from the origin.
    pub district_category: Vec<PlaceCategory>,
    /// District of every place.
    pub district: Vec<usize>,
    /// Planar anchor of every place (point or square center).
    pub anchors: Vec<PlanarPoint>,
}

impl PlaceMap {
    pub fn places_of(&self, c: PlaceCategory) -> Vec<usize> {
        (0..self.index.len()).filter(|&i| self.index.place(i).category == c).collect()
    }

    /// Places of category `c` inside districts dominated by `c`.
    pub fn typical_places_of(&self, c: PlaceCategory) -> Vec<usize> {
        (0..self.index.len())
            .filter(|&i| self.index.place(i).category == c && self.district_category[self.district[i]] == c)
            .collect()
    }
}

/// Lays out a grid of round districts, each dominated by one category.
pub fn generate_place_map(cfg: &PlaceMapConfig, rng: &mut ChaCha8Rng) -> PlaceMap {
    let frame = LocalFrame::new(cfg.origin);
    let n = cfg.districts_per_side * cfg.districts_per_side;
    let mut district_category: Vec<PlaceCategory> = (0..n).map(|i| PlaceCategory::ALL[i % NCAT]).collect();
    district_category.shuffle(rng);
    let mut district = Vec::new();
    let mut places = Vec::new();
    let mut anchors = Vec::new();
    for (d, &dominant) in district_category.iter().enumerate() {
        let (row, col) = (d / cfg.districts_per_side, d % cfg.districts_per_side);
        for _ in 0..cfg.places_per_district {
            let category = if rng.random_bool(cfg.purity) {
                dominant
            } else {
                *PlaceCategory::ALL.iter().filter(|&&c| c != dominant).collect::<Vec<_>>().choose(rng).copied().expect("six others")
            };
            let r = cfg.district_radius_m * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let at = PlanarPoint::new(
                (col as f64 + 0.5) * cfg.district_m + r * phi.cos(),
                (row as f64 + 0.5) * cfg.district_m + r * phi.sin(),
            );
            let id = format!("{}{:05}", if rng.random_bool(cfg.roi_fraction) { "r" } else { "p" }, places.len());
            let place = if id.starts_with('r') {
                let h = rng.random_range(10.0..30.0);
                let ring = [(-h, -h), (h, -h), (h, h), (-h, h)]
                    .iter()
                    .map(|&(dx, dy)| frame.unproject(PlanarPoint::new(at.x + dx, at.y + dy)))
                    .collect();
                Place::roi(id, category, vec![GeoPolygon { exterior: ring, holes: vec![] }]).expect("square is valid")
            } else {
                Place::poi(id, category, frame.unproject(at))
            };
            places.push(place);
            anchors.push(at);
            district.push(d);
        }
    }
    PlaceMap {
        index: PlaceIndex::new(places).expect("map has places"),
        frame,
        district_category,
        district,
        anchors,
    }
}

/// Inclusive-exclusive seconds range of a duration bin, at least five
/// minutes long.
fn duration_range(scheme: &BinScheme, m: usize) -> (i64, i64) {
    let e = scheme.duration_edges();
    let lo = ((e[m] * 60.0) as i64).max(300);
    let hi = (e[m + 1] * 60.0) as i64;
    (lo, hi.max(lo + 60))
}

/// Seconds after local midnight covered by a time bin.
fn time_range(k: usize) -> (i64, i64) {
    if k == 0 {
        (0, 6 * 3600)
    } else {
        let h = k as i64 + 5;
        (h * 3600, (h + 1) * 3600)
    }
}

fn sample_point_near(map: &PlaceMap, place: usize, noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> PlanarPoint {
    let a = map.anchors[place];
    let (dx, dy) = match map.index.place(place).shape() {
        PlaceShape::Point(_) => (0.0, 0.0),
        PlaceShape::Polygon(_) => (rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)),
    };
    PlanarPoint::new(a.x + dx + noise.sample(rng), a.y + dy + noise.sample(rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopCorpusConfig {
    pub seed: u64,
    pub stops: usize,
    pub users: usize,
    pub start_date: NaiveDate,
    /// Standard deviation of the stop center around the visited place.
    pub gps_noise_m: f64,
    pub min_radius_m: f64,
    pub max_radius_m: f64,
    pub search_radius_m: f64,
    /// Probability that a visit goes to a place in a district dominated by
    /// the visited category rather than to any place of that category.
    pub typical_visit_share: f64,
    pub map: PlaceMapConfig,
}

impl Default for StopCorpusConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            stops: 10_000,
            users: 50,
            start_date: NaiveDate::from_ymd_opt(2012, 10, 1).expect("valid date"),
            gps_noise_m: 40.0,
            min_radius_m: 15.0,
            max_radius_m: 50.0,
            search_radius_m: 200.0,
            typical_visit_share: 0.95,
            map: PlaceMapConfig::default(),
        }
    }
}

/// Stops with the category and place actually visited, and a log entry
/// spanning each stop exactly. Every stop sits alone on its user-day.
#[derive(Debug, Clone)]
pub struct SyntheticStops {
    pub map: PlaceMap,
    pub planted: PlantedDistributions,
    pub stops: Vec<StopWithCandidates>,
    pub truth: Vec<PlaceCategory>,
    pub truth_place: Vec<usize>,
    pub logs: Vec<ActivityLogEntry>,
}

/// Stop-level corpus in UTC: draws a category, one of its places, a start
/// time bin and a duration bin from the planted distributions, then blurs
/// the stop center around the place.
pub fn generate_stop_corpus(cfg: &StopCorpusConfig, scheme: &BinScheme) -> SyntheticStops {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let map = generate_place_map(&cfg.map, &mut rng);
    let planted = PlantedDistributions::daily_rhythms(scheme);
    let by_cat: Vec<Vec<usize>> = PlaceCategory::ALL.iter().map(|&c| map.places_of(c)).collect();
    let typical: Vec<Vec<usize>> = PlaceCategory::ALL.iter().map(|&c| map.typical_places_of(c)).collect();
    let cat_dist = WeightedIndex::new(planted.category_weights).expect("positive weights");
    let time_dist: Vec<_> = planted.time.iter().map(|r| WeightedIndex::new(r).expect("positive row")).collect();
    let dur_dist: Vec<_> = planted.duration.iter().map(|r| WeightedIndex::new(r).expect("positive row")).collect();
    let noise = Normal::new(0.0, cfg.gps_noise_m).expect("finite noise");
    let mut out = SyntheticStops {
        planted: planted.clone(),
        stops: Vec::with_capacity(cfg.stops),
        truth: Vec::with_capacity(cfg.stops),
        truth_place: Vec::with_capacity(cfg.stops),
        logs: Vec::with_capacity(cfg.stops),
        map,
    };
    for s in 0..cfg.stops {
        let j = cat_dist.sample(&mut rng);
        let category = PlaceCategory::ALL[j];
        let pool = if rng.random_bool(cfg.typical_visit_share) && !typical[j].is_empty() { &typical[j] } else { &by_cat[j] };
        let place = *pool.choose(&mut rng).expect("every category has places");
        let center = out.map.frame.unproject(sample_point_near(&out.map, place, &noise, &mut rng));
        let (t0, t1) = time_range(time_dist[j].sample(&mut rng));
        let (d0, d1) = duration_range(scheme, dur_dist[j].sample(&mut rng));
        let user = s % cfg.users;
        let day = cfg.start_date + Duration::days((s / cfg.users) as i64);
        let midnight = day.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
        let start_time = midnight + Duration::seconds(rng.random_range(t0..t1));
        let duration = rng.random_range(d0..d1);
        let stop = Stop {
            stop_id: format!("s{user:03}-{s}"),
            user_id: format!("s{user:03}"),
            center,
            radius: rng.random_range(cfg.min_radius_m..cfg.max_radius_m),
            start_time,
            duration,
            source: StopSource::Cluster,
            member_count: (duration / 60).max(2) as usize,
        };
        out.logs.push(ActivityLogEntry {
            user_id: stop.user_id.clone(),
            date: day,
            start: start_time,
            end: stop.end_time(),
            category,
            activity: None,
        });
        out.stops.push(attach_candidates(stop, &out.map.index, cfg.search_radius_m));
        out.truth.push(category);
        out.truth_place.push(place);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFixtureConfig {
    pub seed: u64,
    pub users: usize,
    pub days: usize,
    pub start_date: NaiveDate,
    pub zone: Zone,
    pub sample_interval_s: i64,
    pub jitter_m: f64,
    pub speed_mps: f64,
    /// Visits go to places within this distance of home when possible.
    pub roam_m: f64,
    pub map: PlaceMapConfig,
}

impl Default for TrajectoryFixtureConfig {
    fn default() -> Self {
        Self {
            seed: 11,
            users: 6,
            days: 3,
            start_date: NaiveDate::from_ymd_opt(2012, 10, 1).expect("valid date"),
            zone: "+08:00".parse().expect("valid offset"),
            sample_interval_s: 60,
            jitter_m: 6.0,
            speed_mps: 8.0,
            roam_m: 1500.0,
            map: PlaceMapConfig {
                districts_per_side: 8,
                ..PlaceMapConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixturePoint {
    pub user_id: String,
    pub time: DateTime<Utc>,
    pub position: GeoPoint,
}

#[derive(Debug, Clone)]
pub struct TrajectoryFixture {
    pub map: PlaceMap,
    pub planted: PlantedDistributions,
    pub points: Vec<FixturePoint>,
    pub logs: Vec<ActivityLogEntry>,
    pub zone: Zone,
}

struct Day<'a> {
    user: &'a str,
    date: NaiveDate,
    midnight: DateTime<Utc>,
    points: Vec<FixturePoint>,
    logs: Vec<ActivityLogEntry>,
}

impl Day<'_> {
    fn at(&self, secs: i64) -> DateTime<Utc> {
        self.midnight + Duration::seconds(secs)
    }

    fn push(&mut self, secs: i64, p: PlanarPoint, frame: &LocalFrame) {
        self.points.push(FixturePoint { user_id: self.user.to_string(), time: self.at(secs), position: frame.unproject(p) });
    }

    fn log(&mut self, start: i64, end: i64, category: PlaceCategory) {
        self.logs.push(ActivityLogEntry {
            user_id: self.user.to_string(),
            date: self.date,
            start: self.at(start),
            end: self.at(end),
            category,
            activity: None,
        });
    }
}

const DAY_S: i64 = 86_400;

/// Daily itineraries: each user leaves home in the morning, chains visits
/// whose categories follow the planted time-of-day rhythm and whose
/// durations follow the planted duration rhythm, and returns home for the
/// night. Points are sampled at a fixed interval with jitter while dwelling
/// and along straight lines while travelling.
pub fn generate_trajectory_fixture(cfg: &TrajectoryFixtureConfig, scheme: &BinScheme) -> TrajectoryFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let map = generate_place_map(&cfg.map, &mut rng);
    let planted = PlantedDistributions::daily_rhythms(scheme);
    let dur_dist: Vec<_> = planted.duration.iter().map(|r| WeightedIndex::new(r).expect("positive row")).collect();
    let jitter = Normal::new(0.0, cfg.jitter_m).expect("finite jitter");
    let residential = map.places_of(PlaceCategory::Residential);
    let step = cfg.sample_interval_s;
    let mut points = Vec::new();
    let mut logs = Vec::new();
    for u in 0..cfg.users {
        let user = format!("u{u:02}");
        let home = *residential.choose(&mut rng).expect("residential places exist");
        let near: Vec<Vec<usize>> = PlaceCategory::ALL
            .iter()
            .map(|&c| {
                let all = map.places_of(c);
                let close: Vec<usize> = all.iter().copied().filter(|&i| i != home && map.anchors[i].distance(map.anchors[home]) <= cfg.roam_m).collect();
                if close.is_empty() { all } else { close }
            })
            .collect();
        for d in 0..cfg.days {
            let date = cfg.start_date + Duration::days(d as i64);
            let midnight = cfg.zone.from_local(&date.and_hms_opt(0, 0, 0).expect("midnight")).expect("unambiguous midnight");
            let mut day = Day { user: &user, date, midnight, points: Vec::new(), logs: Vec::new() };
            let dwell = |day: &mut Day, rng: &mut ChaCha8Rng, place: usize, from: i64, to: i64| {
                let mut t = from;
                while t < to {
                    let p = map.anchors[place];
                    day.push(t, PlanarPoint::new(p.x + jitter.sample(rng), p.y + jitter.sample(rng)), &map.frame);
                    t += step;
                }
                t
            };
            let travel = |day: &mut Day, from_place: usize, to_place: usize, mut t: i64| {
                let (a, b) = (map.anchors[from_place], map.anchors[to_place]);
                let secs = (a.distance(b) / cfg.speed_mps).ceil() as i64;
                let end = t + secs;
                while t < end {
                    let f = (t - (end - secs)) as f64 / secs as f64;
                    day.push(t, PlanarPoint::new(a.x + (b.x - a.x) * f, a.y + (b.y - a.y) * f), &map.frame);
                    t += step;
                }
                t
            };
            let leave = rng.random_range(6 * 3600 + 1800..9 * 3600);
            let mut t = dwell(&mut day, &mut rng, home, 0, leave);
            day.log(0, t, PlaceCategory::Residential);
            let mut here = home;
            let back_home = rng.random_range(19 * 3600..22 * 3600);
            loop {
                let k = scheme.bin_time(&day.at(t), &cfg.zone);
                let weights: Vec<f64> = (1..NCAT).map(|j| planted.time[j][k] * planted.category_weights[j]).collect();
                let j = 1 + WeightedIndex::new(&weights).expect("positive weights").sample(&mut rng);
                let next = *near[j].choose(&mut rng).expect("category has places");
                let arrive = travel(&mut day, here, next, t);
                let (d0, d1) = duration_range(scheme, dur_dist[j].sample(&mut rng));
                let stay = rng.random_range(d0..d1).min(back_home.max(arrive + 1200) - arrive).max(900);
                let until = dwell(&mut day, &mut rng, next, arrive, arrive + stay);
                day.log(arrive, until, PlaceCategory::ALL[j]);
                here = next;
                t = until;
                if t >= back_home || t > DAY_S - 4 * 3600 {
                    break;
                }
            }
            let arrive = travel(&mut day, here, home, t);
            let end = dwell(&mut day, &mut rng, home, arrive, DAY_S);
            day.log(arrive, end.min(DAY_S), PlaceCategory::Residential);
            points.extend(day.points);
            logs.extend(day.logs);
        }
    }
    TrajectoryFixture { map, planted, points, logs, zone: cfg.zone.clone() }
}

/// `user_id,time,lat,lon` rows.
pub fn trajectory_csv(points: &[FixturePoint], zone: &Zone) -> String {
    let mut s = String::from("user_id,time,lat,lon\n");
    for p in points {
        writeln!(s, "{},{},{:.7},{:.7}", p.user_id, format_time(&p.time, zone), p.position.lat(), p.position.lon()).unwrap();
    }
    s
}

/// `user,date,start,end,category` rows with full timestamps.
pub fn activity_log_csv(logs: &[ActivityLogEntry], zone: &Zone) -> String {
    let mut s = String::from("user,date,start,end,category\n");
    for l in logs {
        writeln!(s, "{},{},{},{},{}", l.user_id, l.date, format_time(&l.start, zone), format_time(&l.end, zone), l.category).unwrap();
    }
    s
}

fn poi_type(c: PlaceCategory) -> &'static str {
    match c {
        PlaceCategory::Residential => "Residential",
        PlaceCategory::Working => "Company",
        PlaceCategory::Service => "Life Services",
        PlaceCategory::Dining => "Dining",
        PlaceCategory::School => "School",
        PlaceCategory::Leisure => "Leisure",
        PlaceCategory::Shopping => "Shopping",
    }
}

fn osm_tag(c: PlaceCategory) -> (&'static str, &'static str) {
    match c {
        PlaceCategory::Residential => ("landuse", "residential"),
        PlaceCategory::Working => ("office", "company"),
        PlaceCategory::Service => ("amenity", "hospital"),
        PlaceCategory::Dining => ("amenity", "restaurant"),
        PlaceCategory::School => ("amenity", "school"),
        PlaceCategory::Leisure => ("leisure", "park"),
        PlaceCategory::Shopping => ("shop", "mall"),
    }
}

/// Raw-tagged feature collections `(points of interest, regions)` in the
/// shape of the ingest inputs.
pub fn raw_place_geojson(index: &PlaceIndex) -> (String, String) {
    let mut pois = Vec::new();
    let mut rois = Vec::new();
    for p in index.places() {
        match p.shape() {
            PlaceShape::Point(g) => pois.push(json!({
                "type": "Feature",
                "properties": {"id": p.place_id, "type": poi_type(p.category)},
                "geometry": {"type": "Point", "coordinates": [g.lon(), g.lat()]},
            })),
            PlaceShape::Polygon(parts) => {
                let (k, v) = osm_tag(p.category);
                let mut ring: Vec<[f64; 2]> = parts[0].exterior.iter().map(|g| [g.lon(), g.lat()]).collect();
                ring.push(ring[0]);
                rois.push(json!({
                    "type": "Feature",
                    "properties": {"osm_id": p.place_id, k: v},
                    "geometry": {"type": "Polygon", "coordinates": [ring]},
                }));
            }
        }
    }
    let fc = |features: Vec<serde_json::Value>| serde_json::to_string(&json!({"type": "FeatureCollection", "features": features})).expect("json");
    (fc(pois), fc(rois))
}
