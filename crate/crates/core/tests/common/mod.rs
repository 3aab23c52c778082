#![allow(dead_code)]

use chrono::{DateTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semtraj::geo::{GeoPoint, LocalFrame, PlanarPoint};
use semtraj::ingest::{GeoPolygon, Place, PlaceCategory, PlaceIndex};
use semtraj::stops::{attach_candidates, Stop, StopSource, StopWithCandidates};

pub fn origin() -> GeoPoint {
    GeoPoint::new(39.98, 116.32).unwrap()
}

pub fn ts(secs: i64) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2012, 10, 1, 0, 0, 0).unwrap() + chrono::Duration::seconds(secs)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixed points and square regions scattered over a square of half-side
/// `extent` metres.
pub fn world(rng: &mut ChaCha8Rng, places: usize, extent: f64) -> PlaceIndex {
    let frame = LocalFrame::new(origin());
    let mut out = Vec::with_capacity(places);
    for i in 0..places {
        let c = PlaceCategory::ALL[rng.random_range(0..PlaceCategory::COUNT)];
        let (x, y) = (rng.random_range(-extent..extent), rng.random_range(-extent..extent));
        if rng.random_bool(0.25) {
            let h = rng.random_range(5.0..50.0);
            let ring = [(-h, -h), (h, -h), (h, h), (-h, h)]
                .iter()
                .map(|&(dx, dy)| frame.unproject(PlanarPoint::new(x + dx, y + dy)))
                .collect();
            out.push(Place::roi(format!("r{i:04}"), c, vec![GeoPolygon { exterior: ring, holes: vec![] }]).unwrap());
        } else {
            out.push(Place::poi(format!("p{i:04}"), c, frame.unproject(PlanarPoint::new(x, y))));
        }
    }
    PlaceIndex::new(out).unwrap()
}

/// Chronological stops of `users` users spread over a few days.
pub fn stops(rng: &mut ChaCha8Rng, n: usize, users: usize, extent: f64, index: &PlaceIndex) -> Vec<StopWithCandidates> {
    let frame = LocalFrame::new(origin());
    let mut clock = vec![0i64; users];
    (0..n)
        .map(|i| {
            let u = rng.random_range(0..users);
            clock[u] += rng.random_range(600..10_800);
            let duration = rng.random_range(300..20_000);
            let stop = Stop {
                stop_id: format!("u{u}-{i}"),
                user_id: format!("u{u}"),
                center: frame.unproject(PlanarPoint::new(rng.random_range(-extent..extent), rng.random_range(-extent..extent))),
                radius: rng.random_range(0.0..80.0),
                start_time: ts(clock[u]),
                duration,
                source: StopSource::Cluster,
                member_count: 5,
            };
            clock[u] += duration;
            attach_candidates(stop, index, 200.0)
        })
        .collect()
}
