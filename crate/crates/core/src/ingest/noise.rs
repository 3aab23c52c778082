//! Drift removal by speed and turning-angle thresholds.

use super::trajectory::{Trajectory, TrajectoryPoint};
use crate::geo::{haversine_distance, turning_angle};

pub const DEFAULT_MAX_SPEED_KMH: f64 = 180.0;
pub const DEFAULT_MIN_ANGLE_DEG: f64 = 30.0;

/// Removes points whose inbound speed exceeds `max_speed_kmh` or whose
/// turning angle is below `min_angle_deg`, repeating until a pass removes
/// nothing. Within a pass, speeds and angles are measured from the last kept
/// point so a single spike does not take its neighbours with it. The first
/// and last points are exempt from the angle test; an undefined angle
/// (coincident neighbours) passes.
pub fn filter_noise(traj: &Trajectory, max_speed_kmh: f64, min_angle_deg: f64) -> Trajectory {
    let mut points = traj.points.clone();
    loop {
        let (kept, removed) = noise_pass(&points, max_speed_kmh, min_angle_deg);
        points = kept;
        if removed == 0 {
            break;
        }
    }
    Trajectory {
        user_id: traj.user_id.clone(),
        day: traj.day,
        points,
    }
}

fn noise_pass(points: &[TrajectoryPoint], max_speed_kmh: f64, min_angle_deg: f64) -> (Vec<TrajectoryPoint>, usize) {
    let n = points.len();
    let mut kept: Vec<TrajectoryPoint> = Vec::with_capacity(n);
    for (i, p) in points.iter().enumerate() {
        let Some(prev) = kept.last() else {
            kept.push(*p);
            continue;
        };
        let dt = (p.timestamp - prev.timestamp).num_seconds() as f64;
        let speed_kmh = if dt > 0.0 {
            haversine_distance(&prev.position, &p.position) / dt * 3.6
        } else {
            f64::INFINITY
        };
        if speed_kmh > max_speed_kmh {
            continue;
        }
        if i + 1 < n {
            if let Ok(angle) = turning_angle(&prev.position, &p.position, &points[i + 1].position) {
                if angle < min_angle_deg {
                    continue;
                }
            }
        }
        kept.push(*p);
    }
    let removed = n - kept.len();
    (kept, removed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{GeoPoint, LocalFrame, PlanarPoint};
    use chrono::{DateTime, NaiveDate};
    use proptest::prelude::*;

    fn frame() -> LocalFrame {
        LocalFrame::new(GeoPoint::new(39.99, 116.3).unwrap())
    }

    fn traj(pts: &[(i64, f64, f64)]) -> Trajectory {
        let f = frame();
        Trajectory {
            user_id: "u".into(),
            day: NaiveDate::from_ymd_opt(2012, 10, 1).unwrap(),
            points: pts
                .iter()
                .map(|&(t, x, y)| TrajectoryPoint {
                    timestamp: DateTime::from_timestamp(1_349_078_400 + t, 0).unwrap(),
                    position: f.unproject(PlanarPoint::new(x, y)),
                })
                .collect(),
        }
    }

    #[test]
    fn stationary_points_survive() {
        let t = traj(&[(0, 0.0, 0.0), (30, 0.0, 0.0), (60, 0.0, 0.0), (90, 0.0, 0.0)]);
        assert_eq!(filter_noise(&t, 180.0, 30.0), t);
    }

    #[test]
    fn spike_is_removed() {
        // 1 km in 1 s is 3600 km/h
        let t = traj(&[(0, 0.0, 0.0), (1, 1000.0, 0.0), (2, 0.0, 0.0), (32, 0.0, 0.0)]);
        let out = filter_noise(&t, 180.0, 30.0);
        assert_eq!(out.len(), 3);
        assert!(out.points.iter().all(|p| p.position == t.points[0].position));
    }

    #[test]
    fn smooth_path_survives() {
        // 50 km/h is about 13.9 m/s
        let pts: Vec<_> = (0..20).map(|i| (i * 10, i as f64 * 138.9, 0.0)).collect();
        let t = traj(&pts);
        assert_eq!(filter_noise(&t, 180.0, 30.0), t);
    }

    #[test]
    fn sharp_zigzag_is_removed() {
        let t = traj(&[(0, 0.0, 0.0), (30, 100.0, 0.0), (60, 200.0, 0.0), (90, 20.0, 5.0), (120, 300.0, 0.0)]);
        let out = filter_noise(&t, 180.0, 30.0);
        assert!(out.len() < t.len());
        assert!(out.points.iter().all(|p| p.position != t.points[3].position));
    }

    proptest! {
        #[test]
        fn idempotent_and_order_preserving(raw in prop::collection::vec((1i64..120, -300.0..300.0f64, -300.0..300.0f64), 0..60)) {
            let mut t = 0;
            let pts: Vec<_> = raw.iter().map(|&(dt, x, y)| { t += dt; (t, x, y) }).collect();
            let input = traj(&pts);
            let once = filter_noise(&input, 180.0, 30.0);
            let twice = filter_noise(&once, 180.0, 30.0);
            prop_assert_eq!(&once, &twice);
            // survivors are a subsequence of the input
            let mut it = input.points.iter();
            for p in &once.points {
                prop_assert!(it.any(|q| q == p));
            }
        }
    }
}
