//! Relative spatial probability of candidate places and its normalization.

use thiserror::Error;

use crate::geo::{classify_topology, intersection_area, min_distance, Circle, LocalFrame, PlaceGeometry, PlanarPoint, Topology};
use crate::ingest::PlaceIndex;
use crate::stops::StopWithCandidates;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialParams {
    /// Relative probability at the stop-region boundary.
    pub p_r: f64,
    pub search_radius: f64,
}

impl Default for SpatialParams {
    fn default() -> Self {
        Self {
            p_r: 0.5,
            search_radius: 200.0,
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum SpatialError {
    #[error("p_r must lie strictly between 0 and 1, got {0}")]
    InvalidPr(f64),
    #[error("expected a polygon geometry")]
    NotPolygon,
    #[error("expected a point geometry")]
    NotPoint,
    #[error("every relative probability is zero")]
    AllZero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialScore {
    pub relative: f64,
    pub normalized: f64,
}

pub fn gaussian_sigma(stop_radius: f64, p_r: f64) -> Result<f64, SpatialError> {
    if !(p_r > 0.0 && p_r < 1.0) {
        return Err(SpatialError::InvalidPr(p_r));
    }
    Ok(stop_radius / (-2.0 * p_r.ln()).sqrt())
}

fn gaussian(d: f64, stop_radius: f64, p_r: f64) -> Result<f64, SpatialError> {
    let sigma = gaussian_sigma(stop_radius, p_r)?;
    Ok((-(d * d) / (2.0 * sigma * sigma)).exp())
}

pub fn relative_prob_poi(stop: &Circle, poi: &PlaceGeometry, params: &SpatialParams) -> Result<f64, SpatialError> {
    let PlaceGeometry::Point(p) = poi else {
        return Err(SpatialError::NotPoint);
    };
    gaussian(p.distance(stop.center), stop.radius, params.p_r)
}

pub fn relative_prob_roi(stop: &Circle, roi: &PlaceGeometry, params: &SpatialParams) -> Result<f64, SpatialError> {
    if roi.is_point() {
        return Err(SpatialError::NotPolygon);
    }
    if roi.area() <= 0.0 {
        return gaussian(min_distance(roi, stop.center), stop.radius, params.p_r);
    }
    let p_r = params.p_r;
    Ok(match classify_topology(stop, roi) {
        Topology::Contain => 1.0,
        Topology::Intersect => {
            let area = intersection_area(stop, roi).map_err(|_| SpatialError::NotPolygon)?;
            (p_r + (1.0 - p_r) * area / stop.area()).min(1.0)
        }
        Topology::Disjoint => {
            let denom = params.search_radius - stop.radius;
            if denom <= 0.0 {
                0.0
            } else {
                (p_r * (params.search_radius - min_distance(roi, stop.center)) / denom).clamp(0.0, p_r)
            }
        }
    })
}

/// Relative probability for either geometry kind.
pub fn relative_prob(stop: &Circle, geom: &PlaceGeometry, params: &SpatialParams) -> Result<f64, SpatialError> {
    if geom.is_point() {
        relative_prob_poi(stop, geom, params)
    } else {
        relative_prob_roi(stop, geom, params)
    }
}

pub fn normalize_spatial(relatives: &[f64]) -> Result<Vec<f64>, SpatialError> {
    let sum: f64 = relatives.iter().sum();
    if sum <= 0.0 {
        return Err(SpatialError::AllZero);
    }
    Ok(relatives.iter().map(|r| r / sum).collect())
}

/// Scores every candidate of a stop; an all-zero set falls back to uniform.
pub fn spatial_scores(stop: &StopWithCandidates, index: &PlaceIndex, params: &SpatialParams) -> Result<Vec<SpatialScore>, SpatialError> {
    let frame = LocalFrame::new(stop.stop.center);
    let circle = Circle::new(PlanarPoint::ORIGIN, stop.stop.effective_radius()).expect("floored radius");
    let relatives = stop
        .candidates
        .iter()
        .map(|c| relative_prob(&circle, &index.place(c.place).geometry_in(&frame), params))
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(scores_from_relatives(&relatives))
}

pub fn scores_from_relatives(relatives: &[f64]) -> Vec<SpatialScore> {
    if relatives.is_empty() {
        return Vec::new();
    }
    let normalized = normalize_spatial(relatives).unwrap_or_else(|_| vec![1.0 / relatives.len() as f64; relatives.len()]);
    relatives
        .iter()
        .zip(normalized)
        .map(|(&relative, normalized)| SpatialScore { relative, normalized })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Polygon;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pt(x: f64, y: f64) -> PlanarPoint {
        PlanarPoint::new(x, y)
    }

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> PlaceGeometry {
        PlaceGeometry::polygon(Polygon::new(vec![pt(x0, y0), pt(x1, y0), pt(x1, y1), pt(x0, y1)], vec![]).unwrap())
    }

    fn circle(r: f64) -> Circle {
        Circle::new(PlanarPoint::ORIGIN, r).unwrap()
    }

    const P: SpatialParams = SpatialParams {
        p_r: 0.5,
        search_radius: 200.0,
    };

    #[test]
    fn sigma_examples() {
        let s = gaussian_sigma(100.0, 0.5).unwrap();
        assert_relative_eq!(s, 84.932_180_3, epsilon = 1e-6);
        assert_relative_eq!((-(100.0f64.powi(2)) / (2.0 * s * s)).exp(), 0.5, epsilon = 1e-9);
        assert_relative_eq!(gaussian_sigma(37.0, (-0.5f64).exp()).unwrap(), 37.0, epsilon = 1e-12);
        assert_relative_eq!(gaussian_sigma(15.0, 0.5).unwrap(), 12.739_827, epsilon = 1e-6);
        assert!(matches!(gaussian_sigma(10.0, 1.0), Err(SpatialError::InvalidPr(_))));
        assert!(matches!(gaussian_sigma(10.0, 0.0), Err(SpatialError::InvalidPr(_))));
    }

    #[test]
    fn poi_examples() {
        let c = circle(100.0);
        assert_eq!(relative_prob_poi(&c, &PlaceGeometry::Point(pt(0.0, 0.0)), &P).unwrap(), 1.0);
        assert_relative_eq!(relative_prob_poi(&c, &PlaceGeometry::Point(pt(100.0, 0.0)), &P).unwrap(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(
            relative_prob_poi(&c, &PlaceGeometry::Point(pt(0.0, 200.0)), &P).unwrap(),
            0.0625,
            epsilon = 1e-12
        );
        assert_eq!(relative_prob_poi(&c, &rect(0.0, 0.0, 1.0, 1.0), &P), Err(SpatialError::NotPoint));
    }

    #[test]
    fn roi_examples() {
        let c = circle(20.0);
        assert_eq!(relative_prob_roi(&c, &rect(-50.0, -50.0, 50.0, 50.0), &P).unwrap(), 1.0);
        // covers exactly half the circle
        let half = relative_prob_roi(&c, &rect(0.0, -50.0, 50.0, 50.0), &P).unwrap();
        assert_relative_eq!(half, 0.75, epsilon = 1e-3);
        let at_edge = relative_prob_roi(&c, &rect(200.0, -10.0, 260.0, 10.0), &P).unwrap();
        assert_relative_eq!(at_edge, 0.0, epsilon = 1e-12);
        let beyond = relative_prob_roi(&c, &rect(250.0, -10.0, 260.0, 10.0), &P).unwrap();
        assert_eq!(beyond, 0.0);
        // disjoint midway: p_r * (200 - 110) / (200 - 20)
        assert_relative_eq!(relative_prob_roi(&c, &rect(110.0, -10.0, 130.0, 10.0), &P).unwrap(), 0.25, epsilon = 1e-12);
        assert_eq!(relative_prob_roi(&c, &PlaceGeometry::Point(pt(0.0, 0.0)), &P), Err(SpatialError::NotPolygon));
    }

    #[test]
    fn zero_area_roi_uses_gaussian() {
        let sliver = PlaceGeometry::polygon(Polygon::from_rings_unchecked(
            vec![pt(20.0, 0.0), pt(30.0, 0.0), pt(40.0, 0.0)],
            vec![],
        ));
        let v = relative_prob_roi(&circle(20.0), &sliver, &P).unwrap();
        assert_relative_eq!(v, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn radius_reaching_search_radius_zeroes_disjoint() {
        let c = circle(200.0);
        assert_eq!(relative_prob_roi(&c, &rect(250.0, -10.0, 260.0, 10.0), &P).unwrap(), 0.0);
    }

    #[test]
    fn intersect_and_disjoint_meet_at_p_r() {
        let c = circle(20.0);
        for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
            let outside = relative_prob_roi(&c, &rect(20.0 + eps, -5.0, 40.0, 5.0), &P).unwrap();
            let inside = relative_prob_roi(&c, &rect(20.0 - eps, -5.0, 40.0, 5.0), &P).unwrap();
            assert!((outside - 0.5).abs() < 1e-3, "{outside}");
            assert!((inside - 0.5).abs() < 1e-3, "{inside}");
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_spatial(&[0.8]).unwrap(), vec![1.0]);
        assert_eq!(normalize_spatial(&[0.3, 0.3]).unwrap(), vec![0.5, 0.5]);
        let v = normalize_spatial(&[0.2, 0.3, 0.5]).unwrap();
        for (a, b) in v.iter().zip([0.2, 0.3, 0.5]) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
        assert_eq!(normalize_spatial(&[0.0, 0.0]), Err(SpatialError::AllZero));
        let fallback = scores_from_relatives(&[0.0, 0.0, 0.0, 0.0]);
        assert!(fallback.iter().all(|s| s.normalized == 0.25));
    }

    proptest! {
        #[test]
        fn poi_strictly_decreasing(r in 1.0..300.0f64, p_r in 0.01..0.99f64, d in 0.0..400.0f64, dd in 1e-3..50.0f64) {
            let c = circle(r);
            let params = SpatialParams { p_r, search_radius: 400.0 };
            let a = relative_prob_poi(&c, &PlaceGeometry::Point(pt(d, 0.0)), &params).unwrap();
            let b = relative_prob_poi(&c, &PlaceGeometry::Point(pt(d + dd, 0.0)), &params).unwrap();
            prop_assert!(b < a || a == 0.0);
        }

        #[test]
        fn relatives_in_unit_interval(r in 15.0..150.0f64, p_r in 0.01..0.99f64, x in -250.0..250.0f64, y in -250.0..250.0f64, w in 1.0..200.0f64, h in 1.0..200.0f64) {
            let params = SpatialParams { p_r, search_radius: 200.0 };
            let v = relative_prob_roi(&circle(r), &rect(x, y, x + w, y + h), &params).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            let u = relative_prob_poi(&circle(r), &PlaceGeometry::Point(pt(x, y)), &params).unwrap();
            prop_assert!((0.0..=1.0).contains(&u));
        }

        #[test]
        fn normalization_scale_invariant(rel in prop::collection::vec(0.0..1.0f64, 1..12), k in 1e-3..1e3f64) {
            prop_assume!(rel.iter().sum::<f64>() > 0.0);
            let a = normalize_spatial(&rel).unwrap();
            let scaled: Vec<f64> = rel.iter().map(|r| r * k).collect();
            let b = normalize_spatial(&scaled).unwrap();
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let argmax = |v: &[f64]| v.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
            prop_assert_eq!(argmax(&rel), argmax(&scaled));
        }
    }
}
