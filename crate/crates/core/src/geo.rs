//! Spherical distances, a local metric frame, and the planar geometry used to
//! relate a stop circle to point and polygon places.
//!
//! Polygon rings use implicit closure: the last vertex connects back to the
//! first. A duplicated closing vertex (as found in GeoJSON) is stripped on
//! construction.

use std::f64::consts::PI;

use thiserror::Error;

/// Mean Earth radius used for every distance in the crate.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Number of sides of the polygon standing in for a stop circle when clipping.
pub const CIRCLE_SEGMENTS: usize = 64;

const MAX_PROJECTION_DISTANCE_M: f64 = 10_000.0;
const DEGENERATE_LENGTH_M: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate (lat {lat}, lon {lon})")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("point lies {distance_m:.0} m from the projection origin (limit 10 km)")]
    PointTooFar { distance_m: f64 },
    #[error("turning angle undefined for a zero-length segment")]
    DegenerateAngle,
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("operation requires a polygon geometry")]
    NotPolygon,
}

/// WGS84 latitude/longitude in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !lon.is_finite() || !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::InvalidCoordinate { lat, lon });
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Arithmetic mean of coordinates. Only meaningful for points a few
    /// kilometres apart that do not straddle the antimeridian.
    pub fn mean<'a>(points: impl IntoIterator<Item = &'a GeoPoint>) -> Option<GeoPoint> {
        Self::weighted_mean(points.into_iter().map(|p| (p, 1.0)))
    }

    pub fn weighted_mean<'a>(points: impl IntoIterator<Item = (&'a GeoPoint, f64)>) -> Option<GeoPoint> {
        // offsets from the first point keep identical inputs exact
        let mut points = points.into_iter();
        let (first, w0) = points.next()?;
        let (mut dlat, mut dlon, mut w) = (0.0, 0.0, w0);
        for (p, weight) in points {
            dlat += (p.lat - first.lat) * weight;
            dlon += (p.lon - first.lon) * weight;
            w += weight;
        }
        if w <= 0.0 {
            return None;
        }
        GeoPoint::new((first.lat + dlat / w).clamp(-90.0, 90.0), (first.lon + dlon / w).clamp(-180.0, 180.0)).ok()
    }

    /// Midpoint in coordinate space.
    pub fn midpoint(&self, other: &GeoPoint) -> GeoPoint {
        GeoPoint {
            lat: 0.5 * (self.lat + other.lat),
            lon: 0.5 * (self.lon + other.lon),
        }
    }
}

/// Great-circle distance in meters.
pub fn haversine_distance(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlat = (b.lat - a.lat).to_radians();
    let dlon = (b.lon - a.lon).to_radians();
    let s_lat = (dlat / 2.0).sin();
    let s_lon = (dlon / 2.0).sin();
    let h = (s_lat * s_lat + lat1.cos() * lat2.cos() * s_lon * s_lon).clamp(0.0, 1.0);
    2.0 * EARTH_RADIUS_M * h.sqrt().atan2((1.0 - h).sqrt())
}

/// Meters east (`x`) and north (`y`) of a local origin.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub const ORIGIN: PlanarPoint = PlanarPoint { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn sub(self, o: PlanarPoint) -> PlanarPoint {
        PlanarPoint::new(self.x - o.x, self.y - o.y)
    }

    pub fn dot(self, o: PlanarPoint) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: PlanarPoint) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: PlanarPoint) -> f64 {
        self.sub(o).norm()
    }
}

/// Equirectangular projection about a fixed origin.
#[derive(Debug, Clone, Copy)]
pub struct LocalFrame {
    origin: GeoPoint,
    cos_lat: f64,
}

impl LocalFrame {
    const METERS_PER_RADIAN: f64 = EARTH_RADIUS_M;

    pub fn new(origin: GeoPoint) -> Self {
        Self {
            origin,
            cos_lat: origin.lat.to_radians().cos(),
        }
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    pub fn project(&self, p: &GeoPoint) -> PlanarPoint {
        let mut dlon = p.lon - self.origin.lon;
        if dlon > 180.0 {
            dlon -= 360.0;
        } else if dlon < -180.0 {
            dlon += 360.0;
        }
        PlanarPoint {
            x: dlon.to_radians() * self.cos_lat * Self::METERS_PER_RADIAN,
            y: (p.lat - self.origin.lat).to_radians() * Self::METERS_PER_RADIAN,
        }
    }

    pub fn unproject(&self, p: PlanarPoint) -> GeoPoint {
        let lat = self.origin.lat + (p.y / Self::METERS_PER_RADIAN).to_degrees();
        let mut lon = self.origin.lon + (p.x / (Self::METERS_PER_RADIAN * self.cos_lat)).to_degrees();
        if lon > 180.0 {
            lon -= 360.0;
        } else if lon < -180.0 {
            lon += 360.0;
        }
        GeoPoint {
            lat: lat.clamp(-90.0, 90.0),
            lon,
        }
    }
}

/// Projects points into the local frame of `origin`, rejecting any point more
/// than 10 km away.
pub fn project_local(points: &[GeoPoint], origin: GeoPoint) -> Result<Vec<PlanarPoint>, GeoError> {
    let frame = LocalFrame::new(origin);
    points
        .iter()
        .map(|p| {
            let d = haversine_distance(&origin, p);
            if d > MAX_PROJECTION_DISTANCE_M {
                Err(GeoError::PointTooFar { distance_m: d })
            } else {
                Ok(frame.project(p))
            }
        })
        .collect()
}

/// Interior angle at `mid`, in degrees within [0, 180].
pub fn turning_angle(prev: &GeoPoint, mid: &GeoPoint, next: &GeoPoint) -> Result<f64, GeoError> {
    let frame = LocalFrame::new(*mid);
    let a = frame.project(prev);
    let b = frame.project(next);
    if a.norm() < DEGENERATE_LENGTH_M || b.norm() < DEGENERATE_LENGTH_M {
        return Err(GeoError::DegenerateAngle);
    }
    Ok(a.cross(b).abs().atan2(a.dot(b)).to_degrees())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: PlanarPoint,
    pub radius: f64,
}

impl Circle {
    pub fn new(center: PlanarPoint, radius: f64) -> Result<Self, GeoError> {
        if !radius.is_finite() || radius < 0.0 {
            return Err(GeoError::InvalidGeometry(format!("circle radius {radius}")));
        }
        Ok(Self { center, radius })
    }

    pub fn area(&self) -> f64 {
        PI * self.radius * self.radius
    }

    /// Counter-clockwise regular polygon with the same area as the circle.
    fn clip_polygon(&self) -> Vec<PlanarPoint> {
        let n = CIRCLE_SEGMENTS as f64;
        let step = 2.0 * PI / n;
        let r = self.radius * (2.0 * PI / (n * step.sin())).sqrt();
        (0..CIRCLE_SEGMENTS)
            .map(|i| {
                let a = step * i as f64;
                PlanarPoint::new(self.center.x + r * a.cos(), self.center.y + r * a.sin())
            })
            .collect()
    }
}

/// A single polygon: an outer ring plus optional holes.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    exterior: Vec<PlanarPoint>,
    holes: Vec<Vec<PlanarPoint>>,
}

impl Polygon {
    pub fn new(exterior: Vec<PlanarPoint>, holes: Vec<Vec<PlanarPoint>>) -> Result<Self, GeoError> {
        let exterior = normalize_ring(exterior)?;
        if ring_self_intersects(&exterior) {
            return Err(GeoError::InvalidGeometry("outer ring self-intersects".into()));
        }
        let holes = holes.into_iter().map(normalize_ring).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { exterior, holes })
    }

    /// Builds a polygon from rings already validated in another frame.
    pub(crate) fn from_rings_unchecked(exterior: Vec<PlanarPoint>, holes: Vec<Vec<PlanarPoint>>) -> Self {
        Self { exterior, holes }
    }

    pub fn exterior(&self) -> &[PlanarPoint] {
        &self.exterior
    }

    pub fn holes(&self) -> &[Vec<PlanarPoint>] {
        &self.holes
    }

    fn rings(&self) -> impl Iterator<Item = &[PlanarPoint]> {
        std::iter::once(self.exterior.as_slice()).chain(self.holes.iter().map(Vec::as_slice))
    }

    /// Even-odd point-in-polygon test over all rings.
    pub fn contains(&self, p: PlanarPoint) -> bool {
        self.rings().fold(false, |inside, ring| inside ^ ring_crossing_parity(ring, p))
    }

    pub fn boundary_distance(&self, p: PlanarPoint) -> f64 {
        self.rings()
            .flat_map(ring_edges)
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn area(&self) -> f64 {
        let holes: f64 = self.holes.iter().map(|h| ring_signed_area(h).abs()).sum();
        (ring_signed_area(&self.exterior).abs() - holes).max(0.0)
    }

    fn bbox(&self) -> (PlanarPoint, PlanarPoint) {
        ring_bbox(&self.exterior)
    }
}

/// Geometry of a place in a planar frame. A multi-part polygon is the union of
/// its parts.
#[derive(Debug, Clone, PartialEq)]
pub enum PlaceGeometry {
    Point(PlanarPoint),
    Polygon(Vec<Polygon>),
}

impl PlaceGeometry {
    pub fn polygon(p: Polygon) -> Self {
        PlaceGeometry::Polygon(vec![p])
    }

    pub fn is_point(&self) -> bool {
        matches!(self, PlaceGeometry::Point(_))
    }

    /// Total area (0 for points).
    pub fn area(&self) -> f64 {
        match self {
            PlaceGeometry::Point(_) => 0.0,
            PlaceGeometry::Polygon(parts) => parts.iter().map(Polygon::area).sum(),
        }
    }
}

/// Topological relation between a stop circle and a place geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Topology {
    Contain,
    Intersect,
    Disjoint,
}

impl Topology {
    pub fn as_str(&self) -> &'static str {
        match self {
            Topology::Contain => "contain",
            Topology::Intersect => "intersect",
            Topology::Disjoint => "disjoint",
        }
    }
}

/// Distance from `p` to the geometry; zero when `p` is inside a polygon.
pub fn min_distance(geom: &PlaceGeometry, p: PlanarPoint) -> f64 {
    match geom {
        PlaceGeometry::Point(q) => q.distance(p),
        PlaceGeometry::Polygon(parts) => {
            if parts.iter().any(|part| part.contains(p)) {
                0.0
            } else {
                parts.iter().map(|part| part.boundary_distance(p)).fold(f64::INFINITY, f64::min)
            }
        }
    }
}

pub fn classify_topology(stop: &Circle, geom: &PlaceGeometry) -> Topology {
    let c = stop.center;
    let r = stop.radius;
    match geom {
        PlaceGeometry::Point(q) => {
            if q.distance(c) <= r {
                Topology::Contain
            } else {
                Topology::Disjoint
            }
        }
        PlaceGeometry::Polygon(parts) => {
            if min_distance(geom, c) > r {
                return Topology::Disjoint;
            }
            let circle_in_polygon = parts.iter().any(|part| part.contains(c) && part.boundary_distance(c) >= r);
            let polygon_in_circle = parts.iter().all(|part| part.exterior.iter().all(|v| v.distance(c) <= r));
            if circle_in_polygon || polygon_in_circle {
                Topology::Contain
            } else {
                Topology::Intersect
            }
        }
    }
}

/// Area of circle ∩ polygon, with the circle replaced by an equal-area regular
/// 64-gon. Holes subtract; parts add.
pub fn intersection_area(stop: &Circle, geom: &PlaceGeometry) -> Result<f64, GeoError> {
    let PlaceGeometry::Polygon(parts) = geom else {
        return Err(GeoError::NotPolygon);
    };
    if stop.radius <= 0.0 {
        return Ok(0.0);
    }
    let clip = stop.clip_polygon();
    let reach = stop.radius * 1.01;
    let mut total = 0.0;
    for part in parts {
        let (lo, hi) = part.bbox();
        if lo.x > stop.center.x + reach
            || hi.x < stop.center.x - reach
            || lo.y > stop.center.y + reach
            || hi.y < stop.center.y - reach
        {
            continue;
        }
        let outer = ring_signed_area(&clip_ring(&part.exterior, &clip)).abs();
        let holes: f64 = part.holes.iter().map(|h| ring_signed_area(&clip_ring(h, &clip)).abs()).sum();
        total += (outer - holes).max(0.0);
    }
    Ok(total)
}

fn normalize_ring(mut ring: Vec<PlanarPoint>) -> Result<Vec<PlanarPoint>, GeoError> {
    if ring.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(GeoError::InvalidGeometry("non-finite vertex".into()));
    }
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    ring.dedup();
    let mut distinct = ring.clone();
    distinct.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(GeoError::InvalidGeometry(format!(
            "ring has {} distinct vertices, need at least 3",
            distinct.len()
        )));
    }
    Ok(ring)
}

fn ring_edges(ring: &[PlanarPoint]) -> impl Iterator<Item = (PlanarPoint, PlanarPoint)> + '_ {
    let n = ring.len();
    (0..n).map(move |i| (ring[i], ring[(i + 1) % n]))
}

fn ring_crossing_parity(ring: &[PlanarPoint], p: PlanarPoint) -> bool {
    let mut inside = false;
    for (a, b) in ring_edges(ring) {
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn ring_signed_area(ring: &[PlanarPoint]) -> f64 {
    if ring.len() < 3 {
        return 0.0;
    }
    0.5 * ring_edges(ring).map(|(a, b)| a.cross(b)).sum::<f64>()
}

fn ring_bbox(ring: &[PlanarPoint]) -> (PlanarPoint, PlanarPoint) {
    ring.iter().fold(
        (
            PlanarPoint::new(f64::INFINITY, f64::INFINITY),
            PlanarPoint::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        ),
        |(lo, hi), p| {
            (
                PlanarPoint::new(lo.x.min(p.x), lo.y.min(p.y)),
                PlanarPoint::new(hi.x.max(p.x), hi.y.max(p.y)),
            )
        },
    )
}

fn point_segment_distance(p: PlanarPoint, a: PlanarPoint, b: PlanarPoint) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0);
    p.distance(PlanarPoint::new(a.x + t * ab.x, a.y + t * ab.y))
}

fn segments_properly_intersect(p1: PlanarPoint, p2: PlanarPoint, q1: PlanarPoint, q2: PlanarPoint) -> bool {
    let d1 = q2.sub(q1).cross(p1.sub(q1));
    let d2 = q2.sub(q1).cross(p2.sub(q1));
    let d3 = p2.sub(p1).cross(q1.sub(p1));
    let d4 = p2.sub(p1).cross(q2.sub(p1));
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

fn ring_self_intersects(ring: &[PlanarPoint]) -> bool {
    let n = ring.len();
    if n < 4 {
        return false;
    }
    for i in 0..n {
        let (a1, a2) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_properly_intersect(a1, a2, ring[j], ring[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}

/// Sutherland–Hodgman clip of an arbitrary ring against a convex CCW clipper.
fn clip_ring(subject: &[PlanarPoint], clip: &[PlanarPoint]) -> Vec<PlanarPoint> {
    let mut output = subject.to_vec();
    for (c1, c2) in ring_edges(clip) {
        if output.is_empty() {
            break;
        }
        let input = std::mem::take(&mut output);
        let edge = c2.sub(c1);
        let side = |p: PlanarPoint| edge.cross(p.sub(c1));
        let n = input.len();
        for i in 0..n {
            let cur = input[i];
            let prev = input[(i + n - 1) % n];
            let (s_cur, s_prev) = (side(cur), side(prev));
            if s_cur >= 0.0 {
                if s_prev < 0.0 {
                    output.push(lerp(prev, cur, s_prev / (s_prev - s_cur)));
                }
                output.push(cur);
            } else if s_prev >= 0.0 {
                output.push(lerp(prev, cur, s_prev / (s_prev - s_cur)));
            }
        }
    }
    output
}

fn lerp(a: PlanarPoint, b: PlanarPoint, t: f64) -> PlanarPoint {
    PlanarPoint::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
}
