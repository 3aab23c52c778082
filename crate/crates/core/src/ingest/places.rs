//! Categorized places and a uniform-grid index for radius queries.

use std::collections::{BTreeMap, HashMap};

use geojson::{Feature, GeometryValue, JsonObject, JsonValue};

use super::category::{CategoryRules, PlaceCategory, TagSource, Tags};
use super::IngestError;
use crate::geo::{min_distance, haversine_distance, GeoPoint, LocalFrame, PlaceGeometry, PlanarPoint, Polygon, EARTH_RADIUS_M};

/// Geographic polygon: an outer ring and optional holes, implicitly closed.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoPolygon {
    pub exterior: Vec<GeoPoint>,
    pub holes: Vec<Vec<GeoPoint>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlaceShape {
    /// POI
    Point(GeoPoint),
    /// ROI; several parts form their union.
    Polygon(Vec<GeoPolygon>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaceKind {
    Poi,
    Roi,
}

impl PlaceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlaceKind::Poi => "poi",
            PlaceKind::Roi => "roi",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Place {
    pub place_id: String,
    pub category: PlaceCategory,
    pub name: Option<String>,
    shape: PlaceShape,
}

impl Place {
    pub fn poi(place_id: impl Into<String>, category: PlaceCategory, at: GeoPoint) -> Self {
        Self {
            place_id: place_id.into(),
            category,
            name: None,
            shape: PlaceShape::Point(at),
        }
    }

    /// Validates every part in a local frame before accepting it.
    pub fn roi(place_id: impl Into<String>, category: PlaceCategory, parts: Vec<GeoPolygon>) -> Result<Self, IngestError> {
        let place_id = place_id.into();
        if parts.is_empty() {
            return Err(IngestError::Geometry(format!("{place_id}: polygon without parts")));
        }
        let parts: Vec<GeoPolygon> = parts
            .into_iter()
            .map(|p| GeoPolygon {
                exterior: clean_ring(p.exterior),
                holes: p.holes.into_iter().map(clean_ring).collect(),
            })
            .collect();
        let frame = LocalFrame::new(parts[0].exterior.first().copied().ok_or_else(|| {
            IngestError::Geometry(format!("{place_id}: empty outer ring"))
        })?);
        for part in &parts {
            Polygon::new(
                part.exterior.iter().map(|p| frame.project(p)).collect(),
                part.holes.iter().map(|h| h.iter().map(|p| frame.project(p)).collect()).collect(),
            )
            .map_err(|e| IngestError::Geometry(format!("{place_id}: {e}")))?;
        }
        Ok(Self {
            place_id,
            category,
            name: None,
            shape: PlaceShape::Polygon(parts),
        })
    }

    pub fn with_name(mut self, name: Option<String>) -> Self {
        self.name = name;
        self
    }

    pub fn kind(&self) -> PlaceKind {
        match self.shape {
            PlaceShape::Point(_) => PlaceKind::Poi,
            PlaceShape::Polygon(_) => PlaceKind::Roi,
        }
    }

    pub fn shape(&self) -> &PlaceShape {
        &self.shape
    }

    /// Geometry projected into `frame`.
    pub fn geometry_in(&self, frame: &LocalFrame) -> PlaceGeometry {
        match &self.shape {
            PlaceShape::Point(p) => PlaceGeometry::Point(frame.project(p)),
            PlaceShape::Polygon(parts) => PlaceGeometry::Polygon(
                parts
                    .iter()
                    .map(|part| {
                        Polygon::from_rings_unchecked(
                            part.exterior.iter().map(|p| frame.project(p)).collect(),
                            part.holes.iter().map(|h| h.iter().map(|p| frame.project(p)).collect()).collect(),
                        )
                    })
                    .collect(),
            ),
        }
    }

    /// Great-circle distance for POIs; planar minimum distance (zero inside)
    /// for ROIs.
    pub fn distance_from(&self, p: &GeoPoint) -> f64 {
        match &self.shape {
            PlaceShape::Point(q) => haversine_distance(p, q),
            PlaceShape::Polygon(_) => {
                let frame = LocalFrame::new(*p);
                min_distance(&self.geometry_in(&frame), PlanarPoint::ORIGIN)
            }
        }
    }

    fn bbox(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut add = |p: &GeoPoint| {
            b.0 = b.0.min(p.lat());
            b.1 = b.1.min(p.lon());
            b.2 = b.2.max(p.lat());
            b.3 = b.3.max(p.lon());
        };
        match &self.shape {
            PlaceShape::Point(p) => add(p),
            PlaceShape::Polygon(parts) => parts.iter().flat_map(|p| &p.exterior).for_each(&mut add),
        }
        b
    }
}

fn clean_ring(mut ring: Vec<GeoPoint>) -> Vec<GeoPoint> {
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    ring.dedup();
    ring
}

/// Place counts per category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CategoryCounts([usize; PlaceCategory::COUNT]);

impl CategoryCounts {
    pub fn get(&self, c: PlaceCategory) -> usize {
        self.0[c.index()]
    }

    pub fn add(&mut self, c: PlaceCategory) {
        self.0[c.index()] += 1;
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn as_array(&self) -> &[usize; PlaceCategory::COUNT] {
        &self.0
    }

    pub fn from_categories(cats: impl IntoIterator<Item = PlaceCategory>) -> Self {
        let mut counts = Self::default();
        cats.into_iter().for_each(|c| counts.add(c));
        counts
    }
}

impl From<[usize; PlaceCategory::COUNT]> for CategoryCounts {
    fn from(v: [usize; PlaceCategory::COUNT]) -> Self {
        Self(v)
    }
}

const DEFAULT_CELL_M: f64 = 200.0;
const MAX_CELLS_PER_PLACE: i64 = 4096;

#[derive(Debug, Clone)]
struct Grid {
    cell_lat: f64,
    cell_lon: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
    oversized: Vec<usize>,
}

impl Grid {
    fn build(places: &[Place], cell_m: f64) -> Self {
        let ref_lat = places.iter().map(|p| p.bbox().0.abs().max(p.bbox().2.abs())).fold(0.0, f64::max);
        let cell_lat = (cell_m / EARTH_RADIUS_M).to_degrees();
        let cell_lon = cell_lat / ref_lat.min(85.0).to_radians().cos();
        let mut grid = Grid {
            cell_lat,
            cell_lon,
            cells: HashMap::new(),
            oversized: Vec::new(),
        };
        for (i, place) in places.iter().enumerate() {
            let (lat0, lon0, lat1, lon1) = place.bbox();
            let (r0, c0) = grid.cell(lat0, lon0);
            let (r1, c1) = grid.cell(lat1, lon1);
            if (r1 - r0 + 1) * (c1 - c0 + 1) > MAX_CELLS_PER_PLACE {
                grid.oversized.push(i);
                continue;
            }
            for r in r0..=r1 {
                for c in c0..=c1 {
                    grid.cells.entry((r, c)).or_default().push(i);
                }
            }
        }
        grid
    }

    fn cell(&self, lat: f64, lon: f64) -> (i64, i64) {
        ((lat / self.cell_lat).floor() as i64, (lon / self.cell_lon).floor() as i64)
    }

    /// Indices of places whose bbox may lie within `radius` of `center`, or
    /// `None` when the query box leaves the grid's valid domain.
    fn candidates(&self, center: &GeoPoint, radius: f64) -> Option<Vec<usize>> {
        let dlat = (radius / EARTH_RADIUS_M).to_degrees() * 1.001 + 1e-9;
        let max_lat = center.lat().abs() + dlat;
        if max_lat >= 85.0 {
            return None;
        }
        let dlon = dlat / max_lat.to_radians().cos();
        let (lon0, lon1) = (center.lon() - dlon, center.lon() + dlon);
        if lon0 < -180.0 || lon1 > 180.0 {
            return None;
        }
        let (r0, c0) = self.cell(center.lat() - dlat, lon0);
        let (r1, c1) = self.cell(center.lat() + dlat, lon1);
        if (r1 - r0 + 1) * (c1 - c0 + 1) > 1_000_000 {
            return None;
        }
        let mut out = self.oversized.clone();
        for r in r0..=r1 {
            for c in c0..=c1 {
                if let Some(v) = self.cells.get(&(r, c)) {
                    out.extend_from_slice(v);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        Some(out)
    }
}

/// Immutable place collection with global category counts and a radius query.
#[derive(Debug, Clone)]
pub struct PlaceIndex {
    places: Vec<Place>,
    global_counts: CategoryCounts,
    grid: Grid,
}

/// A radius-query hit: index into [`PlaceIndex::places`] and its distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaceHit {
    pub place: usize,
    pub distance: f64,
}

impl PlaceIndex {
    pub fn new(places: Vec<Place>) -> Result<Self, IngestError> {
        Self::with_cell_size(places, DEFAULT_CELL_M)
    }

    pub fn with_cell_size(places: Vec<Place>, cell_m: f64) -> Result<Self, IngestError> {
        if places.is_empty() {
            return Err(IngestError::EmptyIndex);
        }
        let global_counts = CategoryCounts::from_categories(places.iter().map(|p| p.category));
        let grid = Grid::build(&places, cell_m.max(1.0));
        Ok(Self {
            places,
            global_counts,
            grid,
        })
    }

    pub fn places(&self) -> &[Place] {
        &self.places
    }

    pub fn place(&self, i: usize) -> &Place {
        &self.places[i]
    }

    pub fn len(&self) -> usize {
        self.places.len()
    }

    pub fn is_empty(&self) -> bool {
        self.places.is_empty()
    }

    pub fn global_counts(&self) -> &CategoryCounts {
        &self.global_counts
    }

    /// All places within `radius` meters of `center` (by [`Place::distance_from`]),
    /// sorted by distance, then place id.
    pub fn radius_query(&self, center: &GeoPoint, radius: f64) -> Vec<PlaceHit> {
        let pool = self.grid.candidates(center, radius).unwrap_or_else(|| (0..self.places.len()).collect());
        let mut hits: Vec<PlaceHit> = pool
            .into_iter()
            .filter_map(|i| {
                let distance = self.places[i].distance_from(center);
                (distance <= radius).then_some(PlaceHit { place: i, distance })
            })
            .collect();
        hits.sort_by(|a, b| {
            a.distance
                .total_cmp(&b.distance)
                .then_with(|| self.places[a.place].place_id.cmp(&self.places[b.place].place_id))
        });
        hits
    }
}

#[derive(Debug, Clone)]
pub struct PlaceIndexBuild {
    pub index: PlaceIndex,
    /// Features whose geometry could not be parsed or validated.
    pub geometry_errors: usize,
    /// Features with valid geometry but no matching category rule.
    pub unmatched: usize,
}

/// Builds the index from POI and ROI feature collections (GeoJSON text).
/// Features with unparseable geometry or without a category are skipped and
/// counted.
pub fn build_place_index(
    poi_source: Option<&str>,
    roi_source: Option<&str>,
    poi_rules: &CategoryRules,
    roi_rules: &CategoryRules,
) -> Result<PlaceIndexBuild, IngestError> {
    let mut places = Vec::new();
    let mut geometry_errors = 0;
    let mut unmatched = 0;
    for (text, kind, rules, tag_source) in [
        (poi_source, PlaceKind::Poi, poi_rules, TagSource::Poi),
        (roi_source, PlaceKind::Roi, roi_rules, TagSource::Osm),
    ] {
        let Some(text) = text else { continue };
        for (i, feature) in read_features(text)?.into_iter().enumerate() {
            let Ok(feature) = feature else {
                geometry_errors += 1;
                continue;
            };
            let tags = feature_tags(feature.properties.as_ref());
            let Some(category) = rules.classify(&tags, tag_source) else {
                unmatched += 1;
                continue;
            };
            let id = feature_id(&feature).unwrap_or_else(|| format!("{}-{i}", kind.as_str()));
            match place_from_geometry(id, category, &feature, kind) {
                Ok(place) => places.push(place.with_name(tags.get("name").cloned())),
                Err(_) => geometry_errors += 1,
            }
        }
    }
    Ok(PlaceIndexBuild {
        index: PlaceIndex::new(places)?,
        geometry_errors,
        unmatched,
    })
}

fn read_features(text: &str) -> Result<Vec<Result<Feature, IngestError>>, IngestError> {
    let value: JsonValue = serde_json::from_str(text).map_err(|e| IngestError::Json(e.to_string()))?;
    let raw = match value.get("type").and_then(JsonValue::as_str) {
        Some("FeatureCollection") => value
            .get("features")
            .and_then(JsonValue::as_array)
            .cloned()
            .ok_or_else(|| IngestError::Json("FeatureCollection without features".into()))?,
        Some("Feature") => vec![value],
        other => return Err(IngestError::Json(format!("expected a FeatureCollection, found {other:?}"))),
    };
    Ok(raw
        .into_iter()
        .map(|v| serde_json::from_value::<Feature>(v).map_err(|e| IngestError::Geometry(e.to_string())))
        .collect())
}

fn feature_tags(props: Option<&JsonObject>) -> Tags {
    props
        .into_iter()
        .flatten()
        .filter_map(|(k, v)| {
            let s = match v {
                JsonValue::String(s) => s.clone(),
                JsonValue::Number(n) => n.to_string(),
                JsonValue::Bool(b) => b.to_string(),
                _ => return None,
            };
            Some((k.clone(), s))
        })
        .collect::<BTreeMap<_, _>>()
}

fn feature_id(feature: &Feature) -> Option<String> {
    let props = feature.properties.as_ref();
    for key in ["place_id", "id", "osm_id"] {
        match props.and_then(|p| p.get(key)) {
            Some(JsonValue::String(s)) if !s.is_empty() => return Some(s.clone()),
            Some(JsonValue::Number(n)) => return Some(n.to_string()),
            _ => {}
        }
    }
    match &feature.id {
        Some(geojson::feature::Id::String(s)) => Some(s.clone()),
        Some(geojson::feature::Id::Number(n)) => Some(n.to_string()),
        None => None,
    }
}

fn position(p: &geojson::Position) -> Result<GeoPoint, IngestError> {
    let s = p.as_slice();
    if s.len() < 2 {
        return Err(IngestError::Geometry("position needs two coordinates".into()));
    }
    GeoPoint::new(s[1], s[0]).map_err(|e| IngestError::Geometry(e.to_string()))
}

fn polygon(rings: &[Vec<geojson::Position>]) -> Result<GeoPolygon, IngestError> {
    let mut rings = rings
        .iter()
        .map(|r| r.iter().map(position).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    if rings.is_empty() {
        return Err(IngestError::Geometry("polygon without rings".into()));
    }
    let exterior = rings.remove(0);
    Ok(GeoPolygon { exterior, holes: rings })
}

fn place_from_geometry(id: String, category: PlaceCategory, feature: &Feature, kind: PlaceKind) -> Result<Place, IngestError> {
    let geometry = feature
        .geometry
        .as_ref()
        .ok_or_else(|| IngestError::Geometry(format!("{id}: missing geometry")))?;
    match (kind, &geometry.value) {
        (PlaceKind::Poi, GeometryValue::Point { coordinates }) => Ok(Place::poi(id, category, position(coordinates)?)),
        (PlaceKind::Roi, GeometryValue::Polygon { coordinates }) => Place::roi(id, category, vec![polygon(coordinates)?]),
        (PlaceKind::Roi, GeometryValue::MultiPolygon { coordinates }) => {
            Place::roi(id, category, coordinates.iter().map(|p| polygon(p)).collect::<Result<_, _>>()?)
        }
        (_, other) => Err(IngestError::Geometry(format!(
            "{id}: unexpected {} geometry for a {}",
            other.type_name(),
            kind.as_str()
        ))),
    }
}

/// Serializes places as a normalized feature collection carrying `place_id`,
/// `category`, `kind` and `name` properties.
pub fn places_to_geojson(index: &PlaceIndex) -> String {
    let ring = |r: &[GeoPoint]| {
        let mut coords: Vec<JsonValue> = r.iter().map(|p| serde_json::json!([p.lon(), p.lat()])).collect();
        if let Some(first) = coords.first().cloned() {
            coords.push(first);
        }
        JsonValue::Array(coords)
    };
    let features: Vec<JsonValue> = index
        .places()
        .iter()
        .map(|place| {
            let geometry = match place.shape() {
                PlaceShape::Point(p) => serde_json::json!({"type": "Point", "coordinates": [p.lon(), p.lat()]}),
                PlaceShape::Polygon(parts) => {
                    let polys: Vec<JsonValue> = parts
                        .iter()
                        .map(|part| {
                            JsonValue::Array(
                                std::iter::once(ring(&part.exterior))
                                    .chain(part.holes.iter().map(|h| ring(h)))
                                    .collect(),
                            )
                        })
                        .collect();
                    serde_json::json!({"type": "MultiPolygon", "coordinates": polys})
                }
            };
            serde_json::json!({
                "type": "Feature",
                "properties": {
                    "place_id": place.place_id,
                    "category": place.category.as_str(),
                    "kind": place.kind().as_str(),
                    "name": place.name,
                },
                "geometry": geometry,
            })
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({"type": "FeatureCollection", "features": features}))
        .expect("place collection serializes")
}

/// Reads a collection written by [`places_to_geojson`].
pub fn places_from_geojson(text: &str) -> Result<PlaceIndex, IngestError> {
    let mut places = Vec::new();
    for feature in read_features(text)? {
        let feature = feature?;
        let tags = feature_tags(feature.properties.as_ref());
        let id = tags
            .get("place_id")
            .cloned()
            .ok_or_else(|| IngestError::Geometry("normalized place without place_id".into()))?;
        let category: PlaceCategory = tags
            .get("category")
            .ok_or_else(|| IngestError::Geometry(format!("{id}: missing category")))?
            .parse()
            .map_err(|e: super::category::UnknownCategory| IngestError::Geometry(e.to_string()))?;
        let kind = match tags.get("kind").map(String::as_str) {
            Some("roi") => PlaceKind::Roi,
            _ => PlaceKind::Poi,
        };
        places.push(place_from_geometry(id, category, &feature, kind)?.with_name(tags.get("name").cloned()));
    }
    PlaceIndex::new(places)
}
