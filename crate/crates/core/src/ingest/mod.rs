//! Trajectory and place-layer ingestion.

pub mod category;
pub mod noise;
pub mod places;
pub mod trajectory;

use thiserror::Error;

pub use category::{map_category, CategoryRules, PlaceCategory, RuleParseError, TagSource, Tags, UnknownCategory};
pub use noise::{filter_noise, DEFAULT_MAX_SPEED_KMH, DEFAULT_MIN_ANGLE_DEG};
pub use places::{
    build_place_index, places_from_geojson, places_to_geojson, CategoryCounts, GeoPolygon, Place, PlaceHit, PlaceIndex,
    PlaceIndexBuild, PlaceKind, PlaceShape,
};
pub use trajectory::{parse_trajectories, write_trajectories, ParsedTrajectories, TimeFormat, Trajectory, TrajectoryPoint, TrajectorySchema};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("malformed delimited text: {0}")]
    Csv(String),
    #[error("missing column '{0}'")]
    SchemaMismatch(String),
    #[error("no valid rows")]
    EmptyInput,
    #[error("malformed feature JSON: {0}")]
    Json(String),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("no categorized places")]
    EmptyIndex,
}
