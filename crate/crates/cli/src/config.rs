//! Pipeline configuration: a TOML file with `UPAPP_<SECTION>_<KEY>`
//! environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use semtraj::annotate::Method;
use semtraj::ingest::{TimeFormat, TrajectorySchema};
use semtraj::priors::{Averaging, BinScheme, DEFAULT_DURATION_EDGES_MIN, DEFAULT_PRIOR_FLOOR};
use semtraj::spatial::SpatialParams;
use semtraj::stops::StopParams;
use semtraj::zone::Zone;

use crate::error::CliError;

pub const ENV_PREFIX: &str = "UPAPP_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputConfig {
    pub trajectories: Option<PathBuf>,
    pub poi: Option<PathBuf>,
    pub roi: Option<PathBuf>,
    pub logs: Option<PathBuf>,
    pub poi_rules: Option<PathBuf>,
    pub roi_rules: Option<PathBuf>,
    pub timezone: String,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            trajectories: None,
            poi: None,
            roi: None,
            logs: None,
            poi_rules: None,
            roi_rules: None,
            timezone: "UTC".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryConfig {
    pub user_column: String,
    pub time_column: String,
    pub lat_column: String,
    pub lon_column: String,
    /// `iso8601` or `epoch`.
    pub time_format: String,
    pub delimiter: char,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        let s = TrajectorySchema::default();
        Self {
            user_column: s.user,
            time_column: s.time,
            lat_column: s.lat,
            lon_column: s.lon,
            time_format: "iso8601".into(),
            delimiter: s.delimiter as char,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub enabled: bool,
    pub max_speed_kmh: f64,
    pub min_angle_deg: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_speed_kmh: semtraj::ingest::DEFAULT_MAX_SPEED_KMH,
            min_angle_deg: semtraj::ingest::DEFAULT_MIN_ANGLE_DEG,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StopsConfig {
    pub d1: f64,
    pub t1: i64,
    pub d2: f64,
    pub t2: i64,
    pub d3: f64,
    pub d_merge: f64,
    pub t_merge: i64,
}

impl Default for StopsConfig {
    fn default() -> Self {
        let p = StopParams::default();
        Self {
            d1: p.d1,
            t1: p.t1,
            d2: p.d2,
            t2: p.t2,
            d3: p.d3,
            d_merge: p.d_merge,
            t_merge: p.t_merge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpatialConfig {
    pub search_radius: f64,
    pub p_r: f64,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        let p = SpatialParams::default();
        Self {
            search_radius: p.search_radius,
            p_r: p.p_r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorsConfig {
    pub duration_edges_min: Vec<f64>,
    pub smoothing_window: usize,
    pub floor: f64,
    /// `all_stops` or `stops_with_category`.
    pub averaging: String,
    pub joint: bool,
}

impl Default for PriorsConfig {
    fn default() -> Self {
        Self {
            duration_edges_min: DEFAULT_DURATION_EDGES_MIN.to_vec(),
            smoothing_window: 3,
            floor: DEFAULT_PRIOR_FLOOR,
            averaging: "all_stops".into(),
            joint: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceConfig {
    pub alpha: f64,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            alpha: semtraj::sequence::DEFAULT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub min_overlap: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            min_overlap: semtraj::evaluation::DEFAULT_MIN_OVERLAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Method for `annotate` and `evaluate`.
    pub method: String,
    /// Methods compared by `run-all`.
    pub methods: Vec<String>,
    pub out: Option<PathBuf>,
    /// 0 picks the number of logical CPUs.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Upapp.as_str().into(),
            methods: Method::ALL.iter().map(|m| m.as_str().to_string()).collect(),
            out: None,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub input: InputConfig,
    pub trajectory: TrajectoryConfig,
    pub noise: NoiseConfig,
    pub stops: StopsConfig,
    pub spatial: SpatialConfig,
    pub priors: PriorsConfig,
    pub sequence: SequenceConfig,
    pub evaluation: EvaluationConfig,
    pub run: RunConfig,
}

/// Applies `UPAPP_<SECTION>_<KEY>=value` pairs onto a parsed table. The
/// value is read as a TOML value when possible and as a string otherwise.
pub fn apply_env_overrides(
    table: &mut toml::Table,
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<(), CliError> {
    for (name, raw) in vars {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
        let Some((section, key)) = rest.split_once('_') else {
            return Err(CliError::config(format!("{name}: expected {ENV_PREFIX}<SECTION>_<KEY>")));
        };
        let (section, key) = (section.to_ascii_lowercase(), key.to_ascii_lowercase());
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.clone()));
        let entry = table
            .entry(section.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let toml::Value::Table(section_table) = entry else {
            return Err(CliError::config(format!("{name}: '{section}' is not a section")));
        };
        section_table.insert(key, value);
    }
    Ok(())
}

impl Config {
    /// Parses TOML text with overrides; relative input paths resolve
    /// against `base`.
    pub fn from_toml(
        text: &str,
        base: &Path,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, CliError> {
        let mut table: toml::Table = text.parse().map_err(|e| CliError::config(format!("config: {e}")))?;
        apply_env_overrides(&mut table, vars)?;
        let mut cfg: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::config(format!("config: {e}")))?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let vars = std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX));
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("cannot read config {}: {e}", p.display())))?;
                let base = p.parent().unwrap_or(Path::new("."));
                Self::from_toml(&text, base, vars)
            }
            None => Self::from_toml("", Path::new("."), vars),
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let i = &mut self.input;
        for p in [&mut i.trajectories, &mut i.poi, &mut i.roi, &mut i.logs, &mut i.poi_rules, &mut i.roi_rules, &mut self.run.out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let s = &self.stops;
        let positive = [
            ("stops.d1", s.d1),
            ("stops.t1", s.t1 as f64),
            ("stops.d2", s.d2),
            ("stops.t2", s.t2 as f64),
            ("stops.d3", s.d3),
            ("stops.d_merge", s.d_merge),
            ("stops.t_merge", s.t_merge as f64),
            ("spatial.search_radius", self.spatial.search_radius),
            ("noise.max_speed_kmh", self.noise.max_speed_kmh),
            ("priors.floor", self.priors.floor),
            ("evaluation.min_overlap", self.evaluation.min_overlap),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CliError::config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.spatial.p_r > 0.0 && self.spatial.p_r < 1.0) {
            return Err(CliError::config(format!("spatial.p_r must lie in (0, 1), got {}", self.spatial.p_r)));
        }
        if self.spatial.search_radius <= s.d_merge {
            return Err(CliError::config("spatial.search_radius must exceed stops.d_merge"));
        }
        if self.sequence.alpha < 0.0 {
            return Err(CliError::config("sequence.alpha must not be negative"));
        }
        self.zone()?;
        self.scheme()?;
        self.averaging()?;
        self.schema()?;
        self.method()?;
        self.methods()?;
        Ok(())
    }

    pub fn zone(&self) -> Result<Zone, CliError> {
        self.input.timezone.parse().map_err(|e| CliError::config(format!("input.timezone: {e}")))
    }

    pub fn scheme(&self) -> Result<BinScheme, CliError> {
        BinScheme::new(self.priors.duration_edges_min.clone(), self.priors.smoothing_window)
            .map_err(|e| CliError::config(format!("priors: {e}")))
    }

    pub fn averaging(&self) -> Result<Averaging, CliError> {
        match self.priors.averaging.as_str() {
            "all_stops" => Ok(Averaging::AllStops),
            "stops_with_category" => Ok(Averaging::StopsWithCategory),
            other => Err(CliError::config(format!(
                "priors.averaging: '{other}', expected all_stops or stops_with_category"
            ))),
        }
    }

    pub fn schema(&self) -> Result<TrajectorySchema, CliError> {
        let t = &self.trajectory;
        let time_format = match t.time_format.as_str() {
            "iso8601" => TimeFormat::Iso8601,
            "epoch" => TimeFormat::EpochSeconds,
            other => return Err(CliError::config(format!("trajectory.time_format: '{other}'"))),
        };
        if !t.delimiter.is_ascii() {
            return Err(CliError::config("trajectory.delimiter must be a single ASCII character"));
        }
        Ok(TrajectorySchema {
            user: t.user_column.clone(),
            time: t.time_column.clone(),
            lat: t.lat_column.clone(),
            lon: t.lon_column.clone(),
            time_format,
            delimiter: t.delimiter as u8,
        })
    }

    pub fn method(&self) -> Result<Method, CliError> {
        self.run.method.parse().map_err(|e: String| CliError::config(format!("run.method: {e}")))
    }

    pub fn methods(&self) -> Result<Vec<Method>, CliError> {
        self.run
            .methods
            .iter()
            .map(|m| m.parse().map_err(|e: String| CliError::config(format!("run.methods: {e}"))))
            .collect()
    }

    pub fn stop_params(&self) -> StopParams {
        let s = &self.stops;
        StopParams {
            d1: s.d1,
            t1: s.t1,
            d2: s.d2,
            t2: s.t2,
            d3: s.d3,
            d_merge: s.d_merge,
            t_merge: s.t_merge,
        }
    }

    pub fn spatial_params(&self) -> SpatialParams {
        SpatialParams {
            p_r: self.spatial.p_r,
            search_radius: self.spatial.search_radius,
        }
    }

    /// Parameters recorded in the manifest; leaves out the output directory
    /// and thread count, which do not affect results.
    pub fn snapshot(&self) -> serde_json::Value {
        let mut c = self.clone();
        c.run.out = None;
        c.run.threads = 0;
        let mut v = serde_json::to_value(&c).expect("config serializes");
        if let Some(run) = v.get_mut("run").and_then(|r| r.as_object_mut()) {
            run.remove("out");
            run.remove("threads");
        }
        v
    }
}
