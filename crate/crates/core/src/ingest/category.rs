//! The seven canonical place categories and the tag rules that assign them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Tags = BTreeMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaceCategory {
    Residential,
    Working,
    Service,
    Dining,
    School,
    Leisure,
    Shopping,
}

impl PlaceCategory {
    pub const COUNT: usize = 7;

    pub const ALL: [PlaceCategory; 7] = [
        PlaceCategory::Residential,
        PlaceCategory::Working,
        PlaceCategory::Service,
        PlaceCategory::Dining,
        PlaceCategory::School,
        PlaceCategory::Leisure,
        PlaceCategory::Shopping,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PlaceCategory::Residential => "residential",
            PlaceCategory::Working => "working",
            PlaceCategory::Service => "service",
            PlaceCategory::Dining => "dining",
            PlaceCategory::School => "school",
            PlaceCategory::Leisure => "leisure",
            PlaceCategory::Shopping => "shopping",
        }
    }
}

impl fmt::Display for PlaceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown place category '{0}'")]
pub struct UnknownCategory(pub String);

impl FromStr for PlaceCategory {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase();
        let cat = match norm.as_str() {
            "residential" | "residential area" | "home" => PlaceCategory::Residential,
            "working" | "work" | "working area" | "workplace" => PlaceCategory::Working,
            "service" | "services" | "service venue" | "service place" => PlaceCategory::Service,
            "dining" | "dining venue" | "dining place" | "restaurant" => PlaceCategory::Dining,
            "school" | "education" => PlaceCategory::School,
            "leisure" | "leisure venue" | "leisure place" => PlaceCategory::Leisure,
            "shopping" | "shopping venue" | "shopping place" | "shop" => PlaceCategory::Shopping,
            _ => return Err(UnknownCategory(s.to_string())),
        };
        Ok(cat)
    }
}

/// Which vocabulary a feature's tags come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagSource {
    /// Commercial POI data with free-text classification values.
    Poi,
    /// OpenStreetMap `key=value` tags.
    Osm,
}

impl FromStr for TagSource {
    type Err = RuleParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "poi" => Ok(TagSource::Poi),
            "osm" => Ok(TagSource::Osm),
            other => Err(RuleParseError::Source(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Matcher {
    /// Case-insensitive substring over tag values.
    Keyword(String),
    /// Exact key, with any of the listed values (empty list means `*`).
    Tag { key: String, values: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryRule {
    source: TagSource,
    matcher: Matcher,
    category: PlaceCategory,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuleParseError {
    #[error("line {line}: expected 'source, match expression, category'")]
    Shape { line: usize },
    #[error("unknown tag source '{0}'")]
    Source(String),
    #[error("line {line}: {source}")]
    Category { line: usize, source: UnknownCategory },
    #[error("line {line}: OSM rule needs 'key=value' or 'key=*'")]
    OsmExpression { line: usize },
}

/// An ordered rule list; the first matching rule wins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryRules {
    rules: Vec<CategoryRule>,
}

/// Tag keys that identify a feature rather than classify it.
const IDENTITY_KEYS: [&str; 5] = ["name", "id", "place_id", "osm_id", "address"];

const BUILTIN_RULES: &str = "\
poi, community, residential
poi, residential, residential
poi, company, working
poi, office building, working
poi, government, working
poi, life services, service
poi, medical care, service
poi, finance, service
poi, car, service
poi, dining, dining
poi, school, school
poi, leisure, leisure
poi, shopping, shopping
osm, office=*, working
osm, amenity=restaurant, dining
osm, amenity=college|university|school|kindergarten, school
osm, leisure=*, leisure
osm, shop=*, shopping
osm, landuse=residential, residential
osm, amenity=*, service
";

static BUILTIN: LazyLock<CategoryRules> =
    LazyLock::new(|| CategoryRules::parse(BUILTIN_RULES).expect("built-in category rules parse"));

impl Default for CategoryRules {
    fn default() -> Self {
        BUILTIN.clone()
    }
}

impl CategoryRules {
    pub fn builtin() -> &'static CategoryRules {
        &BUILTIN
    }

    /// Parses one rule per line: `source, match expression, category`.
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, RuleParseError> {
        let mut rules = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [source, expr, category] = fields[..] else {
                return Err(RuleParseError::Shape { line: i + 1 });
            };
            let source: TagSource = source.parse()?;
            let category = category
                .parse()
                .map_err(|source| RuleParseError::Category { line: i + 1, source })?;
            let matcher = match source {
                TagSource::Poi => Matcher::Keyword(expr.to_lowercase()),
                TagSource::Osm => {
                    let (key, value) = expr.split_once('=').ok_or(RuleParseError::OsmExpression { line: i + 1 })?;
                    let (key, value) = (key.trim(), value.trim());
                    if key.is_empty() || value.is_empty() {
                        return Err(RuleParseError::OsmExpression { line: i + 1 });
                    }
                    let values = if value == "*" {
                        Vec::new()
                    } else {
                        value.split('|').map(|v| v.trim().to_string()).collect()
                    };
                    Matcher::Tag {
                        key: key.to_string(),
                        values,
                    }
                }
            };
            rules.push(CategoryRule {
                source,
                matcher,
                category,
            });
        }
        Ok(Self { rules })
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn classify(&self, tags: &Tags, source: TagSource) -> Option<PlaceCategory> {
        self.rules
            .iter()
            .filter(|r| r.source == source)
            .find(|r| match &r.matcher {
                Matcher::Keyword(kw) => tags
                    .iter()
                    .filter(|(k, _)| !IDENTITY_KEYS.contains(&k.to_ascii_lowercase().as_str()))
                    .any(|(_, v)| v.to_lowercase().contains(kw.as_str())),
                Matcher::Tag { key, values } => match tags.get(key) {
                    Some(v) => values.is_empty() || values.iter().any(|want| want == v),
                    None => false,
                },
            })
            .map(|r| r.category)
    }
}

/// Maps raw tags to a category using the built-in rules; `None` rejects the
/// feature.
pub fn map_category(tags: &Tags, source: TagSource) -> Option<PlaceCategory> {
    BUILTIN.classify(tags, source)
}
