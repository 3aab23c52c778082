//! Visit probabilities of candidate places and the per-stop choice.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::exec::{self, Mode};
use crate::ingest::{PlaceCategory, PlaceIndex};
use crate::priors::{lookup_prior, tfidf_weights, BinScheme, JointPriorTable, PriorError, PriorTable, PriorTables, DEFAULT_PRIOR_FLOOR};
use crate::spatial::{spatial_scores, SpatialError, SpatialParams, SpatialScore};
use crate::stops::{CandidatePlace, Stop, StopIoError, StopWithCandidates};
use crate::zone::{format_time, Zone};

/// The comparison menu of annotation methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Spatial probability only.
    SpatialOnly,
    /// Spatial probability times both temporal priors, no importance.
    Spatiotemporal,
    /// Spatiotemporal probability weighted by category importance.
    Upapp,
    /// [`Method::Upapp`] emissions decoded per user-day with Viterbi.
    UpappHmm,
    /// [`Method::Upapp`] with the time prior conditioned on the duration bin.
    UpappJoint,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::SpatialOnly,
        Method::Spatiotemporal,
        Method::Upapp,
        Method::UpappHmm,
        Method::UpappJoint,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::SpatialOnly => "spatial-only",
            Method::Spatiotemporal => "spatiotemporal",
            Method::Upapp => "upapp",
            Method::UpappHmm => "upapp-hmm",
            Method::UpappJoint => "upapp-joint",
        }
    }

    pub fn temporal(self) -> TemporalModel {
        match self {
            Method::SpatialOnly => TemporalModel::None,
            Method::Spatiotemporal | Method::Upapp | Method::UpappHmm => TemporalModel::Independent,
            Method::UpappJoint => TemporalModel::Joint,
        }
    }

    pub fn uses_importance(self) -> bool {
        !matches!(self, Method::SpatialOnly | Method::Spatiotemporal)
    }

    pub fn uses_sequence(self) -> bool {
        self == Method::UpappHmm
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.as_str()).collect();
                format!("unknown method '{s}', expected one of {}", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalModel {
    /// Both temporal factors are 1.
    None,
    Independent,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateScore {
    pub place: usize,
    pub distance: f64,
    /// Normalized spatial probability.
    pub spatial: f64,
    pub p_time: f64,
    pub p_duration: f64,
    pub spatiotemporal: f64,
    pub importance: f64,
    pub normalized_importance: f64,
    pub visit_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationStatus {
    Annotated,
    NoCandidates,
}

impl AnnotationStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationStatus::Annotated => "annotated",
            AnnotationStatus::NoCandidates => "no_candidates",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub stop: Stop,
    /// Descending visit score with the tie-break applied.
    pub ranked: Vec<CandidateScore>,
    /// Index into `ranked`.
    pub chosen: Option<usize>,
    pub status: AnnotationStatus,
}

impl Annotation {
    pub fn chosen_score(&self) -> Option<&CandidateScore> {
        self.chosen.map(|i| &self.ranked[i])
    }

    pub fn chosen_category(&self, index: &PlaceIndex) -> Option<PlaceCategory> {
        self.chosen_score().map(|c| index.place(c.place).category)
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum AnnotateError {
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error("method {0} needs prior tables")]
    MissingPriors(Method),
    #[error("method {0} needs a joint prior table")]
    MissingJointPrior(Method),
}

/// `P(t|C) · P(dur|C) · P(O|(x, y))` with floored prior lookups.
pub fn spatiotemporal_score(
    category: PlaceCategory,
    stop: &Stop,
    priors: &PriorTables,
    spatial: f64,
    scheme: &BinScheme,
    zone: &Zone,
    floor: f64,
) -> Result<f64, PriorError> {
    let (p_time, p_duration) = independent_factors(category, stop, &priors.time, &priors.duration, scheme, zone, floor)?;
    Ok(p_time * p_duration * spatial)
}

/// `P(t|C, dur) · P(dur|C) · P(O|(x, y))` with floored lookups.
pub fn spatiotemporal_score_joint(
    category: PlaceCategory,
    stop: &Stop,
    joint: &JointPriorTable,
    duration_prior: &PriorTable,
    spatial: f64,
    scheme: &BinScheme,
    zone: &Zone,
    floor: f64,
) -> Result<f64, PriorError> {
    let (p_time, p_duration) = joint_factors(category, stop, joint, duration_prior, scheme, zone, floor)?;
    Ok(p_time * p_duration * spatial)
}

fn independent_factors(
    category: PlaceCategory,
    stop: &Stop,
    time: &PriorTable,
    duration: &PriorTable,
    scheme: &BinScheme,
    zone: &Zone,
    floor: f64,
) -> Result<(f64, f64), PriorError> {
    let m = scheme.bin_duration(stop.duration)?;
    let k = scheme.bin_time(&stop.start_time, zone);
    Ok((lookup_prior(time, category, k, floor), lookup_prior(duration, category, m, floor)))
}

fn joint_factors(
    category: PlaceCategory,
    stop: &Stop,
    joint: &JointPriorTable,
    duration: &PriorTable,
    scheme: &BinScheme,
    zone: &Zone,
    floor: f64,
) -> Result<(f64, f64), PriorError> {
    let m = scheme.bin_duration(stop.duration)?;
    let k = scheme.bin_time(&stop.start_time, zone);
    Ok((joint.lookup(category, m, k, floor), lookup_prior(duration, category, m, floor)))
}

/// Normalized per-candidate importance: every candidate inherits its
/// category's TF-IDF weight within the candidate set. Falls back to uniform
/// when every weight is zero.
pub fn category_importance(candidates: &[CandidatePlace], index: &PlaceIndex) -> Result<Vec<f64>, PriorError> {
    Ok(category_importance_raw(candidates, index)?.1)
}

fn category_importance_raw(candidates: &[CandidatePlace], index: &PlaceIndex) -> Result<(Vec<f64>, Vec<f64>), PriorError> {
    if candidates.is_empty() {
        return Err(PriorError::EmptyCandidates);
    }
    let cats: Vec<PlaceCategory> = candidates.iter().map(|c| index.place(c.place).category).collect();
    let local = crate::ingest::CategoryCounts::from_categories(cats.iter().copied());
    let w = tfidf_weights(&local, index.global_counts());
    let raw: Vec<f64> = cats.iter().map(|c| w[c.index()]).collect();
    let sum: f64 = raw.iter().sum();
    let n = raw.len() as f64;
    let normalized = if sum > 0.0 {
        raw.iter().map(|v| v / sum).collect()
    } else {
        vec![1.0 / n; raw.len()]
    };
    Ok((raw, normalized))
}

/// Orders by descending visit score, then ascending distance, then place id.
pub fn rank_order(a: &CandidateScore, b: &CandidateScore, index: &PlaceIndex) -> Ordering {
    b.visit_score
        .total_cmp(&a.visit_score)
        .then(a.distance.total_cmp(&b.distance))
        .then_with(|| index.place(a.place).place_id.cmp(&index.place(b.place).place_id))
}

/// Everything needed to annotate stops with one method.
#[derive(Debug, Clone)]
pub struct Annotator<'a> {
    index: &'a PlaceIndex,
    method: Method,
    spatial: SpatialParams,
    scheme: BinScheme,
    zone: Zone,
    floor: f64,
    time: Option<PriorTable>,
    duration: Option<PriorTable>,
    joint: Option<JointPriorTable>,
}

impl<'a> Annotator<'a> {
    /// Prior rows are renormalized on entry, so any positive rescaling of a
    /// row has no effect.
    pub fn new(
        index: &'a PlaceIndex,
        method: Method,
        priors: Option<&PriorTables>,
        spatial: SpatialParams,
        scheme: BinScheme,
        zone: Zone,
    ) -> Result<Self, AnnotateError> {
        let temporal = method.temporal();
        let needs_priors = temporal != TemporalModel::None;
        if needs_priors && priors.is_none() {
            return Err(AnnotateError::MissingPriors(method));
        }
        if temporal == TemporalModel::Joint && priors.and_then(|p| p.joint.as_ref()).is_none() {
            return Err(AnnotateError::MissingJointPrior(method));
        }
        let priors = priors.filter(|_| needs_priors);
        Ok(Self {
            index,
            method,
            spatial,
            scheme,
            zone,
            floor: DEFAULT_PRIOR_FLOOR,
            time: priors.map(|p| p.time.renormalized()),
            duration: priors.map(|p| p.duration.renormalized()),
            joint: priors.and_then(|p| p.joint.as_ref()).filter(|_| temporal == TemporalModel::Joint).map(|j| j.renormalized()),
        })
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn index(&self) -> &'a PlaceIndex {
        self.index
    }

    pub fn zone(&self) -> &Zone {
        &self.zone
    }

    fn temporal_factors(&self, category: PlaceCategory, stop: &Stop) -> Result<(f64, f64), PriorError> {
        match (self.method.temporal(), &self.time, &self.duration, &self.joint) {
            (TemporalModel::Independent, Some(t), Some(d), _) => {
                independent_factors(category, stop, t, d, &self.scheme, &self.zone, self.floor)
            }
            (TemporalModel::Joint, _, Some(d), Some(j)) => joint_factors(category, stop, j, d, &self.scheme, &self.zone, self.floor),
            _ => Ok((1.0, 1.0)),
        }
    }

    pub fn annotate_stop(&self, stop: &StopWithCandidates) -> Result<Annotation, AnnotateError> {
        if stop.candidates.is_empty() {
            return Ok(Annotation {
                stop: stop.stop.clone(),
                ranked: Vec::new(),
                chosen: None,
                status: AnnotationStatus::NoCandidates,
            });
        }
        let spatial = spatial_scores(stop, self.index, &self.spatial)?;
        self.annotate_with_spatial(stop, &spatial)
    }

    /// Scores a stop from precomputed spatial scores, one per candidate.
    pub fn annotate_with_spatial(&self, stop: &StopWithCandidates, spatial: &[SpatialScore]) -> Result<Annotation, AnnotateError> {
        assert_eq!(spatial.len(), stop.candidates.len(), "one spatial score per candidate");
        if stop.candidates.is_empty() {
            return self.annotate_stop(stop);
        }
        let n = stop.candidates.len();
        let (importance, normalized_importance) = if self.method.uses_importance() {
            category_importance_raw(&stop.candidates, self.index)?
        } else {
            (vec![1.0; n], vec![1.0 / n as f64; n])
        };
        let mut ranked = Vec::with_capacity(n);
        for (i, c) in stop.candidates.iter().enumerate() {
            let category = self.index.place(c.place).category;
            let (p_time, p_duration) = self.temporal_factors(category, &stop.stop)?;
            let spatiotemporal = p_time * p_duration * spatial[i].normalized;
            ranked.push(CandidateScore {
                place: c.place,
                distance: c.distance,
                spatial: spatial[i].normalized,
                p_time,
                p_duration,
                spatiotemporal,
                importance: importance[i],
                normalized_importance: normalized_importance[i],
                visit_score: spatiotemporal * normalized_importance[i],
            });
        }
        ranked.sort_by(|a, b| rank_order(a, b, self.index));
        Ok(Annotation {
            stop: stop.stop.clone(),
            ranked,
            chosen: Some(0),
            status: AnnotationStatus::Annotated,
        })
    }

    /// Per-stop annotation in input order (no sequence decoding).
    pub fn annotate_all(&self, stops: &[StopWithCandidates]) -> Result<Vec<Annotation>, AnnotateError> {
        self.annotate_all_with(Mode::default(), stops)
    }

    pub fn annotate_all_with(&self, mode: Mode, stops: &[StopWithCandidates]) -> Result<Vec<Annotation>, AnnotateError> {
        exec::map(mode, stops, |s| self.annotate_stop(s)).into_iter().collect()
    }
}

const ANNOTATION_HEADER: [&str; 18] = [
    "stop_id",
    "user_id",
    "lat",
    "lon",
    "radius_m",
    "start_time",
    "duration_s",
    "source",
    "status",
    "place_id",
    "category",
    "distance_m",
    "spatial",
    "p_time",
    "p_duration",
    "spatiotemporal",
    "normalized_importance",
    "visit_score",
];

pub fn write_annotations<W: Write>(out: W, annotations: &[Annotation], index: &PlaceIndex, zone: &Zone) -> Result<(), StopIoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ANNOTATION_HEADER)?;
    for a in annotations {
        let s = &a.stop;
        let mut row = vec![
            s.stop_id.clone(),
            s.user_id.clone(),
            s.center.lat().to_string(),
            s.center.lon().to_string(),
            s.radius.to_string(),
            format_time(&s.start_time, zone),
            s.duration.to_string(),
            s.source.to_string(),
            a.status.as_str().to_string(),
        ];
        match a.chosen_score() {
            Some(c) => {
                let place = index.place(c.place);
                row.extend([
                    place.place_id.clone(),
                    place.category.to_string(),
                    c.distance.to_string(),
                    c.spatial.to_string(),
                    c.p_time.to_string(),
                    c.p_duration.to_string(),
                    c.spatiotemporal.to_string(),
                    c.normalized_importance.to_string(),
                    c.visit_score.to_string(),
                ]);
            }
            None => row.extend(std::iter::repeat_n(String::new(), 9)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Every ranked candidate of every stop.
pub fn write_ranked_candidates<W: Write>(out: W, annotations: &[Annotation], index: &PlaceIndex) -> Result<(), StopIoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "stop_id",
        "rank",
        "chosen",
        "place_id",
        "category",
        "distance_m",
        "spatial",
        "p_time",
        "p_duration",
        "spatiotemporal",
        "importance",
        "normalized_importance",
        "visit_score",
    ])?;
    for a in annotations {
        for (rank, c) in a.ranked.iter().enumerate() {
            let place = index.place(c.place);
            w.write_record([
                a.stop.stop_id.clone(),
                rank.to_string(),
                (a.chosen == Some(rank)).to_string(),
                place.place_id.clone(),
                place.category.to_string(),
                c.distance.to_string(),
                c.spatial.to_string(),
                c.p_time.to_string(),
                c.p_duration.to_string(),
                c.spatiotemporal.to_string(),
                c.importance.to_string(),
                c.normalized_importance.to_string(),
                c.visit_score.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
