//! Matching annotated stops against activity logs, accuracy reports, and
//! priors counted directly from logs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Read;

use chrono::{DateTime, Duration, NaiveDate, NaiveTime, Utc};

use crate::annotate::{Annotation, AnnotationStatus};
use crate::ingest::{PlaceCategory, PlaceIndex};
use crate::priors::{normalize_row, BinScheme, JointPriorTable, PriorError, PriorTable, PriorTables};
use crate::zone::{parse_time, Zone};

const NCAT: usize = PlaceCategory::COUNT;

pub const DEFAULT_MIN_OVERLAP: f64 = 0.5;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("no stop matched a log entry")]
    EmptyPairs,
    #[error("no usable activity log entries")]
    NoLogs,
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error("malformed report: {0}")]
    Report(String),
    #[error(transparent)]
    Prior(#[from] PriorError),
}

impl From<csv::Error> for EvalError {
    fn from(e: csv::Error) -> Self {
        EvalError::Csv(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivityLogEntry {
    pub user_id: String,
    pub date: NaiveDate,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub category: PlaceCategory,
    pub activity: Option<String>,
}

impl ActivityLogEntry {
    pub fn duration_s(&self) -> i64 {
        (self.end - self.start).num_seconds()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedLogs {
    pub entries: Vec<ActivityLogEntry>,
    /// Rows whose category lies outside the seven canonical ones.
    pub excluded: usize,
}

fn is_other(s: &str) -> bool {
    matches!(s.trim().to_ascii_lowercase().as_str(), "others" | "other")
}

/// `start`/`end` accept a full timestamp or a time of day on `date`; an end
/// time of day not after the start rolls over to the next day.
fn log_time(date: NaiveDate, s: &str, zone: &Zone) -> Option<DateTime<Utc>> {
    if let Some(t) = parse_time(s, zone) {
        return Some(t);
    }
    let tod = ["%H:%M:%S", "%H:%M"].iter().find_map(|f| NaiveTime::parse_from_str(s.trim(), f).ok())?;
    zone.from_local(&date.and_time(tod))
}

/// Reads `user, date, start, end, category[, activity]` rows with a header.
pub fn read_activity_logs<R: Read>(source: R, zone: &Zone) -> Result<ParsedLogs, EvalError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(source);
    let mut out = ParsedLogs::default();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let err = |message: String| EvalError::Row { line, message };
        if rec.len() < 5 {
            return Err(err(format!("expected at least 5 fields, found {}", rec.len())));
        }
        if is_other(&rec[4]) {
            out.excluded += 1;
            continue;
        }
        let category: PlaceCategory = rec[4].parse().map_err(|e: crate::ingest::UnknownCategory| err(e.to_string()))?;
        let date = NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d").map_err(|e| err(format!("date '{}': {e}", &rec[1])))?;
        let start = log_time(date, &rec[2], zone).ok_or_else(|| err(format!("start '{}'", &rec[2])))?;
        let mut end = log_time(date, &rec[3], zone).ok_or_else(|| err(format!("end '{}'", &rec[3])))?;
        if end <= start && parse_time(&rec[3], zone).is_none() {
            end += Duration::days(1);
        }
        if end <= start {
            return Err(err("activity end is not after its start".into()));
        }
        out.entries.push(ActivityLogEntry {
            user_id: rec[0].to_string(),
            date,
            start,
            end,
            category,
            activity: rec.get(5).filter(|s| !s.is_empty()).map(str::to_string),
        });
    }
    Ok(out)
}

/// What the evaluator needs from an annotated stop.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub stop_id: String,
    pub user_id: String,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub status: AnnotationStatus,
    pub predicted: Option<PlaceCategory>,
}

impl EvalRecord {
    pub fn from_annotation(a: &Annotation, index: &PlaceIndex) -> Self {
        Self {
            stop_id: a.stop.stop_id.clone(),
            user_id: a.stop.user_id.clone(),
            start: a.stop.start_time,
            end: a.stop.end_time(),
            status: a.status,
            predicted: a.chosen_category(index),
        }
    }
}

/// Reads the annotation export back into evaluation records.
pub fn read_eval_records<R: Read>(source: R, zone: &Zone) -> Result<Vec<EvalRecord>, EvalError> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or(EvalError::Row { line: 1, message: format!("missing column '{name}'") })
    };
    let (sid, uid, st, du, stat, cat) =
        (col("stop_id")?, col("user_id")?, col("start_time")?, col("duration_s")?, col("status")?, col("category")?);
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let err = |message: String| EvalError::Row { line: i + 2, message };
        let start = parse_time(&rec[st], zone).ok_or_else(|| err(format!("start_time '{}'", &rec[st])))?;
        let duration: i64 = rec[du].parse().map_err(|_| err(format!("duration_s '{}'", &rec[du])))?;
        let status = match &rec[stat] {
            "annotated" => AnnotationStatus::Annotated,
            "no_candidates" => AnnotationStatus::NoCandidates,
            other => return Err(err(format!("status '{other}'"))),
        };
        let predicted = match &rec[cat] {
            "" => None,
            c => Some(c.parse().map_err(|e: crate::ingest::UnknownCategory| err(e.to_string()))?),
        };
        out.push(EvalRecord {
            stop_id: rec[sid].to_string(),
            user_id: rec[uid].to_string(),
            start,
            end: start + Duration::seconds(duration),
            status,
            predicted,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchOutcome {
    /// Index into the canonically ordered log entries.
    Matched(usize),
    Unmatched,
    NoLog,
    NoCandidate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// Logs sorted by user, start, end, category, activity.
    pub logs: Vec<ActivityLogEntry>,
    /// One outcome per record, in record order.
    pub outcomes: Vec<MatchOutcome>,
}

fn overlap_s(a0: DateTime<Utc>, a1: DateTime<Utc>, b0: DateTime<Utc>, b1: DateTime<Utc>) -> i64 {
    (a1.min(b1) - a0.max(b0)).num_seconds().max(0)
}

/// Matches each stop to the same user's log entry of largest overlap,
/// provided it covers at least `min_overlap` of the stop. Stops on a local
/// date without any log of that user are counted as `NoLog`. Overlap ties go
/// to the earliest entry in canonical order.
pub fn match_logs(records: &[EvalRecord], logs: &[ActivityLogEntry], min_overlap: f64, zone: &Zone) -> Matching {
    let mut logs = logs.to_vec();
    logs.sort_by(|a, b| {
        (&a.user_id, a.start, a.end, a.category, &a.activity).cmp(&(&b.user_id, b.start, b.end, b.category, &b.activity))
    });
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut dates: BTreeSet<(&str, NaiveDate)> = BTreeSet::new();
    for (i, l) in logs.iter().enumerate() {
        by_user.entry(l.user_id.as_str()).or_default().push(i);
        dates.insert((l.user_id.as_str(), l.date));
    }
    let outcomes = records
        .iter()
        .map(|r| {
            if r.status == AnnotationStatus::NoCandidates {
                return MatchOutcome::NoCandidate;
            }
            if !dates.contains(&(r.user_id.as_str(), zone.local_date(&r.start))) {
                return MatchOutcome::NoLog;
            }
            let mut best: Option<(usize, i64)> = None;
            for &i in by_user.get(r.user_id.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
                let o = overlap_s(r.start, r.end, logs[i].start, logs[i].end);
                if o > 0 && best.is_none_or(|(_, b)| o > b) {
                    best = Some((i, o));
                }
            }
            let duration = (r.end - r.start).num_seconds() as f64;
            match best {
                Some((i, o)) if o as f64 >= min_overlap * duration => MatchOutcome::Matched(i),
                _ => MatchOutcome::Unmatched,
            }
        })
        .collect();
    Matching { logs, outcomes }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CategoryTally {
    pub true_positive: usize,
    pub total: usize,
}

impl CategoryTally {
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.true_positive as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MatchCounts {
    pub matched: usize,
    pub unmatched: usize,
    pub no_log: usize,
    pub no_candidate: usize,
}

impl MatchCounts {
    pub fn total(&self) -> usize {
        self.matched + self.unmatched + self.no_log + self.no_candidate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    /// Indexed by the logged category.
    pub per_category: [CategoryTally; NCAT],
    pub overall: f64,
    pub average: f64,
    pub counts: MatchCounts,
}

/// Per-category tallies keyed by the logged category.
pub fn per_category_accuracy(pairs: &[(PlaceCategory, Option<PlaceCategory>)]) -> Result<[CategoryTally; NCAT], EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyPairs);
    }
    let mut t = [CategoryTally::default(); NCAT];
    for &(truth, predicted) in pairs {
        t[truth.index()].total += 1;
        if predicted == Some(truth) {
            t[truth.index()].true_positive += 1;
        }
    }
    Ok(t)
}

/// `(OA, AA)`: pooled accuracy, and the mean over categories with visits.
pub fn overall_and_average(per_category: &[CategoryTally; NCAT]) -> (f64, f64) {
    let tp: usize = per_category.iter().map(|t| t.true_positive).sum();
    let total: usize = per_category.iter().map(|t| t.total).sum();
    let accs: Vec<f64> = per_category.iter().filter_map(CategoryTally::accuracy).collect();
    let oa = if total > 0 { tp as f64 / total as f64 } else { f64::NAN };
    let aa = if accs.is_empty() { f64::NAN } else { accs.iter().sum::<f64>() / accs.len() as f64 };
    (oa, aa)
}

pub fn evaluate(records: &[EvalRecord], logs: &[ActivityLogEntry], min_overlap: f64, zone: &Zone) -> Result<EvaluationReport, EvalError> {
    let m = match_logs(records, logs, min_overlap, zone);
    let mut counts = MatchCounts::default();
    let mut pairs = Vec::new();
    for (r, o) in records.iter().zip(&m.outcomes) {
        match *o {
            MatchOutcome::Matched(i) => {
                counts.matched += 1;
                pairs.push((m.logs[i].category, r.predicted));
            }
            MatchOutcome::Unmatched => counts.unmatched += 1,
            MatchOutcome::NoLog => counts.no_log += 1,
            MatchOutcome::NoCandidate => counts.no_candidate += 1,
        }
    }
    let per_category = per_category_accuracy(&pairs)?;
    let (overall, average) = overall_and_average(&per_category);
    Ok(EvaluationReport { per_category, overall, average, counts })
}

impl EvaluationReport {
    /// `key = value` lines.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let c = &self.counts;
        for (k, v) in [("stops", c.total()), ("matched", c.matched), ("unmatched", c.unmatched), ("no_log", c.no_log), ("no_candidate", c.no_candidate)] {
            writeln!(s, "{k} = {v}").unwrap();
        }
        writeln!(s, "overall_accuracy = {}", self.overall).unwrap();
        writeln!(s, "average_accuracy = {}", self.average).unwrap();
        for cat in PlaceCategory::ALL {
            let t = self.per_category[cat.index()];
            writeln!(s, "{cat}.tp = {}", t.true_positive).unwrap();
            writeln!(s, "{cat}.total = {}", t.total).unwrap();
            match t.accuracy() {
                Some(a) => writeln!(s, "{cat}.accuracy = {a}").unwrap(),
                None => writeln!(s, "{cat}.accuracy = n/a").unwrap(),
            }
        }
        s
    }

    pub fn from_key_value(text: &str) -> Result<Self, EvalError> {
        let kv = crate::priors::parse_meta(text);
        let get = |k: &str| kv.get(k).ok_or_else(|| EvalError::Report(format!("missing '{k}'")));
        let int = |k: &str| get(k)?.parse::<usize>().map_err(|e| EvalError::Report(format!("{k}: {e}")));
        let float = |k: &str| get(k)?.parse::<f64>().map_err(|e| EvalError::Report(format!("{k}: {e}")));
        let mut per_category = [CategoryTally::default(); NCAT];
        for cat in PlaceCategory::ALL {
            per_category[cat.index()] = CategoryTally {
                true_positive: int(&format!("{cat}.tp"))?,
                total: int(&format!("{cat}.total"))?,
            };
        }
        let counts = MatchCounts {
            matched: int("matched")?,
            unmatched: int("unmatched")?,
            no_log: int("no_log")?,
            no_candidate: int("no_candidate")?,
        };
        if counts.total() != int("stops")? {
            return Err(EvalError::Report("counts do not add up to stops".into()));
        }
        Ok(Self { per_category, overall: float("overall_accuracy")?, average: float("average_accuracy")?, counts })
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<12} {:>6} {:>6} {:>9}", "category", "tp", "total", "accuracy").unwrap();
        for cat in PlaceCategory::ALL {
            let t = self.per_category[cat.index()];
            let acc = t.accuracy().map_or("-".to_string(), |a| format!("{a:.3}"));
            writeln!(s, "{:<12} {:>6} {:>6} {:>9}", cat.as_str(), t.true_positive, t.total, acc).unwrap();
        }
        writeln!(s, "\noverall accuracy  {:.3}", self.overall).unwrap();
        writeln!(s, "average accuracy  {:.3}", self.average).unwrap();
        let c = &self.counts;
        writeln!(
            s,
            "stops {} (matched {}, unmatched {}, no log {}, no candidates {})",
            c.total(),
            c.matched,
            c.unmatched,
            c.no_log,
            c.no_candidate
        )
        .unwrap();
        s
    }
}

/// Duration and time priors counted directly from logged activities, rows
/// normalized, no smoothing.
pub fn log_based_priors(logs: &[ActivityLogEntry], scheme: &BinScheme, zone: &Zone) -> Result<PriorTables, EvalError> {
    if logs.is_empty() {
        return Err(EvalError::NoLogs);
    }
    let (nd, nt) = (scheme.duration_bins(), scheme.time_bins());
    let mut dur = vec![vec![0usize; nd]; NCAT];
    let mut time = vec![vec![0usize; nt]; NCAT];
    let mut joint = vec![vec![vec![0usize; nt]; nd]; NCAT];
    for l in logs {
        let j = l.category.index();
        let m = scheme.bin_duration(l.duration_s())?;
        let k = scheme.bin_time(&l.start, zone);
        dur[j][m] += 1;
        time[j][k] += 1;
        joint[j][m][k] += 1;
    }
    let table = |counts: Vec<Vec<usize>>, labels: Vec<String>| {
        let bins = labels.len();
        PriorTable {
            bin_labels: labels,
            values: counts.iter().map(|r| normalize_row(r.iter().map(|&c| c as f64).collect())).collect(),
            bin_stops: (0..bins).map(|b| counts.iter().map(|r| r[b]).sum()).collect(),
            support: counts,
        }
    };
    let cell_stops = (0..nd).map(|m| (0..nt).map(|k| joint.iter().map(|c| c[m][k]).sum()).collect()).collect();
    let joint = JointPriorTable {
        duration_labels: scheme.duration_labels(),
        time_labels: scheme.time_labels(),
        values: joint
            .iter()
            .map(|slices| slices.iter().map(|r| normalize_row(r.iter().map(|&c| c as f64).collect())).collect())
            .collect(),
        cell_stops,
    };
    Ok(PriorTables {
        duration: table(dur, scheme.duration_labels()),
        time: table(time, scheme.time_labels()),
        joint: Some(joint),
        stop_count: logs.len(),
    })
}

/// Total variation distance between two distributions of equal length.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
