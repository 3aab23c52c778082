//! Duration, visiting-time and joint priors learned from TF-IDF potential
//! visits of unlabeled stops.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::exec::{self, Mode};
use crate::ingest::{CategoryCounts, PlaceCategory, PlaceIndex};
use crate::stops::StopWithCandidates;
use crate::zone::Zone;

pub const DEFAULT_PRIOR_FLOOR: f64 = 1e-6;
pub const DEFAULT_DURATION_EDGES_MIN: [f64; 6] = [0.0, 30.0, 90.0, 180.0, 300.0, 1440.0];
pub const TIME_BINS: usize = 19;

const NCAT: usize = PlaceCategory::COUNT;

/// Per-category weight vector indexed by [`PlaceCategory::index`].
pub type CategoryWeights = [f64; NCAT];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("duration must be positive, got {0} s")]
    NonPositiveDuration(i64),
    #[error("stop has no candidate places")]
    EmptyCandidates,
    #[error("no stops with candidate places")]
    NoStops,
    #[error("invalid bin scheme: {0}")]
    InvalidScheme(String),
    #[error("malformed matrix text: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinScheme {
    duration_edges: Vec<f64>,
    smoothing_window: usize,
}

impl Default for BinScheme {
    fn default() -> Self {
        Self {
            duration_edges: DEFAULT_DURATION_EDGES_MIN.to_vec(),
            smoothing_window: 3,
        }
    }
}

impl BinScheme {
    /// `duration_edges` in minutes.
    pub fn new(duration_edges: Vec<f64>, smoothing_window: usize) -> Result<Self, PriorError> {
        if duration_edges.len() < 2 {
            return Err(PriorError::InvalidScheme("need at least two duration edges".into()));
        }
        if duration_edges.windows(2).any(|w| !(w[0] < w[1])) || duration_edges.iter().any(|e| !e.is_finite()) {
            return Err(PriorError::InvalidScheme("duration edges must be finite and strictly ascending".into()));
        }
        if smoothing_window % 2 == 0 {
            return Err(PriorError::InvalidScheme(format!("smoothing window {smoothing_window} is not odd and positive")));
        }
        Ok(Self {
            duration_edges,
            smoothing_window,
        })
    }

    pub fn duration_edges(&self) -> &[f64] {
        &self.duration_edges
    }

    pub fn smoothing_window(&self) -> usize {
        self.smoothing_window
    }

    pub fn duration_bins(&self) -> usize {
        self.duration_edges.len() - 1
    }

    pub fn time_bins(&self) -> usize {
        TIME_BINS
    }

    /// Half-open minute intervals; anything past the last edge lands in the
    /// last bin.
    pub fn bin_duration(&self, duration_s: i64) -> Result<usize, PriorError> {
        if duration_s <= 0 {
            return Err(PriorError::NonPositiveDuration(duration_s));
        }
        let minutes = duration_s as f64 / 60.0;
        let inner = &self.duration_edges[1..self.duration_edges.len() - 1];
        Ok(inner.iter().take_while(|&&e| e <= minutes).count())
    }

    pub fn bin_time(&self, t: &DateTime<Utc>, zone: &Zone) -> usize {
        hour_bin(zone.local_hour(t))
    }

    pub fn duration_labels(&self) -> Vec<String> {
        self.duration_edges.windows(2).map(|w| format!("{}-{}min", w[0], w[1])).collect()
    }

    pub fn time_labels(&self) -> Vec<String> {
        std::iter::once("00-06h".to_string())
            .chain((6..24).map(|h| format!("{h:02}-{:02}h", h + 1)))
            .collect()
    }
}

pub fn hour_bin(hour: u32) -> usize {
    if hour < 6 {
        0
    } else {
        1 + (hour as usize - 6)
    }
}

/// TF-IDF weight per category: local share times log of global rarity.
pub fn tfidf_weights(local: &CategoryCounts, global: &CategoryCounts) -> CategoryWeights {
    let local_total = local.total() as f64;
    let global_total = global.total() as f64;
    let mut w = [0.0; NCAT];
    if local_total == 0.0 {
        return w;
    }
    for c in PlaceCategory::ALL {
        let (l, g) = (local.get(c) as f64, global.get(c) as f64);
        if l > 0.0 && g > 0.0 {
            w[c.index()] = (l / local_total) * (global_total / g).ln();
        }
    }
    w
}

pub fn candidate_counts(stop: &StopWithCandidates, index: &PlaceIndex) -> CategoryCounts {
    CategoryCounts::from_categories(stop.candidates.iter().map(|c| index.place(c.place).category))
}

pub fn potential_visit_weights(stop: &StopWithCandidates, index: &PlaceIndex) -> Result<CategoryWeights, PriorError> {
    if stop.candidates.is_empty() {
        return Err(PriorError::EmptyCandidates);
    }
    Ok(tfidf_weights(&candidate_counts(stop, index), index.global_counts()))
}

/// How a bin's average potential visit treats stops lacking a category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    /// Every stop in the bin counts, contributing 0 when the category is absent.
    #[default]
    AllStops,
    /// Only stops whose candidates include the category count.
    StopsWithCategory,
}

/// Per-bin sums of potential visits with stop counts.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitAccumulator {
    sums: Vec<CategoryWeights>,
    stops: Vec<usize>,
    support: Vec<[usize; NCAT]>,
}

impl VisitAccumulator {
    pub fn new(bins: usize) -> Self {
        Self {
            sums: vec![[0.0; NCAT]; bins],
            stops: vec![0; bins],
            support: vec![[0; NCAT]; bins],
        }
    }

    pub fn bins(&self) -> usize {
        self.stops.len()
    }

    pub fn add(&mut self, bin: usize, weights: &CategoryWeights) {
        self.stops[bin] += 1;
        for j in 0..NCAT {
            self.sums[bin][j] += weights[j];
            if weights[j] > 0.0 {
                self.support[bin][j] += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &VisitAccumulator) {
        for b in 0..self.bins() {
            self.stops[b] += other.stops[b];
            for j in 0..NCAT {
                self.sums[b][j] += other.sums[b][j];
                self.support[b][j] += other.support[b][j];
            }
        }
    }

    /// Average potential visit of category `j` in bin `b`.
    pub fn mean(&self, b: usize, j: usize, averaging: Averaging) -> f64 {
        let n = match averaging {
            Averaging::AllStops => self.stops[b],
            Averaging::StopsWithCategory => self.support[b][j],
        };
        if n == 0 {
            0.0
        } else {
            self.sums[b][j] / n as f64
        }
    }

    /// Each category's bin means normalized over bins.
    fn normalized(&self, averaging: Averaging) -> Vec<Vec<f64>> {
        (0..NCAT)
            .map(|j| {
                let means: Vec<f64> = (0..self.bins()).map(|b| self.mean(b, j, averaging)).collect();
                normalize_row(means)
            })
            .collect()
    }
}

pub(crate) fn normalize_row(mut row: Vec<f64>) -> Vec<f64> {
    let sum: f64 = row.iter().sum();
    if sum > 0.0 {
        row.iter_mut().for_each(|v| *v /= sum);
    } else {
        row.iter_mut().for_each(|v| *v = 0.0);
    }
    row
}

/// Category × bin probabilities. Rows of categories without support are all
/// zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorTable {
    pub bin_labels: Vec<String>,
    /// `values[category][bin]`
    pub values: Vec<Vec<f64>>,
    /// Stops with positive weight for the category in each bin.
    pub support: Vec<Vec<usize>>,
    /// Stops per bin.
    pub bin_stops: Vec<usize>,
}

impl PriorTable {
    pub fn from_accumulator(acc: &VisitAccumulator, bin_labels: Vec<String>, averaging: Averaging) -> Self {
        assert_eq!(bin_labels.len(), acc.bins());
        Self {
            bin_labels,
            values: acc.normalized(averaging),
            support: (0..NCAT).map(|j| acc.support.iter().map(|s| s[j]).collect()).collect(),
            bin_stops: acc.stops.clone(),
        }
    }

    /// Builds the table from `(bin, weights)` pairs.
    pub fn from_weights<'a>(
        items: impl IntoIterator<Item = (usize, &'a CategoryWeights)>,
        bin_labels: Vec<String>,
        averaging: Averaging,
    ) -> Self {
        let mut acc = VisitAccumulator::new(bin_labels.len());
        for (b, w) in items {
            acc.add(b, w);
        }
        Self::from_accumulator(&acc, bin_labels, averaging)
    }

    pub fn bins(&self) -> usize {
        self.bin_labels.len()
    }

    pub fn row(&self, c: PlaceCategory) -> &[f64] {
        &self.values[c.index()]
    }

    pub fn is_supported(&self, c: PlaceCategory) -> bool {
        self.row(c).iter().sum::<f64>() > 0.0
    }

    /// Every row rescaled to sum to 1 (empty rows stay zero).
    pub fn renormalized(&self) -> PriorTable {
        let mut out = self.clone();
        out.values = out.values.into_iter().map(normalize_row).collect();
        out
    }

    pub fn uniform(bin_labels: Vec<String>) -> Self {
        let n = bin_labels.len();
        Self {
            values: vec![vec![1.0 / n as f64; n]; NCAT],
            support: vec![vec![0; n]; NCAT],
            bin_stops: vec![0; n],
            bin_labels,
        }
    }

    /// Centered moving mean over each supported row, truncated at the edges
    /// (dividing by the cells actually covered), then renormalized.
    pub fn smoothed(&self, window: usize) -> PriorTable {
        let mut out = self.clone();
        if window <= 1 {
            return out;
        }
        let half = window / 2;
        for row in out.values.iter_mut() {
            if row.iter().sum::<f64>() <= 0.0 {
                continue;
            }
            let n = row.len();
            let smoothed: Vec<f64> = (0..n)
                .map(|i| {
                    let lo = i.saturating_sub(half);
                    let hi = (i + half).min(n - 1);
                    row[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
                })
                .collect();
            *row = normalize_row(smoothed);
        }
        out
    }
}

pub fn smooth_time_prior(table: &PriorTable, window: usize) -> PriorTable {
    table.smoothed(window)
}

pub fn lookup_prior(table: &PriorTable, category: PlaceCategory, bin: usize, floor: f64) -> f64 {
    table.values[category.index()].get(bin).copied().unwrap_or(0.0).max(floor)
}

/// `P(time bin | category, duration bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPriorTable {
    pub duration_labels: Vec<String>,
    pub time_labels: Vec<String>,
    /// `values[category][duration_bin][time_bin]`
    pub values: Vec<Vec<Vec<f64>>>,
    /// Stops per (duration bin, time bin).
    pub cell_stops: Vec<Vec<usize>>,
}

impl JointPriorTable {
    fn from_accumulator(acc: &VisitAccumulator, duration_labels: Vec<String>, time_labels: Vec<String>, averaging: Averaging) -> Self {
        let (nd, nt) = (duration_labels.len(), time_labels.len());
        assert_eq!(acc.bins(), nd * nt);
        let values = (0..NCAT)
            .map(|j| {
                (0..nd)
                    .map(|m| normalize_row((0..nt).map(|k| acc.mean(m * nt + k, j, averaging)).collect()))
                    .collect()
            })
            .collect();
        let cell_stops = (0..nd).map(|m| acc.stops[m * nt..(m + 1) * nt].to_vec()).collect();
        Self {
            duration_labels,
            time_labels,
            values,
            cell_stops,
        }
    }

    pub fn renormalized(&self) -> JointPriorTable {
        let mut out = self.clone();
        for slices in out.values.iter_mut() {
            for slice in slices.iter_mut() {
                *slice = normalize_row(std::mem::take(slice));
            }
        }
        out
    }

    pub fn slice(&self, c: PlaceCategory, duration_bin: usize) -> &[f64] {
        &self.values[c.index()][duration_bin]
    }

    pub fn lookup(&self, c: PlaceCategory, duration_bin: usize, time_bin: usize, floor: f64) -> f64 {
        self.values[c.index()]
            .get(duration_bin)
            .and_then(|s| s.get(time_bin))
            .copied()
            .unwrap_or(0.0)
            .max(floor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorOptions {
    pub averaging: Averaging,
    pub with_joint: bool,
    pub mode: Mode,
}

impl Default for PriorOptions {
    fn default() -> Self {
        Self {
            averaging: Averaging::AllStops,
            with_joint: true,
            mode: Mode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorTables {
    pub duration: PriorTable,
    /// Smoothed.
    pub time: PriorTable,
    pub joint: Option<JointPriorTable>,
    /// Stops that contributed (those with candidates).
    pub stop_count: usize,
}

/// Weight vector and (duration bin, time bin) of every stop with candidates,
/// in input order.
fn binned_weights(
    mode: Mode,
    stops: &[StopWithCandidates],
    index: &PlaceIndex,
    scheme: &BinScheme,
    zone: &Zone,
) -> Result<Vec<(usize, usize, CategoryWeights)>, PriorError> {
    let per_stop = exec::map(mode, stops, |s| -> Result<Option<(usize, usize, CategoryWeights)>, PriorError> {
        if !s.has_candidates() {
            return Ok(None);
        }
        let w = potential_visit_weights(s, index)?;
        Ok(Some((scheme.bin_duration(s.stop.duration)?, scheme.bin_time(&s.stop.start_time, zone), w)))
    });
    let rows: Vec<_> = per_stop.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().flatten().collect();
    if rows.is_empty() {
        return Err(PriorError::NoStops);
    }
    Ok(rows)
}

pub fn build_priors(
    stops: &[StopWithCandidates],
    index: &PlaceIndex,
    scheme: &BinScheme,
    zone: &Zone,
    opts: &PriorOptions,
) -> Result<PriorTables, PriorError> {
    let rows = binned_weights(opts.mode, stops, index, scheme, zone)?;
    let (nd, nt) = (scheme.duration_bins(), scheme.time_bins());
    let mut dur = VisitAccumulator::new(nd);
    let mut time = VisitAccumulator::new(nt);
    let mut joint = VisitAccumulator::new(nd * nt);
    for (m, k, w) in &rows {
        dur.add(*m, w);
        time.add(*k, w);
        joint.add(m * nt + k, w);
    }
    Ok(PriorTables {
        duration: PriorTable::from_accumulator(&dur, scheme.duration_labels(), opts.averaging),
        time: PriorTable::from_accumulator(&time, scheme.time_labels(), opts.averaging).smoothed(scheme.smoothing_window()),
        joint: opts.with_joint.then(|| {
            JointPriorTable::from_accumulator(&joint, scheme.duration_labels(), scheme.time_labels(), opts.averaging)
        }),
        stop_count: rows.len(),
    })
}

pub fn build_duration_prior(stops: &[StopWithCandidates], index: &PlaceIndex, scheme: &BinScheme) -> Result<PriorTable, PriorError> {
    let rows = binned_weights(Mode::default(), stops, index, scheme, &Zone::utc())?;
    Ok(PriorTable::from_weights(rows.iter().map(|(m, _, w)| (*m, w)), scheme.duration_labels(), Averaging::AllStops))
}

pub fn build_time_prior(
    stops: &[StopWithCandidates],
    index: &PlaceIndex,
    scheme: &BinScheme,
    zone: &Zone,
) -> Result<PriorTable, PriorError> {
    let rows = binned_weights(Mode::default(), stops, index, scheme, zone)?;
    Ok(PriorTable::from_weights(rows.iter().map(|(_, k, w)| (*k, w)), scheme.time_labels(), Averaging::AllStops)
        .smoothed(scheme.smoothing_window()))
}

pub fn build_joint_prior(
    stops: &[StopWithCandidates],
    index: &PlaceIndex,
    scheme: &BinScheme,
    zone: &Zone,
) -> Result<JointPriorTable, PriorError> {
    let rows = binned_weights(Mode::default(), stops, index, scheme, zone)?;
    let nt = scheme.time_bins();
    let mut acc = VisitAccumulator::new(scheme.duration_bins() * nt);
    for (m, k, w) in &rows {
        acc.add(m * nt + k, w);
    }
    Ok(JointPriorTable::from_accumulator(&acc, scheme.duration_labels(), scheme.time_labels(), Averaging::AllStops))
}

/// Comma-separated matrix: a header of column labels after a leading
/// `category` cell, then one labeled row per line, values with nine
/// significant digits.
pub fn format_matrix(corner: &str, col_labels: &[String], rows: &[(String, Vec<f64>)]) -> String {
    let mut out = String::new();
    out.push_str(corner);
    for l in col_labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (label, values) in rows {
        out.push_str(label);
        for v in values {
            write!(out, ",{v:.8e}").expect("write to string");
        }
        out.push('\n');
    }
    out
}

/// Inverse of [`format_matrix`]: `(column labels, labeled rows)`.
pub fn parse_matrix(text: &str) -> Result<(Vec<String>, Vec<(String, Vec<f64>)>), PriorError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| PriorError::Parse("empty matrix".into()))?;
    let cols: Vec<String> = header.split(',').skip(1).map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut cells = line.split(',');
        let label = cells.next().unwrap_or_default().trim().to_string();
        let values = cells
            .map(|c| c.trim().parse::<f64>().map_err(|e| PriorError::Parse(format!("row {}: {e}", i + 1))))
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != cols.len() {
            return Err(PriorError::Parse(format!("row {} has {} values, header has {}", i + 1, values.len(), cols.len())));
        }
        rows.push((label, values));
    }
    Ok((cols, rows))
}

/// `key = value` lines, keys in insertion order.
pub fn format_meta(entries: &[(String, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub fn parse_meta(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| {
            let l = l.trim();
            if l.is_empty() || l.starts_with('#') {
                return None;
            }
            let (k, v) = l.split_once('=')?;
            Some((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl PriorTable {
    pub fn to_matrix(&self) -> String {
        let rows: Vec<(String, Vec<f64>)> =
            PlaceCategory::ALL.iter().map(|c| (c.as_str().to_string(), self.values[c.index()].clone())).collect();
        format_matrix("category", &self.bin_labels, &rows)
    }

    /// Sidecar metadata; `extra` entries come first.
    pub fn meta(&self, extra: &[(String, String)]) -> String {
        let mut entries = extra.to_vec();
        entries.push(("bins".into(), self.bins().to_string()));
        entries.push(("bin_stops".into(), join(&self.bin_stops)));
        for c in PlaceCategory::ALL {
            entries.push((format!("support.{c}"), join(&self.support[c.index()])));
        }
        format_meta(&entries)
    }

    pub fn from_matrix(text: &str) -> Result<Self, PriorError> {
        let (cols, rows) = parse_matrix(text)?;
        let mut values = vec![vec![0.0; cols.len()]; NCAT];
        for (label, row) in rows {
            let c: PlaceCategory = label.parse().map_err(|e: crate::ingest::UnknownCategory| PriorError::Parse(e.to_string()))?;
            values[c.index()] = row;
        }
        Ok(Self {
            support: vec![vec![0; cols.len()]; NCAT],
            bin_stops: vec![0; cols.len()],
            bin_labels: cols,
            values,
        })
    }
}

impl JointPriorTable {
    /// Rows are labeled `category|duration-bin`.
    pub fn to_matrix(&self) -> String {
        let mut rows = Vec::new();
        for c in PlaceCategory::ALL {
            for (m, label) in self.duration_labels.iter().enumerate() {
                rows.push((format!("{c}|{label}"), self.values[c.index()][m].clone()));
            }
        }
        format_matrix("category|duration", &self.time_labels, &rows)
    }

    pub fn meta(&self, extra: &[(String, String)]) -> String {
        let mut entries = extra.to_vec();
        entries.push(("duration_bins".into(), join(&self.duration_labels)));
        for (m, label) in self.duration_labels.iter().enumerate() {
            entries.push((format!("cell_stops.{label}"), join(&self.cell_stops[m])));
        }
        format_meta(&entries)
    }

    pub fn from_matrix(text: &str) -> Result<Self, PriorError> {
        let (time_labels, rows) = parse_matrix(text)?;
        let mut duration_labels: Vec<String> = Vec::new();
        for (label, _) in &rows {
            let (_, d) = label.split_once('|').ok_or_else(|| PriorError::Parse(format!("row label '{label}'")))?;
            if !duration_labels.iter().any(|x| x == d) {
                duration_labels.push(d.to_string());
            }
        }
        let nd = duration_labels.len();
        let mut values = vec![vec![vec![0.0; time_labels.len()]; nd]; NCAT];
        for (label, row) in rows {
            let (c, d) = label.split_once('|').expect("checked above");
            let c: PlaceCategory = c.parse().map_err(|e: crate::ingest::UnknownCategory| PriorError::Parse(e.to_string()))?;
            let m = duration_labels.iter().position(|x| x == d).expect("collected above");
            values[c.index()][m] = row;
        }
        Ok(Self {
            cell_stops: vec![vec![0; time_labels.len()]; nd],
            duration_labels,
            time_labels,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    fn weights(pairs: &[(PlaceCategory, f64)]) -> CategoryWeights {
        let mut w = [0.0; NCAT];
        for &(c, v) in pairs {
            w[c.index()] = v;
        }
        w
    }

    #[test]
    fn duration_bins() {
        let s = BinScheme::default();
        assert_eq!(s.bin_duration(45 * 60).unwrap(), 1);
        assert_eq!(s.bin_duration(30 * 60).unwrap(), 1);
        assert_eq!(s.bin_duration(30 * 60 - 1).unwrap(), 0);
        assert_eq!(s.bin_duration(2000 * 60).unwrap(), 4);
        assert_eq!(s.bin_duration(1440 * 60).unwrap(), 4);
        assert_eq!(s.bin_duration(0), Err(PriorError::NonPositiveDuration(0)));
        assert_eq!(s.duration_bins(), 5);
    }

    #[test]
    fn time_bins() {
        let s = BinScheme::default();
        let t = |h: u32, m: u32| DateTime::parse_from_rfc3339(&format!("2012-10-01T{h:02}:{m:02}:00Z")).unwrap().to_utc();
        assert_eq!(s.bin_time(&t(5, 30), &Zone::utc()), 0);
        assert_eq!(s.bin_time(&t(6, 0), &Zone::utc()), 1);
        assert_eq!(s.bin_time(&t(13, 45), &Zone::utc()), 8);
        assert_eq!(s.bin_time(&t(23, 59), &Zone::utc()), 18);
        // 05:45 UTC is 13:45 in Beijing
        assert_eq!(s.bin_time(&t(5, 45), &"+08:00".parse().unwrap()), 8);
        assert_eq!(s.time_labels().len(), 19);
    }

    #[test]
    fn scheme_validation() {
        assert!(BinScheme::new(vec![0.0, 30.0, 30.0], 3).is_err());
        assert!(BinScheme::new(vec![0.0], 3).is_err());
        assert!(BinScheme::new(vec![0.0, 10.0], 2).is_err());
        assert!(BinScheme::new(vec![0.0, 10.0], 0).is_err());
        assert!(BinScheme::new(vec![0.0, 10.0], 1).is_ok());
    }

    #[test]
    fn tfidf_examples() {
        let local = CategoryCounts::from([0, 0, 8, 2, 0, 0, 0]);
        let global = CategoryCounts::from([200, 200, 300, 100, 100, 50, 50]);
        let w = tfidf_weights(&local, &global);
        assert_relative_eq!(w[PlaceCategory::Dining.index()], 0.2 * 10f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(w[PlaceCategory::Dining.index()], 0.460_517, epsilon = 1e-6);
        assert_eq!(w[PlaceCategory::School.index()], 0.0);

        let only = CategoryCounts::from([0, 0, 0, 5, 0, 0, 0]);
        assert_eq!(tfidf_weights(&only, &CategoryCounts::from([0, 0, 0, 40, 0, 0, 0])), [0.0; NCAT]);

        let half = tfidf_weights(&only, &CategoryCounts::from([0, 0, 0, 40, 40, 0, 0]));
        assert_relative_eq!(half[PlaceCategory::Dining.index()], 0.693_147, epsilon = 1e-6);
    }

    fn appendix_rows() -> Vec<(usize, CategoryWeights)> {
        use PlaceCategory::*;
        let data = [
            (0, 0.12, 0.19, 0.26),
            (0, 0.14, 0.16, 0.31),
            (4, 0.31, 0.15, 0.09),
            (1, 0.15, 0.23, 0.17),
            (2, 0.25, 0.32, 0.12),
            (3, 0.28, 0.21, 0.11),
            (1, 0.13, 0.24, 0.32),
            (0, 0.15, 0.18, 0.27),
            (2, 0.22, 0.24, 0.15),
            (2, 0.12, 0.17, 0.16),
        ];
        data.iter()
            .map(|&(b, school, shop, dining)| (b, weights(&[(School, school), (Shopping, shop), (Dining, dining)])))
            .collect()
    }

    #[test]
    fn appendix_example() {
        let rows = appendix_rows();
        let t = PriorTable::from_weights(rows.iter().map(|(b, w)| (*b, w)), labels(5), Averaging::AllStops);
        // (0.84/3) / (0.84/3 + 0.49/2 + 0.43/3 + 0.11 + 0.09) and so on
        let denom = 0.84 / 3.0 + 0.49 / 2.0 + 0.43 / 3.0 + 0.11 + 0.09;
        let dining = [0.84 / 3.0, 0.49 / 2.0, 0.43 / 3.0, 0.11, 0.09].map(|v| v / denom);
        for (a, b) in t.row(PlaceCategory::Dining).iter().zip(dining) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
        let published = [
            (PlaceCategory::Dining, [0.32, 0.28, 0.17, 0.13, 0.10]),
            (PlaceCategory::School, [0.13, 0.13, 0.18, 0.26, 0.29]),
            (PlaceCategory::Shopping, [0.17, 0.23, 0.24, 0.21, 0.15]),
        ];
        for (c, row) in published {
            for (a, b) in t.row(c).iter().zip(row) {
                assert!((a - b).abs() <= 0.005, "{c}: {a} vs {b}");
            }
            assert_relative_eq!(t.row(c).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        assert!(!t.is_supported(PlaceCategory::Residential));
        assert_eq!(t.bin_stops, vec![3, 2, 3, 1, 1]);
    }

    #[test]
    fn exclusive_averaging_ignores_absent_stops() {
        let rows = [
            (0, weights(&[(PlaceCategory::Dining, 0.4)])),
            (0, weights(&[(PlaceCategory::School, 0.4)])),
            (1, weights(&[(PlaceCategory::Dining, 0.4)])),
        ];
        let all = PriorTable::from_weights(rows.iter().map(|(b, w)| (*b, w)), labels(2), Averaging::AllStops);
        let excl = PriorTable::from_weights(rows.iter().map(|(b, w)| (*b, w)), labels(2), Averaging::StopsWithCategory);
        assert_relative_eq!(all.row(PlaceCategory::Dining)[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(excl.row(PlaceCategory::Dining)[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn smoothing_examples() {
        let mut spike = vec![0.0; 19];
        spike[1] = 1.0;
        let mut t = PriorTable::uniform(labels(19));
        t.values[PlaceCategory::Dining.index()] = spike;
        assert_eq!(t.smoothed(1), t);
        let s = t.smoothed(3);
        // truncated means: [1/2, 1/3, 1/3, 0, ...], renormalized by 7/6
        let row = s.row(PlaceCategory::Dining);
        assert_relative_eq!(row[0], 3.0 / 7.0, epsilon = 1e-12);
        assert_relative_eq!(row[1], 2.0 / 7.0, epsilon = 1e-12);
        assert_relative_eq!(row[2], 2.0 / 7.0, epsilon = 1e-12);
        assert!(row[3..].iter().all(|&v| v == 0.0));
        for v in s.row(PlaceCategory::School) {
            assert_relative_eq!(*v, 1.0 / 19.0, epsilon = 1e-12);
        }
        let mut mid = vec![0.0; 19];
        mid[9] = 1.0;
        t.values[PlaceCategory::Dining.index()] = mid;
        let row = t.smoothed(3).values[PlaceCategory::Dining.index()].clone();
        for i in 8..=10 {
            assert_relative_eq!(row[i], 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn lookup_floor() {
        let rows = appendix_rows();
        let t = PriorTable::from_weights(rows.iter().map(|(b, w)| (*b, w)), labels(5), Averaging::AllStops);
        assert_eq!(lookup_prior(&t, PlaceCategory::Dining, 0, 1e-6), t.row(PlaceCategory::Dining)[0]);
        assert_eq!(lookup_prior(&t, PlaceCategory::Residential, 0, 1e-6), 1e-6);
        let mut z = t.clone();
        z.values[PlaceCategory::Dining.index()][4] = 0.0;
        assert_eq!(lookup_prior(&z, PlaceCategory::Dining, 4, 1e-6), 1e-6);
    }

    #[test]
    fn matrix_round_trip() {
        let rows = appendix_rows();
        let t = PriorTable::from_weights(rows.iter().map(|(b, w)| (*b, w)), BinScheme::default().duration_labels(), Averaging::AllStops);
        let text = t.to_matrix();
        assert!(text.starts_with("category,0-30min,30-90min"));
        let back = PriorTable::from_matrix(&text).unwrap();
        for c in PlaceCategory::ALL {
            for (a, b) in back.row(c).iter().zip(t.row(c)) {
                assert!((a - b).abs() <= 1e-8 * b.abs());
            }
        }
        assert_eq!(back.to_matrix(), text);
        let meta = parse_meta(&t.meta(&[("kind".into(), "duration".into())]));
        assert_eq!(meta["kind"], "duration");
        assert_eq!(meta["bin_stops"], "3,2,3,1,1");
    }

    #[test]
    fn joint_indicator_and_round_trip() {
        let scheme = BinScheme::default();
        let nt = scheme.time_bins();
        let mut acc = VisitAccumulator::new(scheme.duration_bins() * nt);
        acc.add(2 * nt + 7, &weights(&[(PlaceCategory::Leisure, 0.3)]));
        let j = JointPriorTable::from_accumulator(&acc, scheme.duration_labels(), scheme.time_labels(), Averaging::AllStops);
        let slice = j.slice(PlaceCategory::Leisure, 2);
        assert_eq!(slice[7], 1.0);
        assert_eq!(slice.iter().sum::<f64>(), 1.0);
        assert_eq!(j.lookup(PlaceCategory::Leisure, 1, 7, 1e-6), 1e-6);
        let back = JointPriorTable::from_matrix(&j.to_matrix()).unwrap();
        assert_eq!(back.values, j.values);
        assert_eq!(back.duration_labels, j.duration_labels);
    }

    proptest! {
        #[test]
        fn rows_normalized_and_scale_invariant(
            raw in prop::collection::vec((0usize..5, prop::array::uniform7(0.0..2.0f64)), 1..60),
            k in 1e-3..1e3f64,
        ) {
            let t = PriorTable::from_weights(raw.iter().map(|(b, w)| (*b, w)), labels(5), Averaging::AllStops);
            let scaled: Vec<(usize, CategoryWeights)> = raw.iter().map(|(b, w)| (*b, w.map(|v| v * k))).collect();
            let u = PriorTable::from_weights(scaled.iter().map(|(b, w)| (*b, w)), labels(5), Averaging::AllStops);
            for c in PlaceCategory::ALL {
                if t.is_supported(c) {
                    prop_assert!((t.row(c).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
                for (a, b) in t.row(c).iter().zip(u.row(c)) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn smoothing_conserves_mass(row in prop::collection::vec(0.0..1.0f64, 19), window in prop::sample::select(vec![1usize, 3, 5, 7])) {
            prop_assume!(row.iter().sum::<f64>() > 0.0);
            let mut t = PriorTable::uniform(labels(19));
            t.values[0] = normalize_row(row);
            let s = t.smoothed(window);
            prop_assert!((s.values[0].iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn accumulator_merge_matches_sequential(raw in prop::collection::vec((0usize..5, prop::array::uniform7(0.0..2.0f64)), 1..60), split in 0usize..60) {
            let split = split.min(raw.len());
            let mut whole = VisitAccumulator::new(5);
            raw.iter().for_each(|(b, w)| whole.add(*b, w));
            let mut left = VisitAccumulator::new(5);
            let mut right = VisitAccumulator::new(5);
            raw[..split].iter().for_each(|(b, w)| left.add(*b, w));
            raw[split..].iter().for_each(|(b, w)| right.add(*b, w));
            left.merge(&right);
            let a = PriorTable::from_accumulator(&whole, labels(5), Averaging::AllStops);
            let b = PriorTable::from_accumulator(&left, labels(5), Averaging::AllStops);
            for c in PlaceCategory::ALL {
                for (x, y) in a.row(c).iter().zip(b.row(c)) {
                    prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
                }
            }
        }
    }
}
