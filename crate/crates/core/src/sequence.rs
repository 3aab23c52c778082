//! Category transitions learned from potential visits, and Viterbi decoding
//! of candidate places per user-day.

use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::annotate::{Annotation, AnnotationStatus};
use crate::exec::{self, Mode};
use crate::ingest::{PlaceCategory, PlaceIndex};
use crate::priors::{format_matrix, parse_matrix, potential_visit_weights, PriorError};
use crate::stops::{Stop, StopWithCandidates};
use crate::zone::Zone;

const NCAT: usize = PlaceCategory::COUNT;

pub const DEFAULT_ALPHA: f64 = 1e-3;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum SequenceError {
    #[error("empty sequence")]
    EmptySequence,
    #[error("stop {0} has no candidates")]
    NoCandidates(usize),
    #[error("negative smoothing constant {0}")]
    InvalidAlpha(f64),
    #[error(transparent)]
    Prior(#[from] PriorError),
}

/// Row-stochastic category transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    /// `values[a][b]` is the probability of moving from `a` to `b`.
    pub values: [[f64; NCAT]; NCAT],
    /// Co-visit mass before smoothing.
    pub raw: [[f64; NCAT]; NCAT],
    pub alpha: f64,
    /// Number of adjacent stop pairs that contributed.
    pub pairs: usize,
}

impl TransitionMatrix {
    pub fn uniform() -> Self {
        Self {
            values: [[1.0 / NCAT as f64; NCAT]; NCAT],
            raw: [[0.0; NCAT]; NCAT],
            alpha: 0.0,
            pairs: 0,
        }
    }

    pub fn from_raw(raw: [[f64; NCAT]; NCAT], alpha: f64, pairs: usize) -> Self {
        if pairs == 0 {
            return Self { alpha, ..Self::uniform() };
        }
        let mut values = [[0.0; NCAT]; NCAT];
        for a in 0..NCAT {
            let row: Vec<f64> = raw[a].iter().map(|v| v + alpha).collect();
            let sum: f64 = row.iter().sum();
            for b in 0..NCAT {
                values[a][b] = if sum > 0.0 { row[b] / sum } else { 1.0 / NCAT as f64 };
            }
        }
        Self { values, raw, alpha, pairs }
    }

    pub fn prob(&self, from: PlaceCategory, to: PlaceCategory) -> f64 {
        self.values[from.index()][to.index()]
    }

    pub fn to_matrix(&self) -> String {
        let labels: Vec<String> = PlaceCategory::ALL.iter().map(|c| c.to_string()).collect();
        let rows: Vec<(String, Vec<f64>)> =
            PlaceCategory::ALL.iter().map(|c| (c.to_string(), self.values[c.index()].to_vec())).collect();
        format_matrix("from\\to", &labels, &rows)
    }

    /// Only the probabilities survive a round trip.
    pub fn from_matrix(text: &str) -> Result<Self, PriorError> {
        let (cols, rows) = parse_matrix(text)?;
        let col_cats = cols
            .iter()
            .map(|l| l.parse::<PlaceCategory>().map_err(|e| PriorError::Parse(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let mut out = Self::uniform();
        for (label, row) in rows {
            let a: PlaceCategory = label.parse().map_err(|e: crate::ingest::UnknownCategory| PriorError::Parse(e.to_string()))?;
            for (b, v) in col_cats.iter().zip(row) {
                out.values[a.index()][b.index()] = v;
            }
        }
        Ok(out)
    }
}

/// Stops of one user on one local day, by start time. Holds indices into the
/// slice it was built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopSequence {
    pub user_id: String,
    pub day: NaiveDate,
    pub members: Vec<usize>,
}

/// Groups stops into per-user, per-local-day sequences, ordered by user and
/// day.
pub fn build_sequences(stops: &[Stop], zone: &Zone) -> Vec<StopSequence> {
    let mut groups: BTreeMap<(&str, NaiveDate), Vec<usize>> = BTreeMap::new();
    for (i, s) in stops.iter().enumerate() {
        groups.entry((s.user_id.as_str(), s.local_day(zone))).or_default().push(i);
    }
    groups
        .into_iter()
        .map(|((user, day), mut members)| {
            members.sort_by(|&a, &b| stops[a].start_time.cmp(&stops[b].start_time).then(stops[a].stop_id.cmp(&stops[b].stop_id)));
            StopSequence { user_id: user.to_string(), day, members }
        })
        .collect()
}

fn sequence_mass(seq: &StopSequence, stops: &[StopWithCandidates], index: &PlaceIndex) -> ([[f64; NCAT]; NCAT], usize) {
    let mut raw = [[0.0; NCAT]; NCAT];
    let mut pairs = 0;
    let weights: Vec<Option<_>> = seq.members.iter().map(|&i| potential_visit_weights(&stops[i], index).ok()).collect();
    for w in weights.windows(2) {
        if let (Some(wa), Some(wb)) = (&w[0], &w[1]) {
            pairs += 1;
            for a in 0..NCAT {
                for b in 0..NCAT {
                    raw[a][b] += wa[a] * wb[b];
                }
            }
        }
    }
    (raw, pairs)
}

/// Adds the product of potential visits of every adjacent pair of stops
/// within a user-day. Pairs touching a stop without candidates contribute
/// nothing.
pub fn learn_transitions(
    stops: &[StopWithCandidates],
    index: &PlaceIndex,
    zone: &Zone,
    alpha: f64,
) -> Result<TransitionMatrix, SequenceError> {
    learn_transitions_with(Mode::default(), stops, index, zone, alpha)
}

pub fn learn_transitions_with(
    mode: Mode,
    stops: &[StopWithCandidates],
    index: &PlaceIndex,
    zone: &Zone,
    alpha: f64,
) -> Result<TransitionMatrix, SequenceError> {
    if !(alpha >= 0.0) {
        return Err(SequenceError::InvalidAlpha(alpha));
    }
    let plain: Vec<Stop> = stops.iter().map(|s| s.stop.clone()).collect();
    let seqs = build_sequences(&plain, zone);
    let parts = exec::map(mode, &seqs, |s| sequence_mass(s, stops, index));
    let mut raw = [[0.0; NCAT]; NCAT];
    let mut pairs = 0;
    for (r, p) in parts {
        pairs += p;
        for a in 0..NCAT {
            for b in 0..NCAT {
                raw[a][b] += r[a][b];
            }
        }
    }
    Ok(TransitionMatrix::from_raw(raw, alpha, pairs))
}

/// Log-space Viterbi over `log_emit[t][s]` with `log_trans(t, a, b)` scoring
/// the move from state `a` at `t` to state `b` at `t + 1`. Among equally
/// scored paths the lexicographically smallest state sequence wins.
pub fn viterbi_log<F>(log_emit: &[Vec<f64>], log_trans: F) -> Result<(Vec<usize>, f64), SequenceError>
where
    F: Fn(usize, usize, usize) -> f64,
{
    let n = log_emit.len();
    if n == 0 {
        return Err(SequenceError::EmptySequence);
    }
    if let Some(t) = log_emit.iter().position(|e| e.is_empty()) {
        return Err(SequenceError::NoCandidates(t));
    }
    // best[t][a]: best score of steps t.. given state a at t
    let mut best: Vec<Vec<f64>> = log_emit.to_vec();
    for t in (0..n - 1).rev() {
        for a in 0..log_emit[t].len() {
            let tail = (0..log_emit[t + 1].len())
                .map(|b| log_trans(t, a, b) + best[t + 1][b])
                .fold(f64::NEG_INFINITY, f64::max);
            best[t][a] = log_emit[t][a] + tail;
        }
    }
    let argmax = |scores: &mut dyn Iterator<Item = f64>| {
        let mut pick = (0, f64::NEG_INFINITY);
        for (i, v) in scores.enumerate() {
            if v > pick.1 || i == 0 {
                pick = (i, v);
            }
        }
        pick
    };
    let (first, score) = argmax(&mut best[0].iter().copied());
    let mut path = vec![first];
    for t in 0..n - 1 {
        let a = path[t];
        let (b, _) = argmax(&mut (0..log_emit[t + 1].len()).map(|b| log_trans(t, a, b) + best[t + 1][b]));
        path.push(b);
    }
    Ok((path, score))
}

/// Log score of a given path, summed left to right.
pub fn path_log_score<F>(log_emit: &[Vec<f64>], log_trans: F, path: &[usize]) -> f64
where
    F: Fn(usize, usize, usize) -> f64,
{
    let mut s = 0.0;
    for (t, &a) in path.iter().enumerate() {
        s += log_emit[t][a];
        if t + 1 < path.len() {
            s += log_trans(t, a, path[t + 1]);
        }
    }
    s
}

/// Emissions renormalized to sum 1; uniform when every score is zero.
fn emissions(a: &Annotation) -> Vec<f64> {
    let sum: f64 = a.ranked.iter().map(|c| c.visit_score).sum();
    let n = a.ranked.len() as f64;
    a.ranked
        .iter()
        .map(|c| if sum > 0.0 { c.visit_score / sum } else { 1.0 / n }.ln())
        .collect()
}

/// Decodes one run of annotated stops and returns the chosen rank per stop.
pub fn viterbi_annotate(run: &[&Annotation], index: &PlaceIndex, transitions: &TransitionMatrix) -> Result<Vec<usize>, SequenceError> {
    let log_emit: Vec<Vec<f64>> = run.iter().map(|a| emissions(a)).collect();
    let cats: Vec<Vec<PlaceCategory>> =
        run.iter().map(|a| a.ranked.iter().map(|c| index.place(c.place).category).collect()).collect();
    let log_t: [[f64; NCAT]; NCAT] = transitions.values.map(|row| row.map(f64::ln));
    let (path, _) = viterbi_log(&log_emit, |t, a, b| log_t[cats[t][a].index()][cats[t + 1][b].index()])?;
    Ok(path)
}

/// Replaces per-stop choices with the decoded path of each user-day.
/// Stops without candidates split a day into independent runs.
pub fn decode_annotations(
    annotations: Vec<Annotation>,
    index: &PlaceIndex,
    transitions: &TransitionMatrix,
    zone: &Zone,
) -> Vec<Annotation> {
    decode_annotations_with(Mode::default(), annotations, index, transitions, zone)
}

pub fn decode_annotations_with(
    mode: Mode,
    mut annotations: Vec<Annotation>,
    index: &PlaceIndex,
    transitions: &TransitionMatrix,
    zone: &Zone,
) -> Vec<Annotation> {
    let plain: Vec<Stop> = annotations.iter().map(|a| a.stop.clone()).collect();
    let mut runs: Vec<Vec<usize>> = Vec::new();
    for seq in build_sequences(&plain, zone) {
        for chunk in seq.members.split(|&i| annotations[i].status == AnnotationStatus::NoCandidates) {
            if !chunk.is_empty() {
                runs.push(chunk.to_vec());
            }
        }
    }
    let decoded = exec::map(mode, &runs, |run| {
        let refs: Vec<&Annotation> = run.iter().map(|&i| &annotations[i]).collect();
        viterbi_annotate(&refs, index, transitions).expect("runs are non-empty with candidates")
    });
    for (run, path) in runs.iter().zip(decoded) {
        for (&i, rank) in run.iter().zip(path) {
            annotations[i].chosen = Some(rank);
        }
    }
    annotations
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn enumerate_best(log_emit: &[Vec<f64>], log_t: &[Vec<Vec<f64>>]) -> (Vec<usize>, f64) {
        let sizes: Vec<usize> = log_emit.iter().map(Vec::len).collect();
        let mut path = vec![0; sizes.len()];
        let mut best: Option<(Vec<usize>, f64)> = None;
        loop {
            let s = path_log_score(log_emit, |t, a, b| log_t[t][a][b], &path);
            if best.as_ref().is_none_or(|(_, b)| s > *b) {
                best = Some((path.clone(), s));
            }
            let mut t = sizes.len();
            loop {
                if t == 0 {
                    return best.unwrap();
                }
                t -= 1;
                path[t] += 1;
                if path[t] < sizes[t] {
                    break;
                }
                path[t] = 0;
            }
        }
    }

    fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>)> {
        prop::collection::vec(1usize..=5, 1..=5).prop_flat_map(|sizes| {
            let emit = sizes.iter().map(|&k| prop::collection::vec(0.01f64..1.0, k)).collect::<Vec<_>>();
            let trans = sizes
                .windows(2)
                .map(|w| prop::collection::vec(prop::collection::vec(0.01f64..1.0, w[1]), w[0]))
                .collect::<Vec<_>>();
            (emit, trans)
        })
    }

    proptest! {
        #[test]
        fn viterbi_matches_enumeration((emit, trans) in instance()) {
            let log_emit: Vec<Vec<f64>> = emit.iter().map(|r| r.iter().map(|v| v.ln()).collect()).collect();
            let log_t: Vec<Vec<Vec<f64>>> = trans.iter().map(|m| m.iter().map(|r| r.iter().map(|v| v.ln()).collect()).collect()).collect();
            let (path, score) = viterbi_log(&log_emit, |t, a, b| log_t[t][a][b]).unwrap();
            let (_, want) = enumerate_best(&log_emit, &log_t);
            prop_assert!((score - want).abs() <= 1e-12, "{score} vs {want}");
            let recomputed = path_log_score(&log_emit, |t, a, b| log_t[t][a][b], &path);
            prop_assert!((recomputed - want).abs() <= 1e-12);
        }

        #[test]
        fn transition_rows_are_stochastic(raw in prop::collection::vec(0.0f64..50.0, NCAT * NCAT), pairs in 0usize..4, alpha in 0.0f64..1.0) {
            let mut m = [[0.0; NCAT]; NCAT];
            for (i, v) in raw.iter().enumerate() {
                m[i / NCAT][i % NCAT] = *v;
            }
            let t = TransitionMatrix::from_raw(m, alpha, pairs);
            for row in t.values {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn ties_prefer_lexicographically_smallest_path() {
        let log_emit = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]];
        let (path, score) = viterbi_log(&log_emit, |_, _, _| 0.0).unwrap();
        assert_eq!(path, vec![0, 0, 0]);
        assert_eq!(score, 0.0);
        // a tie between [0, 1] and [1, 0]
        let log_emit = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let (path, _) = viterbi_log(&log_emit, |_, a, b| if a != b { 0.0 } else { -1.0 }).unwrap();
        assert_eq!(path, vec![0, 1]);
    }

    #[test]
    fn single_stop_and_uniform_transitions_give_argmax() {
        let log_emit = vec![vec![0.2f64.ln(), 0.5f64.ln(), 0.3f64.ln()]];
        assert_eq!(viterbi_log(&log_emit, |_, _, _| 0.0).unwrap().0, vec![1]);
        let log_emit = vec![vec![0.2f64.ln(), 0.8f64.ln()], vec![0.6f64.ln(), 0.4f64.ln()], vec![0.1f64.ln(), 0.9f64.ln()]];
        let u = (1.0f64 / 7.0).ln();
        assert_eq!(viterbi_log(&log_emit, |_, _, _| u).unwrap().0, vec![1, 0, 1]);
        assert_eq!(viterbi_log(&[], |_, _, _| 0.0), Err(SequenceError::EmptySequence));
        assert_eq!(viterbi_log(&[vec![0.0], vec![]], |_, _, _| 0.0), Err(SequenceError::NoCandidates(1)));
    }

    #[test]
    fn strong_transition_overrides_weak_emission() {
        // second stop slightly prefers state 1 but 0 -> 0 is far likelier
        let log_emit = vec![vec![0.9f64.ln(), 0.1f64.ln()], vec![0.45f64.ln(), 0.55f64.ln()]];
        let t = [[0.9f64, 0.1], [0.5, 0.5]];
        let (path, score) = viterbi_log(&log_emit, |_, a, b| t[a][b].ln()).unwrap();
        assert_eq!(path, vec![0, 0]);
        assert_relative_eq!(score, (0.9f64 * 0.9 * 0.45).ln(), epsilon = 1e-12);
    }

    #[test]
    fn zero_pairs_fall_back_to_uniform() {
        let t = TransitionMatrix::from_raw([[0.0; NCAT]; NCAT], DEFAULT_ALPHA, 0);
        assert!(t.values.iter().flatten().all(|&v| v == 1.0 / 7.0));
    }

    #[test]
    fn single_pair_concentrates_mass() {
        let mut raw = [[0.0; NCAT]; NCAT];
        let (w1, w2) = (0.8, 1.3);
        raw[PlaceCategory::Dining.index()][PlaceCategory::Working.index()] = w1 * w2;
        let t = TransitionMatrix::from_raw(raw, DEFAULT_ALPHA, 1);
        let row = &t.values[PlaceCategory::Dining.index()];
        let want = (w1 * w2 + 1e-3) / (w1 * w2 + 7e-3);
        assert_relative_eq!(row[PlaceCategory::Working.index()], want, epsilon = 1e-12);
        assert_relative_eq!(t.values[0].iter().sum::<f64>(), 1.0, epsilon = 1e-12);

        let text = t.to_matrix();
        let back = TransitionMatrix::from_matrix(&text).unwrap();
        for a in 0..NCAT {
            for b in 0..NCAT {
                assert_relative_eq!(back.values[a][b], t.values[a][b], max_relative = 1e-8);
            }
        }
    }
}
