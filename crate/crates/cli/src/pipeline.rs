//! Pipeline stages. Each stage reads its inputs from the output directory,
//! writes its artifacts atomically and merges its record into the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use semtraj::annotate::{write_annotations, write_ranked_candidates, Annotator, Method, TemporalModel};
use semtraj::evaluation::{evaluate, log_based_priors, read_activity_logs, read_eval_records, EvalError, EvaluationReport};
use semtraj::ingest::{
    build_place_index, filter_noise, parse_trajectories, places_from_geojson, places_to_geojson, write_trajectories,
    CategoryRules, PlaceCategory, PlaceIndex, PlaceKind, Trajectory, TrajectorySchema,
};
use semtraj::priors::{build_priors, JointPriorTable, PriorError, PriorOptions, PriorTable, PriorTables};
use semtraj::sequence::{decode_annotations_with, learn_transitions_with, TransitionMatrix};
use semtraj::stops::{
    attach_all_with, detect_all_stops_with, read_candidates, read_stops, source_counts, write_candidates, write_stops,
    StopSource, StopWithCandidates,
};
use semtraj::Mode;

use crate::artifacts::{sha256_hex, InputDigest, OutDir, StageRecord};
use crate::config::Config;
use crate::error::CliError;

pub const TRAJECTORIES: &str = "trajectories.csv";
pub const PLACES: &str = "places.geojson";
pub const STOPS: &str = "stops.csv";
pub const CANDIDATES: &str = "candidates.csv";
pub const PRIOR_DURATION: &str = "prior_duration.csv";
pub const PRIOR_TIME: &str = "prior_time.csv";
pub const PRIOR_JOINT: &str = "prior_joint.csv";
pub const TRANSITIONS: &str = "transitions.csv";
pub const COMPARISON: &str = "comparison.csv";

pub fn annotations_file(m: Method) -> String {
    format!("annotations_{m}.csv")
}

pub fn report_file(m: Method) -> String {
    format!("report_{m}.txt")
}

fn meta_name(table: &str) -> String {
    format!("{}.meta", table.trim_end_matches(".csv"))
}

/// Everything a stage needs besides its own inputs.
pub struct Context {
    pub config: Config,
    pub out: OutDir,
    pub threads: usize,
    pub mode: Mode,
}

impl Context {
    pub fn new(config: Config, out: &Path, threads: usize) -> Self {
        Self { config, out: OutDir::new(out), threads, mode: Mode::default() }
    }

    /// Runs one stage, then records its outputs, row counts and timing.
    fn stage<F>(&self, name: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut StageWork) -> Result<(), CliError>,
    {
        let started = Instant::now();
        let mut work = StageWork::default();
        f(&mut work)?;
        let mut manifest = self.out.load_manifest(self.config.snapshot());
        manifest.inputs.extend(work.inputs);
        manifest.stages.insert(name.to_string(), StageRecord { rows: work.rows, outputs: work.outputs });
        self.out.save_manifest(&manifest)?;
        self.out.record_timing(name, started.elapsed().as_secs_f64(), self.threads)
    }

    fn write(&self, work: &mut StageWork, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let digest = self.out.write(name, bytes)?;
        work.outputs.insert(name.to_string(), digest);
        Ok(())
    }

    fn zone(&self) -> Result<semtraj::zone::Zone, CliError> {
        self.config.zone()
    }

    fn load_index(&self, stage: &str) -> Result<PlaceIndex, CliError> {
        let text = self.out.read(PLACES, stage)?;
        places_from_geojson(&text).map_err(|e| artifact_error(PLACES, e))
    }

    fn load_trajectories(&self, stage: &str) -> Result<Vec<Trajectory>, CliError> {
        let text = self.out.read(TRAJECTORIES, stage)?;
        let parsed = parse_trajectories(text.as_bytes(), &TrajectorySchema::default(), &self.zone()?)
            .map_err(|e| artifact_error(TRAJECTORIES, e))?;
        Ok(parsed.trajectories)
    }

    fn load_candidates(&self, stage: &str, index: &PlaceIndex) -> Result<Vec<StopWithCandidates>, CliError> {
        let zone = self.zone()?;
        let stops = read_stops(self.out.read(STOPS, stage)?.as_bytes(), &zone).map_err(|e| artifact_error(STOPS, e))?;
        read_candidates(self.out.read(CANDIDATES, stage)?.as_bytes(), stops, index)
            .map_err(|e| artifact_error(CANDIDATES, e))
    }

    fn load_priors(&self, stage: &str, need_joint: bool) -> Result<PriorTables, CliError> {
        let duration = PriorTable::from_matrix(&self.out.read(PRIOR_DURATION, stage)?)
            .map_err(|e| artifact_error(PRIOR_DURATION, e))?;
        let time =
            PriorTable::from_matrix(&self.out.read(PRIOR_TIME, stage)?).map_err(|e| artifact_error(PRIOR_TIME, e))?;
        let joint = if need_joint {
            let text = self.out.read(PRIOR_JOINT, stage)?;
            Some(JointPriorTable::from_matrix(&text).map_err(|e| artifact_error(PRIOR_JOINT, e))?)
        } else {
            None
        };
        Ok(PriorTables { duration, time, joint, stop_count: 0 })
    }
}

#[derive(Default)]
struct StageWork {
    inputs: BTreeMap<String, InputDigest>,
    rows: BTreeMap<String, u64>,
    outputs: BTreeMap<String, String>,
}

impl StageWork {
    fn row(&mut self, key: impl Into<String>, n: usize) {
        self.rows.insert(key.into(), n as u64);
    }
}

fn artifact_error(name: &str, e: impl std::fmt::Display) -> CliError {
    CliError::parse(format!("{name}: {e}"))
}

/// Reads a user-supplied input, recording its digest.
fn read_input(work: &mut StageWork, key: &str, path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::parse(format!("cannot read {key} input {}: {e}", path.display())))?;
    work.inputs.insert(
        key.to_string(),
        InputDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) },
    );
    String::from_utf8(bytes).map_err(|_| CliError::parse(format!("{}: not valid UTF-8", path.display())))
}

fn load_rules(work: &mut StageWork, key: &str, path: Option<&Path>) -> Result<CategoryRules, CliError> {
    match path {
        None => Ok(CategoryRules::builtin().clone()),
        Some(p) => {
            let text = read_input(work, key, p)?;
            CategoryRules::parse(&text).map_err(|e| CliError::parse(format!("{}: {e}", p.display())))
        }
    }
}

pub fn ingest(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let zone = ctx.zone()?;
    let schema = cfg.schema()?;
    ctx.stage("ingest", |work| {
        let traj_path = cfg
            .input
            .trajectories
            .as_deref()
            .ok_or_else(|| CliError::config("input.trajectories is not set"))?;
        if cfg.input.poi.is_none() && cfg.input.roi.is_none() {
            return Err(CliError::config("at least one of input.poi and input.roi must be set"));
        }
        let text = read_input(work, "trajectories", traj_path)?;
        let parsed = parse_trajectories(text.as_bytes(), &schema, &zone)
            .map_err(|e| CliError::parse(format!("{}: {e}", traj_path.display())))?;
        let raw_points = parsed.point_count();
        let trajectories: Vec<Trajectory> = if cfg.noise.enabled {
            parsed
                .trajectories
                .iter()
                .map(|t| filter_noise(t, cfg.noise.max_speed_kmh, cfg.noise.min_angle_deg))
                .filter(|t| !t.is_empty())
                .collect()
        } else {
            parsed.trajectories.clone()
        };

        let poi = cfg.input.poi.as_deref().map(|p| read_input(work, "poi", p).map(|t| (p, t))).transpose()?;
        let roi = cfg.input.roi.as_deref().map(|p| read_input(work, "roi", p).map(|t| (p, t))).transpose()?;
        let poi_rules = load_rules(work, "poi_rules", cfg.input.poi_rules.as_deref())?;
        let roi_rules = load_rules(work, "roi_rules", cfg.input.roi_rules.as_deref())?;
        let label = |src: &Option<(&Path, String)>| src.as_ref().map(|(p, _)| p.display().to_string());
        let built = build_place_index(
            poi.as_ref().map(|(_, t)| t.as_str()),
            roi.as_ref().map(|(_, t)| t.as_str()),
            &poi_rules,
            &roi_rules,
        )
        .map_err(|e| {
            let files: Vec<String> = [label(&poi), label(&roi)].into_iter().flatten().collect();
            CliError::parse(format!("{}: {e}", files.join(", ")))
        })?;

        let mut buf = Vec::new();
        write_trajectories(&mut buf, &trajectories, &zone).map_err(|e| CliError::io(e.to_string()))?;
        ctx.write(work, TRAJECTORIES, &buf)?;
        ctx.write(work, PLACES, places_to_geojson(&built.index).as_bytes())?;

        work.row("raw_points", raw_points);
        work.row("skipped_rows", parsed.skipped);
        work.row("duplicate_rows", parsed.duplicates);
        work.row("points", trajectories.iter().map(Trajectory::len).sum());
        work.row("user_days", trajectories.len());
        work.row("places", built.index.len());
        let kind_count = |k: PlaceKind| built.index.places().iter().filter(|p| p.kind() == k).count();
        work.row("pois", kind_count(PlaceKind::Poi));
        work.row("rois", kind_count(PlaceKind::Roi));
        work.row("place_geometry_errors", built.geometry_errors);
        work.row("place_uncategorized", built.unmatched);
        Ok(())
    })
}

pub fn detect_stops(ctx: &Context) -> Result<(), CliError> {
    ctx.stage("detect-stops", |work| {
        let trajectories = ctx.load_trajectories("detect-stops")?;
        let index = ctx.load_index("detect-stops")?;
        let zone = ctx.zone()?;
        let stops = detect_all_stops_with(ctx.mode, &trajectories, &ctx.config.stop_params());
        let counts = source_counts(&stops);
        let with = attach_all_with(ctx.mode, stops, &index, ctx.config.spatial.search_radius);
        let plain: Vec<_> = with.iter().map(|s| s.stop.clone()).collect();

        let mut buf = Vec::new();
        write_stops(&mut buf, &plain, &zone).map_err(|e| CliError::io(e.to_string()))?;
        ctx.write(work, STOPS, &buf)?;
        let mut buf = Vec::new();
        write_candidates(&mut buf, &with, &index).map_err(|e| CliError::io(e.to_string()))?;
        ctx.write(work, CANDIDATES, &buf)?;

        work.row("stops", with.len());
        for s in StopSource::ALL {
            work.row(format!("source.{}", s.as_str()), counts.get(&s).copied().unwrap_or(0));
        }
        work.row("with_candidates", with.iter().filter(|s| s.has_candidates()).count());
        work.row("candidate_links", with.iter().map(|s| s.candidates.len()).sum());
        Ok(())
    })
}

fn prior_meta(cfg: &Config, table: &str) -> Vec<(String, String)> {
    vec![
        ("table".into(), table.into()),
        ("averaging".into(), cfg.priors.averaging.clone()),
        ("smoothing_window".into(), cfg.priors.smoothing_window.to_string()),
        ("timezone".into(), cfg.input.timezone.clone()),
    ]
}

pub fn build_priors_stage(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    ctx.stage("build-priors", |work| {
        let index = ctx.load_index("build-priors")?;
        let stops = ctx.load_candidates("build-priors", &index)?;
        let zone = ctx.zone()?;
        let scheme = cfg.scheme()?;
        let opts = PriorOptions { averaging: cfg.averaging()?, with_joint: cfg.priors.joint, mode: ctx.mode };
        let tables = build_priors(&stops, &index, &scheme, &zone, &opts).map_err(|e| match e {
            PriorError::NoStops => CliError::empty("build-priors: no stop has candidate places"),
            e => CliError::parse(format!("build-priors: {e}")),
        })?;
        let transitions = learn_transitions_with(ctx.mode, &stops, &index, &zone, cfg.sequence.alpha)
            .map_err(|e| CliError::config(format!("sequence: {e}")))?;

        for (name, table, label) in
            [(PRIOR_DURATION, &tables.duration, "duration"), (PRIOR_TIME, &tables.time, "time")]
        {
            ctx.write(work, name, table.to_matrix().as_bytes())?;
            ctx.write(work, &meta_name(name), table.meta(&prior_meta(cfg, label)).as_bytes())?;
        }
        if let Some(joint) = &tables.joint {
            ctx.write(work, PRIOR_JOINT, joint.to_matrix().as_bytes())?;
            ctx.write(work, &meta_name(PRIOR_JOINT), joint.meta(&prior_meta(cfg, "joint")).as_bytes())?;
        }
        ctx.write(work, TRANSITIONS, transitions.to_matrix().as_bytes())?;

        work.row("stops_with_candidates", tables.stop_count);
        work.row("transition_pairs", transitions.pairs);
        for c in PlaceCategory::ALL {
            work.row(format!("support.{c}"), tables.duration.support[c.index()].iter().sum());
        }
        Ok(())
    })
}

pub fn annotate(ctx: &Context, method: Method) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let stage = format!("annotate.{method}");
    ctx.stage(&stage, |work| {
        let index = ctx.load_index(&stage)?;
        let stops = ctx.load_candidates(&stage, &index)?;
        let zone = ctx.zone()?;
        let priors = match method.temporal() {
            TemporalModel::None => None,
            t => Some(ctx.load_priors(&stage, t == TemporalModel::Joint)?),
        };
        let annotator = Annotator::new(&index, method, priors.as_ref(), cfg.spatial_params(), cfg.scheme()?, zone)
            .map_err(|e| CliError::missing(format!("{stage}: {e}")))?
            .with_floor(cfg.priors.floor);
        let mut annotations =
            annotator.annotate_all_with(ctx.mode, &stops).map_err(|e| CliError::parse(format!("{stage}: {e}")))?;
        if method.uses_sequence() {
            let transitions = TransitionMatrix::from_matrix(&ctx.out.read(TRANSITIONS, &stage)?)
                .map_err(|e| artifact_error(TRANSITIONS, e))?;
            annotations = decode_annotations_with(ctx.mode, annotations, &index, &transitions, &zone);
        }

        let mut buf = Vec::new();
        write_annotations(&mut buf, &annotations, &index, &zone).map_err(|e| CliError::io(e.to_string()))?;
        ctx.write(work, &annotations_file(method), &buf)?;
        let mut buf = Vec::new();
        write_ranked_candidates(&mut buf, &annotations, &index).map_err(|e| CliError::io(e.to_string()))?;
        ctx.write(work, &format!("candidates_{method}.csv"), &buf)?;

        let annotated = annotations.iter().filter(|a| a.chosen.is_some()).count();
        work.row("stops", annotations.len());
        work.row("annotated", annotated);
        work.row("no_candidates", annotations.len() - annotated);
        for c in PlaceCategory::ALL {
            work.row(
                format!("chosen.{c}"),
                annotations.iter().filter(|a| a.chosen_category(&index) == Some(c)).count(),
            );
        }
        Ok(())
    })
}

fn eval_error(stage: &str, e: EvalError) -> CliError {
    match e {
        EvalError::EmptyPairs | EvalError::NoLogs => CliError::empty(format!("{stage}: {e}")),
        e => CliError::parse(format!("{stage}: {e}")),
    }
}

pub fn evaluate_stage(ctx: &Context, method: Method) -> Result<EvaluationReport, CliError> {
    let cfg = &ctx.config;
    let stage = format!("evaluate.{method}");
    let mut report = None;
    ctx.stage(&stage, |work| {
        let zone = ctx.zone()?;
        let logs_path = cfg
            .input
            .logs
            .as_deref()
            .ok_or_else(|| CliError::missing(format!("{stage} needs input.logs")))?;
        let annotations = ctx.out.read(&annotations_file(method), &stage)?;
        let records =
            read_eval_records(annotations.as_bytes(), &zone).map_err(|e| artifact_error(&annotations_file(method), e))?;
        if !logs_path.is_file() {
            return Err(CliError::missing(format!("{stage}: no log file at {}", logs_path.display())));
        }
        let text = read_input(work, "logs", logs_path)?;
        let logs = read_activity_logs(text.as_bytes(), &zone)
            .map_err(|e| CliError::parse(format!("{}: {e}", logs_path.display())))?;
        let r = evaluate(&records, &logs.entries, cfg.evaluation.min_overlap, &zone).map_err(|e| eval_error(&stage, e))?;

        ctx.write(work, &report_file(method), r.to_key_value().as_bytes())?;
        ctx.write(work, &format!("report_{method}_table.txt"), r.to_table().as_bytes())?;

        let log_priors = log_based_priors(&logs.entries, &cfg.scheme()?, &zone).map_err(|e| eval_error(&stage, e))?;
        ctx.write(work, "log_prior_duration.csv", log_priors.duration.to_matrix().as_bytes())?;
        ctx.write(work, "log_prior_time.csv", log_priors.time.to_matrix().as_bytes())?;

        work.row("log_entries", logs.entries.len());
        work.row("log_excluded", logs.excluded);
        work.row("stops", r.counts.total());
        work.row("matched", r.counts.matched);
        work.row("unmatched", r.counts.unmatched);
        work.row("no_log", r.counts.no_log);
        work.row("no_candidate", r.counts.no_candidate);
        report = Some(r);
        Ok(())
    })?;
    Ok(report.expect("stage succeeded"))
}

pub fn comparison_csv(reports: &[(Method, EvaluationReport)]) -> String {
    let mut s = String::from("method,overall_accuracy,average_accuracy,matched,stops");
    for c in PlaceCategory::ALL {
        s.push_str(&format!(",{c}"));
    }
    s.push('\n');
    for (m, r) in reports {
        s.push_str(&format!("{m},{:.6},{:.6},{},{}", r.overall, r.average, r.counts.matched, r.counts.total()));
        for t in &r.per_category {
            match t.accuracy() {
                Some(a) => s.push_str(&format!(",{a:.6}")),
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

/// All stages in order. Without logs the evaluation stages are skipped.
pub fn run_all(ctx: &Context, methods: &[Method]) -> Result<Vec<(Method, EvaluationReport)>, CliError> {
    ingest(ctx)?;
    detect_stops(ctx)?;
    build_priors_stage(ctx)?;
    let mut reports = Vec::new();
    for &m in methods {
        annotate(ctx, m)?;
        if ctx.config.input.logs.is_some() {
            reports.push((m, evaluate_stage(ctx, m)?));
        }
    }
    if reports.len() > 1 {
        ctx.stage("compare", |work| ctx.write(work, COMPARISON, comparison_csv(&reports).as_bytes()))?;
    }
    Ok(reports)
}
