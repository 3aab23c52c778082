use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semtraj::evaluation::EvaluationReport;
use semtraj::geo::{GeoPoint, LocalFrame, PlanarPoint};

const BIN: &str = env!("CARGO_BIN_EXE_semtraj");

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn out(&self) -> PathBuf {
        self.path("out")
    }

    fn write(&self, name: &str, text: &str) {
        fs::write(self.path(name), text).unwrap();
    }

    fn read_out(&self, name: &str) -> String {
        fs::read_to_string(self.out().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_env(args, &[])
    }

    fn run_env(&self, args: &[&str], env: &[(&str, &str)]) -> Output {
        let mut cmd = Command::new(BIN);
        cmd.arg("--config").arg(self.path("config.toml")).arg("--out").arg(self.out()).args(args);
        for (k, v) in env {
            cmd.env(k, v);
        }
        cmd.output().unwrap()
    }

    fn ok(&self, args: &[&str]) {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    }

    fn manifest(&self) -> serde_json::Value {
        serde_json::from_str(&self.read_out("manifest.json")).unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn frame() -> LocalFrame {
    LocalFrame::new(GeoPoint::new(39.98, 116.32).unwrap())
}

fn at(x: f64, y: f64) -> GeoPoint {
    frame().unproject(PlanarPoint::new(x, y))
}

fn config(ws: &Workspace, extra: &str) {
    ws.write(
        "config.toml",
        &format!(
            "[input]\ntrajectories = \"traj.csv\"\npoi = \"poi.geojson\"\nlogs = \"logs.csv\"\ntimezone = \"UTC\"\n{extra}"
        ),
    );
}

fn poi_geojson(places: &[(&str, &str, f64, f64)]) -> String {
    let features: Vec<serde_json::Value> = places
        .iter()
        .map(|&(id, kind, x, y)| {
            let g = at(x, y);
            serde_json::json!({
                "type": "Feature",
                "properties": {"id": id, "type": kind},
                "geometry": {"type": "Point", "coordinates": [g.lon(), g.lat()]},
            })
        })
        .collect();
    serde_json::json!({"type": "FeatureCollection", "features": features}).to_string()
}

fn hms(secs: i64) -> String {
    format!("2012-10-01T{:02}:{:02}:{:02}Z", secs / 3600, secs / 60 % 60, secs % 60)
}

const KINDS: [(&str, &str); 5] =
    [("Dining", "dining"), ("Company", "working"), ("Shopping", "shopping"), ("School", "school"), ("Leisure", "leisure")];

/// One user visiting `n` places 1 km apart on a line, dwelling 30 minutes
/// at each. Returns the category label of each visit and its time window.
fn line_itinerary(ws: &Workspace, n: usize, place_offset: f64) -> Vec<(&'static str, i64, i64)> {
    let mut rows = String::from("user_id,time,lat,lon\n");
    let mut places = Vec::new();
    let mut visits = Vec::new();
    let mut t = 6 * 3600;
    for i in 0..n {
        let x = 1000.0 * i as f64;
        let (kind, label) = KINDS[i % KINDS.len()];
        places.push((format!("p{i}"), kind, x + place_offset, 0.0));
        let start = t;
        for k in 0..=30 {
            let jitter = if k % 2 == 0 { 3.0 } else { -3.0 };
            let g = at(x + jitter, jitter);
            rows.push_str(&format!("u1,{},{},{}\n", hms(t), g.lat(), g.lon()));
            t += 60;
        }
        visits.push((label, start, t - 60));
        if i + 1 < n {
            for k in 1..10 {
                let g = at(x + 100.0 * k as f64, 0.0);
                t += 60;
                rows.push_str(&format!("u1,{},{},{}\n", hms(t), g.lat(), g.lon()));
            }
            t += 60;
        }
    }
    ws.write("traj.csv", &rows);
    let refs: Vec<(&str, &str, f64, f64)> = places.iter().map(|(id, k, x, y)| (id.as_str(), *k, *x, *y)).collect();
    ws.write("poi.geojson", &poi_geojson(&refs));
    visits
}

fn write_logs(ws: &Workspace, visits: &[(&str, i64, i64)]) {
    let mut s = String::from("user,date,start,end,category\n");
    for (label, start, end) in visits {
        s.push_str(&format!("u1,2012-10-01,{},{},{label}\n", hms(*start), hms(*end)));
    }
    ws.write("logs.csv", &s);
}

fn csv_column(text: &str, name: &str) -> Vec<String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(i).unwrap_or("").to_string()).collect()
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .filter(|(n, _)| n != "timings.json")
        .collect()
}

#[test]
fn ingest_persists_every_point_and_counts_them() {
    let ws = Workspace::new();
    config(&ws, "");
    let (a, b, c) = (at(0.0, 0.0), at(5.0, 0.0), at(10.0, 0.0));
    ws.write(
        "traj.csv",
        &format!(
            "user_id,time,lat,lon\nu1,2012-10-01T08:00:00Z,{},{}\nu1,2012-10-01T08:01:00Z,{},{}\nu1,2012-10-01T08:02:00Z,{},{}\n",
            a.lat(),
            a.lon(),
            b.lat(),
            b.lon(),
            c.lat(),
            c.lon()
        ),
    );
    ws.write("poi.geojson", &poi_geojson(&[("p0", "Dining", 0.0, 0.0)]));
    ws.ok(&["ingest"]);
    assert_eq!(ws.read_out("trajectories.csv").lines().count(), 4);
    let m = ws.manifest();
    assert_eq!(m["stages"]["ingest"]["rows"]["points"], 3);
    assert_eq!(m["stages"]["ingest"]["rows"]["places"], 1);
    assert!(m["inputs"]["trajectories"]["sha256"].as_str().unwrap().len() == 64);
}

#[test]
fn missing_place_file_is_a_parse_error_naming_the_path() {
    let ws = Workspace::new();
    config(&ws, "");
    line_itinerary(&ws, 2, 10.0);
    fs::remove_file(ws.path("poi.geojson")).unwrap();
    let out = ws.run(&["ingest"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("poi.geojson"), "{}", stderr(&out));
}

#[test]
fn ingest_rerun_gives_identical_digests() {
    let ws = Workspace::new();
    config(&ws, "");
    line_itinerary(&ws, 3, 10.0);
    ws.ok(&["ingest"]);
    let first = ws.manifest();
    ws.ok(&["ingest"]);
    assert_eq!(first, ws.manifest());
}

#[test]
fn stages_need_their_predecessors() {
    let ws = Workspace::new();
    config(&ws, "");
    line_itinerary(&ws, 2, 10.0);
    assert_eq!(code(&ws.run(&["detect-stops"])), 4);
    ws.ok(&["ingest"]);
    assert_eq!(code(&ws.run(&["build-priors"])), 4);
    ws.ok(&["detect-stops"]);
    assert_eq!(code(&ws.run(&["annotate", "--method", "upapp"])), 4);
    assert_eq!(code(&ws.run(&["evaluate", "--method", "spatial-only"])), 4);
}

#[test]
fn stationary_user_gives_cluster_stops_unless_the_threshold_exceeds_the_span() {
    let ws = Workspace::new();
    config(&ws, "");
    line_itinerary(&ws, 3, 10.0);
    ws.ok(&["ingest", "--threads", "2"]);
    ws.ok(&["detect-stops"]);
    let first = ws.read_out("stops.csv");
    let rows = &ws.manifest()["stages"]["detect-stops"]["rows"];
    assert_eq!(rows["source.cluster"], 3);
    ws.ok(&["detect-stops"]);
    assert_eq!(first, ws.read_out("stops.csv"));

    let out = ws.run_env(&["detect-stops"], &[("UPAPP_STOPS_T1", "100000")]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(ws.manifest()["stages"]["detect-stops"]["rows"]["source.cluster"], 0);
    assert_eq!(ws.manifest()["config"]["stops"]["t1"], 100000);
}

#[test]
fn priors_need_candidates() {
    let ws = Workspace::new();
    config(&ws, "");
    line_itinerary(&ws, 3, 5000.0);
    ws.ok(&["ingest"]);
    ws.ok(&["detect-stops"]);
    let out = ws.run(&["build-priors"]);
    assert_eq!(code(&out), 5, "{}", stderr(&out));
}

#[test]
fn prior_rows_sum_to_one_and_rebuild_identically() {
    let ws = Workspace::new();
    config(&ws, "");
    line_itinerary(&ws, 8, 10.0);
    ws.ok(&["ingest"]);
    ws.ok(&["detect-stops"]);
    ws.ok(&["build-priors"]);
    let tables: Vec<String> =
        ["prior_duration.csv", "prior_time.csv", "prior_joint.csv", "transitions.csv"].iter().map(|n| ws.read_out(n)).collect();
    for text in &tables {
        for line in text.lines().skip(1) {
            let sum: f64 = line.split(',').skip(1).map(|v| v.parse::<f64>().unwrap()).sum();
            assert!(sum == 0.0 || (sum - 1.0).abs() < 1e-7, "{line}");
        }
    }
    ws.ok(&["build-priors", "--threads", "3"]);
    let again: Vec<String> =
        ["prior_duration.csv", "prior_time.csv", "prior_joint.csv", "transitions.csv"].iter().map(|n| ws.read_out(n)).collect();
    assert_eq!(tables, again);
    assert!(ws.read_out("prior_duration.meta").contains("support.dining"));
}

#[test]
fn spatial_only_picks_the_only_candidate() {
    let ws = Workspace::new();
    config(&ws, "");
    line_itinerary(&ws, 2, 10.0);
    ws.ok(&["ingest"]);
    ws.ok(&["detect-stops"]);
    ws.ok(&["annotate", "--method", "spatial-only"]);
    let text = ws.read_out("annotations_spatial-only.csv");
    assert_eq!(csv_column(&text, "place_id"), vec!["p0", "p1"]);
    assert_eq!(csv_column(&text, "category"), vec!["dining", "working"]);
}

#[test]
fn uniform_transitions_leave_per_stop_choices_unchanged() {
    let ws = Workspace::new();
    let fixture = ws.path("fixture");
    let out = Command::new(BIN).args(["synth", "--seed", "5", "--out", fixture.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success());
    fs::copy(fixture.join("config.toml"), ws.path("config.toml")).unwrap();
    for f in ["trajectories.csv", "pois.geojson", "rois.geojson", "logs.csv"] {
        fs::copy(fixture.join(f), ws.path(f)).unwrap();
    }
    for stage in ["ingest", "detect-stops", "build-priors"] {
        ws.ok(&[stage]);
    }
    let mut uniform = String::from("from\\to,residential,working,service,dining,school,leisure,shopping\n");
    for c in ["residential", "working", "service", "dining", "school", "leisure", "shopping"] {
        uniform.push_str(c);
        uniform.push_str(&",1.42857143e-1".repeat(7));
        uniform.push('\n');
    }
    fs::write(ws.out().join("transitions.csv"), uniform).unwrap();
    ws.ok(&["annotate", "--method", "upapp"]);
    ws.ok(&["annotate", "--method", "upapp-hmm"]);
    let per_stop = csv_column(&ws.read_out("annotations_upapp.csv"), "place_id");
    let decoded = csv_column(&ws.read_out("annotations_upapp-hmm.csv"), "place_id");
    assert!(per_stop.len() > 20);
    assert_eq!(per_stop, decoded);
}

#[test]
fn evaluation_scores_perfect_and_one_wrong() {
    let ws = Workspace::new();
    config(&ws, "");
    let mut visits = line_itinerary(&ws, 10, 10.0);
    ws.ok(&["ingest"]);
    ws.ok(&["detect-stops"]);
    ws.ok(&["annotate", "--method", "spatial-only"]);

    write_logs(&ws, &visits);
    ws.ok(&["evaluate", "--method", "spatial-only"]);
    let report = EvaluationReport::from_key_value(&ws.read_out("report_spatial-only.txt")).unwrap();
    assert_eq!((report.overall, report.average), (1.0, 1.0));
    assert_eq!(report.counts.matched, 10);

    visits[3].0 = "residential";
    write_logs(&ws, &visits);
    ws.ok(&["evaluate", "--method", "spatial-only"]);
    let text = ws.read_out("report_spatial-only.txt");
    let report = EvaluationReport::from_key_value(&text).unwrap();
    assert!((report.overall - 0.9).abs() < 1e-12);
    assert_eq!(report.to_key_value(), text);
    assert!(ws.read_out("report_spatial-only_table.txt").contains("overall accuracy  0.900"));
}

#[test]
fn run_all_completes_and_repeats_identically() {
    let ws = Workspace::new();
    let out = Command::new(BIN).args(["synth", "--out", ws.path("").to_str().unwrap()]).output().unwrap();
    assert!(out.status.success());
    ws.ok(&["run-all", "--threads", "4"]);
    let m = ws.manifest();
    let stages: Vec<&str> = m["stages"].as_object().unwrap().keys().map(String::as_str).collect();
    for s in ["ingest", "detect-stops", "build-priors", "annotate.upapp-hmm", "evaluate.upapp-joint", "compare"] {
        assert!(stages.contains(&s), "{s} missing from {stages:?}");
    }
    let first = tree(&ws.out());
    assert!(first.keys().all(|n| !n.starts_with('.')), "temporary files left: {:?}", first.keys());
    assert!(first.contains_key("report_upapp.txt"));
    ws.ok(&["run-all", "--threads", "4"]);
    assert_eq!(first, tree(&ws.out()));
}

#[test]
fn single_method_run_skips_the_comparison() {
    let ws = Workspace::new();
    let out = Command::new(BIN).args(["synth", "--out", ws.path("").to_str().unwrap()]).output().unwrap();
    assert!(out.status.success());
    ws.ok(&["run-all", "--method", "spatial-only"]);
    assert!(!ws.out().join("comparison.csv").exists());
    assert!(!ws.out().join("annotations_upapp.csv").exists());
    assert!(ws.out().join("report_spatial-only.txt").exists());
}

#[test]
fn invalid_configuration_exits_2() {
    let ws = Workspace::new();
    config(&ws, "[spatial]\np_r = 1.5\n");
    line_itinerary(&ws, 2, 10.0);
    let out = ws.run(&["ingest"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("p_r"));

    config(&ws, "");
    let out = ws.run_env(&["ingest"], &[("UPAPP_SPATIAL_SEARCH_RADIUS", "50")]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&ws.run(&["annotate", "--method", "nearest"])), 2);
}
