//! Sequential and parallel execution give identical results.

mod common;

use semtraj::annotate::{Annotator, Method};
use semtraj::ingest::{parse_trajectories, TrajectorySchema};
use semtraj::priors::{build_priors, BinScheme, PriorOptions};
use semtraj::sequence::{decode_annotations_with, learn_transitions_with};
use semtraj::spatial::SpatialParams;
use semtraj::stops::{attach_all_with, detect_all_stops_with, StopParams};
use semtraj::synth::{generate_trajectory_fixture, trajectory_csv, TrajectoryFixtureConfig};
use semtraj::zone::Zone;
use semtraj::Mode;

#[test]
fn stop_detection_and_candidates_agree() {
    let scheme = BinScheme::default();
    let fixture = generate_trajectory_fixture(&TrajectoryFixtureConfig::default(), &scheme);
    let text = trajectory_csv(&fixture.points, &fixture.zone);
    let parsed = parse_trajectories(text.as_bytes(), &TrajectorySchema::default(), &fixture.zone).unwrap();
    let params = StopParams::default();
    let seq = detect_all_stops_with(Mode::Sequential, &parsed.trajectories, &params);
    let par = detect_all_stops_with(Mode::Parallel, &parsed.trajectories, &params);
    assert!(seq.len() > 50);
    assert_eq!(seq, par);
    let a = attach_all_with(Mode::Sequential, seq, &fixture.map.index, 200.0);
    let b = attach_all_with(Mode::Parallel, par, &fixture.map.index, 200.0);
    assert_eq!(a, b);
}

#[test]
fn priors_annotation_and_decoding_agree() {
    let mut rng = common::rng(21);
    let index = common::world(&mut rng, 1500, 2000.0);
    let stops = common::stops(&mut rng, 1500, 12, 2000.0, &index);
    let scheme = BinScheme::default();
    let zone = Zone::utc();
    let opts = |mode| PriorOptions { mode, ..PriorOptions::default() };
    let p_seq = build_priors(&stops, &index, &scheme, &zone, &opts(Mode::Sequential)).unwrap();
    let p_par = build_priors(&stops, &index, &scheme, &zone, &opts(Mode::Parallel)).unwrap();
    assert_eq!(p_seq, p_par);

    let t_seq = learn_transitions_with(Mode::Sequential, &stops, &index, &zone, 1e-3).unwrap();
    let t_par = learn_transitions_with(Mode::Parallel, &stops, &index, &zone, 1e-3).unwrap();
    assert_eq!(t_seq, t_par);

    for method in Method::ALL {
        let annotator = Annotator::new(&index, method, Some(&p_seq), SpatialParams::default(), scheme.clone(), zone).unwrap();
        let a = annotator.annotate_all_with(Mode::Sequential, &stops).unwrap();
        let b = annotator.annotate_all_with(Mode::Parallel, &stops).unwrap();
        assert_eq!(a, b, "{method}");
        let singles: Vec<_> = stops.iter().map(|s| annotator.annotate_stop(s).unwrap()).collect();
        assert_eq!(a, singles, "{method}");
        if method.uses_sequence() {
            let da = decode_annotations_with(Mode::Sequential, a, &index, &t_seq, &zone);
            let db = decode_annotations_with(Mode::Parallel, b, &index, &t_seq, &zone);
            assert_eq!(da, db);
        }
    }
}
