use ptz_slam::pipeline::{
    build_relocalization_map, run_tracking, PipelineConfig, RelocalizerKind, TrackStatus,
    TrackerKind,
};
use ptz_slam::reloc_eval::{run_reloc_bench, RelocBenchConfig};
use ptz_slam::report::{summarize, trajectory_csv};
use ptz_slam::sim::{presets, simulate, SequenceBundle, SimConfig};

fn preset(name: &str) -> SimConfig {
    serde_json::from_value(presets::preset(name).unwrap()).unwrap()
}

fn config(tracker: TrackerKind) -> PipelineConfig {
    PipelineConfig {
        tracker,
        relocalizer: RelocalizerKind::None,
        ..Default::default()
    }
}

#[test]
fn simulation_is_deterministic_and_round_trips() {
    let c = preset("table1_seq3");
    let a = simulate(&c).unwrap();
    let b = simulate(&c).unwrap();
    assert_eq!(a, b);
    let text = a.to_json().unwrap();
    assert_eq!(SequenceBundle::from_json(&text).unwrap(), a);
    let mut other = c.clone();
    other.noise.seed += 1;
    assert_ne!(simulate(&other).unwrap(), a);
}

#[test]
fn both_trackers_follow_the_slow_pan() {
    let bundle = simulate(&preset("table1_seq1")).unwrap();
    let first = bundle.frames[0].ground_truth_pose;
    for tracker in [TrackerKind::EkfPtz, TrackerKind::EkfH] {
        let r = run_tracking(&bundle, &config(tracker), &first).unwrap();
        assert!(
            r.frames.iter().all(|f| f.status == TrackStatus::Tracked),
            "{tracker:?}"
        );
        let s = summarize(&bundle, &r).unwrap();
        assert!(
            s.reprojection.mean <= 0.5,
            "{tracker:?}: {:?}",
            s.reprojection
        );
        assert!(
            s.pose_errors.pan.mean <= 0.02,
            "{tracker:?}: {:?}",
            s.pose_errors
        );
        assert!((s.velocity - 0.02).abs() < 0.005);
    }
}

#[test]
fn tracking_output_is_reproducible() {
    let bundle = simulate(&preset("table1_seq2")).unwrap();
    let first = bundle.frames[0].ground_truth_pose;
    let mut c = config(TrackerKind::EkfPtz);
    c.set_seed(11);
    let a = run_tracking(&bundle, &c, &first).unwrap();
    let b = run_tracking(&bundle, &c, &first).unwrap();
    assert_eq!(trajectory_csv(&a), trajectory_csv(&b));
}

#[test]
fn reloc_bench_is_reproducible() {
    let mut sim = preset("table1_seq2");
    sim.trajectory.num_frames = 300;
    sim.trajectory.waypoints.last_mut().unwrap().frame = 299;
    sim.trajectory.waypoints.last_mut().unwrap().pose.pan = 12.0;
    let bundle = simulate(&sim).unwrap();
    let pipeline = PipelineConfig::default();
    let (_, map) =
        build_relocalization_map(&bundle, &pipeline, &bundle.frames[0].ground_truth_pose).unwrap();
    assert!(map.keyframes.len() >= 2);
    let bench = RelocBenchConfig {
        outliers: vec![10.0, 50.0],
        methods: vec![
            RelocalizerKind::Forest,
            RelocalizerKind::Keyframe,
            RelocalizerKind::Nns,
        ],
        trials: 10,
        ..Default::default()
    };
    let a = run_reloc_bench(&bundle, &map, &pipeline, &bench).unwrap();
    let b = run_reloc_bench(&bundle, &map, &pipeline, &bench).unwrap();
    assert_eq!(a, b);
    for row in &a.correctness {
        assert!(row.iter().all(|c| (0.0..=1.0).contains(c)));
    }
    assert!(a.get(10.0, RelocalizerKind::Forest).unwrap() >= 0.9);
}
