use sparseocc_bench::config::parse_config;
use sparseocc_bench::report::{emit_report, read_report, to_json};
use sparseocc_bench::run::{run_pipeline, scene_for};
use sparseocc_bench::scene::gen_scene;
use sparseocc_bench::scene_file::{read_scene, write_scene};
use sparseocc_core::SparseVoxelTensor;

fn small() -> sparseocc_core::pipeline::PipelineConfig {
    parse_config("shape = 16x16x8\nchannels = 8\ndecoder_channels = 16\nqueries = 6\nhead_layers = 4\nseed = 3\n").unwrap()
}

#[test]
fn report_round_trips_through_disk() {
    let cfg = small();
    let scene = gen_scene(&scene_for(&cfg)).unwrap();
    let (_, report) = run_pipeline(&scene.tensor, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    emit_report(&report, &path).unwrap();
    let back = read_report(&path).unwrap();
    assert_eq!(back, report);
    assert_eq!(to_json(&back), std::fs::read_to_string(&path).unwrap());
    assert!(report.timing.latency_overall_ms >= report.timing.latency_3d_ms);
    assert_eq!(report.output.label_histogram.iter().sum::<usize>(), 16 * 16 * 8);
}

#[test]
fn report_has_every_key() {
    let cfg = small();
    let scene = gen_scene(&scene_for(&cfg)).unwrap();
    let (_, report) = run_pipeline(&scene.tensor, &cfg).unwrap();
    let v: serde_json::Value = serde_json::from_str(&to_json(&report)).unwrap();
    for key in [
        "schema_version",
        "mac_convention",
        "config",
        "scene",
        "stages",
        "scales",
        "encoder",
        "head",
        "total",
        "reference",
        "output",
        "peak_bytes_estimate",
        "timing",
    ] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert_eq!(v["scales"].as_array().unwrap().len(), cfg.levels);
}

#[test]
fn scene_file_round_trip() {
    let cfg = small();
    let scene = gen_scene(&scene_for(&cfg)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.svox");
    write_scene(&path, &scene.tensor).unwrap();
    assert_eq!(read_scene(&path).unwrap(), scene.tensor);
}

#[test]
fn empty_scene_predicts_nothing() {
    let cfg = small();
    let empty = SparseVoxelTensor::empty(cfg.shape, cfg.channels).unwrap();
    let (out, report) = run_pipeline(&empty, &cfg).unwrap();
    assert_eq!(out.grid.occupied(), 0);
    assert!(out.grid.labels.iter().all(|&l| l == 0));
    assert_eq!(report.encoder.sparse_macs, 0);
}

#[test]
fn equal_seeds_give_equal_outputs() {
    let cfg = small();
    let a = gen_scene(&scene_for(&cfg)).unwrap();
    let b = gen_scene(&scene_for(&cfg)).unwrap();
    assert_eq!(a.tensor, b.tensor);
    let (oa, mut ra) = run_pipeline(&a.tensor, &cfg).unwrap();
    let (ob, mut rb) = run_pipeline(&b.tensor, &cfg).unwrap();
    assert_eq!(oa.grid, ob.grid);
    ra.timing = Default::default();
    rb.timing = Default::default();
    assert_eq!(ra, rb);
}
