use std::path::PathBuf;

use rcbev::bev::BevGrid;
use rcbev::oracle;
use rcbev::pipeline::{
    extract_radar_bev, fuse_grids, gen_camera_bev, run_pipeline, run_with_inputs, synth_default_scene,
    PipelineInputs,
};
use rcbev::radar::{assemble_features, filter_roi};
use rcbev::{Error, Matrix, PipelineConfig, PointCloud};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn tiny() -> PipelineConfig {
    PipelineConfig::load(data("tiny.toml")).unwrap()
}

#[test]
fn golden_checksum_is_reproduced_twice() {
    let want = std::fs::read_to_string(data("tiny_fused.sha256")).unwrap();
    let (a, _) = run_pipeline(&tiny()).unwrap();
    let (b, _) = run_pipeline(&tiny()).unwrap();
    assert_eq!(a.fused.checksum(), want.trim());
    assert_eq!(a.fused.to_bytes(), b.fused.to_bytes());
}

#[test]
fn committed_weights_equal_seeded_initialization() {
    let mut seeded = tiny();
    seeded.io.weights = None;
    let (a, _) = run_pipeline(&tiny()).unwrap();
    let (b, _) = run_pipeline(&seeded).unwrap();
    assert_eq!(a.fused.checksum(), b.fused.checksum());
}

#[test]
fn seed_changes_the_output() {
    let mut cfg = tiny();
    cfg.io.weights = None;
    let (a, _) = run_pipeline(&cfg).unwrap();
    cfg.seed += 1;
    let (b, _) = run_pipeline(&cfg).unwrap();
    assert_ne!(a.fused.checksum(), b.fused.checksum());
}

#[test]
fn empty_cloud_gives_zero_radar_bev_and_still_fuses() {
    let cfg = tiny();
    let inputs = PipelineInputs {
        cloud: PointCloud::empty("none"),
        camera: None,
        weights: None,
    };
    let (out, report) = run_with_inputs(&cfg, &inputs, None).unwrap();
    assert_eq!(out.points_used, 0);
    assert_eq!(out.stages_run, 0);
    assert!(out.radar_bev.map().as_slice().iter().all(|v| *v == 0.0));
    assert_eq!(out.fused.map().dims(), (12, 16, 16));
    assert!(out.fused.map().is_finite());

    // identical to fusing the camera grid with an explicit zero radar grid
    let zero = BevGrid::zeros(cfg.model.radar_width(), cfg.bev_spec().unwrap());
    let (fused, _) = fuse_grids(&cfg, &zero, &out.camera_bev, None).unwrap();
    assert_eq!(fused.to_bytes(), out.fused.to_bytes());
    assert!(report.stages.iter().all(|s| s.millis >= 0.0));
}

#[test]
fn synthetic_scene_coverage_matches_brute_force_recount() {
    let cfg = PipelineConfig::default();
    let spec = cfg.bev_spec().unwrap();
    let cloud = synth_default_scene(&cfg).unwrap();
    let (radar, _) = extract_radar_bev(&cfg, &cloud, None).unwrap();

    let feats = assemble_features(&filter_roi(&cloud, &spec), &spec, &cfg.rcs_bounds().unwrap()).unwrap();
    let ones = feats.with_features(Matrix::from_vec(feats.len(), 1, vec![1.0; feats.len()]).unwrap()).unwrap();
    let recount = oracle::scatter(&ones, &spec, &cfg.scatter_config().unwrap()).nonzero_pixels();

    assert!(radar.points_used > 0);
    assert!(recount > radar.points_used / 4, "radius scatter should spread points");
    assert_eq!(radar.f_rcs.map().nonzero_pixels(), recount);
    assert_eq!(radar.g_rcs.map().nonzero_pixels(), recount);
}

#[test]
fn default_configuration_has_three_stages_and_full_grid() {
    let cfg = PipelineConfig::default();
    assert_eq!(cfg.model.stages(), 3);
    let (out, _) = run_pipeline(&cfg).unwrap();
    assert_eq!((out.stages_run, out.inject_calls, out.extract_calls), (3, 3, 3));
    assert_eq!(out.fused.map().dims(), (cfg.model.fused_channels, 128, 128));
}

#[test]
fn committed_default_config_matches_built_in_defaults() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    assert_eq!(PipelineConfig::load(path).unwrap(), PipelineConfig::default());
}

#[test]
fn errors_name_the_failing_stage() {
    let mut cfg = tiny();
    cfg.io.radar = Some(data("does_not_exist.csv"));
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.stage(), Some("ingest"));

    // camera grid from a different region
    let cfg = tiny();
    let mut other = cfg.clone();
    other.bev.x_max = 16.0;
    let camera = gen_camera_bev(&other.bev_spec().unwrap(), 8, 1).unwrap();
    let inputs = PipelineInputs {
        cloud: PointCloud::empty("x"),
        camera: Some(camera),
        weights: None,
    };
    let err = run_with_inputs(&cfg, &inputs, None).unwrap_err();
    assert_eq!(err.stage(), Some("camera"));
    assert!(matches!(err, Error::Stage { ref source, .. } if matches!(**source, Error::Shape(_))));

    // weights for a different model width
    let mut wide = cfg.clone();
    wide.model.fused_channels = 16;
    let weights = rcbev::nn::init_weights(&wide.layout().unwrap(), 0).unwrap();
    let inputs = PipelineInputs {
        cloud: PointCloud::empty("x"),
        camera: None,
        weights: Some(weights),
    };
    assert_eq!(run_with_inputs(&cfg, &inputs, None).unwrap_err().stage(), Some("weights"));
}

#[test]
fn intermediates_are_dumped_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let inputs = PipelineInputs::from_config(&cfg).unwrap();
    let (out, report) = run_with_inputs(&cfg, &inputs, Some(dir.path())).unwrap();
    for (name, grid) in out.named_grids() {
        let back = BevGrid::load(dir.path().join(format!("{name}.bev"))).unwrap();
        // grids are stored as f32
        assert_eq!(back.to_bytes(), grid.to_bytes(), "{name}");
        assert_eq!(back.checksum(), grid.checksum());
    }
    assert!(report.stages.iter().any(|s| s.name == "dump"));
    let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(json["grids"].as_array().unwrap().len(), 5);
}
