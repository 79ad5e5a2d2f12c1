use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rcbev(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcbev"))
        .args(args)
        .current_dir(cwd)
        .env("RCBEV_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn tiny_config() -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/data/tiny.toml")
        .display()
        .to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn synth_extract_fuse_chain_matches_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_config();
    // a scene inside the tiny 16 m region
    std::fs::write(
        d.join("scene.toml"),
        "sweeps = 2\n[[clusters]]\nrange_m = 5.0\nbearing_deg = 30.0\npoints = 6\nrcs_dbsm = 8.0\n",
    )
    .unwrap();
    let o = rcbev(&["synth", "--config", &cfg, "--scene", "scene.toml", "--out", "scene.bin"], d);
    assert!(o.status.success(), "{}", stderr(&o));

    let o = rcbev(&["gen-cam", "--config", &cfg, "--out", "cam.bev"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = rcbev(&["extract", "scene.bin", "--config", &cfg, "--out", "radar.bev", "--dump-intermediates"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("radar_intermediates/f_rcs.bev").exists());
    let o = rcbev(&["fuse", "--config", &cfg, "--radar", "radar.bev", "--camera", "cam.bev", "--out", "a.bev"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = rcbev(&["run", "scene.bin", "--config", &cfg, "--out", "b.bev"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    // the radar grid passes through f32 on disk, so only shapes are compared
    let (a, b) = (std::fs::read(d.join("a.bev")).unwrap(), std::fs::read(d.join("b.bev")).unwrap());
    assert_eq!(a.len(), b.len());
}

#[test]
fn run_reproduces_golden_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let want = std::fs::read_to_string(
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/tiny_fused.sha256"),
    )
    .unwrap();
    let o = rcbev(&["run", "--config", &tiny_config(), "--out", "f.bev"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains(want.trim()));
}

#[test]
fn failures_exit_nonzero_and_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = rcbev(&["extract", "missing.csv", "--config", &tiny_config(), "--out", "x.bev"], d);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("stage: ingest"), "{}", stderr(&o));

    std::fs::write(d.join("bad.toml"), "bev.resolution = -1.0\n").unwrap();
    let o = rcbev(&["run", "--config", "bad.toml"], d);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("stage: config"), "{}", stderr(&o));
    assert!(stderr(&o).contains("configuration error"));

    std::fs::write(d.join("junk.bev"), b"not a grid").unwrap();
    let o = rcbev(&["fuse", "--config", &tiny_config(), "--radar", "junk.bev"], d);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("stage: fuse"), "{}", stderr(&o));

    // camera grid from the default 128 x 128 region against the tiny config
    let o = rcbev(&["gen-cam", "--out", "big.bev"], d);
    assert!(o.status.success());
    let o = rcbev(&["extract", "--config", &tiny_config(), "--out", "r.bev"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = rcbev(&["fuse", "--config", &tiny_config(), "--radar", "r.bev", "--camera", "big.bev"], d);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("stage: camera"), "{}", stderr(&o));
}

#[test]
fn selfcheck_and_small_bench_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let o = rcbev(&["selfcheck", "--instances", "2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("0 failed"));

    let o = rcbev(&["bench", "--sizes", "16,64", "--out", "bench.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn init_weights_writes_a_loadable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = rcbev(&["init-weights", "--config", &tiny_config(), "--seed", "3", "--out", "w.json"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("w.bin").exists());
    let o = rcbev(&["run", "--config", &tiny_config(), "--weights", "w.json", "--out", "f.bev"], d);
    assert!(o.status.success(), "{}", stderr(&o));
}
