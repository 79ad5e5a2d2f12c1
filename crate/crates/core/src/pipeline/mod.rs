//! End-to-end orchestration, configuration, self-check and benchmarks.

pub mod bench;
pub mod camera;
pub mod config;
pub mod run;
pub mod selfcheck;

pub use bench::{run_bench, BenchConfig, BenchRow, BenchTable};
pub use camera::gen_camera_bev;
pub use config::{BevSection, IoSection, PipelineConfig, RadarSection, ScatterSection};
pub use run::{
    extract_radar_bev, fuse_grids, run_pipeline, run_with_inputs, synth_default_scene, ChannelStats, FusionOutput,
    GridStats, PipelineInputs, RadarOutput, RunReport, StageReport,
};
pub use selfcheck::{check_names, selfcheck, CheckResult, SelfcheckOptions, SelfcheckReport};
