use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::arch::Model;
use crate::backbone::dual_backbone_forward;
use crate::bev::{bev_encode, gaussian_bev_map, locate_points, rcs_bev_feature, rcs_scatter, BevGrid, ScatterConfig};
use crate::camf::{channel_spatial_fuse, cross_align};
use crate::error::{Error, Result, StageExt};
use crate::nn::{init_weights, load_weights, WeightSet};
use crate::pipeline::camera::gen_camera_bev;
use crate::pipeline::config::PipelineConfig;
use crate::radar::{synth_scene, SceneConfig};
use crate::radar::{assemble_features, filter_roi, load_point_cloud, PointCloud};
use crate::tensor::Matrix;

/// Grids produced by one run.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionOutput {
    pub f_rcs: BevGrid,
    pub g_rcs: BevGrid,
    pub radar_bev: BevGrid,
    pub camera_bev: BevGrid,
    pub fused: BevGrid,
    pub points_used: usize,
    pub stages_run: usize,
    pub inject_calls: usize,
    pub extract_calls: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageReport {
    pub name: String,
    pub millis: f64,
    /// SHA-256 of the stage's exported output grid, when it has one.
    pub checksum: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChannelStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridStats {
    pub name: String,
    pub shape: [usize; 3],
    pub nonzero_pixels: usize,
    pub channels: Vec<ChannelStats>,
}

impl GridStats {
    pub fn of(name: &str, grid: &BevGrid) -> Self {
        let map = grid.map();
        let (c, h, w) = map.dims();
        let channels = (0..c)
            .map(|ch| {
                let p = map.plane(ch);
                ChannelStats {
                    min: p.iter().copied().fold(f64::INFINITY, f64::min),
                    max: p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    mean: p.iter().sum::<f64>() / p.len().max(1) as f64,
                }
            })
            .collect();
        Self {
            name: name.into(),
            shape: [c, h, w],
            nonzero_pixels: map.nonzero_pixels(),
            channels,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunReport {
    pub stages: Vec<StageReport>,
    pub grids: Vec<GridStats>,
}

impl RunReport {
    fn time<T>(&mut self, name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().in_stage(name)?;
        self.stages.push(StageReport {
            name: name.into(),
            millis: start.elapsed().as_secs_f64() * 1e3,
            checksum: None,
        });
        Ok(out)
    }

    fn stamp(&mut self, grid: &BevGrid) {
        if let Some(last) = self.stages.last_mut() {
            last.checksum = Some(grid.checksum());
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }
}

/// Everything a run consumes, already in memory.
#[derive(Clone, Debug)]
pub struct PipelineInputs {
    pub cloud: PointCloud,
    /// Generated from the seed when `None`.
    pub camera: Option<BevGrid>,
    /// Seeded initialization when `None`.
    pub weights: Option<WeightSet>,
}

impl PipelineInputs {
    /// Resolve the radar, camera and weight sources named in `cfg.io`.
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        let cloud = match &cfg.io.radar {
            Some(p) => load_point_cloud(p).in_stage("ingest")?,
            None => synth_default_scene(cfg).in_stage("ingest")?,
        };
        let camera = cfg
            .io
            .camera
            .as_ref()
            .map(BevGrid::load)
            .transpose()
            .in_stage("camera")?;
        let weights = cfg
            .io
            .weights
            .as_ref()
            .map(load_weights)
            .transpose()
            .in_stage("weights")?;
        Ok(Self { cloud, camera, weights })
    }
}

/// The built-in three-cluster scene with the configured sweep count.
pub fn synth_default_scene(cfg: &PipelineConfig) -> Result<PointCloud> {
    let scene = SceneConfig {
        sweeps: cfg.radar.sweeps,
        ..SceneConfig::default()
    };
    synth_scene(&scene, cfg.seed)
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<(FusionOutput, RunReport)> {
    let inputs = PipelineInputs::from_config(cfg)?;
    run_with_inputs(cfg, &inputs, cfg.io.dump_dir.as_deref())
}

/// Radar-only products of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RadarOutput {
    pub f_rcs: BevGrid,
    pub g_rcs: BevGrid,
    pub radar_bev: BevGrid,
    pub points_used: usize,
    pub stages_run: usize,
    pub inject_calls: usize,
    pub extract_calls: usize,
}

fn build_model(cfg: &PipelineConfig, weights: Option<&WeightSet>, report: &mut RunReport) -> Result<Model> {
    let (spec, layout) = report.time("config", || {
        cfg.validate()?;
        Ok((cfg.bev_spec()?, cfg.layout()?))
    })?;
    report.time("weights", || {
        let seeded;
        let w = match weights {
            Some(w) => w,
            None => {
                seeded = init_weights(&layout, cfg.seed)?;
                &seeded
            }
        };
        Model::from_weights(&cfg.model, w, spec.height(), spec.width())
    })
}

fn radar_stages(cfg: &PipelineConfig, model: &Model, cloud: &PointCloud, report: &mut RunReport) -> Result<RadarOutput> {
    let spec = cfg.bev_spec().in_stage("config")?;
    let scatter = cfg.scatter_config().in_stage("config")?;
    let bounds = cfg.rcs_bounds().in_stage("config")?;
    let feats = report.time("ingest", || assemble_features(&filter_roi(cloud, &spec), &spec, &bounds))?;

    let backbone = report.time("backbone", || {
        if feats.is_empty() {
            return Ok(None);
        }
        dual_backbone_forward(&feats, &model.backbone).map(Some)
    })?;

    let c_s = cfg.model.backbone_width();
    let (f_rcs, g_rcs, base) = report.time("scatter", || {
        let fused = match &backbone {
            Some(b) => b.fused.clone(),
            None => Matrix::zeros(0, c_s),
        };
        let point_feats = feats.with_features(fused)?;
        let f_rcs = rcs_scatter(&point_feats, &spec, &scatter)?;
        let g_rcs = gaussian_bev_map(&locate_points(&point_feats, &spec)?, &spec, &scatter)?;
        let base = rcs_scatter(&point_feats, &spec, &ScatterConfig::single_pixel())?;
        Ok((f_rcs, g_rcs, base))
    })?;
    report.stamp(&f_rcs);

    let radar_bev = report.time("rcs_encoder", || {
        if feats.is_empty() {
            return Ok(BevGrid::zeros(cfg.model.radar_width(), spec));
        }
        let f_prime = rcs_bev_feature(&f_rcs, &g_rcs, &model.rcs_mlp)?;
        bev_encode(&f_prime, &base, &model.encoder)
    })?;
    report.stamp(&radar_bev);

    Ok(RadarOutput {
        points_used: feats.len(),
        stages_run: backbone.as_ref().map_or(0, |b| b.stages_run),
        inject_calls: backbone.as_ref().map_or(0, |b| b.inject_calls),
        extract_calls: backbone.as_ref().map_or(0, |b| b.extract_calls),
        f_rcs,
        g_rcs,
        radar_bev,
    })
}

fn fusion_stages(
    cfg: &PipelineConfig,
    model: &Model,
    radar_bev: &BevGrid,
    camera: Option<&BevGrid>,
    report: &mut RunReport,
) -> Result<(BevGrid, BevGrid)> {
    let spec = cfg.bev_spec().in_stage("config")?;
    let camera_bev = report.time("camera", || {
        let cam = match camera {
            Some(c) => c.clone(),
            None => gen_camera_bev(&spec, cfg.model.camera_channels, cfg.seed)?,
        };
        if cam.spec() != &spec || cam.channels() != cfg.model.camera_channels {
            return Err(Error::shape(format!(
                "camera grid is {:?}, expected {}x{}x{} on the configured BEV region",
                cam.map().dims(),
                cfg.model.camera_channels,
                spec.height(),
                spec.width()
            )));
        }
        Ok(cam)
    })?;
    report.stamp(&camera_bev);

    let fused = report.time("fusion", || {
        if radar_bev.spec() != &spec || radar_bev.channels() != cfg.model.radar_width() {
            return Err(Error::shape(format!(
                "radar grid is {:?}, expected {}x{}x{} on the configured BEV region",
                radar_bev.map().dims(),
                cfg.model.radar_width(),
                spec.height(),
                spec.width()
            )));
        }
        let (c2, r2) = cross_align(&camera_bev, radar_bev, &model.align)?;
        channel_spatial_fuse(&c2, &r2, &model.fuse)
    })?;
    report.stamp(&fused);
    Ok((camera_bev, fused))
}

/// Radar branch only: points → radar BEV feature.
pub fn extract_radar_bev(
    cfg: &PipelineConfig,
    cloud: &PointCloud,
    weights: Option<&WeightSet>,
) -> Result<(RadarOutput, RunReport)> {
    let mut report = RunReport::default();
    let model = build_model(cfg, weights, &mut report)?;
    let out = radar_stages(cfg, &model, cloud, &mut report)?;
    for (name, grid) in [("f_rcs", &out.f_rcs), ("g_rcs", &out.g_rcs), ("radar_bev", &out.radar_bev)] {
        report.grids.push(GridStats::of(name, grid));
    }
    Ok((out, report))
}

/// Fuse an existing radar BEV grid with a camera grid.
pub fn fuse_grids(
    cfg: &PipelineConfig,
    radar: &BevGrid,
    camera: &BevGrid,
    weights: Option<&WeightSet>,
) -> Result<(BevGrid, RunReport)> {
    let mut report = RunReport::default();
    let model = build_model(cfg, weights, &mut report)?;
    let (_, fused) = fusion_stages(cfg, &model, radar, Some(camera), &mut report)?;
    report.grids.push(GridStats::of("fused", &fused));
    Ok((fused, report))
}

/// ingest → dual backbone → RCS BEV encoder → fusion with the camera grid.
pub fn run_with_inputs(
    cfg: &PipelineConfig,
    inputs: &PipelineInputs,
    dump_dir: Option<&Path>,
) -> Result<(FusionOutput, RunReport)> {
    let mut report = RunReport::default();
    let model = build_model(cfg, inputs.weights.as_ref(), &mut report)?;
    let radar = radar_stages(cfg, &model, &inputs.cloud, &mut report)?;
    let (camera_bev, fused) =
        fusion_stages(cfg, &model, &radar.radar_bev, inputs.camera.as_ref(), &mut report)?;
    let out = FusionOutput {
        points_used: radar.points_used,
        stages_run: radar.stages_run,
        inject_calls: radar.inject_calls,
        extract_calls: radar.extract_calls,
        f_rcs: radar.f_rcs,
        g_rcs: radar.g_rcs,
        radar_bev: radar.radar_bev,
        camera_bev,
        fused,
    };
    for (name, grid) in out.named_grids() {
        report.grids.push(GridStats::of(name, grid));
    }
    if let Some(dir) = dump_dir {
        report.time("dump", || out.dump(dir))?;
    }
    Ok((out, report))
}

impl FusionOutput {
    pub fn named_grids(&self) -> [(&'static str, &BevGrid); 5] {
        [
            ("f_rcs", &self.f_rcs),
            ("g_rcs", &self.g_rcs),
            ("radar_bev", &self.radar_bev),
            ("camera_bev", &self.camera_bev),
            ("fused", &self.fused),
        ]
    }

    /// Write every intermediate grid as `<dir>/<name>.bev`.
    pub fn dump(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.named_grids()
            .iter()
            .map(|(name, g)| {
                let p = dir.join(format!("{name}.bev"));
                g.save(&p)?;
                Ok(p)
            })
            .collect()
    }
}
