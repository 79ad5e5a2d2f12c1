use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use rcbev::bev::BevGrid;
use rcbev::nn::init_weights;
use rcbev::pipeline::{
    extract_radar_bev, fuse_grids, gen_camera_bev, run_bench, run_with_inputs, selfcheck, BenchConfig,
    PipelineInputs, RunReport, SelfcheckOptions,
};
use rcbev::radar::{synth_scene, write_binary, write_csv, SceneConfig};
use rcbev::PipelineConfig;

/// Radar point-cloud BEV encoding and radar/camera BEV fusion.
#[derive(Parser, Debug)]
#[command(name = "rcbev", version)]
struct Cli {
    /// Pipeline config (TOML with dotted keys); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Weight manifest; overrides `io.weights`.
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
    /// Write every intermediate grid next to the output (or to `io.dump_dir`).
    #[arg(long, global = true)]
    dump_intermediates: bool,
    /// Output path; overrides `io.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print the run report as JSON.
    #[arg(long, global = true)]
    report: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Radar point file to radar BEV grid.
    Extract {
        /// `.csv` or `.bin` radar points; `io.radar` or a synthetic scene otherwise.
        input: Option<PathBuf>,
    },
    /// Radar BEV grid plus camera BEV grid to fused grid.
    Fuse {
        #[arg(long)]
        radar: PathBuf,
        /// Generated from the seed when omitted.
        #[arg(long)]
        camera: Option<PathBuf>,
    },
    /// Full pipeline: radar points and camera grid to fused grid.
    Run {
        input: Option<PathBuf>,
    },
    /// Synthesize a multi-sweep radar scene; `.bin` output is binary, anything else CSV.
    Synth {
        /// Scene description (TOML); the built-in three-cluster scene otherwise.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Seeded synthetic camera BEV grid.
    GenCam,
    /// Oracle-equivalence and identity checks.
    Selfcheck {
        #[arg(long, default_value_t = 8)]
        instances: usize,
    },
    /// Deformable vs dense cross-attention scaling table; `--out` writes CSV.
    Bench {
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    /// Write a seeded weight manifest for the configured model.
    InitWeights,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Extract { .. } => "extract",
            Command::Fuse { .. } => "fuse",
            Command::Run { .. } => "run",
            Command::Synth { .. } => "synth",
            Command::GenCam => "gen-cam",
            Command::Selfcheck { .. } => "selfcheck",
            Command::Bench { .. } => "bench",
            Command::InitWeights => "init-weights",
        }
    }
}

fn load_config(cli: &Cli) -> rcbev::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = &cli.weights {
        cfg.io.weights = Some(w.clone());
    }
    if let Some(o) = &cli.out {
        cfg.io.out = Some(o.clone());
    }
    Ok(cfg)
}

fn out_path(cfg: &PipelineConfig, default: &str) -> PathBuf {
    cfg.io.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn dump_dir(cli: &Cli, cfg: &PipelineConfig, out: &Path) -> Option<PathBuf> {
    if !cli.dump_intermediates {
        return None;
    }
    Some(cfg.io.dump_dir.clone().unwrap_or_else(|| {
        let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("rcbev");
        out.with_file_name(format!("{stem}_intermediates"))
    }))
}

fn print_report(cli: &Cli, report: &RunReport) {
    if cli.report {
        println!("{}", report.to_json());
    } else {
        for s in &report.stages {
            println!("{:<12} {:>10.3} ms  {}", s.name, s.millis, s.checksum.as_deref().unwrap_or(""));
        }
    }
}

fn save_grid(grid: &BevGrid, path: &Path) -> anyhow::Result<()> {
    grid.save(path)?;
    println!("wrote {} {:?} sha256={}", path.display(), grid.map().dims(), grid.checksum());
    Ok(())
}

fn execute(cli: &Cli, cfg: PipelineConfig) -> anyhow::Result<()> {
    match &cli.command {
        Command::Extract { input } => {
            let mut cfg = cfg;
            if let Some(p) = input {
                cfg.io.radar = Some(p.clone());
            }
            let inputs = PipelineInputs::from_config(&cfg)?;
            let (radar, report) = extract_radar_bev(&cfg, &inputs.cloud, inputs.weights.as_ref())?;
            let out = out_path(&cfg, "radar_bev.bev");
            if let Some(dir) = dump_dir(cli, &cfg, &out) {
                std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                radar.f_rcs.save(dir.join("f_rcs.bev"))?;
                radar.g_rcs.save(dir.join("g_rcs.bev"))?;
            }
            print_report(cli, &report);
            println!("points used: {}, stages: {}", radar.points_used, radar.stages_run);
            save_grid(&radar.radar_bev, &out)
        }
        Command::Fuse { radar, camera } => {
            let radar = BevGrid::load(radar)?;
            let camera = match camera {
                Some(p) => BevGrid::load(p)?,
                None => gen_camera_bev(&cfg.bev_spec()?, cfg.model.camera_channels, cfg.seed)?,
            };
            let weights = cfg.io.weights.as_ref().map(rcbev::nn::load_weights).transpose()?;
            let (fused, report) = fuse_grids(&cfg, &radar, &camera, weights.as_ref())?;
            print_report(cli, &report);
            save_grid(&fused, &out_path(&cfg, "fused.bev"))
        }
        Command::Run { input } => {
            let mut cfg = cfg;
            if let Some(p) = input {
                cfg.io.radar = Some(p.clone());
            }
            let out = out_path(&cfg, "fused.bev");
            let inputs = PipelineInputs::from_config(&cfg)?;
            let (fusion, report) = run_with_inputs(&cfg, &inputs, dump_dir(cli, &cfg, &out).as_deref())?;
            print_report(cli, &report);
            println!(
                "points used: {}, stages: {}, inject calls: {}, extract calls: {}",
                fusion.points_used, fusion.stages_run, fusion.inject_calls, fusion.extract_calls
            );
            save_grid(&fusion.fused, &out)
        }
        Command::Synth { scene } => {
            let mut scene_cfg = match scene {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    SceneConfig::from_toml(&text)?
                }
                None => SceneConfig::default(),
            };
            if scene.is_none() {
                scene_cfg.sweeps = cfg.radar.sweeps;
            }
            let cloud = synth_scene(&scene_cfg, cfg.seed)?;
            let out = out_path(&cfg, "scene.csv");
            if out.extension().is_some_and(|e| e == "bin") {
                write_binary(&cloud, &out)?;
            } else {
                write_csv(&cloud, &out)?;
            }
            println!("wrote {} ({} points)", out.display(), cloud.len());
            Ok(())
        }
        Command::GenCam => {
            let grid = gen_camera_bev(&cfg.bev_spec()?, cfg.model.camera_channels, cfg.seed)?;
            save_grid(&grid, &out_path(&cfg, "camera_bev.bev"))
        }
        Command::Selfcheck { instances } => {
            let report = selfcheck(&SelfcheckOptions {
                seed: cli.seed.unwrap_or(SelfcheckOptions::default().seed),
                instances: *instances,
                perturb_dmsa: false,
            });
            print!("{}", report.to_text());
            if report.all_passed() {
                Ok(())
            } else {
                let names: Vec<_> = report.failures().iter().map(|c| c.name).collect();
                Err(anyhow!("failed checks: {}", names.join(", ")))
            }
        }
        Command::Bench { sizes } => {
            let mut bench = BenchConfig {
                seed: cli.seed.unwrap_or(BenchConfig::default().seed),
                ..BenchConfig::default()
            };
            if let Some(s) = sizes {
                bench.sizes = s.clone();
            }
            let table = run_bench(&bench)?;
            print!("{}", table.to_text());
            if let Some(p) = &cli.out {
                std::fs::write(p, table.to_csv()?).with_context(|| format!("writing {}", p.display()))?;
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::InitWeights => {
            let w = init_weights(&cfg.layout()?, cfg.seed)?;
            let out = out_path(&cfg, "weights.json");
            w.save(&out)?;
            println!("wrote {} ({} tensors)", out.display(), w.len());
            Ok(())
        }
    }
}

/// Stage named by the innermost library error, else the subcommand.
fn stage_of(err: &anyhow::Error, command: &'static str) -> &'static str {
    err.chain()
        .filter_map(|e| e.downcast_ref::<rcbev::Error>())
        .find_map(|e| e.stage())
        .unwrap_or(command)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("RCBEV_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error [stage: config]: {e}");
            return ExitCode::FAILURE;
        }
    };
    match execute(&cli, cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [stage: {}]: {e:#}", stage_of(&e, cli.command.name()));
            ExitCode::FAILURE
        }
    }
}
