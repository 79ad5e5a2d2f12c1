use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::{ModelConfig, ModelLayout};
use crate::bev::{BevSpec, ScatterConfig};
use crate::error::{Error, Result};
use crate::radar::{RcsBounds, DEFAULT_RCS_HI, DEFAULT_RCS_LO};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BevSection {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub resolution: f64,
}

impl Default for BevSection {
    fn default() -> Self {
        Self {
            x_min: -51.2,
            x_max: 51.2,
            y_min: -51.2,
            y_max: 51.2,
            resolution: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScatterSection {
    pub radius_scale: f64,
    pub radius_cap: f64,
}

impl Default for ScatterSection {
    fn default() -> Self {
        let d = ScatterConfig::default();
        Self {
            radius_scale: d.radius_scale(),
            radius_cap: d.radius_cap(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadarSection {
    pub rcs_lo: f64,
    pub rcs_hi: f64,
    /// Sweeps merged into the key frame when synthesizing scenes.
    pub sweeps: usize,
}

impl Default for RadarSection {
    fn default() -> Self {
        Self {
            rcs_lo: DEFAULT_RCS_LO,
            rcs_hi: DEFAULT_RCS_HI,
            sweeps: 6,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    /// Radar point file (`.csv` or `.bin`); a synthetic scene when absent.
    pub radar: Option<PathBuf>,
    /// Camera BEV grid; generated from the seed when absent.
    pub camera: Option<PathBuf>,
    /// Weight manifest; seeded initialization when absent.
    pub weights: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Directory for intermediate grids; nothing is dumped when absent.
    pub dump_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub bev: BevSection,
    pub scatter: ScatterSection,
    pub radar: RadarSection,
    pub model: ModelConfig,
    pub io: IoSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            bev: BevSection::default(),
            scatter: ScatterSection::default(),
            radar: RadarSection::default(),
            model: ModelConfig::default(),
            io: IoSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse a config file; relative `io.*` paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            for p in [
                &mut cfg.io.radar,
                &mut cfg.io.camera,
                &mut cfg.io.weights,
                &mut cfg.io.out,
                &mut cfg.io.dump_dir,
            ]
            .into_iter()
            .flatten()
            {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.bev_spec()?;
        self.scatter_config()?;
        self.rcs_bounds()?;
        self.model.validate()?;
        if self.radar.sweeps == 0 {
            return Err(Error::config("radar.sweeps must be >= 1"));
        }
        Ok(())
    }

    pub fn bev_spec(&self) -> Result<BevSpec> {
        let b = &self.bev;
        BevSpec::new(b.x_min, b.x_max, b.y_min, b.y_max, b.resolution)
    }

    pub fn scatter_config(&self) -> Result<ScatterConfig> {
        ScatterConfig::new(self.scatter.radius_scale, self.scatter.radius_cap)
    }

    pub fn rcs_bounds(&self) -> Result<RcsBounds> {
        RcsBounds::new(self.radar.rcs_lo, self.radar.rcs_hi)
    }

    pub fn layout(&self) -> Result<ModelLayout> {
        let spec = self.bev_spec()?;
        Ok(ModelLayout {
            model: self.model.clone(),
            height: spec.height(),
            width: spec.width(),
        })
    }
}
