//! Radar point-cloud to BEV encoding (dual-stream backbone, RCS-aware
//! scattering) and deformable cross-attention fusion with camera BEV
//! features. Inference only; all arithmetic is `f64`.

pub mod arch;
pub mod backbone;
pub mod bev;
pub mod camf;
pub mod error;
pub mod nn;
pub mod oracle;
pub mod pipeline;
pub mod radar;
pub mod tensor;
pub mod testkit;

pub use arch::{Model, ModelConfig, ModelLayout};
pub use bev::{BevGrid, BevSpec, ScatterConfig};
pub use error::{Error, Result};
pub use pipeline::{run_pipeline, PipelineConfig};
pub use radar::{PointCloud, PointFeatureSet, RadarPoint};
pub use tensor::{FeatureMap, Matrix};
