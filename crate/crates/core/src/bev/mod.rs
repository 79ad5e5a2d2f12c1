//! BEV grid layout, RCS-aware scattering and the radar BEV encoder.

mod encoder;
mod grid;
mod scatter;

pub use encoder::{bev_encode, map_pixels, rcs_bev_feature, BevEncoderParams};
pub use grid::{BevGrid, BevSpec, PixelCoord, GRID_MAGIC, GRID_VERSION};
pub use scatter::{
    gaussian_bev_map, locate_points, rcs_scatter, scatter_radius, ScatterConfig, ScatterPoint,
    GAUSSIAN_DEN_FLOOR,
};
