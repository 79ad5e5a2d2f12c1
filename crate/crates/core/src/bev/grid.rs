use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

pub const GRID_MAGIC: &[u8; 4] = b"RBEV";
pub const GRID_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 4 + 5 * 8;

/// Metric extent and pixel layout of a BEV grid.
///
/// `x` runs along the width axis, `y` along the height axis. Intervals are
/// half-open: `[x_min, x_max) × [y_min, y_max)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BevSpec {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    resolution: f64,
    height: usize,
    width: usize,
}

/// Location of a metric point on the grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelCoord {
    /// Continuous coordinate along the width axis.
    pub u: f64,
    /// Continuous coordinate along the height axis.
    pub v: f64,
    pub px: usize,
    pub py: usize,
}

impl BevSpec {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, resolution: f64) -> Result<Self> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::config(format!("BEV resolution must be > 0, got {resolution}")));
        }
        if ![x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::config("BEV extent must be finite"));
        }
        let width = pixel_count(x_max - x_min, resolution, "x")?;
        let height = pixel_count(y_max - y_min, resolution, "y")?;
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
            resolution,
            height,
            width,
        })
    }

    /// Square grid of `size` pixels centred on the origin.
    pub fn centered(size: usize, resolution: f64) -> Result<Self> {
        let half = size as f64 * resolution / 2.0;
        Self::new(-half, half, -half, half, resolution)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }
    pub fn resolution(&self) -> f64 {
        self.resolution
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    pub fn to_pixel(&self, x: f64, y: f64) -> Result<PixelCoord> {
        if !self.contains(x, y) {
            return Err(Error::Contract(format!(
                "point ({x}, {y}) outside BEV region [{}, {}) x [{}, {})",
                self.x_min, self.x_max, self.y_min, self.y_max
            )));
        }
        let u = (x - self.x_min) / self.resolution;
        let v = (y - self.y_min) / self.resolution;
        // rounding can land exactly on W for x just below x_max
        let px = (u.floor() as usize).min(self.width - 1);
        let py = (v.floor() as usize).min(self.height - 1);
        Ok(PixelCoord { u, v, px, py })
    }

    fn header_values(&self) -> [f64; 5] {
        [self.x_min, self.x_max, self.y_min, self.y_max, self.resolution]
    }
}

fn pixel_count(extent: f64, resolution: f64, axis: &str) -> Result<usize> {
    let n = extent / resolution;
    let rounded = n.round();
    if rounded < 1.0 || (n - rounded).abs() > 1e-6 * rounded.max(1.0) {
        return Err(Error::config(format!(
            "BEV {axis} extent {extent} is not a positive whole number of {resolution} m pixels"
        )));
    }
    Ok(rounded as usize)
}

/// A feature map tied to the BEV layout it lives on.
#[derive(Clone, Debug, PartialEq)]
pub struct BevGrid {
    map: FeatureMap,
    spec: BevSpec,
}

impl BevGrid {
    pub fn new(map: FeatureMap, spec: BevSpec) -> Result<Self> {
        if (map.height(), map.width()) != (spec.height(), spec.width()) {
            return Err(Error::shape(format!(
                "feature map is {}x{} but BEV spec is {}x{}",
                map.height(),
                map.width(),
                spec.height(),
                spec.width()
            )));
        }
        if !map.is_finite() {
            return Err(Error::data("BEV grid holds non-finite values"));
        }
        Ok(Self { map, spec })
    }

    pub fn zeros(channels: usize, spec: BevSpec) -> Self {
        Self {
            map: FeatureMap::zeros(channels, spec.height(), spec.width()),
            spec,
        }
    }

    pub fn map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn into_map(self) -> FeatureMap {
        self.map
    }

    pub fn spec(&self) -> &BevSpec {
        &self.spec
    }

    pub fn channels(&self) -> usize {
        self.map.channels()
    }

    /// Binary export: magic, version, C, H, W as LE `u32`, the spec as five
    /// LE `f64`, then `C·H·W` LE `f32` values channel-major, row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (c, h, w) = self.map.dims();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * c * h * w);
        out.extend_from_slice(GRID_MAGIC);
        for v in [GRID_VERSION, c as u32, h as u32, w as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.spec.header_values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &v in self.map.as_slice() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != GRID_MAGIC {
            return Err(Error::format("not a BEV grid file (bad magic or short header)"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != GRID_VERSION {
            return Err(Error::format(format!(
                "unsupported BEV grid version {version} (expected {GRID_VERSION})"
            )));
        }
        let (c, h, w) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
        let spec = BevSpec::new(f64_at(20), f64_at(28), f64_at(36), f64_at(44), f64_at(52))?;
        let expected = HEADER_LEN + 4 * c * h * w;
        if bytes.len() != expected {
            return Err(Error::format(format!(
                "BEV grid {c}x{h}x{w} needs {expected} bytes, file has {}",
                bytes.len()
            )));
        }
        let data: Vec<f64> = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Self::new(FeatureMap::from_vec(c, h, w, data)?, spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the binary export, hex encoded.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> BevSpec {
        BevSpec::new(-51.2, 51.2, -51.2, 51.2, 0.8).unwrap()
    }

    #[test]
    fn default_extent_is_128_square() {
        let s = spec();
        assert_eq!((s.height(), s.width()), (128, 128));
        assert!(BevSpec::new(0.0, 10.0, 0.0, 10.0, 3.0).is_err());
        assert!(BevSpec::new(0.0, 10.0, 0.0, 10.0, 0.0).is_err());
    }

    #[test]
    fn to_pixel_rules() {
        let s = spec();
        let p = s.to_pixel(s.x_min(), s.y_min()).unwrap();
        assert_eq!((p.px, p.py), (0, 0));

        let p = s.to_pixel(s.x_min() + 1.5 * 0.8, 0.0).unwrap();
        assert_eq!(p.px, 1);
        assert!((p.u - 1.5).abs() < 1e-12);

        let just_below = f64::from_bits(s.x_max().to_bits() - 1);
        assert_eq!(s.to_pixel(just_below, 0.0).unwrap().px, 127);

        assert!(matches!(s.to_pixel(s.x_max(), 0.0), Err(Error::Contract(_))));
    }

    #[test]
    fn binary_round_trip_and_checksum() {
        let s = BevSpec::new(0.0, 2.0, 0.0, 1.5, 0.5).unwrap();
        let map = FeatureMap::from_vec(2, 3, 4, (0..24).map(|v| v as f64 * 0.25).collect()).unwrap();
        let g = BevGrid::new(map, s).unwrap();
        let bytes = g.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN + 24 * 4);
        let back = BevGrid::from_bytes(&bytes).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.checksum(), g.checksum());

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(BevGrid::from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(
            BevGrid::from_bytes(&bytes[..bytes.len() - 4]),
            Err(Error::Format(_))
        ));
    }
}
