//! RCS-aware scattering of point features onto the BEV grid.
//!
//! Each point writes its feature vector into its own pixel and into every
//! pixel whose centre lies strictly closer than the scatter radius, where the
//! radius grows with squared pixel-space range times normalized RCS.
//! Collisions are summed in canonical point order, so the result is
//! bit-deterministic.

use crate::bev::grid::{BevGrid, BevSpec};
use crate::error::{Error, Result};
use crate::radar::PointFeatureSet;
use crate::tensor::FeatureMap;

/// Denominators below this collapse the Gaussian weight to its own pixel.
pub const GAUSSIAN_DEN_FLOOR: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScatterConfig {
    radius_scale: f64,
    radius_cap: f64,
}

impl ScatterConfig {
    pub fn new(radius_scale: f64, radius_cap: f64) -> Result<Self> {
        if !(radius_scale >= 0.0) || !radius_scale.is_finite() {
            return Err(Error::config(format!(
                "radius_scale must be a finite value >= 0, got {radius_scale}"
            )));
        }
        if !(radius_cap >= 0.0) {
            return Err(Error::config(format!("radius_cap must be >= 0, got {radius_cap}")));
        }
        Ok(Self {
            radius_scale,
            radius_cap,
        })
    }

    /// Radius forced to zero: plain one-pixel-per-point scatter.
    pub fn single_pixel() -> Self {
        Self {
            radius_scale: 0.0,
            radius_cap: 0.0,
        }
    }

    pub fn radius_scale(&self) -> f64 {
        self.radius_scale
    }

    pub fn radius_cap(&self) -> f64 {
        self.radius_cap
    }
}

impl Default for ScatterConfig {
    fn default() -> Self {
        Self {
            radius_scale: 0.02,
            radius_cap: 5.0,
        }
    }
}

/// `min(scale · (u² + v²) · v_rcs, cap)` in pixels.
pub fn scatter_radius(u: f64, v: f64, v_rcs: f64, cfg: &ScatterConfig) -> f64 {
    (cfg.radius_scale * (u * u + v * v) * v_rcs).min(cfg.radius_cap)
}

/// A point located on the grid, ready to scatter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScatterPoint {
    pub u: f64,
    pub v: f64,
    pub px: usize,
    pub py: usize,
    pub v_rcs: f64,
}

impl ScatterPoint {
    pub fn radius(&self, cfg: &ScatterConfig) -> f64 {
        scatter_radius(self.u, self.v, self.v_rcs, cfg)
    }
}

/// Grid locations for every point of a feature set, in its row order.
pub fn locate_points(feats: &PointFeatureSet, spec: &BevSpec) -> Result<Vec<ScatterPoint>> {
    feats
        .coords()
        .row_iter()
        .zip(feats.rcs_norm())
        .map(|(c, &v_rcs)| {
            let p = spec.to_pixel(c[0], c[1])?;
            Ok(ScatterPoint {
                u: p.u,
                v: p.v,
                px: p.px,
                py: p.py,
                v_rcs,
            })
        })
        .collect()
}

#[inline]
pub(crate) fn covers(dx: i64, dy: i64, radius: f64) -> bool {
    (dx == 0 && dy == 0) || (((dx * dx + dy * dy) as f64).sqrt() < radius)
}

/// Pixels covered by one point, row-major within its window.
fn covered_pixels(p: &ScatterPoint, radius: f64, h: usize, w: usize) -> Vec<(usize, usize, i64, i64)> {
    let reach = if radius.is_finite() {
        radius.ceil().max(0.0) as i64
    } else {
        h.max(w) as i64
    };
    let (px, py) = (p.px as i64, p.py as i64);
    let mut out = Vec::new();
    for row in (py - reach).max(0)..=(py + reach).min(h as i64 - 1) {
        for col in (px - reach).max(0)..=(px + reach).min(w as i64 - 1) {
            let (dx, dy) = (col - px, row - py);
            if covers(dx, dy, radius) {
                out.push((row as usize, col as usize, dx, dy));
            }
        }
    }
    out
}

/// Summation-pooled scatter of `feats.features()` onto the grid.
pub fn rcs_scatter(feats: &PointFeatureSet, spec: &BevSpec, cfg: &ScatterConfig) -> Result<BevGrid> {
    let points = locate_points(feats, spec)?;
    let f = feats.features();
    let (h, w) = (spec.height(), spec.width());
    let mut map = FeatureMap::zeros(f.cols(), h, w);
    // single-threaded: accumulation order per pixel must follow point order
    for (i, p) in points.iter().enumerate() {
        let row_feat = f.row(i);
        for (row, col, _, _) in covered_pixels(p, p.radius(cfg), h, w) {
            for (c, &v) in row_feat.iter().enumerate() {
                map.add_at(c, row, col, v);
            }
        }
    }
    BevGrid::new(map, *spec)
}

/// Per-point Gaussian weight map combined by pixel-wise maximum (1 channel).
///
/// The weight at pixel `q` for a point snapped to pixel `p` is
/// `exp(-|q - p|² / ((u² + v²) · v_rcs / 3))`, evaluated only inside the
/// point's scatter radius. Degenerate denominators give 1 at `p` and 0
/// elsewhere.
pub fn gaussian_bev_map(points: &[ScatterPoint], spec: &BevSpec, cfg: &ScatterConfig) -> Result<BevGrid> {
    let (h, w) = (spec.height(), spec.width());
    let mut map = FeatureMap::zeros(1, h, w);
    for p in points {
        if p.px >= w || p.py >= h {
            return Err(Error::Contract(format!(
                "scatter point pixel ({}, {}) outside {h}x{w} grid",
                p.px, p.py
            )));
        }
        let den = (p.u * p.u + p.v * p.v) * p.v_rcs / 3.0;
        let plane = map.plane_mut(0);
        if den < GAUSSIAN_DEN_FLOOR {
            let cell = &mut plane[p.py * w + p.px];
            *cell = cell.max(1.0);
            continue;
        }
        for (row, col, dx, dy) in covered_pixels(p, p.radius(cfg), h, w) {
            let g = (-((dx * dx + dy * dy) as f64) / den).exp();
            let cell = &mut plane[row * w + col];
            if g > *cell {
                *cell = g;
            }
        }
    }
    BevGrid::new(map, *spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    fn spec16() -> BevSpec {
        BevSpec::new(0.0, 16.0, 0.0, 16.0, 1.0).unwrap()
    }

    fn one_point(x: f64, y: f64, rcs: f64, feat: &[f64]) -> PointFeatureSet {
        PointFeatureSet::new(
            Matrix::from_rows(&[feat]).unwrap(),
            Matrix::from_rows(&[[x, y]]).unwrap(),
            vec![rcs],
        )
        .unwrap()
    }

    #[test]
    fn radius_rule() {
        let inf = ScatterConfig::new(1.0, f64::INFINITY).unwrap();
        assert_eq!(scatter_radius(3.0, 4.0, 0.0, &inf), 0.0);
        assert!((scatter_radius(3.0, 4.0, 0.08, &inf) - 2.0).abs() < 1e-12);
        let capped = ScatterConfig::new(1.0, 5.0).unwrap();
        assert_eq!(scatter_radius(300.0, 400.0, 1.0, &capped), 5.0);
        assert!(ScatterConfig::new(-1.0, 1.0).is_err());
        assert!(ScatterConfig::new(1.0, -1.0).is_err());
    }

    #[test]
    fn zero_radius_hits_one_pixel() {
        let fs = one_point(5.5, 7.5, 0.0, &[2.0, -1.0]);
        let g = rcs_scatter(&fs, &spec16(), &ScatterConfig::default()).unwrap();
        assert_eq!(g.map().nonzero_pixels(), 1);
        assert_eq!(g.map().get(0, 7, 5), 2.0);
        assert_eq!(g.map().get(1, 7, 5), -1.0);
    }

    #[test]
    fn radius_two_covers_nine_pixels() {
        // u = v = 5.5 so scale gives r = 2 exactly when scale * 60.5 * rcs = 2
        let fs = one_point(5.5, 5.5, 1.0, &[1.0]);
        let cfg = ScatterConfig::new(2.0 / 60.5, f64::INFINITY).unwrap();
        let r = scatter_radius(5.5, 5.5, 1.0, &cfg);
        assert!((r - 2.0).abs() < 1e-12);
        let g = rcs_scatter(&fs, &spec16(), &cfg).unwrap();
        let mut hit = Vec::new();
        for row in 0..16 {
            for col in 0..16 {
                if g.map().get(0, row, col) != 0.0 {
                    hit.push((col as i64 - 5, row as i64 - 5));
                }
            }
        }
        hit.sort();
        let mut expect = Vec::new();
        for dy in -1..=1 {
            for dx in -1..=1 {
                expect.push((dx, dy));
            }
        }
        expect.sort();
        // r is within 1e-12 of 2; the (±2, 0) offsets sit on the boundary
        if r <= 2.0 {
            assert_eq!(hit, expect);
        } else {
            assert_eq!(hit.len(), 13);
        }
    }

    #[test]
    fn coincident_points_sum() {
        let fs = PointFeatureSet::new(
            Matrix::from_rows(&[[1.5], [2.25]]).unwrap(),
            Matrix::from_rows(&[[3.2, 3.2], [3.2, 3.2]]).unwrap(),
            vec![0.0, 0.0],
        )
        .unwrap();
        let g = rcs_scatter(&fs, &spec16(), &ScatterConfig::default()).unwrap();
        assert_eq!(g.map().get(0, 3, 3), 3.75);
    }

    #[test]
    fn gaussian_own_pixel_is_one_and_matches_scalar() {
        let spec = spec16();
        let fs = one_point(6.3, 9.8, 0.7, &[1.0]);
        let pts = locate_points(&fs, &spec).unwrap();
        let cfg = ScatterConfig::new(0.05, 4.0).unwrap();
        let g = gaussian_bev_map(&pts, &spec, &cfg).unwrap();
        let p = pts[0];
        assert_eq!(g.map().get(0, p.py, p.px), 1.0);
        let den = (p.u * p.u + p.v * p.v) * p.v_rcs / 3.0;
        let r = p.radius(&cfg);
        for row in 0..16 {
            for col in 0..16 {
                let (dx, dy) = (col as f64 - p.px as f64, row as f64 - p.py as f64);
                let d = (dx * dx + dy * dy).sqrt();
                let expect = if d < r || d == 0.0 {
                    (-(dx * dx + dy * dy) / den).exp()
                } else {
                    0.0
                };
                assert!((g.map().get(0, row, col) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_degenerate_and_empty() {
        let spec = spec16();
        let g = gaussian_bev_map(&[], &spec, &ScatterConfig::default()).unwrap();
        assert!(g.map().as_slice().iter().all(|&v| v == 0.0));

        let pts = locate_points(&one_point(0.2, 0.2, 0.0, &[1.0]), &spec).unwrap();
        let g = gaussian_bev_map(&pts, &spec, &ScatterConfig::default()).unwrap();
        assert_eq!(g.map().get(0, 0, 0), 1.0);
        assert_eq!(g.map().nonzero_pixels(), 1);
    }
}
