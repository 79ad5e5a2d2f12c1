//! Radar point-cloud ingestion: canonical ordering, multi-sweep
//! accumulation, region filtering, RCS normalization and per-point features.

mod io;
mod synth;

pub use io::{
    load_point_cloud, read_binary, read_csv, write_binary, write_csv, CSV_COLUMNS,
    BINARY_POINT_BYTES,
};
pub use synth::{synth_scene, ClusterConfig, SceneConfig};

use std::cmp::Ordering;
use std::f64::consts::PI;

use crate::bev::BevSpec;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Number of per-point feature channels produced by [`assemble_features`].
pub const FEATURE_CHANNELS: usize = 7;

pub const DEFAULT_RCS_LO: f64 = -20.0;
pub const DEFAULT_RCS_HI: f64 = 30.0;

/// One radar return in the ego frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Radar cross-section in dBsm.
    pub rcs: f64,
    /// Ego-motion-compensated velocity, m/s.
    pub vx: f64,
    pub vy: f64,
    /// Seconds relative to the key frame, never positive.
    pub sweep_offset: f64,
}

impl RadarPoint {
    pub fn new(x: f64, y: f64, z: f64, rcs: f64, vx: f64, vy: f64, sweep_offset: f64) -> Self {
        Self {
            x,
            y,
            z,
            rcs,
            vx,
            vy,
            sweep_offset,
        }
    }

    fn fields(&self) -> [f64; 7] {
        [
            self.sweep_offset,
            self.x,
            self.y,
            self.z,
            self.rcs,
            self.vx,
            self.vy,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !self.fields().iter().all(|v| v.is_finite()) {
            return Err(Error::data(format!("non-finite radar point field in {self:?}")));
        }
        if self.sweep_offset > 0.0 {
            return Err(Error::data(format!(
                "sweep_offset must be <= 0, got {}",
                self.sweep_offset
            )));
        }
        Ok(())
    }

    /// Canonical total order: `(sweep_offset, x, y, z)` then the remaining fields.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.fields()
            .iter()
            .zip(other.fields().iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

/// Radar returns for one frame, always held in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<RadarPoint>,
    frame_id: String,
    compensated: bool,
}

impl PointCloud {
    pub fn new(mut points: Vec<RadarPoint>, frame_id: impl Into<String>) -> Result<Self> {
        for p in &points {
            p.validate()?;
        }
        points.sort_by(RadarPoint::canonical_cmp);
        Ok(Self {
            points,
            frame_id: frame_id.into(),
            compensated: true,
        })
    }

    pub fn empty(frame_id: impl Into<String>) -> Self {
        Self {
            points: Vec::new(),
            frame_id: frame_id.into(),
            compensated: true,
        }
    }

    pub fn with_compensated(mut self, compensated: bool) -> Self {
        self.compensated = compensated;
        self
    }

    pub fn points(&self) -> &[RadarPoint] {
        &self.points
    }

    pub fn frame_id(&self) -> &str {
        &self.frame_id
    }

    /// Whether Doppler velocities are already ego-motion compensated.
    pub fn compensated(&self) -> bool {
        self.compensated
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// 2D rigid transform taking a past sweep's frame into the key frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepTransform {
    angle: f64,
    tx: f64,
    ty: f64,
}

impl SweepTransform {
    /// Rotation (radians, wrapped into `(-π, π]`) followed by translation (m).
    pub fn new(angle: f64, tx: f64, ty: f64) -> Result<Self> {
        if !(angle.is_finite() && tx.is_finite() && ty.is_finite()) {
            return Err(Error::data("sweep transform must be finite"));
        }
        let mut a = angle.rem_euclid(2.0 * PI);
        if a > PI {
            a -= 2.0 * PI;
        }
        Ok(Self {
            angle: a,
            tx,
            ty,
        })
    }

    pub fn identity() -> Self {
        Self {
            angle: 0.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn translation(&self) -> (f64, f64) {
        (self.tx, self.ty)
    }

    fn rotate(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        (c * x - s * y, s * x + c * y)
    }

    pub fn apply(&self, p: &RadarPoint) -> RadarPoint {
        let (x, y) = self.rotate(p.x, p.y);
        let (vx, vy) = self.rotate(p.vx, p.vy);
        RadarPoint {
            x: x + self.tx,
            y: y + self.ty,
            vx,
            vy,
            ..*p
        }
    }
}

/// Map every sweep into the key frame and merge into one canonical cloud.
pub fn accumulate_sweeps(sweeps: &[(PointCloud, SweepTransform)]) -> Result<PointCloud> {
    let frame_id = sweeps
        .first()
        .map_or_else(|| "accumulated".to_string(), |(c, _)| c.frame_id.clone());
    let compensated = sweeps.iter().all(|(c, _)| c.compensated);
    let points = sweeps
        .iter()
        .flat_map(|(cloud, tf)| cloud.points.iter().map(move |p| tf.apply(p)))
        .collect();
    Ok(PointCloud::new(points, frame_id)?.with_compensated(compensated))
}

/// Keep exactly the points inside the half-open BEV region.
pub fn filter_roi(cloud: &PointCloud, spec: &BevSpec) -> PointCloud {
    PointCloud {
        points: cloud
            .points
            .iter()
            .copied()
            .filter(|p| spec.contains(p.x, p.y))
            .collect(),
        frame_id: cloud.frame_id.clone(),
        compensated: cloud.compensated,
    }
}

/// dBsm window mapped onto `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RcsBounds {
    lo: f64,
    hi: f64,
}

impl RcsBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::config(format!(
                "RCS bounds need lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn normalize(&self, rcs_dbsm: f64) -> f64 {
        ((rcs_dbsm - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }
}

impl Default for RcsBounds {
    fn default() -> Self {
        Self {
            lo: DEFAULT_RCS_LO,
            hi: DEFAULT_RCS_HI,
        }
    }
}

pub fn normalize_rcs(rcs_dbsm: f64, lo: f64, hi: f64) -> Result<f64> {
    Ok(RcsBounds::new(lo, hi)?.normalize(rcs_dbsm))
}

/// Per-point features plus the coordinates and RCS needed for scattering.
#[derive(Clone, Debug, PartialEq)]
pub struct PointFeatureSet {
    features: Matrix,
    coords: Matrix,
    rcs_norm: Vec<f64>,
}

impl PointFeatureSet {
    pub fn new(features: Matrix, coords: Matrix, rcs_norm: Vec<f64>) -> Result<Self> {
        let n = features.rows();
        if coords.rows() != n || rcs_norm.len() != n {
            return Err(Error::shape(format!(
                "feature set rows disagree: features {n}, coords {}, rcs {}",
                coords.rows(),
                rcs_norm.len()
            )));
        }
        if coords.cols() != 2 {
            return Err(Error::shape("coords must be N x 2"));
        }
        if rcs_norm.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::data("normalized RCS outside [0, 1]"));
        }
        Ok(Self {
            features,
            coords,
            rcs_norm,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn coords(&self) -> &Matrix {
        &self.coords
    }

    pub fn rcs_norm(&self) -> &[f64] {
        &self.rcs_norm
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    /// Same points carrying a different feature matrix.
    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        Self::new(features, self.coords.clone(), self.rcs_norm.clone())
    }

    pub fn permute(&self, perm: &[usize]) -> Self {
        Self {
            features: self.features.permute_rows(perm),
            coords: self.coords.permute_rows(perm),
            rcs_norm: perm.iter().map(|&i| self.rcs_norm[i]).collect(),
        }
    }
}

/// Rows `[x_norm, y_norm, z, rcs_norm, vx, vy, sweep_offset]`.
pub fn assemble_features(
    cloud: &PointCloud,
    spec: &BevSpec,
    bounds: &RcsBounds,
) -> Result<PointFeatureSet> {
    let n = cloud.len();
    let mut features = Matrix::zeros(n, FEATURE_CHANNELS);
    let mut coords = Matrix::zeros(n, 2);
    let mut rcs_norm = Vec::with_capacity(n);
    let x_span = spec.x_max() - spec.x_min();
    let y_span = spec.y_max() - spec.y_min();
    for (i, p) in cloud.points.iter().enumerate() {
        if !spec.contains(p.x, p.y) {
            return Err(Error::Contract(format!(
                "point {i} at ({}, {}) lies outside the BEV region; filter first",
                p.x, p.y
            )));
        }
        let r = bounds.normalize(p.rcs);
        features.row_mut(i).copy_from_slice(&[
            (p.x - spec.x_min()) / x_span,
            (p.y - spec.y_min()) / y_span,
            p.z,
            r,
            p.vx,
            p.vy,
            p.sweep_offset,
        ]);
        coords.row_mut(i).copy_from_slice(&[p.x, p.y]);
        rcs_norm.push(r);
    }
    PointFeatureSet::new(features, coords, rcs_norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(x: f64, y: f64) -> RadarPoint {
        RadarPoint::new(x, y, 0.5, 5.0, 1.0, -2.0, 0.0)
    }

    #[test]
    fn canonical_order_is_applied() {
        let c = PointCloud::new(
            vec![
                RadarPoint::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
                RadarPoint::new(5.0, 0.0, 0.0, 0.0, 0.0, 0.0, -0.1),
                RadarPoint::new(0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0),
            ],
            "f",
        )
        .unwrap();
        let xs: Vec<f64> = c.points().iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![5.0, 0.0, 1.0]);
    }

    #[test]
    fn invalid_points_rejected() {
        assert!(matches!(
            PointCloud::new(vec![RadarPoint::new(f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)], "f"),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            PointCloud::new(vec![RadarPoint::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5)], "f"),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn accumulate_identity_rotation_and_count() {
        let c = PointCloud::new(vec![pt(1.0, 2.0), pt(-3.0, 0.5)], "k").unwrap();
        let out = accumulate_sweeps(&[(c.clone(), SweepTransform::identity())]).unwrap();
        assert_eq!(out, c);

        let one = PointCloud::new(vec![RadarPoint::new(1.0, 0.0, 0.3, 1.0, 2.0, 0.0, -0.05)], "k")
            .unwrap();
        let out =
            accumulate_sweeps(&[(one, SweepTransform::new(PI / 2.0, 0.0, 0.0).unwrap())]).unwrap();
        let p = out.points()[0];
        assert!(p.x.abs() < 1e-12 && (p.y - 1.0).abs() < 1e-12);
        assert!(p.vx.abs() < 1e-12 && (p.vy - 2.0).abs() < 1e-12);
        assert_eq!((p.z, p.rcs, p.sweep_offset), (0.3, 1.0, -0.05));

        let five = |dx: f64| {
            PointCloud::new((0..5).map(|i| pt(i as f64 + dx, 0.0)).collect(), "s").unwrap()
        };
        let out = accumulate_sweeps(&[
            (five(0.0), SweepTransform::identity()),
            (five(0.5), SweepTransform::new(0.1, 1.0, 2.0).unwrap()),
        ])
        .unwrap();
        assert_eq!(out.len(), 10);
    }

    #[test]
    fn sweep_angle_wraps() {
        let t = SweepTransform::new(3.0 * PI, 0.0, 0.0).unwrap();
        assert!((t.angle() - PI).abs() < 1e-12);
        let t = SweepTransform::new(-PI, 0.0, 0.0).unwrap();
        assert!((t.angle() - PI).abs() < 1e-12);
    }

    #[test]
    fn roi_half_open() {
        let spec = BevSpec::new(0.0, 10.0, 0.0, 10.0, 1.0).unwrap();
        let c = PointCloud::new(vec![pt(0.0, 5.0), pt(10.0, 5.0), pt(5.0, 9.99)], "f").unwrap();
        let f = filter_roi(&c, &spec);
        assert_eq!(f.len(), 2);
        assert!(f.points().iter().all(|p| p.x != 10.0));
        let inside = PointCloud::new(vec![pt(1.0, 1.0), pt(2.0, 3.0)], "f").unwrap();
        assert_eq!(filter_roi(&inside, &spec), inside);
    }

    #[test]
    fn rcs_normalization() {
        assert_eq!(normalize_rcs(-20.0, -20.0, 30.0).unwrap(), 0.0);
        assert_eq!(normalize_rcs(30.0, -20.0, 30.0).unwrap(), 1.0);
        assert_eq!(normalize_rcs(5.0, -20.0, 30.0).unwrap(), 0.5);
        assert_eq!(normalize_rcs(-100.0, -20.0, 30.0).unwrap(), 0.0);
        assert!(matches!(normalize_rcs(0.0, 3.0, 3.0), Err(Error::Config(_))));
    }

    #[test]
    fn assemble_shapes_and_values() {
        let spec = BevSpec::new(-10.0, 10.0, -5.0, 5.0, 0.5).unwrap();
        let bounds = RcsBounds::default();
        let c = PointCloud::new(
            vec![
                RadarPoint::new(-10.0, -5.0, 0.0, 0.0, 0.0, 0.0, 0.0),
                RadarPoint::new(5.0, 2.5, 1.2, 10.0, 3.0, -1.0, -0.25),
            ],
            "f",
        )
        .unwrap();
        let fs = assemble_features(&c, &spec, &bounds).unwrap();
        assert_eq!(fs.features().shape(), (2, FEATURE_CHANNELS));
        // canonical order puts sweep_offset -0.25 first
        assert_eq!(fs.features().row(1)[..2], [0.0, 0.0]);
        assert_eq!(
            fs.features().row(0),
            &[0.75, 0.75, 1.2, 0.6, 3.0, -1.0, -0.25]
        );
        assert_eq!(fs.coords().row(0), &[5.0, 2.5]);
        assert_eq!(fs.rcs_norm()[0], 0.6);

        let outside = PointCloud::new(vec![pt(20.0, 0.0)], "f").unwrap();
        assert!(matches!(
            assemble_features(&outside, &spec, &bounds),
            Err(Error::Contract(_))
        ));
    }

    proptest! {
        #[test]
        fn rotation_preserves_range_and_count(
            pts in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 0..40),
            angle in -10.0f64..10.0,
        ) {
            let c = PointCloud::new(pts.iter().map(|&(x, y)| pt(x, y)).collect(), "f").unwrap();
            let out = accumulate_sweeps(&[(c.clone(), SweepTransform::new(angle, 0.0, 0.0).unwrap())]).unwrap();
            prop_assert_eq!(out.len(), c.len());
            let mut a: Vec<f64> = c.points().iter().map(|p| p.x.hypot(p.y)).collect();
            let mut b: Vec<f64> = out.points().iter().map(|p| p.x.hypot(p.y)).collect();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }

        #[test]
        fn normalize_rcs_monotone_in_unit_range(a in -100.0f64..100.0, b in -100.0f64..100.0) {
            let bounds = RcsBounds::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (nl, nh) = (bounds.normalize(lo), bounds.normalize(hi));
            prop_assert!(nl <= nh);
            prop_assert!((0.0..=1.0).contains(&nl) && (0.0..=1.0).contains(&nh));
        }

        #[test]
        fn filter_roi_idempotent(
            pts in proptest::collection::vec((-15.0f64..15.0, -15.0f64..15.0), 0..40),
        ) {
            let spec = BevSpec::new(-10.0, 10.0, -10.0, 10.0, 0.5).unwrap();
            let c = PointCloud::new(pts.iter().map(|&(x, y)| pt(x, y)).collect(), "f").unwrap();
            let once = filter_roi(&c, &spec);
            prop_assert_eq!(filter_roi(&once, &spec), once);
        }
    }
}
