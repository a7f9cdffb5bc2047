//! Pinhole camera model, rigid poses, and the depth transforms used for
//! conditioning.
//!
//! Frame conventions:
//!
//! * camera frame: `x` right, `y` down, `z` forward (optical axis);
//! * world frame: `x` forward along the terrain lane, `y` left, `z` up;
//! * pixel `(i, j)` covers `[i, i + 1) x [j, j + 1)`, so its center sits at
//!   `(i + 0.5, j + 0.5)` and the principal point of a `w x h` image
//!   defaults to `(w / 2, h / 2)`.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("horizontal field of view {0} deg is outside (0, 180)")]
    InvalidFov(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not orthonormal with det +1 (max deviation {0:e})")]
    InvalidRotation(f64),
    #[error("invalid clip range near={near} far={far}")]
    InvalidClipRange { near: f64, far: f64 },
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, CameraError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Square-pixel intrinsics from a horizontal field of view in degrees.
    pub fn from_fov(horizontal_fov_deg: f64, width: u32, height: u32) -> Result<Self, CameraError> {
        if !(horizontal_fov_deg > 0.0 && horizontal_fov_deg < 180.0) {
            return Err(CameraError::InvalidFov(horizontal_fov_deg));
        }
        let fx = (width as f64 / 2.0) / (horizontal_fov_deg.to_radians() / 2.0).tan();
        Self::new(fx, fx, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::InvalidIntrinsics("zero resolution".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// `[fx, fy, cx, cy, width, height]`, the layout used in raster headers.
    pub fn to_array(&self) -> [f64; 6] {
        [self.fx, self.fy, self.cx, self.cy, self.width as f64, self.height as f64]
    }

    pub fn from_array(a: [f64; 6]) -> Result<Self, CameraError> {
        Self::new(a[0], a[1], a[2], a[3], a[4] as u32, a[5] as u32)
    }

    /// Camera-frame point at depth `z` behind pixel coordinate `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z)
    }

    /// Direction (with unit forward component) through pixel coordinate `(u, v)`.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        self.unproject(u, v, 1.0)
    }

    pub fn project(&self, p: &Vector3<f64>) -> Projection {
        if p.z <= 0.0 {
            return Projection { u: 0.0, v: 0.0, z: p.z, in_front: false };
        }
        Projection {
            u: self.fx * p.x / p.z + self.cx,
            v: self.fy * p.y / p.z + self.cy,
            z: p.z,
            in_front: true,
        }
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    /// Center of pixel `(i, j)`.
    #[inline]
    pub fn pixel_center(i: u32, j: u32) -> (f64, f64) {
        (i as f64 + 0.5, j as f64 + 0.5)
    }
}

/// Result of projecting a camera-frame point. Points on or behind the image
/// plane come back with `in_front == false` and meaningless coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub z: f64,
    pub in_front: bool,
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Rotation taking camera axes to world axes for a level camera looking
/// down the world `+x` axis.
fn level_camera_basis() -> Matrix3<f64> {
    // columns: camera x (right) = world -y, camera y (down) = world -z,
    // camera z (forward) = world +x
    Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0)
}

const ORTHONORMAL_TOL: f64 = 1e-9;

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, CameraError> {
        let dev = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        let ok = (det - 1.0).abs() <= ORTHONORMAL_TOL && dev <= ORTHONORMAL_TOL;
        if !ok {
            return Err(CameraError::InvalidRotation(dev.max((det - 1.0).abs())));
        }
        Ok(Self { rotation, translation })
    }

    /// Camera at `position` with heading `yaw` (about world up, 0 = looking
    /// along world +x), `pitch` (positive tilts the view down) and `roll`
    /// (about the viewing axis), all in radians.
    pub fn from_euler(position: Vector3<f64>, yaw: f64, pitch: f64, roll: f64) -> Self {
        let body = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw)
            * Rotation3::from_axis_angle(&Vector3::y_axis(), pitch)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), roll);
        let rotation = body.matrix() * level_camera_basis();
        Self { rotation, translation: position }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> Vector3<f64> {
        self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Camera frame -> world frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// World frame -> camera frame.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse_transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * v
    }

    /// Row-major rotation followed by the translation: 12 values.
    pub fn to_array(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
            t.x, t.y, t.z,
        ]
    }

    pub fn from_array(a: [f64; 12]) -> Result<Self, CameraError> {
        let r = Matrix3::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8]);
        Self::new(r, Vector3::new(a[9], a[10], a[11]))
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let a = <[f64; 12]>::deserialize(d)?;
        Pose::from_array(a).map_err(serde::de::Error::custom)
    }
}

/// Per-pixel z-depth (distance along the camera forward axis) in meters.
///
/// Pixels where nothing was hit hold `far`; [`DepthMap::is_far`] tells them
/// apart from surfaces.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub near: f32,
    pub far: f32,
    pub z: Vec<f32>,
}

impl DepthMap {
    pub fn filled(width: u32, height: u32, near: f32, far: f32, value: f32) -> Self {
        Self { width, height, near, far, z: vec![value; width as usize * height as usize] }
    }

    #[inline]
    pub fn index(&self, i: u32, j: u32) -> usize {
        j as usize * self.width as usize + i as usize
    }

    #[inline]
    pub fn get(&self, i: u32, j: u32) -> f32 {
        self.z[self.index(i, j)]
    }

    /// True when the stored value is the far-clip sentinel.
    #[inline]
    pub fn is_far(&self, idx: usize) -> bool {
        self.z[idx] >= self.far
    }

    pub fn same_shape(&self, k: &CameraIntrinsics) -> bool {
        self.width == k.width && self.height == k.height && self.z.len() == k.pixel_count()
    }
}

/// Per-image normalized inverse depth in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityImage {
    pub width: u32,
    pub height: u32,
    pub d: Vec<f32>,
}

/// Inverts the z-buffer and rescales it so the nearest pixel maps to 1 and
/// the farthest to 0. A constant-depth image maps to all zeros.
pub fn normalize_disparity(depth: &DepthMap) -> DisparityImage {
    let inv: Vec<f64> = depth.z.iter().map(|&z| 1.0 / z as f64).collect();
    let (lo, hi) = inv
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let d = if hi > lo {
        let span = hi - lo;
        inv.iter().map(|&x| ((x - lo) / span) as f32).collect()
    } else {
        vec![0.0; inv.len()]
    };
    DisparityImage { width: depth.width, height: depth.height, d }
}

/// Clamps every depth into `[near, far]`. The returned map carries the new
/// clip range, so pixels pushed to `far` read as far-field afterwards.
pub fn clip_depth(depth: &DepthMap, near: f32, far: f32) -> Result<DepthMap, CameraError> {
    if !(near > 0.0 && near < far) {
        return Err(CameraError::InvalidClipRange { near: near as f64, far: far as f64 });
    }
    Ok(DepthMap {
        width: depth.width,
        height: depth.height,
        near,
        far,
        z: depth.z.iter().map(|&z| z.clamp(near, far)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn fov_90_gives_half_width_focal() {
        let k = CameraIntrinsics::from_fov(90.0, 200, 100).unwrap();
        assert_abs_diff_eq!(k.fx, 100.0, epsilon = 1e-12);
        assert_eq!(k.fy, k.fx);
        assert_eq!((k.cx, k.cy), (100.0, 50.0));
    }

    #[test]
    fn fov_120_at_320() {
        let k = CameraIntrinsics::from_fov(120.0, 320, 180).unwrap();
        // 160 / tan(60 deg) = 160 / sqrt(3)
        assert_abs_diff_eq!(k.fx, 160.0 / 3f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(k.fx, 92.376, epsilon = 1e-3);
    }

    #[test]
    fn fov_boundaries() {
        let k = CameraIntrinsics::from_fov(179.9, 200, 100).unwrap();
        // 100 / tan(89.95 deg) = 100 * tan(0.05 deg)
        assert_abs_diff_eq!(k.fx, 0.0873, epsilon = 1e-4);
        assert_eq!(CameraIntrinsics::from_fov(180.0, 200, 100), Err(CameraError::InvalidFov(180.0)));
        assert!(CameraIntrinsics::from_fov(0.0, 200, 100).is_err());
        assert!(CameraIntrinsics::from_fov(-10.0, 200, 100).is_err());
    }

    #[test]
    fn principal_point_unprojects_onto_axis() {
        let k = CameraIntrinsics::from_fov(120.0, 320, 180).unwrap();
        assert_eq!(k.unproject(k.cx, k.cy, 2.0), Vector3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn behind_camera_is_flagged() {
        let k = CameraIntrinsics::from_fov(120.0, 320, 180).unwrap();
        assert!(!k.project(&Vector3::new(0.0, 0.0, -1.0)).in_front);
        assert!(!k.project(&Vector3::new(0.0, 0.0, 0.0)).in_front);
    }

    #[test]
    fn level_camera_looks_along_world_x() {
        let p = Pose::from_euler(Vector3::zeros(), 0.0, 0.0, 0.0);
        let fwd = p.transform_vector(&Vector3::z());
        assert_abs_diff_eq!(fwd, Vector3::x(), epsilon = 1e-15);
        let right = p.transform_vector(&Vector3::x());
        assert_abs_diff_eq!(right, -Vector3::y(), epsilon = 1e-15);
        let down = Pose::from_euler(Vector3::zeros(), 0.0, std::f64::consts::FRAC_PI_2, 0.0);
        assert_abs_diff_eq!(down.transform_vector(&Vector3::z()), -Vector3::z(), epsilon = 1e-15);
    }

    #[test]
    fn pose_rejects_non_rotation() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Pose::new(m, Vector3::zeros()).is_err());
        assert!(Pose::new(Matrix3::identity() * 1.01, Vector3::zeros()).is_err());
    }

    #[test]
    fn disparity_two_depths() {
        let d = DepthMap { width: 2, height: 1, near: 0.1, far: 10.0, z: vec![2.0, 4.0] };
        assert_eq!(normalize_disparity(&d).d, vec![1.0, 0.0]);
    }

    #[test]
    fn disparity_three_depths() {
        let d = DepthMap { width: 3, height: 1, near: 0.1, far: 10.0, z: vec![1.0, 2.0, 5.0] };
        let n = normalize_disparity(&d).d;
        // (1/z - 0.2) / 0.8
        assert_abs_diff_eq!(n[0], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(n[1], 0.375, epsilon = 1e-7);
        assert_abs_diff_eq!(n[2], 0.0, epsilon = 1e-7);
    }

    #[test]
    fn disparity_constant_is_zero() {
        let d = DepthMap::filled(4, 3, 0.1, 10.0, 3.0);
        assert!(normalize_disparity(&d).d.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn clip_regimes() {
        let d = DepthMap { width: 3, height: 1, near: 0.01, far: 100.0, z: vec![7.0, 0.1, 1.5] };
        let far_clip = clip_depth(&d, 0.01, 5.0).unwrap();
        assert_eq!(far_clip.z[0], 5.0);
        let near_clip = clip_depth(&d, 0.28, 2.0).unwrap();
        assert_eq!(near_clip.z, vec![2.0, 0.28, 1.5]);
        assert!(clip_depth(&d, 2.0, 2.0).is_err());
        assert!(clip_depth(&d, 0.0, 2.0).is_err());
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64, -3.2..3.2f64, -1.5..1.5f64, -3.2..3.2f64)
            .prop_map(|(x, y, z, a, b, c)| Pose::from_euler(Vector3::new(x, y, z), a, b, c))
    }

    proptest! {
        #[test]
        fn project_unproject_round_trip(u in 0.0..320.0f64, v in 0.0..180.0f64, z in 0.05..50.0f64) {
            let k = CameraIntrinsics::from_fov(120.0, 320, 180).unwrap();
            let p = k.project(&k.unproject(u, v, z));
            prop_assert!(p.in_front);
            prop_assert!((p.u - u).abs() <= 1e-9 && (p.v - v).abs() <= 1e-9);
            prop_assert!((p.z - z).abs() <= 1e-12 * z);
        }

        #[test]
        fn compose_with_inverse_is_identity(p in arb_pose()) {
            let id = p.compose(&p.inverse());
            prop_assert!((id.rotation() - Matrix3::identity()).abs().max() <= 1e-9);
            prop_assert!(id.translation().abs().max() <= 1e-9);
        }

        #[test]
        fn compose_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!((l.rotation() - r.rotation()).abs().max() <= 1e-9);
            prop_assert!((l.translation() - r.translation()).abs().max() <= 1e-9);
        }

        #[test]
        fn clip_is_idempotent(zs in prop::collection::vec(0.01f32..20.0, 1..64)) {
            let n = zs.len() as u32;
            let d = DepthMap { width: n, height: 1, near: 0.01, far: 20.0, z: zs };
            let once = clip_depth(&d, 0.28, 5.0).unwrap();
            prop_assert_eq!(clip_depth(&once, 0.28, 5.0).unwrap(), once);
        }

        #[test]
        fn pose_array_round_trip(p in arb_pose()) {
            prop_assert_eq!(Pose::from_array(p.to_array()).unwrap(), p);
        }
    }
}
