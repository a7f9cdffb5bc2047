//! Ground-truth optical flow from known depth and a camera pose pair.
//!
//! Pixels whose depth is the far-clip sentinel are treated as points at
//! infinity: only the rotation between the two views moves them.

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::camera::{CameraIntrinsics, DepthMap, Pose};

/// Default depth-consistency tolerance in meters.
pub const DEFAULT_VISIBILITY_TOL: f64 = 0.01;

/// Bilinear weights at or below this are ignored when deciding which
/// source pixels support a sample.
const SUPPORT_EPS: f64 = 1e-9;

/// Camera baselines below this (meters) count as pure rotation.
const PURE_ROTATION_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("resolution mismatch: {what} is {got:?}, expected {expected:?}")]
    ResolutionMismatch { what: &'static str, got: (u32, u32), expected: (u32, u32) },
}

pub(crate) fn check_shape(what: &'static str, d: &DepthMap, k: &CameraIntrinsics) -> Result<(), FlowError> {
    if d.same_shape(k) {
        Ok(())
    } else {
        Err(FlowError::ResolutionMismatch { what, got: (d.width, d.height), expected: (k.width, k.height) })
    }
}

/// Forward flow over source pixels. Invalid pixels carry `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: u32,
    pub height: u32,
    pub displacement: Vec<[f64; 2]>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Landing position of pixel `idx` in the destination image.
    pub fn target(&self, idx: usize) -> (f64, f64) {
        let i = (idx % self.width as usize) as u32;
        let j = (idx / self.width as usize) as u32;
        let (u, v) = CameraIntrinsics::pixel_center(i, j);
        let [du, dv] = self.displacement[idx];
        (u + du, v + dv)
    }
}

/// Where a source pixel lands in the destination view.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Reprojection {
    pub u: f64,
    pub v: f64,
    /// Destination z-depth, `None` for points at infinity.
    pub z: Option<f64>,
}

/// Maps source pixel `idx` into the destination camera. `None` when the
/// point ends up on or behind the destination image plane.
#[inline]
pub(crate) fn reproject_pixel(
    depth_src: &DepthMap,
    idx: usize,
    src_to_dst: &Pose,
    k: &CameraIntrinsics,
) -> Option<Reprojection> {
    let i = (idx % depth_src.width as usize) as u32;
    let j = (idx / depth_src.width as usize) as u32;
    let (u, v) = CameraIntrinsics::pixel_center(i, j);
    if depth_src.is_far(idx) {
        let dir = src_to_dst.transform_vector(&k.ray_direction(u, v));
        let p = k.project(&dir);
        return p.in_front.then_some(Reprojection { u: p.u, v: p.v, z: None });
    }
    let x = src_to_dst.transform_point(&k.unproject(u, v, depth_src.z[idx] as f64));
    let p = k.project(&x);
    p.in_front.then_some(Reprojection { u: p.u, v: p.v, z: Some(p.z) })
}

/// Relative pose taking source-camera coordinates to destination-camera
/// coordinates.
pub fn relative_pose(pose_src: &Pose, pose_dst: &Pose) -> Pose {
    pose_dst.inverse().compose(pose_src)
}

/// Dense forward flow `u' - u` from the source view to the destination view.
/// Pixels landing behind the destination camera or outside its frame are
/// invalid.
pub fn compute_flow(
    depth_src: &DepthMap,
    pose_src: &Pose,
    pose_dst: &Pose,
    k: &CameraIntrinsics,
) -> Result<FlowField, FlowError> {
    check_shape("source depth", depth_src, k)?;
    let rel = relative_pose(pose_src, pose_dst);
    let w = k.width as usize;
    let (displacement, valid): (Vec<[f64; 2]>, Vec<bool>) = (0..k.pixel_count())
        .into_par_iter()
        .map(|idx| {
            let (u, v) = CameraIntrinsics::pixel_center((idx % w) as u32, (idx / w) as u32);
            match reproject_pixel(depth_src, idx, &rel, k) {
                Some(r) if k.contains(r.u, r.v) => ([r.u - u, r.v - v], true),
                _ => ([0.0, 0.0], false),
            }
        })
        .unzip();
    Ok(FlowField { width: k.width, height: k.height, displacement, valid })
}

/// Bilinear footprint of continuous position `(u, v)`: up to four pixel
/// indices with their weights. Samples within half a pixel of the border
/// clamp to the edge pixels.
#[inline]
pub(crate) fn bilinear_footprint(width: u32, height: u32, u: f64, v: f64) -> [(usize, f64); 4] {
    let x = u - 0.5;
    let y = v - 0.5;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let clamp_x = |c: f64| c.clamp(0.0, (width - 1) as f64) as usize;
    let clamp_y = |c: f64| c.clamp(0.0, (height - 1) as f64) as usize;
    let (i0, i1) = (clamp_x(x0), clamp_x(x0 + 1.0));
    let (j0, j1) = (clamp_y(y0), clamp_y(y0 + 1.0));
    let w = width as usize;
    [
        (j0 * w + i0, (1.0 - fx) * (1.0 - fy)),
        (j0 * w + i1, fx * (1.0 - fy)),
        (j1 * w + i0, (1.0 - fx) * fy),
        (j1 * w + i1, fx * fy),
    ]
}

/// Depth-consistency test at a continuous landing position.
///
/// A surface point at depth `z` is hidden when every pixel supporting the
/// bilinear sample sees something nearer than `z - tol`. Inverse depth is
/// affine in image coordinates on any plane, so on a planar patch the true
/// depth lies inside the support range; across a depth edge the range
/// covers both sides. Only the upper bound is tested: on a convex fold
/// between samples (a stair nosing) the true depth dips below every
/// support depth, and nothing can hide a point that is nearer than all of
/// them. A point at infinity (`z == None`) is consistent when any
/// supporting pixel is far-field.
pub(crate) fn depth_consistent(depth: &DepthMap, u: f64, v: f64, z: Option<f64>, tol: f64) -> bool {
    let fp = bilinear_footprint(depth.width, depth.height, u, v);
    let support = fp.iter().filter(|(_, w)| *w > SUPPORT_EPS);
    match z {
        None => support.into_iter().any(|&(idx, _)| depth.is_far(idx)),
        Some(z) => {
            let hi = support.map(|&(idx, _)| depth.z[idx] as f64).fold(f64::NEG_INFINITY, f64::max);
            z <= hi + tol
        }
    }
}

/// Invalidates flow vectors whose reprojected point is not what the
/// destination camera sees at the landing position.
pub fn visibility_mask(
    flow: &FlowField,
    depth_src: &DepthMap,
    depth_dst: &DepthMap,
    pose_src: &Pose,
    pose_dst: &Pose,
    k: &CameraIntrinsics,
    tol: f64,
) -> Result<FlowField, FlowError> {
    check_shape("source depth", depth_src, k)?;
    check_shape("destination depth", depth_dst, k)?;
    if flow.width != k.width || flow.height != k.height {
        return Err(FlowError::ResolutionMismatch {
            what: "flow",
            got: (flow.width, flow.height),
            expected: (k.width, k.height),
        });
    }
    let rel = relative_pose(pose_src, pose_dst);
    // a shared center sees the same surfaces; sampled depth would only add
    // false holes at sub-pixel structure
    let pure_rotation = rel.translation().norm() < PURE_ROTATION_EPS;
    let valid: Vec<bool> = (0..k.pixel_count())
        .into_par_iter()
        .map(|idx| {
            if !flow.valid[idx] {
                return false;
            }
            if pure_rotation {
                return true;
            }
            let (u, v) = flow.target(idx);
            // landing depth recomputed from geometry; the flow only stores 2D
            match reproject_pixel(depth_src, idx, &rel, k) {
                Some(r) => depth_consistent(depth_dst, u, v, r.z, tol),
                None => false,
            }
        })
        .collect();
    let displacement = flow
        .displacement
        .iter()
        .zip(&valid)
        .map(|(d, &ok)| if ok { *d } else { [0.0, 0.0] })
        .collect();
    Ok(FlowField { width: flow.width, height: flow.height, displacement, valid })
}

/// Convenience: forward flow with occlusion handling in one call.
pub fn compute_visible_flow(
    depth_src: &DepthMap,
    depth_dst: &DepthMap,
    pose_src: &Pose,
    pose_dst: &Pose,
    k: &CameraIntrinsics,
    tol: f64,
) -> Result<FlowField, FlowError> {
    let flow = compute_flow(depth_src, pose_src, pose_dst, k)?;
    visibility_mask(&flow, depth_src, depth_dst, pose_src, pose_dst, k, tol)
}

/// World point seen by pixel `idx`, or `None` for far-field pixels.
pub fn surface_point(depth: &DepthMap, idx: usize, pose: &Pose, k: &CameraIntrinsics) -> Option<Vector3<f64>> {
    if depth.is_far(idx) {
        return None;
    }
    let (u, v) = CameraIntrinsics::pixel_center((idx % depth.width as usize) as u32, (idx / depth.width as usize) as u32);
    Some(pose.transform_point(&k.unproject(u, v, depth.z[idx] as f64)))
}
