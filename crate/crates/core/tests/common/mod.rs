//! Brute-force geometry written without the library's camera, raycast or
//! flow code. Only plain data (box corners, intrinsics numbers, pose
//! matrices) is taken from the library.

#![allow(dead_code)]

use dreamflow::scene::SceneGeometry;
use dreamflow::{CameraIntrinsics, Pose};

pub type V3 = [f64; 3];

pub fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Pinhole camera with an explicit camera-to-world rotation (columns are
/// the camera axes in world coordinates) and center.
#[derive(Clone, Copy, Debug)]
pub struct Cam {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: u32,
    pub h: u32,
    pub r: [[f64; 3]; 3],
    pub c: V3,
}

impl Cam {
    pub fn new(k: &CameraIntrinsics, pose: &Pose) -> Self {
        let m = pose.rotation();
        let t = pose.translation();
        let mut r = [[0.0; 3]; 3];
        for (a, row) in r.iter_mut().enumerate() {
            for (b, x) in row.iter_mut().enumerate() {
                *x = m[(a, b)];
            }
        }
        Self { fx: k.fx, fy: k.fy, cx: k.cx, cy: k.cy, w: k.width, h: k.height, r, c: [t.x, t.y, t.z] }
    }

    /// World direction through pixel `(i, j)` whose camera-z component is 1.
    pub fn pixel_ray(&self, i: u32, j: u32) -> V3 {
        let xc = (i as f64 + 0.5 - self.cx) / self.fx;
        let yc = (j as f64 + 0.5 - self.cy) / self.fy;
        self.world_dir([xc, yc, 1.0])
    }

    pub fn world_dir(&self, d: V3) -> V3 {
        let r = &self.r;
        [
            r[0][0] * d[0] + r[0][1] * d[1] + r[0][2] * d[2],
            r[1][0] * d[0] + r[1][1] * d[1] + r[1][2] * d[2],
            r[2][0] * d[0] + r[2][1] * d[1] + r[2][2] * d[2],
        ]
    }

    pub fn cam_dir(&self, d: V3) -> V3 {
        let r = &self.r;
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }

    /// `(u, v, z)` of a world point, `None` on or behind the image plane.
    pub fn project(&self, p: V3) -> Option<(f64, f64, f64)> {
        let q = self.cam_dir(sub(p, self.c));
        (q[2] > 1e-12).then(|| (self.fx * q[0] / q[2] + self.cx, self.fy * q[1] / q[2] + self.cy, q[2]))
    }

    /// Projection of a point at infinity in world direction `d`.
    pub fn project_dir(&self, d: V3) -> Option<(f64, f64)> {
        let q = self.cam_dir(d);
        (q[2] > 1e-12).then(|| (self.fx * q[0] / q[2] + self.cx, self.fy * q[1] / q[2] + self.cy))
    }

    pub fn in_frame(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.w as f64 && v < self.h as f64
    }
}

/// Nearest entry parameter `t >= t_min` of the ray `o + t d` over all boxes.
pub fn first_hit(scene: &SceneGeometry, o: V3, d: V3, t_min: f64) -> Option<(f64, u8)> {
    let mut best: Option<(f64, u8)> = None;
    for b in &scene.boxes {
        let mut enter = f64::NEG_INFINITY;
        let mut exit = f64::INFINITY;
        let mut miss = false;
        for a in 0..3 {
            if d[a].abs() < 1e-300 {
                if o[a] < b.min[a] || o[a] > b.max[a] {
                    miss = true;
                    break;
                }
                continue;
            }
            let t1 = (b.min[a] - o[a]) / d[a];
            let t2 = (b.max[a] - o[a]) / d[a];
            enter = enter.max(t1.min(t2));
            exit = exit.min(t1.max(t2));
        }
        if miss || enter > exit || enter < t_min {
            continue;
        }
        best = match best {
            Some((t, l)) if t < enter || (t == enter && l <= b.label) => Some((t, l)),
            _ => Some((enter, b.label)),
        };
    }
    best
}

/// Depth and label per pixel by brute force; `None` where nothing is hit
/// inside `[near, far]`.
pub fn render(scene: &SceneGeometry, cam: &Cam, near: f64, far: f64) -> Vec<Option<(f64, u8)>> {
    let mut out = Vec::with_capacity((cam.w * cam.h) as usize);
    for j in 0..cam.h {
        for i in 0..cam.w {
            let d = cam.pixel_ray(i, j);
            out.push(first_hit(scene, cam.c, d, near).filter(|(t, _)| *t <= far));
        }
    }
    out
}

/// Forward flow from `src` to `dst` per source pixel, `None` where the
/// point leaves the destination frame or lands behind it. Missed rays are
/// treated as points at infinity.
pub fn flow(scene: &SceneGeometry, src: &Cam, dst: &Cam, near: f64, far: f64) -> Vec<Option<[f64; 2]>> {
    let hits = render(scene, src, near, far);
    let mut out = Vec::with_capacity(hits.len());
    for j in 0..src.h {
        for i in 0..src.w {
            let d = src.pixel_ray(i, j);
            let landing = match hits[(j * src.w + i) as usize] {
                Some((t, _)) => dst.project(add(src.c, scale(d, t))).map(|(u, v, _)| (u, v)),
                None => dst.project_dir(d),
            };
            out.push(
                landing
                    .filter(|&(u, v)| dst.in_frame(u, v))
                    .map(|(u, v)| [u - (i as f64 + 0.5), v - (j as f64 + 0.5)]),
            );
        }
    }
    out
}

/// Destination pixels whose surface the key camera does not see: the point
/// is outside the key frame, behind it, or hidden behind other geometry.
/// Missed rays are visible when the key camera also sees open sky in that
/// direction.
pub fn disoccluded(scene: &SceneGeometry, key: &Cam, dst: &Cam, near: f64, far: f64) -> Vec<bool> {
    let hits = render(scene, dst, near, far);
    let mut out = Vec::with_capacity(hits.len());
    for j in 0..dst.h {
        for i in 0..dst.w {
            let d = dst.pixel_ray(i, j);
            let hidden = match hits[(j * dst.w + i) as usize] {
                Some((t, _)) => {
                    let p = add(dst.c, scale(d, t));
                    match key.project(p) {
                        Some((u, v, _)) if key.in_frame(u, v) => {
                            // anything strictly between the key camera and p?
                            let to_p = sub(p, key.c);
                            match first_hit(scene, key.c, to_p, 1e-9) {
                                Some((s, _)) => s < 1.0 - 1e-9,
                                None => false,
                            }
                        }
                        _ => true,
                    }
                }
                None => match key.project_dir(d) {
                    Some((u, v)) if key.in_frame(u, v) => first_hit(scene, key.c, d, 1e-9).is_some(),
                    _ => true,
                },
            };
            out.push(hidden);
        }
    }
    out
}

/// Pixels within one pixel (8-neighborhood) of a depth jump larger than
/// `jump` meters, or of a hit/miss boundary.
pub fn near_depth_edge(hits: &[Option<(f64, u8)>], w: u32, h: u32, jump: f64) -> Vec<bool> {
    let at = |i: i64, j: i64| hits[(j * w as i64 + i) as usize];
    let mut out = vec![false; hits.len()];
    for j in 0..h as i64 {
        for i in 0..w as i64 {
            let mut edge = false;
            for dj in -1..=1 {
                for di in -1..=1 {
                    let (a, b) = (i + di, j + dj);
                    if a < 0 || b < 0 || a >= w as i64 || b >= h as i64 {
                        continue;
                    }
                    edge |= match (at(i, j), at(a, b)) {
                        (Some((z0, _)), Some((z1, _))) => (z0 - z1).abs() > jump,
                        (None, None) => false,
                        _ => true,
                    };
                }
            }
            out[(j * w as i64 + i) as usize] = edge;
        }
    }
    out
}
