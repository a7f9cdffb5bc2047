//! Deterministic procedural generator anchored to world coordinates.
//!
//! Every pixel is lifted to the 3D point it sees. Its color is the region's
//! base color (hashed from the region prompt, label and seed), shaded by
//! world height and perturbed by value noise on a world-space lattice.
//! Because nothing depends on the viewpoint, two renders of the same scene
//! agree wherever they see the same point, which is what makes the stub
//! usable as a re-render oracle for warped frames.

use image::RgbImage;
use nalgebra::Vector3;
use rayon::prelude::*;

use super::{timed, GeneratedImage, GenerationRequest, Generator, GeneratorError, GeneratorKind, ViewContext};
use crate::camera::{CameraIntrinsics, Pose};
use crate::scene::{build_terrain, SceneGeometry, NO_HIT};

/// World-space lattice spacing of the texture, meters.
pub const DEFAULT_TEXEL: f64 = 0.05;
/// Noise amplitude in 8-bit levels.
pub const DEFAULT_AMPLITUDE: f64 = 8.0;

// Clip range for the stub's own raycast. Wider than any render clip so the
// texture sees true surface points.
const STUB_NEAR: f64 = 1e-4;
const STUB_FAR: f64 = 1e4;
// Lattice spacing for the sky texture, in units of direction-vector length.
const SKY_TEXEL: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StubGenerator {
    pub texel: f64,
    pub amplitude: f64,
}

impl Default for StubGenerator {
    fn default() -> Self {
        Self { texel: DEFAULT_TEXEL, amplitude: DEFAULT_AMPLITUDE }
    }
}

impl Generator for StubGenerator {
    fn kind(&self) -> GeneratorKind {
        GeneratorKind::Stub
    }

    /// With a view the output is world-anchored; without one it falls back
    /// to a screen-space texture shaded by the request's disparity.
    fn generate(&self, request: &GenerationRequest, view: Option<&ViewContext>) -> Result<GeneratedImage, GeneratorError> {
        request.validate()?;
        timed(GeneratorKind::Stub, request, || {
            let (w, h) = request.resolution();
            if let Some(v) = view {
                if (v.intrinsics.width, v.intrinsics.height) != (w, h) {
                    return Err(GeneratorError::ResolutionMismatch {
                        got: (v.intrinsics.width, v.intrinsics.height),
                        expected: (w, h),
                    });
                }
                let scene = build_terrain(&v.terrain).map_err(|e| GeneratorError::InvalidRequest(e.to_string()))?;
                Ok(self.render(&scene, &v.pose, &v.intrinsics, request))
            } else {
                Ok(self.render_screen(request))
            }
        })
    }
}

/// [`StubGenerator::render`] with default texel and amplitude.
pub fn stub_render(scene: &SceneGeometry, pose: &Pose, k: &CameraIntrinsics, request: &GenerationRequest) -> RgbImage {
    StubGenerator::default().render(scene, pose, k, request)
}

impl StubGenerator {
    pub fn render(&self, scene: &SceneGeometry, pose: &Pose, k: &CameraIntrinsics, request: &GenerationRequest) -> RgbImage {
        let palette = Palette::new(request);
        let origin = pose.position();
        let w = k.width as usize;
        let buf: Vec<u8> = (0..k.height)
            .into_par_iter()
            .flat_map_iter(|j| {
                let mut row = Vec::with_capacity(3 * w);
                for i in 0..k.width {
                    let (u, v) = CameraIntrinsics::pixel_center(i, j);
                    let dir = pose.transform_vector(&k.ray_direction(u, v));
                    let rgb = match scene.first_hit(&origin, &dir, STUB_NEAR, STUB_FAR) {
                        Some((t, label)) => self.surface_color(&palette, label, &(origin + dir * t)),
                        None => self.sky_color(&palette, &dir.normalize()),
                    };
                    row.extend_from_slice(&rgb);
                }
                row
            })
            .collect();
        RgbImage::from_raw(k.width, k.height, buf).expect("buffer matches intrinsics")
    }

    fn surface_color(&self, palette: &Palette, label: u8, p: &Vector3<f64>) -> [u8; 3] {
        let (base, key) = palette.get(label);
        let shade = 0.8 + 0.2 * p.z.clamp(-1.0, 1.0).tanh();
        let n = value_noise(key, &(p / self.texel));
        base.map(|c| to_u8(c * shade + self.amplitude * n))
    }

    fn sky_color(&self, palette: &Palette, dir: &Vector3<f64>) -> [u8; 3] {
        let (base, key) = palette.get(NO_HIT);
        let shade = 0.9 + 0.1 * dir.z;
        let n = value_noise(key ^ 0x5ca1ab1e, &(dir / SKY_TEXEL));
        base.map(|c| to_u8(c * shade + self.amplitude * n))
    }

    fn render_screen(&self, request: &GenerationRequest) -> RgbImage {
        let palette = Palette::new(request);
        let (w, h) = request.resolution();
        let mut label = vec![NO_HIT; w as usize * h as usize];
        for r in &request.regions {
            for (l, &b) in label.iter_mut().zip(&r.mask.bits) {
                if b {
                    *l = r.label;
                }
            }
        }
        let mut img = RgbImage::new(w, h);
        for (idx, px) in img.pixels_mut().enumerate() {
            let (base, key) = palette.get(label[idx]);
            let d = request.disparity.d[idx] as f64;
            let (i, j) = ((idx % w as usize) as f64, (idx / w as usize) as f64);
            let n = value_noise(key, &Vector3::new(i / 8.0, j / 8.0, 0.0));
            px.0 = base.map(|c| to_u8(c * (0.6 + 0.4 * d) + self.amplitude * n));
        }
        img
    }
}

fn to_u8(x: f64) -> u8 {
    x.round().clamp(0.0, 255.0) as u8
}

/// Base color and noise key per label, looked up by label so the region
/// order in the request does not matter.
struct Palette {
    entries: Vec<(u8, [f64; 3], u64)>,
    fallback_seed: u64,
}

impl Palette {
    fn new(request: &GenerationRequest) -> Self {
        let entries = request
            .regions
            .iter()
            .map(|r| {
                let key = region_key(&r.prompt, r.label, request.seed);
                (r.label, base_color(key), key)
            })
            .collect();
        Self { entries, fallback_seed: request.seed }
    }

    fn get(&self, label: u8) -> ([f64; 3], u64) {
        match self.entries.iter().find(|e| e.0 == label) {
            Some(&(_, c, k)) => (c, k),
            None => {
                let key = region_key("", label, self.fallback_seed);
                (base_color(key), key)
            }
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn region_key(prompt: &str, label: u8, seed: u64) -> u64 {
    mix(fnv1a(prompt.as_bytes()) ^ mix(seed.wrapping_add(label as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// Mid-range colors so shading and noise never clip.
fn base_color(key: u64) -> [f64; 3] {
    let h = mix(key);
    [0, 1, 2].map(|c| 70.0 + ((h >> (16 * c)) & 0xffff) as f64 / 65535.0 * 120.0)
}

fn lattice(key: u64, x: i64, y: i64, z: i64) -> f64 {
    let h = mix(key ^ mix((x as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ mix((y as u64) ^ mix(z as u64 ^ 0xabcd))));
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Smooth value noise in [-1, 1]: lattice values blended with smoothstep
/// weights, so the texture is continuous across texel boundaries.
fn value_noise(key: u64, p: &Vector3<f64>) -> f64 {
    let f = p.map(f64::floor);
    let (x0, y0, z0) = (f.x as i64, f.y as i64, f.z as i64);
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (tx, ty, tz) = (s(p.x - f.x), s(p.y - f.y), s(p.z - f.z));
    let mut acc = 0.0;
    for (dz, wz) in [(0, 1.0 - tz), (1, tz)] {
        for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
            for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
                acc += wx * wy * wz * lattice(key, x0 + dx, y0 + dy, z0 + dz);
            }
        }
    }
    acc
}
