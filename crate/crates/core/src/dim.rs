//! Keyframe propagation: warp one generated frame into the following views
//! with ground-truth geometry and assemble fixed-length frame stacks.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraIntrinsics, DepthMap, Pose};
use crate::flow::{self, bilinear_footprint, FlowError, DEFAULT_VISIBILITY_TOL};
use crate::imageio;
use crate::scene::Mask;

/// Frames per stack: one keyframe plus six warped frames.
pub const STACK_LEN: usize = 7;
/// Frame period at 50 Hz.
pub const FRAME_PERIOD_MS: u32 = 20;
/// Color painted into holes by [`FillStrategy::Mark`].
pub const HOLE_MARK: Rgb<u8> = Rgb([255, 0, 255]);
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DimError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("keyframe is {got:?}, expected {expected:?}")]
    KeyframeSize { got: (u32, u32), expected: (u32, u32) },
    #[error("every pixel is a hole; nothing to fill from")]
    AllHoles,
    #[error("stack needs between 1 and {max} renders, got {got}")]
    StackLength { got: usize, max: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillStrategy {
    /// Paint holes magenta for inspection.
    Mark,
    /// Copy the nearest non-hole pixel.
    #[default]
    NearestValid,
}

impl std::str::FromStr for FillStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mark" => Ok(Self::Mark),
            "nearest_valid" | "nearest-valid" => Ok(Self::NearestValid),
            other => Err(format!("unknown fill strategy `{other}`")),
        }
    }
}

/// Resamples `keyframe` (seen from `pose_key`) into the view at `pose_dst`.
///
/// Each destination pixel is lifted with `depth_dst`, moved into the key
/// view and sampled bilinearly if the key view sees the same surface there.
/// Everything else is returned as a hole (and left black).
pub fn warp_frame(
    keyframe: &RgbImage,
    depth_key: &DepthMap,
    pose_key: &Pose,
    depth_dst: &DepthMap,
    pose_dst: &Pose,
    k: &CameraIntrinsics,
) -> Result<(RgbImage, Mask), DimError> {
    warp_frame_with_tol(keyframe, depth_key, pose_key, depth_dst, pose_dst, k, DEFAULT_VISIBILITY_TOL)
}

pub fn warp_frame_with_tol(
    keyframe: &RgbImage,
    depth_key: &DepthMap,
    pose_key: &Pose,
    depth_dst: &DepthMap,
    pose_dst: &Pose,
    k: &CameraIntrinsics,
    tol: f64,
) -> Result<(RgbImage, Mask), DimError> {
    if keyframe.dimensions() != (k.width, k.height) {
        return Err(DimError::KeyframeSize { got: keyframe.dimensions(), expected: (k.width, k.height) });
    }
    // destination-anchored: flow from destination pixels back into the key view
    let back = flow::compute_visible_flow(depth_dst, depth_key, pose_dst, pose_key, k, tol)?;
    let src = keyframe.as_raw();
    let pixels: Vec<[u8; 3]> = (0..k.pixel_count())
        .into_par_iter()
        .map(|idx| {
            if !back.valid[idx] {
                return [0, 0, 0];
            }
            let (u, v) = back.target(idx);
            let mut acc = [0.0f64; 3];
            for (s, w) in bilinear_footprint(k.width, k.height, u, v) {
                for c in 0..3 {
                    acc[c] += w * src[3 * s + c] as f64;
                }
            }
            acc.map(|x| x.round().clamp(0.0, 255.0) as u8)
        })
        .collect();
    let out = RgbImage::from_raw(k.width, k.height, pixels.into_iter().flatten().collect())
        .expect("pixel buffer matches intrinsics");
    let holes = Mask { width: k.width, height: k.height, bits: back.valid.iter().map(|v| !v).collect() };
    Ok((out, holes))
}

/// Fills hole pixels. `NearestValid` copies the closest non-hole pixel in
/// Euclidean pixel distance; ties go to the first candidate in scanline order.
pub fn fill_holes(image: &RgbImage, holes: &Mask, strategy: FillStrategy) -> Result<RgbImage, DimError> {
    let (w, h) = image.dimensions();
    let mut out = image.clone();
    if holes.count() == 0 {
        return Ok(out);
    }
    match strategy {
        FillStrategy::Mark => {
            for (idx, _) in holes.bits.iter().enumerate().filter(|(_, &b)| b) {
                out.put_pixel(idx as u32 % w, idx as u32 / w, HOLE_MARK);
            }
        }
        FillStrategy::NearestValid => {
            if holes.count() == holes.bits.len() {
                return Err(DimError::AllHoles);
            }
            let sources: Vec<(usize, usize)> = (0..holes.bits.len())
                .into_par_iter()
                .filter(|&i| holes.bits[i])
                .map(|i| (i, nearest_valid(holes, w as i64, h as i64, i)))
                .collect();
            for (dst, src) in sources {
                let px = *image.get_pixel(src as u32 % w, src as u32 / w);
                out.put_pixel(dst as u32 % w, dst as u32 / w, px);
            }
        }
    }
    Ok(out)
}

/// Expanding square rings around `idx`. Every pixel on ring `r` is at least
/// `r` away, so the search stops once `r^2` exceeds the best squared distance.
fn nearest_valid(holes: &Mask, w: i64, h: i64, idx: usize) -> usize {
    let x = idx as i64 % w;
    let y = idx as i64 / w;
    let mut best: Option<(i64, usize)> = None;
    let max_r = w.max(h);
    for r in 1..=max_r {
        if let Some((d2, _)) = best {
            if r * r > d2 {
                break;
            }
        }
        let mut consider = |cx: i64, cy: i64| {
            if cx < 0 || cy < 0 || cx >= w || cy >= h {
                return;
            }
            let ci = (cy * w + cx) as usize;
            if holes.bits[ci] {
                return;
            }
            let d2 = (cx - x).pow(2) + (cy - y).pow(2);
            match best {
                Some((bd, bi)) if bd < d2 || (bd == d2 && bi < ci) => {}
                _ => best = Some((d2, ci)),
            }
        };
        for cx in x - r..=x + r {
            consider(cx, y - r);
            consider(cx, y + r);
        }
        for cy in y - r + 1..y + r {
            consider(x - r, cy);
            consider(x + r, cy);
        }
    }
    best.expect("at least one valid pixel").1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scene_id: String,
    pub prompt_id: String,
    pub generator_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_index: Option<u32>,
}

/// One keyframe followed by frames warped from it, 20 ms apart.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub frames: Vec<RgbImage>,
    pub hole_masks: Vec<Mask>,
    pub timestamps_ms: Vec<u32>,
    pub poses: Vec<Pose>,
    pub intrinsics: CameraIntrinsics,
    pub fill: FillStrategy,
    pub provenance: Provenance,
}

impl FrameStack {
    pub const KEYFRAME_INDEX: usize = 0;

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Mean hole fraction over the warped frames (0 for a lone keyframe).
    pub fn hole_fraction(&self) -> f64 {
        if self.hole_masks.len() <= 1 {
            return 0.0;
        }
        self.hole_masks[1..].iter().map(Mask::fraction).sum::<f64>() / (self.hole_masks.len() - 1) as f64
    }

    fn manifest(&self) -> StackManifest {
        StackManifest {
            version: MANIFEST_VERSION,
            frame_count: self.len(),
            keyframe_index: Self::KEYFRAME_INDEX,
            timestamps_ms: self.timestamps_ms.clone(),
            poses: self.poses.clone(),
            intrinsics: self.intrinsics.to_array(),
            fill_strategy: self.fill,
            hole_fractions: self.hole_masks.iter().map(Mask::fraction).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// The on-disk directory layout as `(file name, bytes)` pairs.
    pub fn to_files(&self) -> Result<Vec<(String, Vec<u8>)>, DimError> {
        let mut files = Vec::with_capacity(2 * self.len() + 1);
        for (i, (f, m)) in self.frames.iter().zip(&self.hole_masks).enumerate() {
            files.push((format!("frame_{i:02}.png"), imageio::encode_rgb_png(f)?));
            files.push((format!("holes_{i:02}.png"), imageio::encode_mask_png(m)?));
        }
        let manifest = serde_json::to_vec_pretty(&self.manifest()).map_err(|e| DimError::Manifest(e.to_string()))?;
        files.push(("manifest.json".to_string(), manifest));
        Ok(files)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), DimError> {
        fs::create_dir_all(dir)?;
        for (name, bytes) in self.to_files()? {
            fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self, DimError> {
        let m: StackManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)
            .map_err(|e| DimError::Manifest(e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(DimError::Manifest(format!("unsupported manifest version {}", m.version)));
        }
        let mut frames = Vec::with_capacity(m.frame_count);
        let mut hole_masks = Vec::with_capacity(m.frame_count);
        for i in 0..m.frame_count {
            frames.push(imageio::decode_rgb_png(&fs::read(dir.join(format!("frame_{i:02}.png")))?)?);
            hole_masks.push(imageio::decode_mask_png(&fs::read(dir.join(format!("holes_{i:02}.png")))?)?);
        }
        Ok(Self {
            frames,
            hole_masks,
            timestamps_ms: m.timestamps_ms,
            poses: m.poses,
            intrinsics: CameraIntrinsics::from_array(m.intrinsics).map_err(|e| DimError::Manifest(e.to_string()))?,
            fill: m.fill_strategy,
            provenance: m.provenance,
        })
    }
}

/// `manifest.json` of a persisted stack.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StackManifest {
    pub version: u32,
    pub frame_count: usize,
    pub keyframe_index: usize,
    pub timestamps_ms: Vec<u32>,
    pub poses: Vec<Pose>,
    pub intrinsics: [f64; 6],
    pub fill_strategy: FillStrategy,
    pub hole_fractions: Vec<f64>,
    pub provenance: Provenance,
}

/// Per-frame geometry used to warp a keyframe.
#[derive(Debug, Clone)]
pub struct FrameRender {
    pub depth: DepthMap,
    pub pose: Pose,
}

/// Builds a stack from a keyframe rendered at `renders[0]`. Frame 0 is the
/// keyframe itself; the rest are warped and hole-filled.
pub fn assemble_stack(
    keyframe: &RgbImage,
    renders: &[FrameRender],
    k: &CameraIntrinsics,
    fill: FillStrategy,
    provenance: Provenance,
) -> Result<FrameStack, DimError> {
    if renders.is_empty() || renders.len() > STACK_LEN {
        return Err(DimError::StackLength { got: renders.len(), max: STACK_LEN });
    }
    let key = &renders[0];
    let mut frames = vec![keyframe.clone()];
    let mut hole_masks = vec![Mask::new(k.width, k.height)];
    for r in &renders[1..] {
        let (warped, holes) = warp_frame(keyframe, &key.depth, &key.pose, &r.depth, &r.pose, k)?;
        frames.push(fill_holes(&warped, &holes, fill)?);
        hole_masks.push(holes);
    }
    Ok(FrameStack {
        frames,
        hole_masks,
        timestamps_ms: (0..renders.len() as u32).map(|i| i * FRAME_PERIOD_MS).collect(),
        poses: renders.iter().map(|r| r.pose).collect(),
        intrinsics: *k,
        fill,
        provenance,
    })
}

/// Idealized speedup of warping over generating every frame:
/// `n * t_gen / (t_gen + (n - 1) * t_warp)`.
pub fn speedup_model(t_gen: f64, t_warp: f64, stack_len: usize) -> f64 {
    let n = stack_len.max(1) as f64;
    n * t_gen / (t_gen + (n - 1.0) * t_warp)
}
