//! JSON bodies exchanged with a remote generation workflow.
//!
//! Request (`POST <endpoint>`):
//!
//! ```json
//! {
//!   "disparity": { "width": 320, "height": 180, "encoding": "f32le", "data": "<base64>" },
//!   "regions": [
//!     { "label": 2, "prompt": "granite slabs ...",
//!       "mask": { "width": 320, "height": 180, "encoding": "bits_lsb", "data": "<base64>" } }
//!   ],
//!   "control_strength": 0.8,
//!   "diffusion_steps": 6,
//!   "seed": 42
//! }
//! ```
//!
//! * `f32le`: `width * height` little-endian `f32`, row-major, values in
//!   `[0, 1]` with 1 = nearest (inverted, per-image normalized depth).
//! * `bits_lsb`: row-major bits packed LSB-first, `ceil(width * height / 8)`
//!   bytes; a set bit means the prompt applies to that pixel. Label 0 is
//!   the no-geometry (background) region.
//!
//! Response:
//!
//! ```json
//! { "width": 320, "height": 180, "encoding": "rgb8", "data": "<base64>" }
//! ```
//!
//! `rgb8`: `width * height * 3` bytes, row-major RGB. Unknown response
//! fields are ignored.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{GenerationRequest, GeneratorError, Region};
use crate::camera::DisparityImage;
use crate::scene::Mask;

pub const ENCODING_F32LE: &str = "f32le";
pub const ENCODING_BITS: &str = "bits_lsb";
pub const ENCODING_RGB8: &str = "rgb8";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireRaster {
    pub width: u32,
    pub height: u32,
    pub encoding: String,
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireRegion {
    pub label: u8,
    pub prompt: String,
    pub mask: WireRaster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireRequest {
    pub disparity: WireRaster,
    pub regions: Vec<WireRegion>,
    pub control_strength: f64,
    pub diffusion_steps: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub width: u32,
    pub height: u32,
    pub encoding: String,
    pub data: String,
}

fn mask_raster(m: &Mask) -> WireRaster {
    WireRaster { width: m.width, height: m.height, encoding: ENCODING_BITS.into(), data: B64.encode(m.pack()) }
}

impl From<&GenerationRequest> for WireRequest {
    fn from(r: &GenerationRequest) -> Self {
        let bytes: Vec<u8> = r.disparity.d.iter().flat_map(|x| x.to_le_bytes()).collect();
        WireRequest {
            disparity: WireRaster {
                width: r.disparity.width,
                height: r.disparity.height,
                encoding: ENCODING_F32LE.into(),
                data: B64.encode(bytes),
            },
            regions: r
                .regions
                .iter()
                .map(|g| WireRegion { label: g.label, prompt: g.prompt.clone(), mask: mask_raster(&g.mask) })
                .collect(),
            control_strength: r.control_strength,
            diffusion_steps: r.diffusion_steps,
            seed: r.seed,
        }
    }
}

fn decode_b64(what: &str, s: &str) -> Result<Vec<u8>, GeneratorError> {
    B64.decode(s).map_err(|e| GeneratorError::Decode(format!("{what}: {e}")))
}

impl TryFrom<&WireRequest> for GenerationRequest {
    type Error = GeneratorError;

    fn try_from(w: &WireRequest) -> Result<Self, GeneratorError> {
        if w.disparity.encoding != ENCODING_F32LE {
            return Err(GeneratorError::Decode(format!("disparity encoding `{}`", w.disparity.encoding)));
        }
        let raw = decode_b64("disparity", &w.disparity.data)?;
        if raw.len() != 4 * w.disparity.width as usize * w.disparity.height as usize {
            return Err(GeneratorError::Decode("disparity size".into()));
        }
        let d = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let mut regions = Vec::with_capacity(w.regions.len());
        for (i, g) in w.regions.iter().enumerate() {
            if g.mask.encoding != ENCODING_BITS {
                return Err(GeneratorError::Decode(format!("regions[{i}].mask encoding `{}`", g.mask.encoding)));
            }
            let mask = Mask::unpack(g.mask.width, g.mask.height, &decode_b64("mask", &g.mask.data)?)
                .ok_or_else(|| GeneratorError::Decode(format!("regions[{i}].mask size")))?;
            regions.push(Region { label: g.label, prompt: g.prompt.clone(), mask });
        }
        Ok(GenerationRequest {
            disparity: DisparityImage { width: w.disparity.width, height: w.disparity.height, d },
            regions,
            control_strength: w.control_strength,
            diffusion_steps: w.diffusion_steps,
            seed: w.seed,
        })
    }
}

impl WireResponse {
    pub fn from_image(img: &RgbImage) -> Self {
        Self { width: img.width(), height: img.height(), encoding: ENCODING_RGB8.into(), data: B64.encode(img.as_raw()) }
    }

    pub fn into_image(self) -> Result<RgbImage, GeneratorError> {
        if self.encoding != ENCODING_RGB8 {
            return Err(GeneratorError::Decode(format!("image encoding `{}`", self.encoding)));
        }
        let raw = decode_b64("image", &self.data)?;
        RgbImage::from_raw(self.width, self.height, raw)
            .ok_or_else(|| GeneratorError::Decode("image byte count does not match its dimensions".into()))
    }
}
