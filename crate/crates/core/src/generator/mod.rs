//! The image-generator boundary.
//!
//! A [`GenerationRequest`] carries everything a depth-conditioned,
//! region-prompted image model needs: the normalized disparity image,
//! per-asset masks with their prompts, control strength, step count and
//! seed. Two generators implement [`Generator`]: a deterministic procedural
//! [`StubGenerator`] used for verification and benchmarking, and
//! [`RemoteGenerator`], an HTTP client for a real diffusion workflow.

mod remote;
mod stub;
pub mod wire;

use std::time::Instant;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::camera::{normalize_disparity, CameraIntrinsics, DepthMap, DisparityImage, Pose};
use crate::prompts::PromptPair;
use crate::scene::{binary_masks, AssetLabels, LabelImage, Mask, TerrainSpec, NO_HIT};

pub use remote::{RemoteGenerator, ENV_GENERATOR_TIMEOUT, ENV_GENERATOR_TOKEN, ENV_GENERATOR_URL};
pub use stub::{stub_render, StubGenerator, DEFAULT_AMPLITUDE, DEFAULT_TEXEL};

/// Diffusion steps used in production.
pub const DEFAULT_DIFFUSION_STEPS: u32 = 6;
pub const DEFAULT_CONTROL_STRENGTH: f64 = 0.8;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("generator returned {got:?}, request was {expected:?}")]
    ResolutionMismatch { got: (u32, u32), expected: (u32, u32) },
    #[error("undecodable response: {0}")]
    Decode(String),
}

impl GeneratorError {
    /// Whether resubmitting the same request may succeed.
    pub fn is_retriable(&self) -> bool {
        matches!(self, Self::Transport(_) | Self::Timeout(_))
    }
}

/// A prompt confined to one semantic mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub label: u8,
    pub prompt: String,
    pub mask: Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub disparity: DisparityImage,
    pub regions: Vec<Region>,
    pub control_strength: f64,
    pub diffusion_steps: u32,
    pub seed: u64,
}

impl GenerationRequest {
    pub fn resolution(&self) -> (u32, u32) {
        (self.disparity.width, self.disparity.height)
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        let bad = |m: String| Err(GeneratorError::InvalidRequest(m));
        let n = self.disparity.width as usize * self.disparity.height as usize;
        if self.disparity.d.len() != n {
            return bad(format!("disparity has {} values for {n} pixels", self.disparity.d.len()));
        }
        if !(0.0..=1.0).contains(&self.control_strength) {
            return bad(format!("control_strength {} outside [0, 1]", self.control_strength));
        }
        if self.diffusion_steps < 1 {
            return bad("diffusion_steps must be at least 1".into());
        }
        let mut covered = vec![false; n];
        for (ri, r) in self.regions.iter().enumerate() {
            if (r.mask.width, r.mask.height) != self.resolution() || r.mask.bits.len() != n {
                return bad(format!("regions[{ri}] mask resolution differs from the disparity"));
            }
            for (c, &b) in covered.iter_mut().zip(&r.mask.bits) {
                if b && *c {
                    return bad(format!("regions[{ri}] overlaps an earlier region"));
                }
                *c |= b;
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical wire encoding.
    pub fn digest(&self) -> String {
        let body = serde_json::to_vec(&wire::WireRequest::from(self)).expect("wire request serializes");
        hex::encode(Sha256::digest(&body))
    }

    pub fn prompt_for_label(&self, label: u8) -> Option<&str> {
        self.regions.iter().find(|r| r.label == label).map(|r| r.prompt.as_str())
    }
}

/// Conditioning for one rendered view: disparity from the depth, one region
/// per asset label. Steps and hurdles take the foreground prompt; ground,
/// walls and empty space take the background prompt.
pub fn build_request(
    depth: &DepthMap,
    labels: &LabelImage,
    asset_labels: &AssetLabels,
    prompt: &PromptPair,
    control_strength: f64,
    diffusion_steps: u32,
    seed: u64,
) -> GenerationRequest {
    let regions = binary_masks(labels)
        .into_iter()
        .map(|(label, mask)| {
            let text = if label == asset_labels.feature && label != NO_HIT {
                &prompt.foreground
            } else {
                &prompt.background
            };
            Region { label, prompt: text.clone(), mask }
        })
        .collect();
    GenerationRequest {
        disparity: normalize_disparity(depth),
        regions,
        control_strength,
        diffusion_steps,
        seed,
    }
}

/// Scene geometry and camera behind a request. Only the stub uses it; it is
/// never sent to a remote model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewContext {
    pub terrain: TerrainSpec,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Stub,
    Remote,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedImage {
    pub rgb: RgbImage,
    pub request_digest: String,
    pub generator: GeneratorKind,
    pub latency_ms: f64,
}

pub trait Generator: Send + Sync {
    fn kind(&self) -> GeneratorKind;

    fn generate(&self, request: &GenerationRequest, view: Option<&ViewContext>) -> Result<GeneratedImage, GeneratorError>;
}

/// Runs `f` and stamps the result with the request digest and wall time.
pub(crate) fn timed<F>(kind: GeneratorKind, request: &GenerationRequest, f: F) -> Result<GeneratedImage, GeneratorError>
where
    F: FnOnce() -> Result<RgbImage, GeneratorError>,
{
    let start = Instant::now();
    let rgb = f()?;
    Ok(GeneratedImage {
        rgb,
        request_digest: request.digest(),
        generator: kind,
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
