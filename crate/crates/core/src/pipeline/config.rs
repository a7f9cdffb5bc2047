//! Task configuration shared by the pipeline drivers and the CLI.

use serde::{Deserialize, Serialize};

use crate::camera::{CameraError, CameraIntrinsics};
use crate::dim::{FillStrategy, STACK_LEN};
use crate::generator::{DEFAULT_CONTROL_STRENGTH, DEFAULT_DIFFUSION_STEPS};
use crate::scene::{StairsParams, TerrainSpec};

use super::broker::DEFAULT_MAX_ATTEMPTS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub width: u32,
    pub height: u32,
    pub fov_deg: f64,
    /// Camera height above the terrain surface under it, meters.
    pub mount_height: f64,
    /// Downward tilt, radians.
    pub pitch: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self { width: 320, height: 180, fov_deg: 120.0, mount_height: 0.4, pitch: 0.25 }
    }
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics, CameraError> {
        CameraIntrinsics::from_fov(self.fov_deg, self.width, self.height)
    }
}

/// Depth clip ranges. `render` is used for geometry and warping; the
/// conditioning disparity sent to the generator is clipped to
/// `conditioning_near..conditioning_far`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipConfig {
    pub render_near: f64,
    pub render_far: f64,
    pub conditioning_near: f64,
    pub conditioning_far: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self { render_near: 0.05, render_far: 20.0, conditioning_near: 0.28, conditioning_far: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub count: usize,
    pub steps: usize,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Start x is drawn from `[start_x_min, start_x_max]`.
    pub start_x_min: f64,
    pub start_x_max: f64,
    /// Start y is drawn from `[-lateral_range, lateral_range]`.
    pub lateral_range: f64,
    /// Initial heading is drawn from `[-yaw_range, yaw_range]`, radians.
    pub yaw_range: f64,
    pub seed: u64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            count: 1000,
            steps: 600,
            speed_min: 0.3,
            speed_max: 0.8,
            start_x_min: -1.0,
            start_x_max: 0.5,
            lateral_range: 0.3,
            yaw_range: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorChoice {
    Stub,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub generator: GeneratorChoice,
    pub control_strength: f64,
    pub diffusion_steps: u32,
    pub seed: u64,
    /// Remote endpoint; falls back to the environment when unset.
    pub endpoint: Option<String>,
    pub timeout_s: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorChoice::Stub,
            control_strength: DEFAULT_CONTROL_STRENGTH,
            diffusion_steps: DEFAULT_DIFFUSION_STEPS,
            seed: 0,
            endpoint: None,
            timeout_s: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkerConfig {
    pub unroll_workers: usize,
    pub weavers: usize,
    pub lease_s: f64,
    pub max_attempts: u32,
    /// Weave jobs taken per dequeue. Only 1 is supported.
    pub batch: usize,
    pub rpc_deadline_s: f64,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        Self { unroll_workers: 4, weavers: 4, lease_s: 30.0, max_attempts: DEFAULT_MAX_ATTEMPTS, batch: 1, rpc_deadline_s: 60.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub task: String,
    pub terrain: TerrainSpec,
    pub camera: CameraConfig,
    pub clip: ClipConfig,
    pub trajectories: TrajectoryConfig,
    pub generation: GenerationConfig,
    pub workers: WorkerConfig,
    pub fill: FillStrategy,
    pub stack_len: usize,
    /// Store PNGs at most this wide. Off when unset.
    pub downsize_width: Option<u32>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            task: "stairs".into(),
            terrain: TerrainSpec::stairs(StairsParams::default()),
            camera: CameraConfig::default(),
            clip: ClipConfig::default(),
            trajectories: TrajectoryConfig::default(),
            generation: GenerationConfig::default(),
            workers: WorkerConfig::default(),
            fill: FillStrategy::default(),
            stack_len: STACK_LEN,
            downsize_width: None,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.terrain.validate().map_err(|e| e.to_string())?;
        self.camera.intrinsics().map_err(|e| e.to_string())?;
        let c = &self.clip;
        if !(c.render_near > 0.0 && c.render_near < c.render_far) {
            return Err(format!("render clip {}..{}", c.render_near, c.render_far));
        }
        if !(c.conditioning_near > 0.0 && c.conditioning_near < c.conditioning_far) {
            return Err(format!("conditioning clip {}..{}", c.conditioning_near, c.conditioning_far));
        }
        let t = &self.trajectories;
        if !(t.speed_min > 0.0 && t.speed_min <= t.speed_max) {
            return Err(format!("speed range {}..{}", t.speed_min, t.speed_max));
        }
        if t.start_x_min > t.start_x_max || t.lateral_range < 0.0 || t.yaw_range < 0.0 {
            return Err("trajectory start ranges".into());
        }
        if !(1..=STACK_LEN).contains(&self.stack_len) {
            return Err(format!("stack_len {} outside 1..={STACK_LEN}", self.stack_len));
        }
        if !(0.0..=1.0).contains(&self.generation.control_strength) || self.generation.diffusion_steps == 0 {
            return Err("generation parameters".into());
        }
        if self.workers.batch != 1 {
            return Err("workers.batch must be 1".into());
        }
        if self.workers.lease_s <= 0.0 || self.workers.max_attempts == 0 {
            return Err("worker lease and attempts must be positive".into());
        }
        Ok(())
    }
}
