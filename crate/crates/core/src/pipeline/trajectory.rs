//! Scripted ego-motion along the terrain lane.

use std::ops::Range;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Pose;
use crate::dim::{FRAME_PERIOD_MS, STACK_LEN};
use crate::scene::SceneGeometry;

use super::config::{CameraConfig, TrajectoryConfig};

/// Constant-speed walk with an optional constant turn rate. A zero speed
/// with a non-zero turn rate gives a pure rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedTrajectory {
    pub id: String,
    pub start: [f64; 2],
    pub yaw: f64,
    /// Meters per second.
    pub speed: f64,
    /// Radians per second.
    #[serde(default)]
    pub yaw_rate: f64,
    pub steps: usize,
}

impl ScriptedTrajectory {
    /// Camera poses at 20 ms spacing. The camera rides `mount_height` above
    /// whatever surface is under it.
    pub fn poses(&self, scene: &SceneGeometry, camera: &CameraConfig) -> Vec<Pose> {
        let dt = FRAME_PERIOD_MS as f64 / 1000.0;
        let (mut x, mut y) = (self.start[0], self.start[1]);
        let mut out = Vec::with_capacity(self.steps);
        for t in 0..self.steps {
            let yaw = self.yaw + self.yaw_rate * dt * t as f64;
            let ground = scene.height_at(x, y).unwrap_or(0.0);
            out.push(Pose::from_euler(Vector3::new(x, y, ground + camera.mount_height), yaw, camera.pitch, 0.0));
            x += self.speed * dt * yaw.cos();
            y += self.speed * dt * yaw.sin();
        }
        out
    }

    pub fn segments(&self, stack_len: usize) -> Vec<Range<usize>> {
        segments(self.steps, stack_len)
    }
}

/// Number of keyframes (weave jobs) for a trajectory of `steps` frames.
pub fn segment_count(steps: usize) -> usize {
    steps.div_ceil(STACK_LEN)
}

/// Frame ranges of consecutive stacks; the last may be short.
pub fn segments(steps: usize, stack_len: usize) -> Vec<Range<usize>> {
    let n = stack_len.max(1);
    (0..steps.div_ceil(n)).map(|s| s * n..((s + 1) * n).min(steps)).collect()
}

pub fn trajectory_id(index: usize) -> String {
    format!("traj-{index:05}")
}

/// Draws `cfg.count` trajectories from `cfg.seed`.
pub fn sample_trajectories(cfg: &TrajectoryConfig) -> Vec<ScriptedTrajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut uniform = |lo: f64, hi: f64| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    (0..cfg.count)
        .map(|i| ScriptedTrajectory {
            id: trajectory_id(i),
            start: [uniform(cfg.start_x_min, cfg.start_x_max), uniform(-cfg.lateral_range, cfg.lateral_range)],
            yaw: uniform(-cfg.yaw_range, cfg.yaw_range),
            speed: uniform(cfg.speed_min, cfg.speed_max),
            yaw_rate: 0.0,
            steps: cfg.steps,
        })
        .collect()
}
