//! Throughput of keyframe-plus-warp versus generating every frame.

use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::camera::{clip_depth, CameraIntrinsics};
use crate::dim::{speedup_model, warp_frame};
use crate::generator::{
    build_request, GeneratedImage, GenerationRequest, Generator, GeneratorError, GeneratorKind, StubGenerator, ViewContext,
    DEFAULT_CONTROL_STRENGTH, DEFAULT_DIFFUSION_STEPS,
};
use crate::pipeline::{CameraConfig, ClipConfig, ScriptedTrajectory};
use crate::prompts::reference_batch;
use crate::scene::{build_terrain, raycast, HurdleParams, TerrainSpec};

/// Wraps a generator and sleeps `delay` before each call, standing in for
/// diffusion latency.
pub struct DelayedGenerator<G> {
    pub inner: G,
    pub delay: Duration,
}

impl<G: Generator> Generator for DelayedGenerator<G> {
    fn kind(&self) -> GeneratorKind {
        self.inner.kind()
    }

    fn generate(&self, request: &GenerationRequest, view: Option<&ViewContext>) -> Result<GeneratedImage, GeneratorError> {
        let start = Instant::now();
        thread::sleep(self.delay);
        let mut out = self.inner.generate(request, view)?;
        out.latency_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub width: u32,
    pub height: u32,
    pub stack_len: usize,
    pub delay_ms: f64,
    /// Stacks per mode.
    pub trials: usize,
    pub terrain: TerrainSpec,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            width: 320,
            height: 180,
            stack_len: 7,
            delay_ms: 780.0,
            trials: 1,
            terrain: TerrainSpec::hurdles(HurdleParams::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub frames: usize,
    /// Wall time per frame when every frame is generated.
    pub per_frame_ms: f64,
    /// Wall time per frame with one keyframe per stack.
    pub dim_per_frame_ms: f64,
    /// Mean cost of producing a frame by generation (render, condition,
    /// generate).
    pub t_gen_ms: f64,
    /// Mean cost of producing a frame by warping (render, flow, warp).
    pub t_warp_ms: f64,
    pub measured_speedup: f64,
    pub model_speedup: f64,
}

impl BenchReport {
    pub fn to_table(&self) -> String {
        format!(
            "resolution        {}x{}\n\
             stack length      {}\n\
             injected delay    {:.1} ms\n\
             frames per mode   {}\n\
             per-frame mode    {:.2} ms/frame\n\
             keyframe + warp   {:.2} ms/frame\n\
             t_gen / t_warp    {:.2} / {:.2} ms\n\
             measured speedup  {:.3}\n\
             model speedup     {:.3}\n",
            self.config.width,
            self.config.height,
            self.config.stack_len,
            self.config.delay_ms,
            self.frames,
            self.per_frame_ms,
            self.dim_per_frame_ms,
            self.t_gen_ms,
            self.t_warp_ms,
            self.measured_speedup,
            self.model_speedup
        )
    }
}

/// Times both modes over the same poses. Trials run in a fixed order, one
/// after the other.
pub fn bench_dim(cfg: &BenchConfig) -> Result<BenchReport, String> {
    let stack_len = cfg.stack_len.max(1);
    let k = CameraIntrinsics::from_fov(120.0, cfg.width, cfg.height).map_err(|e| e.to_string())?;
    let scene = build_terrain(&cfg.terrain).map_err(|e| e.to_string())?;
    let camera = CameraConfig { width: cfg.width, height: cfg.height, ..Default::default() };
    let clip = ClipConfig::default();
    let traj = ScriptedTrajectory {
        id: "bench".into(),
        start: [-0.5, 0.0],
        yaw: 0.05,
        speed: 0.5,
        yaw_rate: 0.2,
        steps: stack_len * cfg.trials.max(1),
    };
    let poses = traj.poses(&scene, &camera);
    let generator = DelayedGenerator { inner: StubGenerator::default(), delay: Duration::from_secs_f64(cfg.delay_ms / 1e3) };
    let prompt = reference_batch().pairs[0].clone();
    let frames = poses.len();

    let generate = |t: usize| -> Result<(GeneratedImage, crate::camera::DepthMap), String> {
        let (depth, labels) =
            raycast(&scene, &k, &poses[t], clip.render_near, clip.render_far).map_err(|e| e.to_string())?;
        let clipped =
            clip_depth(&depth, clip.conditioning_near as f32, clip.conditioning_far as f32).map_err(|e| e.to_string())?;
        let req = build_request(
            &clipped,
            &labels,
            &cfg.terrain.labels,
            &prompt,
            DEFAULT_CONTROL_STRENGTH,
            DEFAULT_DIFFUSION_STEPS,
            t as u64,
        );
        let view = ViewContext { terrain: cfg.terrain.clone(), pose: poses[t], intrinsics: k };
        Ok((generator.generate(&req, Some(&view)).map_err(|e| e.to_string())?, depth))
    };

    // every frame generated
    let start = Instant::now();
    for t in 0..frames {
        generate(t)?;
    }
    let per_frame = start.elapsed().as_secs_f64();

    // one keyframe per stack, the rest warped
    let mut gen_time = 0.0;
    let mut warp_time = 0.0;
    let mut warps = 0usize;
    let start = Instant::now();
    for s in (0..frames).step_by(stack_len) {
        let t0 = Instant::now();
        let (key, key_depth) = generate(s)?;
        gen_time += t0.elapsed().as_secs_f64();
        for t in s + 1..(s + stack_len).min(frames) {
            let t1 = Instant::now();
            let (depth, _) = raycast(&scene, &k, &poses[t], clip.render_near, clip.render_far).map_err(|e| e.to_string())?;
            warp_frame(&key.rgb, &key_depth, &poses[s], &depth, &poses[t], &k).map_err(|e| e.to_string())?;
            warp_time += t1.elapsed().as_secs_f64();
            warps += 1;
        }
    }
    let dim = start.elapsed().as_secs_f64();

    let keyframes = frames.div_ceil(stack_len);
    let t_gen = gen_time / keyframes as f64;
    let t_warp = if warps > 0 { warp_time / warps as f64 } else { 0.0 };
    Ok(BenchReport {
        config: cfg.clone(),
        frames,
        per_frame_ms: per_frame * 1e3 / frames as f64,
        dim_per_frame_ms: dim * 1e3 / frames as f64,
        t_gen_ms: t_gen * 1e3,
        t_warp_ms: t_warp * 1e3,
        measured_speedup: per_frame / dim,
        model_speedup: speedup_model(t_gen, t_warp, stack_len),
    })
}
