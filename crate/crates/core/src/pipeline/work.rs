//! Job payloads and the work each job kind performs.
//!
//! Store layout per trajectory segment `s`:
//!
//! * `conditioning`: `depth_XX.bin` for every frame of the segment,
//!   `labels.bin` and `disparity.png` for the keyframe, `flow_XX.bin`
//!   (keyframe to frame XX) for the other frames;
//! * `keyframe`: `keyframe.png` and `generation.json`;
//! * `stack`: the frame-stack directory files.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::camera::{clip_depth, CameraIntrinsics, DepthMap, Pose};
use crate::dim::{assemble_stack, FillStrategy, FrameRender, Provenance};
use crate::flow::{compute_visible_flow, DEFAULT_VISIBILITY_TOL};
use crate::generator::{build_request, GenerationRequest, Generator, GeneratorKind, ViewContext};
use crate::imageio::{decode_rgb_png, disparity_png, encode_rgb_png};
use crate::prompts::PromptPair;
use crate::raster::{self, RasterError};
use crate::scene::{build_terrain, raycast, TerrainSpec};

use super::broker::{Broker, BrokerError};
use super::config::TaskConfig;
use super::envelope::{JobEnvelope, JobKind, WEAVE_QUEUE};
use super::store::{Files, Namespace, Store, StoreError, StoreKey};
use super::trajectory::ScriptedTrajectory;

pub const CONDITIONING: &str = "conditioning";
pub const KEYFRAME: &str = "keyframe";
pub const STACK: &str = "stack";

#[derive(Debug, Error)]
pub enum WorkError {
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("broker: {0}")]
    Broker(#[from] BrokerError),
    #[error("generator: {0}")]
    Generator(#[from] crate::generator::GeneratorError),
    #[error("payload: {0}")]
    Payload(String),
    #[error("missing artifact {0}")]
    Missing(String),
    #[error("{0}")]
    Other(String),
}

impl From<RasterError> for WorkError {
    fn from(e: RasterError) -> Self {
        WorkError::Payload(e.to_string())
    }
}

/// One trajectory to render.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnrollJob {
    pub config: TaskConfig,
    pub trajectory: ScriptedTrajectory,
    pub prompt: PromptPair,
}

/// One keyframe to generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeaveJob {
    pub task: String,
    pub scene: String,
    pub trajectory_id: String,
    pub segment_index: u32,
    pub conditioning: StoreKey,
    pub terrain: TerrainSpec,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub prompt: PromptPair,
    pub control_strength: f64,
    pub diffusion_steps: u32,
    pub seed: u64,
}

/// What a weaver records next to the keyframe. Wall time is deliberately
/// left out so stored bytes depend only on the request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub request_digest: String,
    pub generator: GeneratorKind,
    pub prompt_id: String,
    pub seed: u64,
}

pub fn weave_job_id(task: &str, trajectory_id: &str, segment: u32) -> String {
    format!("weave-{task}-{trajectory_id}-{segment:04}")
}

pub fn unroll_job_id(task: &str, trajectory_id: &str) -> String {
    format!("unroll-{task}-{trajectory_id}")
}

/// Per-keyframe generator seed, so segments differ but reruns agree.
pub fn segment_seed(base: u64, trajectory_id: &str, segment: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(trajectory_id.as_bytes());
    h.update(segment.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

pub fn namespace(task: &str, scene: &str, trajectory_id: &str, segment: u32, artifact: &str) -> Namespace {
    Namespace::new(task, scene, trajectory_id, Some(segment), artifact)
}

fn other<E: std::fmt::Display>(e: E) -> WorkError {
    WorkError::Other(e.to_string())
}

/// The conditioning request for a keyframe: disparity clipped to the
/// conditioning range, masks from the labels.
pub fn conditioning_request(
    cfg: &TaskConfig,
    depth: &DepthMap,
    labels: &crate::scene::LabelImage,
    prompt: &PromptPair,
    seed: u64,
) -> Result<GenerationRequest, WorkError> {
    let clipped = clip_depth(depth, cfg.clip.conditioning_near as f32, cfg.clip.conditioning_far as f32).map_err(other)?;
    Ok(build_request(
        &clipped,
        labels,
        &cfg.terrain.labels,
        prompt,
        cfg.generation.control_strength,
        cfg.generation.diffusion_steps,
        seed,
    ))
}

/// Renders every frame of the trajectory, stores conditioning artifacts
/// per segment and enqueues one weave job per keyframe. Returns the weave
/// job ids. Safe to repeat: store writes and job ids are deterministic.
pub fn process_unroll(job: &UnrollJob, broker: &dyn Broker, store: &dyn Store) -> Result<Vec<String>, WorkError> {
    let cfg = &job.config;
    let k = cfg.camera.intrinsics().map_err(other)?;
    let scene_geom = build_terrain(&cfg.terrain).map_err(other)?;
    let scene = cfg.terrain.name();
    let poses = job.trajectory.poses(&scene_geom, &cfg.camera);
    let mut ids = Vec::new();
    for (s, range) in job.trajectory.segments(cfg.stack_len).into_iter().enumerate() {
        let s = s as u32;
        let mut files = Files::new();
        let mut key_depth = None;
        for (j, t) in range.clone().enumerate() {
            let (depth, labels) = raycast(&scene_geom, &k, &poses[t], cfg.clip.render_near, cfg.clip.render_far).map_err(other)?;
            files.insert(format!("depth_{j:02}.bin"), raster::depth_to_bytes(&depth, &poses[t], &k));
            if j == 0 {
                let mut buf = Vec::new();
                raster::write_labels(&mut buf, &labels, cfg.clip.render_near, cfg.clip.render_far, &poses[t], &k)
                    .map_err(other)?;
                files.insert("labels.bin".into(), buf);
                let clipped =
                    clip_depth(&depth, cfg.clip.conditioning_near as f32, cfg.clip.conditioning_far as f32).map_err(other)?;
                files.insert(
                    "disparity.png".into(),
                    disparity_png(&crate::camera::normalize_disparity(&clipped)).map_err(other)?,
                );
                key_depth = Some(depth);
            } else {
                let kd = key_depth.as_ref().expect("keyframe rendered first");
                let flow = compute_visible_flow(kd, &depth, &poses[range.start], &poses[t], &k, DEFAULT_VISIBILITY_TOL)
                    .map_err(other)?;
                let mut buf = Vec::new();
                raster::write_flow(&mut buf, &flow, cfg.clip.render_near, cfg.clip.render_far, &poses[range.start], &k)
                    .map_err(other)?;
                files.insert(format!("flow_{j:02}.bin"), buf);
            }
        }
        let (conditioning, _) = store.put(&namespace(&cfg.task, scene, &job.trajectory.id, s, CONDITIONING), files)?;
        let weave = WeaveJob {
            task: cfg.task.clone(),
            scene: scene.to_string(),
            trajectory_id: job.trajectory.id.clone(),
            segment_index: s,
            conditioning,
            terrain: cfg.terrain.clone(),
            pose: poses[range.start],
            intrinsics: k,
            prompt: job.prompt.clone(),
            control_strength: cfg.generation.control_strength,
            diffusion_steps: cfg.generation.diffusion_steps,
            seed: segment_seed(cfg.generation.seed, &job.trajectory.id, s),
        };
        let mut env = JobEnvelope::new(JobKind::Weave, serde_json::to_vec(&weave).expect("weave job serializes"));
        env.job_id = weave_job_id(&cfg.task, &job.trajectory.id, s);
        match broker.enqueue(WEAVE_QUEUE, env.clone()) {
            Ok(()) | Err(BrokerError::DuplicateJob(_)) => {}
            Err(e) => return Err(e.into()),
        }
        ids.push(env.job_id);
    }
    Ok(ids)
}

pub(crate) fn load_keyframe_conditioning(store: &dyn Store, job: &WeaveJob, cfg_clip: (f64, f64)) -> Result<GenerationRequest, WorkError> {
    let files = store.get(&job.conditioning)?.ok_or_else(|| WorkError::Missing(job.conditioning.to_string()))?;
    let get = |n: &str| files.get(n).ok_or_else(|| WorkError::Missing(format!("{}/{n}", job.conditioning)));
    let (depth, _) = raster::read_depth(&mut get("depth_00.bin")?.as_slice())?;
    let (labels, _) = raster::read_labels(&mut get("labels.bin")?.as_slice())?;
    let clipped = clip_depth(&depth, cfg_clip.0 as f32, cfg_clip.1 as f32).map_err(other)?;
    Ok(build_request(
        &clipped,
        &labels,
        &job.terrain.labels,
        &job.prompt,
        job.control_strength,
        job.diffusion_steps,
        job.seed,
    ))
}

/// Outcome of one weave job.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeaveOutcome {
    Generated,
    /// The keyframe was already in the store (a redelivered job).
    AlreadyDone,
}

/// Generates and stores one keyframe unless it is already stored.
/// `before_store` runs between generation and the store write (used for
/// fault injection).
pub fn process_weave(
    job: &WeaveJob,
    generator: &dyn Generator,
    store: &dyn Store,
    conditioning_clip: (f64, f64),
    before_store: &mut dyn FnMut() -> bool,
) -> Result<Option<WeaveOutcome>, WorkError> {
    let ns = namespace(&job.task, &job.scene, &job.trajectory_id, job.segment_index, KEYFRAME);
    if !store.list(&ns)?.is_empty() {
        return Ok(Some(WeaveOutcome::AlreadyDone));
    }
    let request = load_keyframe_conditioning(store, job, conditioning_clip)?;
    let view = ViewContext { terrain: job.terrain.clone(), pose: job.pose, intrinsics: job.intrinsics };
    let image = generator.generate(&request, Some(&view))?;
    if !before_store() {
        return Ok(None);
    }
    store.put(&ns, keyframe_files(&image.rgb, &image.request_digest, image.generator, &job.prompt.id, job.seed)?)?;
    Ok(Some(WeaveOutcome::Generated))
}

pub fn keyframe_files(
    rgb: &image::RgbImage,
    request_digest: &str,
    generator: GeneratorKind,
    prompt_id: &str,
    seed: u64,
) -> Result<Files, WorkError> {
    let record = GenerationRecord { request_digest: request_digest.into(), generator, prompt_id: prompt_id.into(), seed };
    let mut files = Files::new();
    files.insert("keyframe.png".into(), encode_rgb_png(rgb).map_err(other)?);
    files.insert("generation.json".into(), serde_json::to_vec_pretty(&record).expect("record serializes"));
    Ok(files)
}

/// Builds the frame stack for one segment from conditioning and keyframe
/// in `store` and writes it to `out`. Returns the stack key and its hole
/// fraction.
pub fn assemble_segment(
    store: &dyn Store,
    out: &dyn Store,
    task: &str,
    scene: &str,
    trajectory_id: &str,
    segment: u32,
    fill: FillStrategy,
) -> Result<(StoreKey, f64), WorkError> {
    let fetch = |artifact: &str| -> Result<Files, WorkError> {
        let ns = namespace(task, scene, trajectory_id, segment, artifact);
        store.get_one(&ns)?.map(|(_, f)| f).ok_or_else(|| WorkError::Missing(ns.to_string()))
    };
    let cond = fetch(CONDITIONING)?;
    let key = fetch(KEYFRAME)?;
    let keyframe = decode_rgb_png(key.get("keyframe.png").ok_or_else(|| WorkError::Missing("keyframe.png".into()))?)
        .map_err(other)?;
    let record: GenerationRecord = serde_json::from_slice(
        key.get("generation.json").ok_or_else(|| WorkError::Missing("generation.json".into()))?,
    )
    .map_err(other)?;
    let mut renders = Vec::new();
    let mut k = None;
    for j in 0.. {
        let Some(bytes) = cond.get(&format!("depth_{j:02}.bin")) else { break };
        let (depth, header) = raster::read_depth(&mut bytes.as_slice())?;
        k = Some(header.intrinsics);
        renders.push(FrameRender { depth, pose: header.pose });
    }
    let k = k.ok_or_else(|| WorkError::Missing("depth_00.bin".into()))?;
    let provenance = Provenance {
        scene_id: scene.into(),
        prompt_id: record.prompt_id.clone(),
        generator_seed: record.seed,
        trajectory_id: Some(trajectory_id.into()),
        segment_index: Some(segment),
    };
    let stack = assemble_stack(&keyframe, &renders, &k, fill, provenance).map_err(other)?;
    let holes = stack.hole_fraction();
    let files: Files = stack.to_files().map_err(other)?.into_iter().collect();
    let (sk, _) = out.put(&namespace(task, scene, trajectory_id, segment, STACK), files)?;
    Ok((sk, holes))
}
