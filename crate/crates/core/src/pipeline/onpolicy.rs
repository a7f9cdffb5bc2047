//! On-policy loop: each segment asks an RPC weaver for its keyframe, then
//! warps the keyframe locally over the following frames.

use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::camera::DepthMap;
use crate::dim::{assemble_stack, FrameRender, Provenance};
use crate::generator::ViewContext;
use crate::prompts::PromptPair;
use crate::scene::{build_terrain, raycast};

use super::broker::Broker;
use super::rpc::{RpcClient, RpcError};
use super::store::{Files, Store};
use super::trajectory::{sample_trajectories, ScriptedTrajectory};
use super::work::{conditioning_request, keyframe_files, namespace, segment_seed, KEYFRAME, STACK};
use super::{PipelineError, TaskConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SegmentStatus {
    Stored { hole_fraction: f64 },
    TimedOut,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub trajectory_id: String,
    pub segment: u32,
    pub frames: usize,
    #[serde(flatten)]
    pub status: SegmentStatus,
    pub rpc_called: bool,
    pub rpc_latency_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OnPolicyReport {
    pub task: String,
    pub trajectories: usize,
    pub rpc_calls: usize,
    pub stacks: usize,
    pub segments: Vec<SegmentRecord>,
    pub wall_time_s: f64,
}

impl OnPolicyReport {
    pub fn flagged(&self) -> impl Iterator<Item = &SegmentRecord> {
        self.segments.iter().filter(|s| !matches!(s.status, SegmentStatus::Stored { .. }))
    }
}

#[allow(clippy::too_many_arguments)]
fn run_segment(
    cfg: &TaskConfig,
    client: &RpcClient,
    store: &dyn Store,
    traj: &ScriptedTrajectory,
    prompt: &PromptPair,
    seg: u32,
    renders: Vec<(DepthMap, crate::camera::Pose)>,
    labels: &crate::scene::LabelImage,
    deadline: Duration,
) -> (SegmentStatus, bool, f64) {
    let fail = |e: String| (SegmentStatus::Failed { error: e }, false, 0.0);
    let k = match cfg.camera.intrinsics() {
        Ok(k) => k,
        Err(e) => return fail(e.to_string()),
    };
    let seed = segment_seed(cfg.generation.seed, &traj.id, seg);
    let request = match conditioning_request(cfg, &renders[0].0, labels, prompt, seed) {
        Ok(r) => r,
        Err(e) => return fail(e.to_string()),
    };
    let view = ViewContext { terrain: cfg.terrain.clone(), pose: renders[0].1, intrinsics: k };
    let image = match client.call(&request, Some(&view), deadline) {
        Ok(img) => img,
        Err(RpcError::Timeout(_)) => return (SegmentStatus::TimedOut, true, deadline.as_secs_f64() * 1e3),
        Err(e) => return (SegmentStatus::Failed { error: e.to_string() }, true, 0.0),
    };
    let fail = |e: String| (SegmentStatus::Failed { error: e }, true, image.latency_ms);
    let latency = image.latency_ms;
    let frames: Vec<FrameRender> = renders.into_iter().map(|(depth, pose)| FrameRender { depth, pose }).collect();
    let provenance = Provenance {
        scene_id: cfg.terrain.name().into(),
        prompt_id: prompt.id.clone(),
        generator_seed: seed,
        trajectory_id: Some(traj.id.clone()),
        segment_index: Some(seg),
    };
    let stack = match assemble_stack(&image.rgb, &frames, &k, cfg.fill, provenance) {
        Ok(s) => s,
        Err(e) => return fail(e.to_string()),
    };
    let scene = cfg.terrain.name();
    let stored = keyframe_files(&image.rgb, &image.request_digest, image.generator, &prompt.id, seed)
        .map_err(|e| e.to_string())
        .and_then(|f| store.put(&namespace(&cfg.task, scene, &traj.id, seg, KEYFRAME), f).map_err(|e| e.to_string()))
        .and_then(|_| stack.to_files().map_err(|e| e.to_string()))
        .and_then(|f| {
            let files: Files = f.into_iter().collect();
            store.put(&namespace(&cfg.task, scene, &traj.id, seg, STACK), files).map_err(|e| e.to_string())
        });
    match stored {
        Ok(_) => (SegmentStatus::Stored { hole_fraction: stack.hole_fraction() }, true, latency),
        Err(e) => fail(e),
    }
}

fn run_trajectory(
    cfg: &TaskConfig,
    client: &RpcClient,
    store: &dyn Store,
    traj: &ScriptedTrajectory,
    prompt: &PromptPair,
    deadline: Duration,
) -> Result<Vec<SegmentRecord>, PipelineError> {
    let scene = build_terrain(&cfg.terrain).map_err(|e| PipelineError::Config(e.to_string()))?;
    let k = cfg.camera.intrinsics().map_err(|e| PipelineError::Config(e.to_string()))?;
    let poses = traj.poses(&scene, &cfg.camera);
    let mut out = Vec::new();
    for (s, range) in traj.segments(cfg.stack_len).into_iter().enumerate() {
        let mut renders = Vec::with_capacity(range.len());
        let mut key_labels = None;
        for t in range.clone() {
            let (depth, labels) = raycast(&scene, &k, &poses[t], cfg.clip.render_near, cfg.clip.render_far)
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            key_labels.get_or_insert(labels);
            renders.push((depth, poses[t]));
        }
        let frames = renders.len();
        let labels = key_labels.expect("segments are non-empty");
        let (status, rpc_called, rpc_latency_ms) = run_segment(cfg, client, store, traj, prompt, s as u32, renders, &labels, deadline);
        if !matches!(status, SegmentStatus::Stored { .. }) {
            log::warn!("{}/{s}: {status:?}", traj.id);
        }
        out.push(SegmentRecord { trajectory_id: traj.id.clone(), segment: s as u32, frames, status, rpc_called, rpc_latency_ms });
    }
    Ok(out)
}

/// Runs the configured trajectories across `cfg.workers.unroll_workers`
/// threads, each with its own RPC client. Trajectory `i` uses
/// `prompts[i % len]`.
pub fn run_onpolicy_loop(
    cfg: &TaskConfig,
    prompts: &[PromptPair],
    broker: Arc<dyn Broker>,
    store: Arc<dyn Store>,
) -> Result<OnPolicyReport, PipelineError> {
    cfg.validate().map_err(PipelineError::Config)?;
    let start = Instant::now();
    let trajectories = sample_trajectories(&cfg.trajectories);
    run_trajectories(cfg, &trajectories, prompts, broker, store).map(|mut r| {
        r.wall_time_s = start.elapsed().as_secs_f64();
        r
    })
}

/// Same as [`run_onpolicy_loop`] for an explicit trajectory list.
pub fn run_trajectories(
    cfg: &TaskConfig,
    trajectories: &[ScriptedTrajectory],
    prompts: &[PromptPair],
    broker: Arc<dyn Broker>,
    store: Arc<dyn Store>,
) -> Result<OnPolicyReport, PipelineError> {
    let start = Instant::now();
    let mut report = OnPolicyReport { task: cfg.task.clone(), trajectories: trajectories.len(), ..Default::default() };
    if trajectories.is_empty() {
        return Ok(report);
    }
    if prompts.is_empty() {
        return Err(PipelineError::Config("no prompts".into()));
    }
    let deadline = Duration::from_secs_f64(cfg.workers.rpc_deadline_s);
    let next = Mutex::new(0usize);
    let results = Mutex::new(Vec::new());
    thread::scope(|s| {
        for _ in 0..cfg.workers.unroll_workers.max(1).min(trajectories.len()) {
            let (broker, store, next, results) = (&broker, &store, &next, &results);
            s.spawn(move || {
                let client = RpcClient::new(broker.clone());
                loop {
                    let i = {
                        let mut n = next.lock().expect("cursor");
                        let i = *n;
                        *n += 1;
                        i
                    };
                    let Some(traj) = trajectories.get(i) else { break };
                    let r = run_trajectory(cfg, &client, &**store, traj, &prompts[i % prompts.len()], deadline);
                    results.lock().expect("results").push((i, r));
                }
            });
        }
    });
    let mut results = results.into_inner().expect("results");
    results.sort_by_key(|(i, _)| *i);
    for (_, r) in results {
        report.segments.extend(r?);
    }
    report.rpc_calls = report.segments.iter().filter(|s| s.rpc_called).count();
    report.stacks = report.segments.iter().filter(|s| matches!(s.status, SegmentStatus::Stored { .. })).count();
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}
