//! Offline batch: unroll every trajectory, weave every keyframe, then
//! assemble the stacks.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::generator::Generator;
use crate::prompts::PromptPair;

use super::broker::{Broker, BrokerError};
use super::envelope::{JobEnvelope, JobKind, UNROLL_QUEUE, WEAVE_QUEUE};
use super::store::{Downsizing, Store};
use super::trajectory::sample_trajectories;
use super::weaver::{FaultPlan, WeaverOptions, WeaverPool};
use super::work::{assemble_segment, process_unroll, unroll_job_id, UnrollJob};
use super::{PipelineError, TaskConfig};

#[derive(Clone)]
pub struct OfflineOptions {
    /// In-process weavers. When `None`, external weavers are expected to
    /// serve the broker.
    pub generator: Option<Arc<dyn Generator>>,
    pub faults: FaultPlan,
    /// Give up waiting for the weave queue after this long.
    pub timeout: Duration,
}

impl OfflineOptions {
    pub fn with_generator(generator: Arc<dyn Generator>) -> Self {
        Self { generator: Some(generator), faults: FaultPlan::none(), timeout: Duration::from_secs(3600) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub task: String,
    pub trajectories: usize,
    pub weave_jobs: usize,
    pub stacks: usize,
    /// Mean over stored stacks of the per-stack hole fraction.
    pub hole_fraction: f64,
    pub wall_time_s: f64,
    /// Job ids that exhausted their attempts.
    pub parked: Vec<String>,
    /// Segments without a stack, as `trajectory/segment`.
    pub missing: Vec<String>,
}

impl BatchReport {
    pub fn complete(&self) -> bool {
        self.parked.is_empty() && self.missing.is_empty()
    }
}

fn enqueue_idempotent(broker: &dyn Broker, queue: &str, env: JobEnvelope) -> Result<(), BrokerError> {
    match broker.enqueue(queue, env) {
        Ok(()) | Err(BrokerError::DuplicateJob(_)) => Ok(()),
        Err(e) => Err(e),
    }
}

fn wait_drained(broker: &dyn Broker, queue: &str, deadline: Instant) -> Result<(), PipelineError> {
    loop {
        if broker.stats(queue)?.drained() {
            return Ok(());
        }
        if Instant::now() > deadline {
            return Err(PipelineError::Timeout(format!("queue `{queue}` not drained")));
        }
        thread::sleep(Duration::from_millis(20));
    }
}

/// Runs one offline iteration. Trajectory `i` uses `prompts[i % len]`.
pub fn run_offline_batch(
    cfg: &TaskConfig,
    prompts: &[PromptPair],
    broker: Arc<dyn Broker>,
    store: Arc<dyn Store>,
    opts: &OfflineOptions,
) -> Result<BatchReport, PipelineError> {
    cfg.validate().map_err(PipelineError::Config)?;
    let start = Instant::now();
    let deadline = start + opts.timeout;
    let trajectories = sample_trajectories(&cfg.trajectories);
    let mut report = BatchReport { task: cfg.task.clone(), trajectories: trajectories.len(), ..Default::default() };
    if trajectories.is_empty() {
        report.wall_time_s = start.elapsed().as_secs_f64();
        return Ok(report);
    }
    if prompts.is_empty() {
        return Err(PipelineError::Config("no prompts".into()));
    }

    for (i, t) in trajectories.iter().enumerate() {
        let job = UnrollJob { config: cfg.clone(), trajectory: t.clone(), prompt: prompts[i % prompts.len()].clone() };
        let mut env = JobEnvelope::new(JobKind::Unroll, serde_json::to_vec(&job).expect("unroll job serializes"));
        env.job_id = unroll_job_id(&cfg.task, &t.id);
        enqueue_idempotent(&*broker, UNROLL_QUEUE, env)?;
    }

    // unroll phase
    let lease = Duration::from_secs_f64(cfg.workers.lease_s);
    let errors = Mutex::new(Vec::new());
    let done = AtomicBool::new(false);
    thread::scope(|s| {
        for w in 0..cfg.workers.unroll_workers.max(1) {
            let (broker, store, errors, done) = (&broker, &store, &errors, &done);
            s.spawn(move || {
                let id = format!("unroll-{w}");
                while !done.load(Ordering::Relaxed) {
                    let env = match broker.dequeue(UNROLL_QUEUE, &id, lease, Duration::from_millis(50)) {
                        Ok(Some(env)) => env,
                        Ok(None) => {
                            if broker.stats(UNROLL_QUEUE).map(|s| s.drained()).unwrap_or(false) {
                                break;
                            }
                            continue;
                        }
                        Err(e) => {
                            errors.lock().expect("errors").push(e.to_string());
                            break;
                        }
                    };
                    let result = serde_json::from_slice::<UnrollJob>(&env.payload)
                        .map_err(|e| e.to_string())
                        .and_then(|job| process_unroll(&job, &**broker, &**store).map_err(|e| e.to_string()));
                    match result {
                        Ok(_) => {
                            let _ = broker.ack(UNROLL_QUEUE, &env.job_id);
                        }
                        Err(e) => log::warn!("{id}: unroll {} attempt {} failed: {e}", env.job_id, env.attempt),
                    }
                }
            });
        }
        if wait_drained(&*broker, UNROLL_QUEUE, deadline).is_err() {
            errors.lock().expect("errors").push("unroll phase timed out".into());
        }
        done.store(true, Ordering::Relaxed);
    });
    if let Some(e) = errors.into_inner().expect("errors").into_iter().next() {
        return Err(PipelineError::Timeout(e));
    }

    // weave phase
    let segments: Vec<(String, u32)> = trajectories
        .iter()
        .flat_map(|t| (0..t.segments(cfg.stack_len).len() as u32).map(move |s| (t.id.clone(), s)))
        .collect();
    report.weave_jobs = segments.len();
    let pool = opts.generator.as_ref().map(|g| {
        let mut template = WeaverOptions::new("weaver", lease);
        template.conditioning_clip = (cfg.clip.conditioning_near, cfg.clip.conditioning_far);
        template.faults = opts.faults.clone();
        WeaverPool::spawn(cfg.workers.weavers.max(1), broker.clone(), g.clone(), store.clone(), template)
    });
    let waited = wait_drained(&*broker, WEAVE_QUEUE, deadline);
    if let Some(pool) = pool {
        pool.shutdown();
    }
    waited?;
    let parked_weave: Vec<String> = broker.parked(WEAVE_QUEUE)?.into_iter().map(|e| e.job_id).collect();
    let parked_unroll: Vec<String> = broker.parked(UNROLL_QUEUE)?.into_iter().map(|e| e.job_id).collect();

    // stack assembly
    let out: Arc<dyn Store> = match cfg.downsize_width {
        Some(w) => Arc::new(Downsizing { inner: store.clone(), max_width: w }),
        None => store.clone(),
    };
    let scene = cfg.terrain.name();
    let results: Vec<_> = segments
        .par_iter()
        .map(|(traj, seg)| {
            let r = assemble_segment(&*store, &*out, &cfg.task, scene, traj, *seg, cfg.fill);
            (traj, *seg, r)
        })
        .collect();
    let mut holes = 0.0;
    for (traj, seg, r) in results {
        match r {
            Ok((_, h)) => {
                report.stacks += 1;
                holes += h;
            }
            Err(e) => {
                log::warn!("no stack for {traj}/{seg}: {e}");
                report.missing.push(format!("{traj}/{seg:04}"));
            }
        }
    }
    if report.stacks > 0 {
        report.hole_fraction = holes / report.stacks as f64;
    }
    report.parked = parked_unroll.into_iter().chain(parked_weave).collect();
    report.parked.sort();
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}
