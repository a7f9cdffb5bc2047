//! Weaver workers: dequeue weave jobs, generate, store, ack.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::generator::Generator;

use super::broker::{AckOutcome, Broker};
use super::envelope::{JobEnvelope, WEAVE_QUEUE};
use super::store::Store;
use super::work::{process_weave, WeaveJob, WeaveOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KillPoint {
    AfterDequeue,
    AfterGenerate,
    AfterStore,
}

/// Deterministic crash schedule for tests. A delivery is doomed when
/// hash(job_id, attempt, seed) falls below `probability`; the worker then
/// dies at one of `points`, also picked by the hash. Only deliveries up to
/// `max_attempt` are eligible, so every job eventually gets through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultPlan {
    pub probability: f64,
    pub seed: u64,
    pub points: Vec<KillPoint>,
    pub max_attempt: u32,
}

impl Default for FaultPlan {
    fn default() -> Self {
        Self::none()
    }
}

impl FaultPlan {
    pub fn none() -> Self {
        Self { probability: 0.0, seed: 0, points: Vec::new(), max_attempt: 0 }
    }

    pub fn random(probability: f64, seed: u64) -> Self {
        Self {
            probability,
            seed,
            points: vec![KillPoint::AfterDequeue, KillPoint::AfterGenerate, KillPoint::AfterStore],
            max_attempt: 2,
        }
    }

    /// Where this delivery dies, if it does.
    pub fn kill_point(&self, job_id: &str, attempt: u32) -> Option<KillPoint> {
        if attempt > self.max_attempt || self.points.is_empty() {
            return None;
        }
        let mut h = Sha256::new();
        h.update(job_id.as_bytes());
        h.update(attempt.to_le_bytes());
        h.update(self.seed.to_le_bytes());
        let d = h.finalize();
        let x = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
        let pick = u64::from_le_bytes(d[8..16].try_into().expect("8 bytes"));
        ((x as f64 / u64::MAX as f64) < self.probability).then(|| self.points[(pick % self.points.len() as u64) as usize])
    }

    pub fn kills(&self, job_id: &str, attempt: u32, point: KillPoint) -> bool {
        self.kill_point(job_id, attempt) == Some(point)
    }
}

#[derive(Debug, Clone)]
pub struct WeaverOptions {
    pub worker_id: String,
    pub lease: Duration,
    /// How long one dequeue blocks before the stop flag is checked again.
    pub poll: Duration,
    pub conditioning_clip: (f64, f64),
    pub faults: FaultPlan,
}

impl WeaverOptions {
    pub fn new(worker_id: impl Into<String>, lease: Duration) -> Self {
        Self {
            worker_id: worker_id.into(),
            lease,
            poll: Duration::from_millis(100),
            conditioning_clip: (0.28, 5.0),
            faults: FaultPlan::none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorkerExit {
    Stopped,
    /// Simulated crash while holding `job_id`.
    Killed { job_id: String, point: KillPoint },
}

/// Counters shared by all workers of a pool.
#[derive(Debug, Default)]
pub struct WeaverStats {
    pub generated: AtomicUsize,
    pub already_done: AtomicUsize,
    pub acked: AtomicUsize,
    pub failures: AtomicUsize,
    pub kills: AtomicUsize,
}

/// Processes one delivered envelope. Returns `Some(point)` for a simulated
/// crash; the job is then left unacked.
fn handle(
    env: &JobEnvelope,
    broker: &dyn Broker,
    generator: &dyn Generator,
    store: &dyn Store,
    opts: &WeaverOptions,
    stats: &WeaverStats,
) -> Option<KillPoint> {
    let faults = &opts.faults;
    if faults.kills(&env.job_id, env.attempt, KillPoint::AfterDequeue) {
        return Some(KillPoint::AfterDequeue);
    }
    let job: WeaveJob = match serde_json::from_slice(&env.payload) {
        Ok(j) => j,
        Err(e) => {
            log::warn!("{}: undecodable weave job {} (attempt {}): {e}", opts.worker_id, env.job_id, env.attempt);
            stats.failures.fetch_add(1, Ordering::Relaxed);
            return None;
        }
    };
    let mut gate = || !faults.kills(&env.job_id, env.attempt, KillPoint::AfterGenerate);
    let outcome = process_weave(&job, generator, store, opts.conditioning_clip, &mut gate);
    match outcome {
        Ok(None) => return Some(KillPoint::AfterGenerate),
        Ok(Some(WeaveOutcome::Generated)) => {
            stats.generated.fetch_add(1, Ordering::Relaxed);
        }
        Ok(Some(WeaveOutcome::AlreadyDone)) => {
            stats.already_done.fetch_add(1, Ordering::Relaxed);
        }
        Err(e) => {
            log::warn!("{}: weave job {} attempt {} failed: {e}", opts.worker_id, env.job_id, env.attempt);
            stats.failures.fetch_add(1, Ordering::Relaxed);
            return None;
        }
    }
    if faults.kills(&env.job_id, env.attempt, KillPoint::AfterStore) {
        return Some(KillPoint::AfterStore);
    }
    match broker.ack(WEAVE_QUEUE, &env.job_id) {
        Ok(AckOutcome::Acked) => {
            stats.acked.fetch_add(1, Ordering::Relaxed);
        }
        Ok(AckOutcome::Unknown) => log::warn!("{}: ack of {} was a no-op", opts.worker_id, env.job_id),
        Err(e) => log::warn!("{}: ack of {} failed: {e}", opts.worker_id, env.job_id),
    }
    None
}

/// Worker loop. Runs until `stop` is set or a simulated crash.
pub fn run_weaver(
    broker: &dyn Broker,
    generator: &dyn Generator,
    store: &dyn Store,
    opts: &WeaverOptions,
    stats: &WeaverStats,
    stop: &AtomicBool,
) -> WorkerExit {
    while !stop.load(Ordering::Relaxed) {
        let env = match broker.dequeue(WEAVE_QUEUE, &opts.worker_id, opts.lease, opts.poll) {
            Ok(Some(env)) => env,
            Ok(None) => continue,
            Err(e) => {
                log::warn!("{}: dequeue failed: {e}", opts.worker_id);
                thread::sleep(opts.poll);
                continue;
            }
        };
        if let Some(point) = handle(&env, broker, generator, store, opts, stats) {
            stats.kills.fetch_add(1, Ordering::Relaxed);
            log::info!("{}: killed at {point:?} holding {}", opts.worker_id, env.job_id);
            return WorkerExit::Killed { job_id: env.job_id, point };
        }
    }
    WorkerExit::Stopped
}

/// A fixed-size set of weaver threads. Crashed workers are replaced by a
/// fresh worker with a new id.
pub struct WeaverPool {
    stop: Arc<AtomicBool>,
    stats: Arc<WeaverStats>,
    handles: Vec<JoinHandle<()>>,
}

impl WeaverPool {
    pub fn spawn(
        workers: usize,
        broker: Arc<dyn Broker>,
        generator: Arc<dyn Generator>,
        store: Arc<dyn Store>,
        template: WeaverOptions,
    ) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let stats = Arc::new(WeaverStats::default());
        let handles = (0..workers)
            .map(|slot| {
                let (stop, stats) = (stop.clone(), stats.clone());
                let (broker, generator, store) = (broker.clone(), generator.clone(), store.clone());
                let template = template.clone();
                thread::Builder::new()
                    .name(format!("weaver-{slot}"))
                    .spawn(move || {
                        for generation in 0.. {
                            let opts = WeaverOptions {
                                worker_id: format!("{}-{slot}.{generation}", template.worker_id),
                                ..template.clone()
                            };
                            match run_weaver(&*broker, &*generator, &*store, &opts, &stats, &stop) {
                                WorkerExit::Stopped => break,
                                WorkerExit::Killed { .. } => continue,
                            }
                        }
                    })
                    .expect("spawn weaver thread")
            })
            .collect();
        Self { stop, stats, handles }
    }

    pub fn stats(&self) -> &WeaverStats {
        &self.stats
    }

    pub fn shutdown(mut self) -> Arc<WeaverStats> {
        self.stop_and_join();
        self.stats.clone()
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for WeaverPool {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}
