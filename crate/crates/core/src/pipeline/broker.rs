//! Lease-based job broker with at-least-once delivery.
//!
//! A dequeued job is invisible to other workers until its lease runs out.
//! An unacknowledged job then goes back to the front of its queue with
//! `attempt + 1`; a job whose next attempt would exceed `max_attempts` is
//! parked instead. Acks are idempotent.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::envelope::JobEnvelope;

pub const DEFAULT_MAX_ATTEMPTS: u32 = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BrokerError {
    #[error("broker unreachable: {0}")]
    Unreachable(String),
    #[error("job `{0}` was already enqueued")]
    DuplicateJob(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckOutcome {
    Acked,
    /// Already acked, parked or never enqueued. Nothing changes.
    Unknown,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueStats {
    pub ready: usize,
    pub in_flight: usize,
    pub parked: usize,
    pub acked: usize,
    pub enqueued: usize,
    pub redelivered: usize,
}

impl QueueStats {
    /// Nothing waiting and nothing leased.
    pub fn drained(&self) -> bool {
        self.ready == 0 && self.in_flight == 0
    }
}

pub trait Broker: Send + Sync {
    fn enqueue(&self, queue: &str, envelope: JobEnvelope) -> Result<(), BrokerError>;

    /// Leases the next job for `lease`, waiting up to `wait` for one.
    fn dequeue(&self, queue: &str, worker_id: &str, lease: Duration, wait: Duration)
        -> Result<Option<JobEnvelope>, BrokerError>;

    fn ack(&self, queue: &str, job_id: &str) -> Result<AckOutcome, BrokerError>;

    fn stats(&self, queue: &str) -> Result<QueueStats, BrokerError>;

    fn parked(&self, queue: &str) -> Result<Vec<JobEnvelope>, BrokerError>;
}

struct Lease {
    envelope: JobEnvelope,
    until: Instant,
}

#[derive(Default)]
struct Queue {
    ready: VecDeque<JobEnvelope>,
    in_flight: HashMap<String, Lease>,
    parked: Vec<JobEnvelope>,
    seen: HashSet<String>,
    acked: HashSet<String>,
    redelivered: usize,
}

impl Queue {
    fn reap(&mut self, now: Instant, max_attempts: u32) {
        let expired: Vec<String> =
            self.in_flight.iter().filter(|(_, l)| l.until <= now).map(|(id, _)| id.clone()).collect();
        for id in expired {
            let mut env = self.in_flight.remove(&id).expect("listed above").envelope;
            if env.attempt >= max_attempts {
                warn!("parking job {} after {} attempts", env.job_id, env.attempt);
                self.parked.push(env);
            } else {
                env.attempt += 1;
                self.redelivered += 1;
                self.ready.push_front(env);
            }
        }
    }

    fn next_expiry(&self) -> Option<Instant> {
        self.in_flight.values().map(|l| l.until).min()
    }
}

/// In-process broker. Every operation holds one lock, so each queue is
/// linearizable.
pub struct MemoryBroker {
    queues: Mutex<HashMap<String, Queue>>,
    ready: Condvar,
    max_attempts: u32,
}

impl Default for MemoryBroker {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_ATTEMPTS)
    }
}

impl MemoryBroker {
    pub fn new(max_attempts: u32) -> Self {
        Self { queues: Mutex::new(HashMap::new()), ready: Condvar::new(), max_attempts: max_attempts.max(1) }
    }
}

impl Broker for MemoryBroker {
    fn enqueue(&self, queue: &str, envelope: JobEnvelope) -> Result<(), BrokerError> {
        let mut qs = self.queues.lock().expect("broker lock");
        let q = qs.entry(queue.to_string()).or_default();
        if !q.seen.insert(envelope.job_id.clone()) {
            return Err(BrokerError::DuplicateJob(envelope.job_id));
        }
        q.ready.push_back(envelope);
        self.ready.notify_all();
        Ok(())
    }

    fn dequeue(
        &self,
        queue: &str,
        worker_id: &str,
        lease: Duration,
        wait: Duration,
    ) -> Result<Option<JobEnvelope>, BrokerError> {
        let give_up = Instant::now() + wait;
        let mut qs = self.queues.lock().expect("broker lock");
        loop {
            let now = Instant::now();
            let q = qs.entry(queue.to_string()).or_default();
            q.reap(now, self.max_attempts);
            if let Some(env) = q.ready.pop_front() {
                log::trace!("{worker_id} leased {} (attempt {})", env.job_id, env.attempt);
                q.in_flight.insert(env.job_id.clone(), Lease { envelope: env.clone(), until: now + lease });
                return Ok(Some(env));
            }
            if now >= give_up {
                return Ok(None);
            }
            // wake for new work, the end of the wait, or the next lease expiry
            let mut until = give_up;
            if let Some(t) = q.next_expiry() {
                until = until.min(t);
            }
            let timeout = until.saturating_duration_since(now).max(Duration::from_millis(1));
            qs = self.ready.wait_timeout(qs, timeout).expect("broker lock").0;
        }
    }

    fn ack(&self, queue: &str, job_id: &str) -> Result<AckOutcome, BrokerError> {
        let mut qs = self.queues.lock().expect("broker lock");
        let q = qs.entry(queue.to_string()).or_default();
        let found = if q.in_flight.remove(job_id).is_some() {
            true
        } else if let Some(pos) = q.ready.iter().position(|e| e.job_id == job_id) {
            // lease ran out but the original worker finished after all
            q.ready.remove(pos);
            true
        } else {
            false
        };
        if found {
            q.acked.insert(job_id.to_string());
            Ok(AckOutcome::Acked)
        } else {
            warn!("ack for unknown, parked or already acked job {job_id} on {queue}");
            Ok(AckOutcome::Unknown)
        }
    }

    fn stats(&self, queue: &str) -> Result<QueueStats, BrokerError> {
        let mut qs = self.queues.lock().expect("broker lock");
        let q = qs.entry(queue.to_string()).or_default();
        q.reap(Instant::now(), self.max_attempts);
        Ok(QueueStats {
            ready: q.ready.len(),
            in_flight: q.in_flight.len(),
            parked: q.parked.len(),
            acked: q.acked.len(),
            enqueued: q.seen.len(),
            redelivered: q.redelivered,
        })
    }

    fn parked(&self, queue: &str) -> Result<Vec<JobEnvelope>, BrokerError> {
        let qs = self.queues.lock().expect("broker lock");
        Ok(qs.get(queue).map(|q| q.parked.clone()).unwrap_or_default())
    }
}
