//! Request/reply generation over the broker.
//!
//! A caller owns a private reply queue. Requests go to [`RPC_QUEUE`] with a
//! correlation id, the reply queue name and a deadline; an RPC weaver
//! answers on the reply queue. Replies with a foreign correlation id or
//! arriving after the deadline are dropped.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::wire::{WireRequest, WireResponse};
use crate::generator::{GeneratedImage, GenerationRequest, Generator, GeneratorKind, ViewContext};

use super::broker::{Broker, BrokerError};
use super::envelope::{now_ms, JobEnvelope, JobKind, RPC_QUEUE};

#[derive(Debug, Error)]
pub enum RpcError {
    #[error("no reply within {0:?}")]
    Timeout(Duration),
    #[error("broker: {0}")]
    Broker(#[from] BrokerError),
    #[error("weaver reported: {0}")]
    Remote(String),
    #[error("reply is for request {got}, expected {expected}")]
    DigestMismatch { got: String, expected: String },
    #[error("bad reply: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RpcRequest {
    pub request: WireRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view: Option<ViewContext>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RpcReply {
    pub request_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorKind>,
    #[serde(default)]
    pub latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<WireResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct RpcClient {
    broker: Arc<dyn Broker>,
    reply_queue: String,
    poll: Duration,
    // one outstanding call at a time per reply queue
    busy: Mutex<()>,
}

impl RpcClient {
    pub fn new(broker: Arc<dyn Broker>) -> Self {
        Self {
            broker,
            reply_queue: format!("reply-{}", uuid::Uuid::new_v4()),
            poll: Duration::from_millis(50),
            busy: Mutex::new(()),
        }
    }

    pub fn reply_queue(&self) -> &str {
        &self.reply_queue
    }

    /// Sends `request` and blocks until the matching reply or `deadline`.
    pub fn call(
        &self,
        request: &GenerationRequest,
        view: Option<&ViewContext>,
        deadline: Duration,
    ) -> Result<GeneratedImage, RpcError> {
        let _guard = self.busy.lock().expect("rpc client lock");
        let deadline_ms = now_ms() + deadline.as_millis() as u64;
        let expected = request.digest();
        let body = RpcRequest { request: WireRequest::from(request), view: view.cloned() };
        let mut env = JobEnvelope::new(JobKind::Weave, serde_json::to_vec(&body).expect("rpc request serializes"));
        let correlation = uuid::Uuid::new_v4().to_string();
        env.correlation_id = Some(correlation.clone());
        env.reply_to = Some(self.reply_queue.clone());
        env.deadline_ms = Some(deadline_ms);
        self.broker.enqueue(RPC_QUEUE, env)?;

        loop {
            let left = Duration::from_millis(deadline_ms.saturating_sub(now_ms()));
            if left.is_zero() {
                return Err(RpcError::Timeout(deadline));
            }
            let Some(reply) = self.broker.dequeue(&self.reply_queue, &self.reply_queue, self.poll, left.min(self.poll))?
            else {
                continue;
            };
            self.broker.ack(&self.reply_queue, &reply.job_id)?;
            if reply.correlation_id.as_deref() != Some(correlation.as_str()) {
                log::warn!("{}: dropping reply for correlation {:?}", self.reply_queue, reply.correlation_id);
                continue;
            }
            let reply: RpcReply = serde_json::from_slice(&reply.payload).map_err(|e| RpcError::Decode(e.to_string()))?;
            if let Some(e) = reply.error {
                return Err(RpcError::Remote(e));
            }
            if reply.request_digest != expected {
                return Err(RpcError::DigestMismatch { got: reply.request_digest, expected });
            }
            let image = reply.image.ok_or_else(|| RpcError::Decode("reply has neither image nor error".into()))?;
            let rgb = image.into_image().map_err(|e| RpcError::Decode(e.to_string()))?;
            return Ok(GeneratedImage {
                rgb,
                request_digest: reply.request_digest,
                generator: reply.generator.unwrap_or(GeneratorKind::Stub),
                latency_ms: reply.latency_ms,
            });
        }
    }
}

fn answer(env: &JobEnvelope, generator: &dyn Generator) -> RpcReply {
    let failed = |digest: String, e: String| RpcReply { request_digest: digest, generator: None, latency_ms: 0.0, image: None, error: Some(e) };
    let body: RpcRequest = match serde_json::from_slice(&env.payload) {
        Ok(b) => b,
        Err(e) => return failed(String::new(), format!("undecodable request: {e}")),
    };
    let request = match GenerationRequest::try_from(&body.request) {
        Ok(r) => r,
        Err(e) => return failed(String::new(), e.to_string()),
    };
    match generator.generate(&request, body.view.as_ref()) {
        Ok(img) => RpcReply {
            request_digest: img.request_digest,
            generator: Some(img.generator),
            latency_ms: img.latency_ms,
            image: Some(WireResponse::from_image(&img.rgb)),
            error: None,
        },
        Err(e) => failed(request.digest(), e.to_string()),
    }
}

/// Serves one RPC request if one arrives within `poll`. Returns whether a
/// request was taken off the queue.
pub fn serve_one(broker: &dyn Broker, generator: &dyn Generator, worker_id: &str, poll: Duration) -> Result<bool, BrokerError> {
    let Some(env) = broker.dequeue(RPC_QUEUE, worker_id, Duration::from_secs(60), poll)? else {
        return Ok(false);
    };
    if env.expired(now_ms()) {
        log::info!("{worker_id}: dropping expired request {}", env.job_id);
        broker.ack(RPC_QUEUE, &env.job_id)?;
        return Ok(true);
    }
    let Some(reply_to) = env.reply_to.clone() else {
        log::warn!("{worker_id}: request {} has no reply queue", env.job_id);
        broker.ack(RPC_QUEUE, &env.job_id)?;
        return Ok(true);
    };
    let reply = answer(&env, generator);
    let mut out = JobEnvelope::new(JobKind::Reply, serde_json::to_vec(&reply).expect("reply serializes"));
    out.correlation_id = env.correlation_id.clone();
    broker.enqueue(&reply_to, out)?;
    broker.ack(RPC_QUEUE, &env.job_id)?;
    Ok(true)
}

/// RPC weaver loop until `stop` is set.
pub fn run_rpc_weaver(broker: &dyn Broker, generator: &dyn Generator, worker_id: &str, stop: &AtomicBool) {
    let poll = Duration::from_millis(100);
    while !stop.load(Ordering::Relaxed) {
        if let Err(e) = serve_one(broker, generator, worker_id, poll) {
            log::warn!("{worker_id}: {e}");
            thread::sleep(poll);
        }
    }
}

/// Background RPC weavers, stopped on drop.
pub struct RpcWeavers {
    stop: Arc<AtomicBool>,
    handles: Vec<JoinHandle<()>>,
}

impl RpcWeavers {
    pub fn spawn(n: usize, broker: Arc<dyn Broker>, generator: Arc<dyn Generator>) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let handles = (0..n)
            .map(|i| {
                let (broker, generator, stop) = (broker.clone(), generator.clone(), stop.clone());
                thread::spawn(move || run_rpc_weaver(&*broker, &*generator, &format!("rpc-weaver-{i}"), &stop))
            })
            .collect();
        Self { stop, handles }
    }
}

impl Drop for RpcWeavers {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}
