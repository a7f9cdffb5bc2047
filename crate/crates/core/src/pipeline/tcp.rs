//! Broker over TCP: one JSON object per line in each direction.
//!
//! Requests carry `"v": 1` and an `op`:
//!
//! | op        | fields                                              | response fields |
//! |-----------|-----------------------------------------------------|-----------------|
//! | `enqueue` | `queue`, `envelope`                                 | -               |
//! | `dequeue` | `queue`, `worker_id`, `lease_s`, `wait_s`           | `envelope` (absent when the wait ran out) |
//! | `ack`     | `queue`, `job_id`                                   | `outcome` (`acked` or `unknown`) |
//! | `stats`   | `queue`                                             | `stats`         |
//! | `parked`  | `queue`                                             | `parked` (list of envelopes) |
//!
//! An envelope is `{job_id, kind, payload_b64, attempt, enqueued_at_ms,
//! correlation_id?, reply_to?, deadline_ms?}` with `kind` one of `unroll`,
//! `weave`, `reply`. Every response has `ok`; failures add `error` and a
//! machine-readable `code` (`duplicate_job`, `bad_request`).
//!
//! The server answers requests on one connection in order, so a blocked
//! `dequeue` holds its connection. Give each worker its own client.

use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::broker::{AckOutcome, Broker, BrokerError, MemoryBroker, QueueStats};
use super::envelope::JobEnvelope;

pub const PROTOCOL_VERSION: u32 = 1;
/// Broker address for the CLI and workers, `host:port`.
pub const ENV_BROKER_ADDR: &str = "DREAMFLOW_BROKER_ADDR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Enqueue,
    Dequeue,
    Ack,
    Stats,
    Parked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub v: u32,
    pub op: Op,
    pub queue: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<JobEnvelope>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worker_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lease_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wait_s: Option<f64>,
}

impl Request {
    fn new(op: Op, queue: &str) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            op,
            queue: queue.into(),
            envelope: None,
            job_id: None,
            worker_id: None,
            lease_s: None,
            wait_s: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<JobEnvelope>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<AckOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<QueueStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parked: Option<Vec<JobEnvelope>>,
}

fn failure(code: &str, msg: String) -> Response {
    Response { ok: false, error: Some(msg), code: Some(code.into()), ..Default::default() }
}

#[allow(clippy::result_large_err)]
fn seconds(x: Option<f64>, what: &str) -> Result<Duration, Response> {
    match x {
        Some(s) if s.is_finite() && s >= 0.0 => Ok(Duration::from_secs_f64(s)),
        Some(s) => Err(failure("bad_request", format!("{what} = {s}"))),
        None => Err(failure("bad_request", format!("missing {what}"))),
    }
}

/// Applies one request to `broker`.
pub fn handle(broker: &dyn Broker, req: Request) -> Response {
    if req.v != PROTOCOL_VERSION {
        return failure("bad_request", format!("unsupported protocol version {}", req.v));
    }
    let done = |r: Result<Response, BrokerError>| match r {
        Ok(r) => r,
        Err(BrokerError::DuplicateJob(id)) => failure("duplicate_job", format!("job `{id}` was already enqueued")),
        Err(e) => failure("broker", e.to_string()),
    };
    match req.op {
        Op::Enqueue => match req.envelope {
            Some(env) => done(broker.enqueue(&req.queue, env).map(|_| Response { ok: true, ..Default::default() })),
            None => failure("bad_request", "enqueue without envelope".into()),
        },
        Op::Dequeue => {
            let lease = match seconds(req.lease_s, "lease_s") {
                Ok(d) => d,
                Err(r) => return r,
            };
            let wait = seconds(req.wait_s.or(Some(0.0)), "wait_s").unwrap_or_default();
            let worker = req.worker_id.unwrap_or_else(|| "anonymous".into());
            done(broker
                .dequeue(&req.queue, &worker, lease, wait)
                .map(|envelope| Response { ok: true, envelope, ..Default::default() }))
        }
        Op::Ack => match req.job_id {
            Some(id) => done(broker.ack(&req.queue, &id).map(|o| Response { ok: true, outcome: Some(o), ..Default::default() })),
            None => failure("bad_request", "ack without job_id".into()),
        },
        Op::Stats => done(broker.stats(&req.queue).map(|s| Response { ok: true, stats: Some(s), ..Default::default() })),
        Op::Parked => done(broker.parked(&req.queue).map(|p| Response { ok: true, parked: Some(p), ..Default::default() })),
    }
}

/// A broker served over TCP. Stops when dropped.
pub struct BrokerServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
    broker: Arc<MemoryBroker>,
}

impl BrokerServer {
    pub fn bind(addr: impl ToSocketAddrs, broker: Arc<MemoryBroker>) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let accept = {
            let stop = stop.clone();
            let broker = broker.clone();
            std::thread::Builder::new().name("broker-accept".into()).spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    match conn {
                        Ok(stream) => {
                            let broker = broker.clone();
                            let _ = std::thread::Builder::new()
                                .name("broker-conn".into())
                                .spawn(move || serve_connection(stream, broker.as_ref()));
                        }
                        Err(e) => warn!("accept failed: {e}"),
                    }
                }
            })?
        };
        Ok(Self { addr, stop, accept: Some(accept), broker })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn broker(&self) -> &Arc<MemoryBroker> {
        &self.broker
    }

    /// Blocks until the accept loop ends (it never does on its own).
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for BrokerServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // unblock accept()
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn serve_connection(stream: TcpStream, broker: &dyn Broker) {
    let peer = stream.peer_addr().ok();
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(_) => return,
    };
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<Request>(&line) {
            Ok(req) => handle(broker, req),
            Err(e) => failure("bad_request", format!("unparseable request: {e}")),
        };
        let mut out = serde_json::to_vec(&resp).expect("response serializes");
        out.push(b'\n');
        if writer.write_all(&out).is_err() {
            break;
        }
    }
    debug!("connection from {peer:?} closed");
}

/// Client side of the line protocol.
pub struct TcpBroker {
    addr: SocketAddr,
    conn: Mutex<Option<(BufReader<TcpStream>, TcpStream)>>,
}

impl TcpBroker {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, BrokerError> {
        let addr = addr
            .to_socket_addrs()
            .map_err(|e| BrokerError::Unreachable(e.to_string()))?
            .next()
            .ok_or_else(|| BrokerError::Unreachable("address resolved to nothing".into()))?;
        let b = Self { addr, conn: Mutex::new(None) };
        b.call(Request::new(Op::Stats, "_ping"))?;
        Ok(b)
    }

    fn open(&self) -> Result<(BufReader<TcpStream>, TcpStream), BrokerError> {
        let s = TcpStream::connect_timeout(&self.addr, Duration::from_secs(5))
            .map_err(|e| BrokerError::Unreachable(format!("{}: {e}", self.addr)))?;
        s.set_nodelay(true).ok();
        let r = s.try_clone().map_err(|e| BrokerError::Unreachable(e.to_string()))?;
        Ok((BufReader::new(r), s))
    }

    fn call(&self, req: Request) -> Result<Response, BrokerError> {
        let mut guard = self.conn.lock().expect("client lock");
        if guard.is_none() {
            *guard = Some(self.open()?);
        }
        let (reader, writer) = guard.as_mut().expect("opened above");
        let mut line = serde_json::to_vec(&req).expect("request serializes");
        line.push(b'\n');
        let mut reply = String::new();
        let io = writer.write_all(&line).and_then(|_| reader.read_line(&mut reply));
        match io {
            Ok(n) if n > 0 => {}
            Ok(_) | Err(_) => {
                // drop the broken connection; the next call reconnects
                if let Some((_, w)) = guard.take() {
                    let _ = w.shutdown(Shutdown::Both);
                }
                return Err(BrokerError::Unreachable(format!("{}: connection lost", self.addr)));
            }
        }
        let resp: Response = serde_json::from_str(&reply).map_err(|e| BrokerError::Protocol(e.to_string()))?;
        if resp.ok {
            Ok(resp)
        } else if resp.code.as_deref() == Some("duplicate_job") {
            Err(BrokerError::DuplicateJob(req.envelope.map(|e| e.job_id).unwrap_or_default()))
        } else {
            Err(BrokerError::Protocol(resp.error.unwrap_or_default()))
        }
    }
}

impl Broker for TcpBroker {
    fn enqueue(&self, queue: &str, envelope: JobEnvelope) -> Result<(), BrokerError> {
        let mut r = Request::new(Op::Enqueue, queue);
        r.envelope = Some(envelope);
        self.call(r).map(|_| ())
    }

    fn dequeue(
        &self,
        queue: &str,
        worker_id: &str,
        lease: Duration,
        wait: Duration,
    ) -> Result<Option<JobEnvelope>, BrokerError> {
        let mut r = Request::new(Op::Dequeue, queue);
        r.worker_id = Some(worker_id.into());
        r.lease_s = Some(lease.as_secs_f64());
        r.wait_s = Some(wait.as_secs_f64());
        self.call(r).map(|resp| resp.envelope)
    }

    fn ack(&self, queue: &str, job_id: &str) -> Result<AckOutcome, BrokerError> {
        let mut r = Request::new(Op::Ack, queue);
        r.job_id = Some(job_id.into());
        self.call(r)?.outcome.ok_or_else(|| BrokerError::Protocol("ack response without outcome".into()))
    }

    fn stats(&self, queue: &str) -> Result<QueueStats, BrokerError> {
        self.call(Request::new(Op::Stats, queue))?
            .stats
            .ok_or_else(|| BrokerError::Protocol("stats response without stats".into()))
    }

    fn parked(&self, queue: &str) -> Result<Vec<JobEnvelope>, BrokerError> {
        Ok(self.call(Request::new(Op::Parked, queue))?.parked.unwrap_or_default())
    }
}
