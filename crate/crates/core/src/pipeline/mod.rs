//! Distributed generation: a job broker with unroll and weave queues,
//! weaver workers, offline and on-policy drivers, and a content-addressed
//! store.

mod broker;
mod config;
mod envelope;
mod offline;
mod onpolicy;
mod rpc;
mod store;
pub mod tcp;
mod trajectory;
mod weaver;
pub mod work;

use thiserror::Error;

pub use broker::{AckOutcome, Broker, BrokerError, MemoryBroker, QueueStats, DEFAULT_MAX_ATTEMPTS};
pub use config::{CameraConfig, ClipConfig, GenerationConfig, GeneratorChoice, TaskConfig, TrajectoryConfig, WorkerConfig};
pub use envelope::{now_ms, JobEnvelope, JobKind, RPC_QUEUE, UNROLL_QUEUE, WEAVE_QUEUE};
pub use offline::{run_offline_batch, BatchReport, OfflineOptions};
pub use onpolicy::{run_onpolicy_loop, run_trajectories, OnPolicyReport, SegmentRecord, SegmentStatus};
pub use rpc::{run_rpc_weaver, serve_one, RpcClient, RpcError, RpcReply, RpcRequest, RpcWeavers};
pub use store::{files_digest, Downsizing, Files, FsStore, MemStore, Namespace, PutOutcome, Store, StoreError, StoreKey, ENV_STORE_ROOT};
pub use tcp::{BrokerServer, TcpBroker, ENV_BROKER_ADDR};
pub use trajectory::{sample_trajectories, segment_count, segments, trajectory_id, ScriptedTrajectory};
pub use weaver::{run_weaver, FaultPlan, KillPoint, WeaverOptions, WeaverPool, WeaverStats, WorkerExit};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("broker: {0}")]
    Broker(#[from] BrokerError),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("timed out: {0}")]
    Timeout(String),
}
