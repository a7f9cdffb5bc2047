//! Job envelopes carried by the broker.

use std::time::{SystemTime, UNIX_EPOCH};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const UNROLL_QUEUE: &str = "unroll";
pub const WEAVE_QUEUE: &str = "weave";
pub const RPC_QUEUE: &str = "weave-rpc";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Unroll,
    Weave,
    /// An RPC reply travelling back to its caller's queue.
    Reply,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobEnvelope {
    pub job_id: String,
    pub kind: JobKind,
    #[serde(rename = "payload_b64", with = "b64")]
    pub payload: Vec<u8>,
    /// Delivery count, 1 on first delivery.
    pub attempt: u32,
    pub enqueued_at_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_to: Option<String>,
    /// Unix milliseconds after which the sender no longer wants the result.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline_ms: Option<u64>,
}

impl JobEnvelope {
    pub fn new(kind: JobKind, payload: Vec<u8>) -> Self {
        Self {
            job_id: uuid::Uuid::new_v4().to_string(),
            kind,
            payload,
            attempt: 1,
            enqueued_at_ms: now_ms(),
            correlation_id: None,
            reply_to: None,
            deadline_ms: None,
        }
    }

    pub fn expired(&self, now_ms: u64) -> bool {
        self.deadline_ms.is_some_and(|d| now_ms >= d)
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

mod b64 {
    use super::*;

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&B64.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        B64.decode(s).map_err(serde::de::Error::custom)
    }
}
