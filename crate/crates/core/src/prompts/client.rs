//! Meta-prompting clients: a chat-completion HTTP client and an offline
//! client that derives a fixture batch from the meta prompt's hash.

use std::time::Duration;

use log::{error, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::fixtures::{LIGHTING, MATERIALS, SETTINGS, SITES, SURFACE_DETAILS, TIME_OF_DAY, WEATHER};
use super::{parse_prompt_value, PromptBatch, PromptError, PromptPair, PromptTags, BATCH_SIZE_RANGE};

pub const ENV_CHAT_URL: &str = "DREAMFLOW_CHAT_URL";
/// Sent as `Authorization: Bearer <token>` when set.
pub const ENV_CHAT_TOKEN: &str = "DREAMFLOW_CHAT_TOKEN";
pub const ENV_CHAT_MODEL: &str = "DREAMFLOW_CHAT_MODEL";

#[derive(Debug, Clone, PartialEq)]
pub struct FetchedBatch {
    pub batch: PromptBatch,
    /// Soft problems, e.g. a batch size outside 20-30.
    pub warnings: Vec<String>,
}

pub trait PromptClient {
    fn request_batch(&self, meta_prompt: &str) -> Result<FetchedBatch, PromptError>;
}

pub fn request_prompt_batch(client: &dyn PromptClient, meta_prompt: &str) -> Result<FetchedBatch, PromptError> {
    client.request_batch(meta_prompt)
}

/// `meta-` plus the first 8 hex digits of the meta prompt's SHA-256.
pub fn meta_prompt_id(meta_prompt: &str) -> String {
    format!("meta-{}", &hex::encode(Sha256::digest(meta_prompt.as_bytes()))[..8])
}

fn size_warnings(batch: &PromptBatch) -> Vec<String> {
    if batch.size_in_range() {
        Vec::new()
    } else {
        let w = format!(
            "batch `{}` has {} pairs, expected {}-{}",
            batch.meta_prompt_id,
            batch.len(),
            BATCH_SIZE_RANGE.start(),
            BATCH_SIZE_RANGE.end()
        );
        warn!("{w}");
        vec![w]
    }
}

/// Deterministic stand-in for a language model: the batch depends only on
/// the meta prompt text.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflinePromptClient;

impl PromptClient for OfflinePromptClient {
    fn request_batch(&self, meta_prompt: &str) -> Result<FetchedBatch, PromptError> {
        let digest = Sha256::digest(meta_prompt.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(digest.into());
        let id = meta_prompt_id(meta_prompt);
        let n = rng.gen_range(BATCH_SIZE_RANGE);
        let pairs = (0..n)
            .map(|i| {
                let pick = |rng: &mut ChaCha8Rng, xs: &[&'static str]| *xs.choose(rng).expect("vocabulary is non-empty");
                let material = pick(&mut rng, MATERIALS);
                let detail = pick(&mut rng, SURFACE_DETAILS);
                let setting = pick(&mut rng, SETTINGS);
                let weather = pick(&mut rng, WEATHER);
                let time = pick(&mut rng, TIME_OF_DAY);
                let lighting = pick(&mut rng, LIGHTING);
                let site = pick(&mut rng, SITES);
                PromptPair {
                    id: format!("{id}-{i:02}"),
                    foreground: format!("{material}, {detail}."),
                    background: format!("{}, {weather}, {time}, {lighting}.", capitalize(setting)),
                    tags: Some(PromptTags {
                        weather: Some(weather.into()),
                        time_of_day: Some(time.into()),
                        lighting: Some(lighting.into()),
                        site: Some(site.into()),
                    }),
                }
            })
            .collect();
        let batch = PromptBatch { meta_prompt_id: id, pairs };
        Ok(FetchedBatch { warnings: size_warnings(&batch), batch })
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Client for an OpenAI-style `/chat/completions` endpoint.
#[derive(Debug, Clone)]
pub struct ChatPromptClient {
    pub url: String,
    pub token: Option<String>,
    pub model: String,
    agent: ureq::Agent,
}

impl ChatPromptClient {
    pub fn new(url: impl Into<String>, token: Option<String>, model: impl Into<String>, timeout: Duration) -> Self {
        Self {
            url: url.into(),
            token,
            model: model.into(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    pub fn from_env() -> Result<Self, PromptError> {
        let url = std::env::var(ENV_CHAT_URL).map_err(|_| PromptError::Transport(format!("{ENV_CHAT_URL} is not set")))?;
        let token = std::env::var(ENV_CHAT_TOKEN).ok().filter(|t| !t.is_empty());
        let model = std::env::var(ENV_CHAT_MODEL).unwrap_or_else(|_| "gpt-4o".into());
        Ok(Self::new(url, token, model, Duration::from_secs(120)))
    }
}

/// Extracts the assistant text from a chat-completion response and parses
/// it as a batch. A missing `meta_prompt_id` is filled in.
pub(crate) fn batch_from_reply(reply: &str, meta_prompt: &str) -> Result<PromptBatch, PromptError> {
    let malformed = |reason: String| {
        error!("malformed prompt reply ({reason}); verbatim reply follows\n{reply}");
        PromptError::MalformedReply { reason, reply: reply.to_string() }
    };
    let envelope: Value = serde_json::from_str(reply).map_err(|e| malformed(format!("response is not JSON: {e}")))?;
    let content = envelope
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("no choices[0].message.content".into()))?;
    let mut doc: Value =
        serde_json::from_str(strip_fences(content)).map_err(|e| malformed(format!("content is not JSON: {e}")))?;
    if let Some(obj) = doc.as_object_mut() {
        obj.entry("meta_prompt_id").or_insert_with(|| Value::String(meta_prompt_id(meta_prompt)));
    }
    parse_prompt_value(&doc).map_err(|e| malformed(e.to_string()))
}

/// Models often wrap JSON in a fenced code block.
fn strip_fences(s: &str) -> &str {
    let t = s.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphanumeric());
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

impl PromptClient for ChatPromptClient {
    fn request_batch(&self, meta_prompt: &str) -> Result<FetchedBatch, PromptError> {
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": "You write image-generation prompts and answer with JSON only."},
                {"role": "user", "content": meta_prompt},
            ],
            "response_format": {"type": "json_object"},
        });
        let mut req = self.agent.post(&self.url).set("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.set("Authorization", &format!("Bearer {t}"));
        }
        let reply = req
            .send_json(body)
            .map_err(|e| PromptError::Transport(e.to_string()))?
            .into_string()
            .map_err(|e| PromptError::Transport(e.to_string()))?;
        let batch = batch_from_reply(&reply, meta_prompt)?;
        Ok(FetchedBatch { warnings: size_warnings(&batch), batch })
    }
}
