//! HTTP client for a remote generation workflow. See [`super::wire`] for
//! the request and response bodies.

use std::time::Duration;

use super::wire::{WireRequest, WireResponse};
use super::{timed, GeneratedImage, GenerationRequest, Generator, GeneratorError, GeneratorKind, ViewContext};

pub const ENV_GENERATOR_URL: &str = "DREAMFLOW_GENERATOR_URL";
/// Sent as `Authorization: Bearer <token>` when set.
pub const ENV_GENERATOR_TOKEN: &str = "DREAMFLOW_GENERATOR_TOKEN";
/// Per-request timeout in seconds.
pub const ENV_GENERATOR_TIMEOUT: &str = "DREAMFLOW_GENERATOR_TIMEOUT_S";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone)]
pub struct RemoteGenerator {
    endpoint: String,
    token: Option<String>,
    timeout: Duration,
    agent: ureq::Agent,
}

impl RemoteGenerator {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        // ureq agents pool connections and are safe to share across threads;
        // each call still gets its own timeout.
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self { endpoint: endpoint.into(), token, timeout, agent }
    }

    pub fn from_env() -> Result<Self, GeneratorError> {
        let endpoint = std::env::var(ENV_GENERATOR_URL)
            .map_err(|_| GeneratorError::InvalidRequest(format!("{ENV_GENERATOR_URL} is not set")))?;
        let token = std::env::var(ENV_GENERATOR_TOKEN).ok().filter(|t| !t.is_empty());
        let timeout = match std::env::var(ENV_GENERATOR_TIMEOUT) {
            Ok(s) => Duration::from_secs_f64(
                s.parse::<f64>()
                    .ok()
                    .filter(|t| *t > 0.0)
                    .ok_or_else(|| GeneratorError::InvalidRequest(format!("{ENV_GENERATOR_TIMEOUT}={s}")))?,
            ),
            Err(_) => DEFAULT_TIMEOUT,
        };
        Ok(Self::new(endpoint, token, timeout))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    fn post(&self, body: &WireRequest) -> Result<WireResponse, GeneratorError> {
        let mut req = self.agent.post(&self.endpoint).set("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.set("Authorization", &format!("Bearer {t}"));
        }
        let resp = req.send_json(body).map_err(|e| self.classify(e))?;
        resp.into_json::<WireResponse>().map_err(|e| {
            if is_timeout(&e) {
                GeneratorError::Timeout(self.timeout)
            } else {
                GeneratorError::Decode(e.to_string())
            }
        })
    }

    fn classify(&self, e: ureq::Error) -> GeneratorError {
        match e {
            ureq::Error::Status(code, resp) => {
                let text = resp.into_string().unwrap_or_default();
                GeneratorError::Transport(format!("HTTP {code}: {}", text.chars().take(500).collect::<String>()))
            }
            ureq::Error::Transport(t) => {
                let timed_out = std::error::Error::source(&t)
                    .and_then(|s| s.downcast_ref::<std::io::Error>())
                    .is_some_and(is_timeout)
                    || t.to_string().contains("timed out");
                if timed_out {
                    GeneratorError::Timeout(self.timeout)
                } else {
                    GeneratorError::Transport(t.to_string())
                }
            }
        }
    }
}

fn is_timeout(e: &std::io::Error) -> bool {
    matches!(e.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock)
}

impl Generator for RemoteGenerator {
    fn kind(&self) -> GeneratorKind {
        GeneratorKind::Remote
    }

    /// The view context is ignored; a remote model sees only the request.
    fn generate(&self, request: &GenerationRequest, _view: Option<&ViewContext>) -> Result<GeneratedImage, GeneratorError> {
        request.validate()?;
        let body = WireRequest::from(request);
        timed(GeneratorKind::Remote, request, || {
            let rgb = self.post(&body)?.into_image()?;
            let expected = request.resolution();
            if rgb.dimensions() != expected {
                return Err(GeneratorError::ResolutionMismatch { got: rgb.dimensions(), expected });
            }
            Ok(rgb)
        })
    }
}
