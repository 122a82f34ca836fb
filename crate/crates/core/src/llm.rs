//! Chat-completion client used by reformulation: a live HTTP client and a
//! deterministic fixture-backed mock for tests and offline runs.

use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Environment variables read by [`HttpLlmClient::from_env`].
pub const ENV_ENDPOINT: &str = "SUBFACT_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "SUBFACT_LLM_MODEL";
pub const ENV_API_KEY: &str = "SUBFACT_LLM_API_KEY";

#[derive(Debug, Error)]
pub enum LlmError {
    /// Network-level or server-side failure; the caller may retry.
    #[error("LLM transport failure: {detail}")]
    Transport { detail: String },
    /// The endpoint answered but not in the expected shape.
    #[error("unusable LLM response: {detail}")]
    BadResponse { detail: String },
    #[error("missing client configuration: {detail}")]
    Config { detail: String },
    #[error("no fixture for case {case_id:?}: tried {hash_name:?} and {label_name:?}")]
    MissingFixture {
        case_id: String,
        hash_name: String,
        label_name: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One completion request. `label` is a stable human-readable name for the
/// call (e.g. "extract"), used by the mock's fallback fixture lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmRequest {
    pub case_id: String,
    pub label: String,
    pub system: String,
    pub user: String,
}

pub trait LlmClient {
    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError>;
    /// Number of completions issued so far (retries count once).
    fn calls(&self) -> usize;
}

/// Hex prefix of SHA-256 over system+user text; names mock fixture files.
pub fn prompt_hash(system: &str, user: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(system.as_bytes());
    hasher.update(user.as_bytes());
    let digest = hasher.finalize();
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    hex[..16].to_string()
}

/// Serves completions from a fixtures directory. Lookup order:
/// `{case_id}__{prompt_hash}.txt`, then `{case_id}__{label}.txt`.
pub struct MockLlm {
    dir: PathBuf,
    calls: AtomicUsize,
}

impl MockLlm {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            calls: AtomicUsize::new(0),
        }
    }
}

impl LlmClient for MockLlm {
    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let hash_name = format!(
            "{}__{}.txt",
            request.case_id,
            prompt_hash(&request.system, &request.user)
        );
        let label_name = format!("{}__{}.txt", request.case_id, request.label);
        for name in [&hash_name, &label_name] {
            let path = self.dir.join(name);
            if path.is_file() {
                return Ok(fs::read_to_string(&path)?);
            }
        }
        Err(LlmError::MissingFixture {
            case_id: request.case_id.clone(),
            hash_name,
            label_name,
        })
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

/// OpenAI-style chat-completion client over HTTP with a bounded retry
/// budget for transport failures and 5xx answers.
pub struct HttpLlmClient {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    max_attempts: usize,
    backoff: Duration,
    client: reqwest::blocking::Client,
    calls: AtomicUsize,
}

impl HttpLlmClient {
    pub fn new(endpoint: &str, model: &str, api_key: Option<&str>) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| LlmError::Config {
                detail: e.to_string(),
            })?;
        Ok(Self {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key: api_key.map(str::to_string),
            max_attempts: 3,
            backoff: Duration::from_millis(200),
            client,
            calls: AtomicUsize::new(0),
        })
    }

    /// Read endpoint, model and optional API key from the environment.
    pub fn from_env() -> Result<Self, LlmError> {
        let need = |name: &str| {
            std::env::var(name).map_err(|_| LlmError::Config {
                detail: format!("environment variable {name} is not set"),
            })
        };
        let endpoint = need(ENV_ENDPOINT)?;
        let model = need(ENV_MODEL)?;
        let api_key = std::env::var(ENV_API_KEY).ok();
        Self::new(&endpoint, &model, api_key.as_deref())
    }

    pub fn with_retry(mut self, max_attempts: usize, backoff: Duration) -> Self {
        self.max_attempts = max_attempts.max(1);
        self.backoff = backoff;
        self
    }

    fn attempt(&self, request: &LlmRequest) -> Result<String, LlmError> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0.0,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
        });
        let mut call = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let response = call.send().map_err(|e| LlmError::Transport {
            detail: e.to_string(),
        })?;
        let status = response.status();
        if !status.is_success() {
            return Err(LlmError::Transport {
                detail: format!("endpoint answered {status}"),
            });
        }
        let parsed: ChatResponse = response.json().map_err(|e| LlmError::BadResponse {
            detail: e.to_string(),
        })?;
        parsed
            .choices
            .first()
            .map(|c| c.message.content.clone())
            .ok_or_else(|| LlmError::BadResponse {
                detail: "response carried no choices".to_string(),
            })
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut last = None;
        for attempt in 1..=self.max_attempts {
            match self.attempt(request) {
                Ok(content) => return Ok(content),
                Err(err @ LlmError::Transport { .. }) => {
                    last = Some(err);
                    if attempt < self.max_attempts {
                        std::thread::sleep(self.backoff);
                    }
                }
                Err(other) => return Err(other),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}
