//! Completion providers: a live chat-completions HTTP endpoint and a replay
//! provider keyed by SHA-256 of the prompt text, which keeps synthesis tests
//! hermetic. Fetching preserves prompt order and retries transient failures
//! with exponential backoff.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::SynthError;

#[derive(Debug, Error)]
pub enum ProviderError {
    /// Worth retrying: transport failures, 5xx responses, timeouts.
    #[error("transient provider failure: {0}")]
    Transient(String),
    /// Not worth retrying: auth failures, malformed responses, 4xx.
    #[error("provider failure: {0}")]
    Permanent(String),
    #[error("replay file has no response for prompt hash {prompt_hash}")]
    ReplayMiss { prompt_hash: String },
}

/// SHA-256 of the prompt text, lowercase hex; the replay file key.
pub fn prompt_hash(prompt: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(prompt.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub trait CompletionProvider: Sync {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError>;
}

/// Canned responses keyed by prompt hash; a miss is a hard error.
#[derive(Debug, Clone, Default)]
pub struct ReplayProvider {
    responses: HashMap<String, String>,
}

impl ReplayProvider {
    pub fn new(responses: HashMap<String, String>) -> Self {
        ReplayProvider { responses }
    }

    /// Build a replay table from (prompt, response) pairs.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        ReplayProvider {
            responses: pairs
                .into_iter()
                .map(|(p, r)| (prompt_hash(p), r.to_string()))
                .collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path)?;
        let responses: HashMap<String, String> =
            serde_json::from_str(&text).map_err(|e| SynthError::BadReplayFile(e.to_string()))?;
        Ok(ReplayProvider { responses })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SynthError> {
        let ordered: std::collections::BTreeMap<_, _> = self.responses.iter().collect();
        let text = serde_json::to_string_pretty(&ordered)
            .map_err(|e| SynthError::BadReplayFile(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

impl CompletionProvider for ReplayProvider {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let hash = prompt_hash(prompt);
        self.responses
            .get(&hash)
            .cloned()
            .ok_or(ProviderError::ReplayMiss { prompt_hash: hash })
    }
}

/// Chat-completions endpoint: POST {model, messages:[{role,content}]} with
/// bearer-token auth; the completion text is the first choice's message
/// content.
pub struct LiveProvider {
    url: String,
    model: String,
    token: String,
    agent: ureq::Agent,
}

/// Environment variable the bearer token is read from by default.
pub const TOKEN_ENV_VAR: &str = "NLX_COMPLETIONS_TOKEN";

impl LiveProvider {
    pub fn new(url: impl Into<String>, model: impl Into<String>, token_env: &str) -> Result<Self, SynthError> {
        let token = std::env::var(token_env)
            .map_err(|_| SynthError::MissingToken(token_env.to_string()))?;
        Ok(LiveProvider {
            url: url.into(),
            model: model.into(),
            token,
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(120))
                .build(),
        })
    }
}

impl CompletionProvider for LiveProvider {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        let response = self
            .agent
            .post(&self.url)
            .set("Authorization", &format!("Bearer {}", self.token))
            .send_json(body);
        let response = match response {
            Ok(r) => r,
            Err(ureq::Error::Status(code, _)) if (500..600).contains(&code) => {
                return Err(ProviderError::Transient(format!("HTTP {code}")))
            }
            Err(ureq::Error::Status(code, _)) => {
                return Err(ProviderError::Permanent(format!("HTTP {code}")))
            }
            Err(ureq::Error::Transport(t)) => {
                return Err(ProviderError::Transient(t.to_string()))
            }
        };
        let value: Value = response
            .into_json()
            .map_err(|e| ProviderError::Permanent(format!("bad response body: {e}")))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| {
                ProviderError::Permanent("response has no choices[0].message.content".to_string())
            })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

/// One completion with the number of attempts it took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionOutcome {
    pub text: String,
    pub attempts: u32,
}

fn complete_with_retry(
    provider: &dyn CompletionProvider,
    prompt: &str,
    policy: RetryPolicy,
) -> Result<CompletionOutcome, ProviderError> {
    let mut attempts = 0u32;
    loop {
        attempts += 1;
        match provider.complete(prompt) {
            Ok(text) => return Ok(CompletionOutcome { text, attempts }),
            Err(ProviderError::Transient(reason)) if attempts <= policy.max_retries => {
                let delay = policy.base_delay * 2u32.saturating_pow(attempts - 1);
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
                let _ = reason;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Fetch one response per prompt, order-preserving. Requests may run in
/// bounded parallel on the ambient rayon pool; results are reassembled in
/// input order. The first unrecoverable failure aborts the batch.
pub fn fetch_completions<P: CompletionProvider + ?Sized>(
    provider: &P,
    prompts: &[String],
    policy: RetryPolicy,
) -> Result<Vec<CompletionOutcome>, SynthError> {
    let as_dyn: &dyn CompletionProvider = &Adapter(provider);
    prompts
        .par_iter()
        .enumerate()
        .map(|(index, prompt)| {
            complete_with_retry(as_dyn, prompt, policy)
                .map_err(|source| SynthError::Fetch { index, source })
        })
        .collect()
}

struct Adapter<'a, P: CompletionProvider + ?Sized>(&'a P);

impl<P: CompletionProvider + ?Sized> CompletionProvider for Adapter<'_, P> {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        self.0.complete(prompt)
    }
}
