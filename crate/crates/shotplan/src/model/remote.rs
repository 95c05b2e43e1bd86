//! Completions-style HTTP client for a hosted generalist model.
//!
//! The request carries `model`, `prompt`, `temperature`, and `max_tokens`;
//! the reply is parsed for the first choice text and `usage.total_tokens`.
//! Auth is a bearer token read from a named environment variable. Calls are
//! rate-limited through a shared token bucket and retried with exponential
//! backoff on transport failures and 429/5xx.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::model::{GeneralistModel, ModelError};
use crate::prompt::{ModelOutput, PredictedLabel, PromptSpec};

fn default_timeout_secs() -> u64 {
    30
}
fn default_max_retries() -> u32 {
    3
}
fn default_max_concurrency() -> usize {
    4
}
fn default_max_tokens() -> u32 {
    16
}
fn default_max_context_tokens() -> u32 {
    4096
}
fn default_requests_per_second() -> f64 {
    4.0
}
fn default_initial_backoff_ms() -> u64 {
    250
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteModelConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_concurrency")]
    pub max_concurrency: usize,
    /// Fixed at 0 by default so repeated evaluation is as stable as the
    /// provider allows.
    #[serde(default)]
    pub temperature: f64,
    /// Reply length cap, not the context size.
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_max_context_tokens")]
    pub max_context_tokens: u32,
    /// Zero or negative disables client-side rate limiting.
    #[serde(default = "default_requests_per_second")]
    pub requests_per_second: f64,
    #[serde(default = "default_initial_backoff_ms")]
    pub initial_backoff_ms: u64,
}

struct TokenBucket {
    tokens: f64,
    capacity: f64,
    refill_per_sec: f64,
    last: Instant,
}

impl TokenBucket {
    fn new(rate: f64) -> TokenBucket {
        let capacity = rate.max(1.0);
        TokenBucket { tokens: capacity, capacity, refill_per_sec: rate, last: Instant::now() }
    }

    /// Take one token, or report how long to wait before retrying.
    fn try_acquire(&mut self) -> Option<Duration> {
        let now = Instant::now();
        let elapsed = now.duration_since(self.last).as_secs_f64();
        self.last = now;
        self.tokens = (self.tokens + elapsed * self.refill_per_sec).min(self.capacity);
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            None
        } else {
            let deficit = 1.0 - self.tokens;
            Some(Duration::from_secs_f64(deficit / self.refill_per_sec))
        }
    }
}

pub struct RemoteModel {
    config: RemoteModelConfig,
    label_set: Vec<String>,
    token: String,
    client: reqwest::blocking::Client,
    bucket: Option<Mutex<TokenBucket>>,
}

#[derive(Debug, Deserialize)]
struct CompletionReply {
    #[serde(default)]
    choices: Vec<CompletionChoice>,
    #[serde(default)]
    usage: Option<CompletionUsage>,
}

#[derive(Debug, Deserialize)]
struct CompletionChoice {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    message: Option<CompletionMessage>,
}

#[derive(Debug, Deserialize)]
struct CompletionMessage {
    content: String,
}

#[derive(Debug, Deserialize)]
struct CompletionUsage {
    #[serde(default)]
    total_tokens: u32,
}

impl RemoteModel {
    /// Reads the bearer token now so a missing variable fails at startup,
    /// naming the variable, rather than mid-run.
    pub fn new(config: RemoteModelConfig, label_set: &[String]) -> Result<RemoteModel, ModelError> {
        if config.max_concurrency < 1 {
            return Err(ModelError::InvalidConfig("max_concurrency must be at least 1".into()));
        }
        let token = std::env::var(&config.auth_env)
            .map_err(|_| ModelError::MissingAuth { var: config.auth_env.clone() })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        let bucket = (config.requests_per_second > 0.0)
            .then(|| Mutex::new(TokenBucket::new(config.requests_per_second)));
        Ok(RemoteModel { config, label_set: label_set.to_vec(), token, client, bucket })
    }

    fn throttle(&self) {
        let Some(bucket) = &self.bucket else { return };
        loop {
            let wait = bucket.lock().expect("rate limit bucket poisoned").try_acquire();
            match wait {
                None => return,
                Some(d) => std::thread::sleep(d),
            }
        }
    }

    fn send_once(&self, prompt: &PromptSpec, seed: u64) -> Result<ModelOutput, ModelError> {
        self.throttle();
        let body = json!({
            "model": self.config.model,
            "prompt": prompt.text,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
            "seed": seed,
        });
        let response = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(&self.token)
            .json(&body)
            .send()
            .map_err(|source| ModelError::Transport { attempts: 1, source })?;

        let status = response.status();
        let text = response
            .text()
            .map_err(|source| ModelError::Transport { attempts: 1, source })?;
        if !status.is_success() {
            return Err(ModelError::Http { status: status.as_u16(), body: truncate(&text, 200) });
        }

        let reply: CompletionReply = serde_json::from_str(&text)
            .map_err(|e| ModelError::BadReply(format!("{e} in {}", truncate(&text, 120))))?;
        let choice = reply
            .choices
            .first()
            .ok_or_else(|| ModelError::BadReply("reply has no choices".into()))?;
        let choice_text = choice
            .text
            .clone()
            .or_else(|| choice.message.as_ref().map(|m| m.content.clone()))
            .ok_or_else(|| ModelError::BadReply("choice has neither text nor message".into()))?;

        let predicted_label = match parse_label(&choice_text, &self.label_set) {
            Some(label) => PredictedLabel::Label(label),
            None => PredictedLabel::ParseFailure,
        };
        let usage_tokens = reply
            .usage
            .map(|u| u.total_tokens)
            .unwrap_or(prompt.total_tokens);
        Ok(ModelOutput { text: choice_text, predicted_label, usage_tokens })
    }
}

impl GeneralistModel for RemoteModel {
    fn max_context_tokens(&self) -> u32 {
        self.config.max_context_tokens
    }

    fn predict(&self, prompt: &PromptSpec, seed: u64) -> Result<ModelOutput, ModelError> {
        if prompt.total_tokens > self.config.max_context_tokens {
            return Err(ModelError::ContextOverflow {
                tokens: prompt.total_tokens,
                max: self.config.max_context_tokens,
            });
        }
        let mut attempt = 0u32;
        loop {
            match self.send_once(prompt, seed) {
                Ok(output) => return Ok(output),
                Err(err) if err.is_retryable() && attempt < self.config.max_retries => {
                    let backoff = self.config.initial_backoff_ms.saturating_mul(1 << attempt.min(16));
                    std::thread::sleep(Duration::from_millis(backoff));
                    attempt += 1;
                }
                Err(ModelError::Transport { source, .. }) => {
                    return Err(ModelError::Transport { attempts: attempt + 1, source })
                }
                Err(err) => return Err(err),
            }
        }
    }

    fn max_concurrency(&self) -> usize {
        self.config.max_concurrency
    }

    fn name(&self) -> &str {
        &self.config.model
    }
}

/// Find the task label the reply most plausibly asserts: scan
/// case-insensitively, take the earliest occurrence of any label, and break
/// position ties in favour of the longest label.
pub fn parse_label(reply: &str, label_set: &[String]) -> Option<String> {
    let haystack = reply.to_lowercase();
    let mut best: Option<(usize, usize, &String)> = None;
    for label in label_set {
        if label.is_empty() {
            continue;
        }
        let needle = label.to_lowercase();
        if let Some(pos) = haystack.find(&needle) {
            let better = match best {
                None => true,
                Some((best_pos, best_len, best_label)) => {
                    (pos, std::cmp::Reverse(needle.len()), label.as_str())
                        < (best_pos, std::cmp::Reverse(best_len), best_label.as_str())
                }
            };
            if better {
                best = Some((pos, needle.len(), label));
            }
        }
    }
    best.map(|(_, _, label)| label.clone())
}

fn truncate(text: &str, limit: usize) -> String {
    if text.len() <= limit {
        text.to_string()
    } else {
        let mut end = limit;
        while !text.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &text[..end])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parse_label_is_case_insensitive_first_match() {
        let set = labels(&["yes", "no"]);
        assert_eq!(parse_label("The answer is YES.", &set), Some("yes".into()));
        assert_eq!(parse_label("No, not at all", &set), Some("no".into()));
        assert_eq!(parse_label("unclear", &set), None);
    }

    #[test]
    fn parse_label_prefers_earliest_then_longest() {
        let set = labels(&["positive", "negative"]);
        assert_eq!(parse_label("negative, not positive", &set), Some("negative".into()));
        // Same start position: the longer label wins.
        let set = labels(&["good", "good riddance"]);
        assert_eq!(parse_label("good riddance to it", &set), Some("good riddance".into()));
        assert_eq!(parse_label("a good outcome", &set), Some("good".into()));
    }

    #[test]
    fn missing_auth_variable_is_named_in_the_error() {
        let config = RemoteModelConfig {
            endpoint: "http://127.0.0.1:9".into(),
            model: "stub".into(),
            auth_env: "SHOTPLAN_TEST_TOKEN_THAT_IS_UNSET".into(),
            timeout_secs: 1,
            max_retries: 0,
            max_concurrency: 1,
            temperature: 0.0,
            max_tokens: 16,
            max_context_tokens: 128,
            requests_per_second: 0.0,
            initial_backoff_ms: 1,
        };
        let err = RemoteModel::new(config, &labels(&["yes"])).err().unwrap();
        assert!(err.to_string().contains("SHOTPLAN_TEST_TOKEN_THAT_IS_UNSET"));
    }

    #[test]
    fn bucket_spaces_out_a_burst() {
        let mut bucket = TokenBucket::new(2.0);
        assert!(bucket.try_acquire().is_none());
        assert!(bucket.try_acquire().is_none());
        let wait = bucket.try_acquire().expect("third immediate call must wait");
        assert!(wait > Duration::from_millis(100), "wait was {wait:?}");
    }
}
