use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendError, CompletionBackend, CompletionRequest, Reply};

/// Connection settings for an OpenAI-compatible chat completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    pub base_url: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "SEW_API_KEY".into(),
            max_retries: 4,
            initial_backoff_ms: 500,
            timeout_secs: 120,
        }
    }
}

pub struct LiveBackend {
    config: LiveConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self, BackendError> {
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| BackendError::Config(format!("environment variable {} is not set", config.api_key_env)))?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, api_key, agent })
    }

    fn attempt(&self, request: &CompletionRequest) -> Attempt {
        let mut body = serde_json::json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = seed.into();
        }
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut resp = match self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
        {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry(BackendError::Network {
                    attempts: 1,
                    message: e.to_string(),
                })
            }
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Retry(BackendError::Network {
                    attempts: 1,
                    message: e.to_string(),
                })
            }
        };
        match status {
            200..=299 => match parse_reply(&text) {
                Ok(r) => Attempt::Done(r),
                Err(e) => Attempt::Fail(e),
            },
            429 => Attempt::Retry(BackendError::Quota(truncate(&text))),
            500..=599 => Attempt::Retry(BackendError::Network {
                attempts: 1,
                message: format!("status {status}"),
            }),
            _ => Attempt::Fail(BackendError::Rejected {
                status,
                body: truncate(&text),
            }),
        }
    }
}

enum Attempt {
    Done(Reply),
    Retry(BackendError),
    Fail(BackendError),
}

impl CompletionBackend for LiveBackend {
    fn call(&self, request: &CompletionRequest) -> Result<Reply, BackendError> {
        let mut backoff = self.config.initial_backoff_ms;
        let mut retries = 0;
        loop {
            match self.attempt(request) {
                Attempt::Done(mut reply) => {
                    reply.retries = retries;
                    return Ok(reply);
                }
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if retries >= self.config.max_retries => {
                    return Err(match e {
                        BackendError::Network { message, .. } => BackendError::Network {
                            attempts: retries + 1,
                            message,
                        },
                        other => other,
                    });
                }
                Attempt::Retry(_) => {
                    thread::sleep(Duration::from_millis(backoff));
                    backoff = backoff.saturating_mul(2);
                    retries += 1;
                }
            }
        }
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(500).collect()
}

fn parse_reply(body: &str) -> Result<Reply, BackendError> {
    let v: Value = serde_json::from_str(body).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
    let text = v["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| BackendError::MalformedResponse("missing choices[0].message.content".into()))?;
    Ok(Reply {
        text: text.to_string(),
        input_tokens: v["usage"]["prompt_tokens"].as_u64(),
        output_tokens: v["usage"]["completion_tokens"].as_u64(),
        ..Reply::default()
    })
}
