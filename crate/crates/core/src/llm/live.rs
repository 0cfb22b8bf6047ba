use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use ureq::Agent;

use super::{ChatRequest, CompletionBackend, LlmError};
use crate::model::{Backend, LiveSettings};

const MAX_ATTEMPTS: u32 = 4;

/// Chat-completions client for any compatible HTTP endpoint.
pub struct LiveBackend {
    agent: Agent,
    settings: LiveSettings,
    api_key: String,
    min_interval: Option<Duration>,
    last_request: Mutex<Option<Instant>>,
}

impl LiveBackend {
    /// Reads the API key from the environment variable named in `settings`.
    pub fn new(settings: LiveSettings) -> Result<Self, LlmError> {
        let api_key = std::env::var(&settings.api_key_env)
            .map_err(|_| LlmError::Auth(format!("environment variable {} is not set", settings.api_key_env)))?;
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(settings.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let min_interval = settings
            .requests_per_minute
            .filter(|&r| r > 0)
            .map(|r| Duration::from_secs_f64(60.0 / f64::from(r)));
        Ok(LiveBackend {
            agent,
            settings,
            api_key,
            min_interval,
            last_request: Mutex::new(None),
        })
    }

    fn throttle(&self) {
        let Some(gap) = self.min_interval else { return };
        let mut last = self.last_request.lock().expect("throttle poisoned");
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < gap {
                std::thread::sleep(gap - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, LlmError> {
        let url = format!("{}/{path}", self.settings.base_url.trim_end_matches('/'));
        let mut delay = Duration::from_secs(1);
        let mut attempt = 1;
        loop {
            self.throttle();
            let result = self
                .agent
                .post(&url)
                .header("Authorization", &format!("Bearer {}", self.api_key))
                .header("Content-Type", "application/json")
                .send(body.to_string());
            let err = match result {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    match status {
                        200..=299 => {
                            return serde_json::from_str(&text).map_err(|e| LlmError::Transport {
                                message: format!("malformed response body: {e}"),
                                retryable: false,
                            })
                        }
                        401 | 403 => return Err(LlmError::Auth(format!("HTTP {status}: {text}"))),
                        429 | 500..=599 => LlmError::Transport {
                            message: format!("HTTP {status}: {text}"),
                            retryable: true,
                        },
                        _ => {
                            return Err(LlmError::Transport {
                                message: format!("HTTP {status}: {text}"),
                                retryable: false,
                            })
                        }
                    }
                }
                Err(e) => LlmError::Transport {
                    message: e.to_string(),
                    retryable: true,
                },
            };
            if attempt >= MAX_ATTEMPTS {
                return Err(err);
            }
            log::warn!("{url}: attempt {attempt} failed ({err}); retrying in {delay:?}");
            std::thread::sleep(delay);
            delay *= 2;
            attempt += 1;
        }
    }

    /// Embeds one text with the configured embedding model.
    pub fn embed(&self, text: &str) -> Result<Vec<f32>, LlmError> {
        let model = self
            .settings
            .embedding_model
            .as_deref()
            .ok_or_else(|| LlmError::InvalidRequest("no embedding model configured".into()))?;
        let v = self.post("embeddings", &json!({ "model": model, "input": text }))?;
        v["data"][0]["embedding"]
            .as_array()
            .map(|a| a.iter().filter_map(Value::as_f64).map(|x| x as f32).collect())
            .ok_or_else(|| LlmError::Transport {
                message: "embedding response lacks data[0].embedding".into(),
                retryable: false,
            })
    }
}

impl CompletionBackend for LiveBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let body = json!({
            "model": self.settings.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let v = self.post("chat/completions", &body)?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::Transport {
                message: "response lacks choices[0].message.content".into(),
                retryable: false,
            })
    }

    fn kind(&self) -> Backend {
        Backend::Live
    }
}
