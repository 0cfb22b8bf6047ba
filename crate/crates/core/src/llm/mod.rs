//! Model access: request envelopes, the content-addressed transcript store,
//! and the live, replay and mock backends behind a single [`Gateway`].

mod cassette;
mod live;
mod mock;

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cassette::{read_cassette, ReplayBackend, TranscriptStore};
pub use live::LiveBackend;
pub use mock::{MockBackend, MockRule, MockScript};

use crate::model::Backend;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("transport failure: {message}")]
    Transport { message: String, retryable: bool },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("no cassette entry for request {0}")]
    CacheMiss(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("mock backend has no response for request tagged {0:?}")]
    Unscripted(String),
    #[error("transcript store: {0}")]
    Store(String),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Transport { retryable: true, .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Free-form label naming the pipeline stage; not part of the cache key.
    pub strategy_tag: String,
}

pub const DEFAULT_MAX_TOKENS: u32 = 1024;

impl ChatRequest {
    /// A single-turn request at temperature 0.
    pub fn user(tag: impl Into<String>, content: impl Into<String>) -> Self {
        ChatRequest {
            messages: vec![Message {
                role: Role::User,
                content: content.into(),
            }],
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            strategy_tag: tag.into(),
        }
    }

    pub fn with_system(mut self, content: impl Into<String>) -> Self {
        self.messages.insert(
            0,
            Message {
                role: Role::System,
                content: content.into(),
            },
        );
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn check(&self) -> Result<(), LlmError> {
        match self.messages.last() {
            None => Err(LlmError::InvalidRequest("no messages".into())),
            Some(m) if m.role != Role::User => {
                Err(LlmError::InvalidRequest("last message must come from the user".into()))
            }
            _ if !(self.temperature >= 0.0) => Err(LlmError::InvalidRequest("negative temperature".into())),
            _ if self.max_tokens == 0 => Err(LlmError::InvalidRequest("max_tokens must be positive".into())),
            _ => Ok(()),
        }
    }

    /// Content hash over messages, temperature and max_tokens.
    pub fn key(&self) -> String {
        let body = serde_json::json!({
            "messages": self.messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });
        hex::encode(Sha256::digest(body.to_string().as_bytes()))
    }

    /// Text of the final user message.
    pub fn prompt(&self) -> &str {
        self.messages.last().map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub id: String,
    pub request: ChatRequest,
    pub response: String,
    pub backend: Backend,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// Anything that can answer a chat request.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;
    fn kind(&self) -> Backend;
}

/// Rough token count: characters / 4, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub transcript_id: String,
    pub text: String,
}

/// The single entry point for model calls. Identical requests are answered
/// from the transcript store, so a request is sent to the backend at most
/// once per store.
pub struct Gateway {
    backend: Box<dyn CompletionBackend>,
    store: TranscriptStore,
    log: Mutex<Vec<(String, String)>>,
}

impl Gateway {
    pub fn new(backend: Box<dyn CompletionBackend>) -> Self {
        Gateway {
            backend,
            store: TranscriptStore::in_memory(),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn with_store(mut self, store: TranscriptStore) -> Self {
        self.store = store;
        self
    }

    pub fn mock(f: impl Fn(&ChatRequest) -> Option<String> + Send + Sync + 'static) -> Self {
        Gateway::new(Box::new(MockBackend::from_fn(f)))
    }

    pub fn backend_kind(&self) -> Backend {
        self.backend.kind()
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError> {
        request.check()?;
        let id = request.key();
        self.log
            .lock()
            .expect("request log poisoned")
            .push((request.strategy_tag.clone(), id.clone()));
        if let Some(t) = self.store.get(&id) {
            return Ok(Completion {
                transcript_id: id,
                text: t.response,
            });
        }
        let text = self.backend.complete(request)?;
        let transcript = Transcript {
            id: id.clone(),
            request: request.clone(),
            response: text.clone(),
            backend: self.backend.kind(),
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        };
        self.store.insert(transcript)?;
        Ok(Completion {
            transcript_id: id,
            text,
        })
    }

    pub fn store(&self) -> &TranscriptStore {
        &self.store
    }

    /// (strategy tag, transcript id) for every request, cache hits included.
    pub fn request_log(&self) -> Vec<(String, String)> {
        self.log.lock().expect("request log poisoned").clone()
    }

    pub fn requests_tagged(&self, tag: &str) -> usize {
        self.log
            .lock()
            .expect("request log poisoned")
            .iter()
            .filter(|(t, _)| t == tag)
            .count()
    }

    /// Requests issued so far, grouped by tag.
    pub fn tag_counts(&self) -> HashMap<String, usize> {
        let mut out = HashMap::new();
        for (tag, _) in self.log.lock().expect("request log poisoned").iter() {
            *out.entry(tag.clone()).or_insert(0) += 1;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn key_ignores_tag_but_not_temperature() {
        let a = ChatRequest::user("a", "hi");
        let b = ChatRequest::user("b", "hi");
        assert_eq!(a.key(), b.key());
        assert_ne!(a.key(), a.clone().with_temperature(0.3).key());
        let mut c = a.clone();
        c.max_tokens = 5;
        assert_ne!(a.key(), c.key());
    }

    #[test]
    fn request_validation() {
        let mut r = ChatRequest::user("t", "x");
        r.check().unwrap();
        r.messages.push(Message {
            role: Role::Assistant,
            content: "y".into(),
        });
        assert!(r.check().is_err());
        r.messages.clear();
        assert!(r.check().is_err());
    }

    #[test]
    fn scripted_echo_and_dedup() {
        let gw = Gateway::mock(|r| (r.prompt() == "q").then(|| "SELECT 1".to_string()));
        let r = ChatRequest::user("t", "q");
        assert_eq!(gw.complete(&r).unwrap().text, "SELECT 1");
        assert_eq!(gw.complete(&r).unwrap().text, "SELECT 1");
        assert_eq!(gw.store().len(), 1);
        assert_eq!(gw.requests_tagged("t"), 2);
        assert!(matches!(
            gw.complete(&ChatRequest::user("t", "other")),
            Err(LlmError::Unscripted(_))
        ));
    }

    #[test]
    fn empty_text_has_no_tokens() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
    }

    proptest! {
        #[test]
        fn token_estimate_is_monotone(a in ".{0,200}", b in ".{0,200}") {
            let joined = format!("{a}{b}");
            prop_assert!(estimate_tokens(&joined) >= estimate_tokens(&a).max(estimate_tokens(&b)));
        }
    }
}
