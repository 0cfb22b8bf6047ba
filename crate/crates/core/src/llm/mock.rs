use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{ChatRequest, CompletionBackend, LlmError};
use crate::model::Backend;

type Responder = Box<dyn Fn(&ChatRequest) -> Option<String> + Send + Sync>;

/// Scripted backend for tests and offline runs.
pub struct MockBackend {
    responder: Responder,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn from_fn(f: impl Fn(&ChatRequest) -> Option<String> + Send + Sync + 'static) -> Self {
        MockBackend {
            responder: Box::new(f),
            calls: AtomicUsize::new(0),
        }
    }

    /// Replies with the final user message.
    pub fn echo() -> Self {
        Self::from_fn(|r| Some(r.prompt().to_string()))
    }

    pub fn from_script(script: MockScript) -> Self {
        let counters: Vec<AtomicUsize> = script.rules.iter().map(|_| AtomicUsize::new(0)).collect();
        Self::from_fn(move |req| {
            let haystack: String = req.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n");
            for (rule, counter) in script.rules.iter().zip(&counters) {
                if rule.matches(&req.strategy_tag, &haystack) {
                    let n = counter.fetch_add(1, Ordering::SeqCst);
                    return rule.response_at(n);
                }
            }
            script.default.clone()
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.responder)(request).ok_or_else(|| LlmError::Unscripted(request.strategy_tag.clone()))
    }

    fn kind(&self) -> Backend {
        Backend::Mock
    }
}

/// One scripted answer. A rule matches when the request tag starts with
/// `tag` (if given) and every `contains` snippet occurs in the messages.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MockRule {
    pub tag: Option<String>,
    pub contains: Vec<String>,
    pub response: Option<String>,
    /// Successive answers; the last one repeats once exhausted.
    pub responses: Vec<String>,
}

impl MockRule {
    fn matches(&self, tag: &str, haystack: &str) -> bool {
        self.tag.as_deref().is_none_or(|t| tag.starts_with(t))
            && self.contains.iter().all(|c| haystack.contains(c.as_str()))
    }

    fn response_at(&self, n: usize) -> Option<String> {
        if self.responses.is_empty() {
            return self.response.clone();
        }
        Some(self.responses[n.min(self.responses.len() - 1)].clone())
    }
}

/// JSON rule file for the mock backend: first matching rule wins.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
    pub default: Option<String>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Store(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| LlmError::Store(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules_match_by_tag_and_snippet() {
        let script: MockScript = serde_json::from_str(
            r#"{"rules": [
                {"tag": "judge", "responses": ["NO", "YES"]},
                {"contains": ["singer"], "response": "SELECT count(*) FROM singer"}
            ], "default": "SELECT 1"}"#,
        )
        .unwrap();
        let m = MockBackend::from_script(script);
        let judge = ChatRequest::user("judge:ms", "is it valid?");
        assert_eq!(m.complete(&judge).unwrap(), "NO");
        assert_eq!(m.complete(&judge).unwrap(), "YES");
        assert_eq!(m.complete(&judge).unwrap(), "YES");
        assert_eq!(m.complete(&ChatRequest::user("gen", "count singer rows")).unwrap(), "SELECT count(*) FROM singer");
        assert_eq!(m.complete(&ChatRequest::user("gen", "other")).unwrap(), "SELECT 1");
        assert_eq!(m.calls(), 5);
    }
}
