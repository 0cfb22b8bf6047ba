use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::llm::{LiveBackend, LlmError};

/// A unit-length embedding (or all zeros for empty input).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f32>,
}

impl Embedding {
    pub fn normalized(mut values: Vec<f32>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Embedding { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Cosine similarity; 0 when either side is a zero vector or the
    /// dimensions differ.
    pub fn cosine(&self, other: &Embedding) -> f32 {
        if self.dim() != other.dim() {
            return 0.0;
        }
        let dot: f32 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        let na = self.values.iter().map(|v| v * v).sum::<f32>().sqrt();
        let nb = other.values.iter().map(|v| v * v).sum::<f32>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            (dot / (na * nb)).clamp(-1.0, 1.0)
        }
    }
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Embedding, LlmError>;
    /// Identifies the provider so cached pool embeddings are not mixed.
    fn name(&self) -> String;
}

pub const HASHED_DIM: usize = 256;

/// Deterministic offline embedder: lower-cased word tokens hashed into a
/// fixed number of buckets, counted, then L2-normalized.
#[derive(Debug, Clone, Copy)]
pub struct HashedEmbedder {
    pub dim: usize,
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        HashedEmbedder { dim: HASHED_DIM }
    }
}

impl HashedEmbedder {
    pub fn bucket(&self, token: &str) -> usize {
        let digest = Sha256::digest(token.as_bytes());
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        (u64::from_le_bytes(head) % self.dim as u64) as usize
    }
}

pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '<' || c == '>'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl Embedder for HashedEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, LlmError> {
        let mut values = vec![0f32; self.dim];
        for tok in tokens(text) {
            values[self.bucket(&tok)] += 1.0;
        }
        Ok(Embedding::normalized(values))
    }

    fn name(&self) -> String {
        format!("hashed-{}", self.dim)
    }
}

/// Embeddings from the live endpoint's embedding model.
pub struct LiveEmbedder {
    pub backend: LiveBackend,
    pub model: String,
}

impl Embedder for LiveEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, LlmError> {
        let values = self.backend.embed(text)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LlmError::Transport {
                message: "embedding contains non-finite values".into(),
                retryable: false,
            });
        }
        Ok(Embedding::normalized(values))
    }

    fn name(&self) -> String {
        format!("live-{}", self.model)
    }
}

#[derive(Serialize, Deserialize)]
struct CachedVector {
    key: String,
    values: Vec<f32>,
}

/// Memoizes another embedder in a JSONL file so runs that used a remote
/// embedding model can be replayed offline. Without an inner embedder,
/// every lookup must hit the file.
pub struct CachedEmbedder {
    inner: Option<Box<dyn Embedder>>,
    name: String,
    cache: std::sync::Mutex<std::collections::HashMap<String, Embedding>>,
    sink: Option<std::sync::Mutex<std::fs::File>>,
}

impl CachedEmbedder {
    pub fn open(path: &std::path::Path, name: String, inner: Option<Box<dyn Embedder>>) -> Result<Self, LlmError> {
        use std::io::BufRead;
        let store = |e: std::io::Error| LlmError::Store(format!("{}: {e}", path.display()));
        let mut cache = std::collections::HashMap::new();
        if path.exists() {
            let file = std::fs::File::open(path).map_err(store)?;
            for line in std::io::BufReader::new(file).lines() {
                let line = line.map_err(store)?;
                // A torn final line from an interrupted write is dropped.
                if let Ok(v) = serde_json::from_str::<CachedVector>(&line) {
                    cache.insert(v.key, Embedding { values: v.values });
                }
            }
        }
        let sink = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(store)?;
        Ok(CachedEmbedder {
            inner,
            name,
            cache: std::sync::Mutex::new(cache),
            sink: Some(std::sync::Mutex::new(sink)),
        })
    }

    fn key(&self, text: &str) -> String {
        hex::encode(Sha256::digest(format!("{}\n{text}", self.name).as_bytes()))
    }
}

impl Embedder for CachedEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, LlmError> {
        use std::io::Write;
        let key = self.key(text);
        if let Some(e) = self.cache.lock().expect("embedding cache poisoned").get(&key) {
            return Ok(e.clone());
        }
        let inner = self.inner.as_ref().ok_or_else(|| LlmError::CacheMiss(key.clone()))?;
        let e = inner.embed(text)?;
        if let Some(sink) = &self.sink {
            let line = serde_json::to_string(&CachedVector { key: key.clone(), values: e.values.clone() })
                .map_err(|err| LlmError::Store(err.to_string()))?;
            let mut f = sink.lock().expect("embedding sink poisoned");
            writeln!(f, "{line}").and_then(|_| f.flush()).map_err(|err| LlmError::Store(err.to_string()))?;
        }
        self.cache.lock().expect("embedding cache poisoned").insert(key, e.clone());
        Ok(e)
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}
