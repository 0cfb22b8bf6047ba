use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{ChatRequest, CompletionBackend, LlmError, Transcript};
use crate::model::Backend;

/// Reads a JSONL cassette. A torn final line (interrupted write) is skipped;
/// any other malformed line is an error.
pub fn read_cassette(path: &Path) -> Result<Vec<Transcript>, LlmError> {
    let file = File::open(path).map_err(|e| LlmError::Store(format!("{}: {e}", path.display())))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| LlmError::Store(format!("{}: {e}", path.display())))?;
    let mut out = Vec::with_capacity(lines.len());
    let last = lines.len().saturating_sub(1);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Transcript>(line) {
            Ok(t) => out.push(t),
            Err(e) if i == last => log::warn!("{}: ignoring torn final line: {e}", path.display()),
            Err(e) => return Err(LlmError::Store(format!("{} line {}: {e}", path.display(), i + 1))),
        }
    }
    Ok(out)
}

#[derive(Default)]
struct Entries {
    order: Vec<String>,
    by_id: HashMap<String, Transcript>,
}

/// Append-only transcript store, optionally mirrored to a JSONL file.
pub struct TranscriptStore {
    entries: Mutex<Entries>,
    sink: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl TranscriptStore {
    pub fn in_memory() -> Self {
        TranscriptStore {
            entries: Mutex::new(Entries::default()),
            sink: None,
            path: None,
        }
    }

    /// Opens (or creates) a cassette file; existing entries are loaded so
    /// their requests are never re-issued.
    pub fn open(path: &Path) -> Result<Self, LlmError> {
        let mut entries = Entries::default();
        if path.exists() {
            for t in read_cassette(path)? {
                if !entries.by_id.contains_key(&t.id) {
                    entries.order.push(t.id.clone());
                    entries.by_id.insert(t.id.clone(), t);
                }
            }
            // Rewrite so a torn tail never precedes new lines.
            let mut f = File::create(path).map_err(|e| LlmError::Store(e.to_string()))?;
            for id in &entries.order {
                writeln!(f, "{}", to_line(&entries.by_id[id])?).map_err(|e| LlmError::Store(e.to_string()))?;
            }
        }
        let sink = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LlmError::Store(format!("{}: {e}", path.display())))?;
        Ok(TranscriptStore {
            entries: Mutex::new(entries),
            sink: Some(Mutex::new(sink)),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, id: &str) -> Option<Transcript> {
        self.entries.lock().expect("store poisoned").by_id.get(id).cloned()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.lock().expect("store poisoned").by_id.contains_key(id)
    }

    pub fn insert(&self, t: Transcript) -> Result<(), LlmError> {
        let mut entries = self.entries.lock().expect("store poisoned");
        if entries.by_id.contains_key(&t.id) {
            return Ok(());
        }
        if let Some(sink) = &self.sink {
            let mut line = to_line(&t)?;
            line.push('\n');
            let mut f = sink.lock().expect("cassette sink poisoned");
            f.write_all(line.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|e| LlmError::Store(e.to_string()))?;
        }
        entries.order.push(t.id.clone());
        entries.by_id.insert(t.id.clone(), t);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("store poisoned").order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All transcripts in insertion order.
    pub fn all(&self) -> Vec<Transcript> {
        let entries = self.entries.lock().expect("store poisoned");
        entries.order.iter().map(|id| entries.by_id[id].clone()).collect()
    }
}

fn to_line(t: &Transcript) -> Result<String, LlmError> {
    serde_json::to_string(t).map_err(|e| LlmError::Store(e.to_string()))
}

/// Answers strictly from a recorded cassette; a miss is a hard error.
pub struct ReplayBackend {
    responses: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn open(path: &Path) -> Result<Self, LlmError> {
        Ok(Self::from_transcripts(read_cassette(path)?))
    }

    pub fn from_transcripts(ts: impl IntoIterator<Item = Transcript>) -> Self {
        ReplayBackend {
            responses: ts.into_iter().map(|t| (t.id, t.response)).collect(),
        }
    }
}

impl CompletionBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let id = request.key();
        self.responses.get(&id).cloned().ok_or(LlmError::CacheMiss(id))
    }

    fn kind(&self) -> Backend {
        Backend::Replay
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::Gateway;

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cassette.jsonl");
        let req = ChatRequest::user("t", "how many singers?");
        {
            let gw = Gateway::mock(|_| Some("SELECT count(*) FROM singer".into()))
                .with_store(TranscriptStore::open(&path).unwrap());
            gw.complete(&req).unwrap();
        }
        let replay = Gateway::new(Box::new(ReplayBackend::open(&path).unwrap()));
        let a = replay.complete(&req).unwrap();
        let b = replay.complete(&req).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.text, "SELECT count(*) FROM singer");
        let miss = replay.complete(&ChatRequest::user("t", "unseen")).unwrap_err();
        assert!(matches!(miss, LlmError::CacheMiss(ref h) if h.len() == 64));
    }

    #[test]
    fn reopening_resumes_and_drops_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let req = ChatRequest::user("t", "q");
        {
            let store = TranscriptStore::open(&path).unwrap();
            Gateway::mock(|_| Some("A".into())).with_store(store).complete(&req).unwrap();
        }
        std::fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .unwrap()
            .write_all(b"{\"id\":\"trunc")
            .unwrap();
        let gw = Gateway::mock(|_| None).with_store(TranscriptStore::open(&path).unwrap());
        assert_eq!(gw.complete(&req).unwrap().text, "A");
        assert_eq!(read_cassette(&path).unwrap().len(), 1);
    }
}
