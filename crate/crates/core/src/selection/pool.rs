use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embed::{Embedder, Embedding};
use super::mask::{mask_for_fis, MaskedInstance};
use crate::error::{Error, Result};
use crate::model::{DatabaseSchema, Difficulty, TaskInstance};
use crate::sql::classify_difficulty;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisEmbeddings {
    pub schema: Embedding,
    pub question: Embedding,
    pub query: Option<Embedding>,
}

impl FisEmbeddings {
    pub fn of(embedder: &dyn Embedder, masked: &MaskedInstance) -> Result<Self> {
        Ok(FisEmbeddings {
            schema: embedder.embed(&masked.schema_text)?,
            question: embedder.embed(&masked.masked_question)?,
            query: masked.masked_query.as_deref().map(|q| embedder.embed(q)).transpose()?,
        })
    }

    /// Mean of the component similarities available on both sides.
    pub fn combined(&self, other: &FisEmbeddings) -> f32 {
        let mut scores = vec![self.schema.cosine(&other.schema), self.question.cosine(&other.question)];
        if let (Some(a), Some(b)) = (&self.query, &other.query) {
            scores.push(a.cosine(b));
        }
        scores.iter().sum::<f32>() / scores.len() as f32
    }
}

/// One few-shot candidate with everything selection needs precomputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub instance: TaskInstance,
    pub difficulty: Difficulty,
    pub masked: MaskedInstance,
    pub question_embedding: Embedding,
    pub fis: FisEmbeddings,
    /// Provider that produced the embeddings.
    pub embedder: String,
}

impl PoolEntry {
    pub fn gold(&self) -> &str {
        self.instance.gold_query.as_deref().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExamplePool {
    pub entries: Vec<PoolEntry>,
}

impl ExamplePool {
    /// Computes masks, difficulty and embeddings for every instance with a
    /// usable gold query; the rest are skipped with a warning.
    pub fn build(
        instances: &[TaskInstance],
        schemas: &HashMap<String, DatabaseSchema>,
        embedder: &dyn Embedder,
    ) -> Result<Self> {
        let mut entries = Vec::with_capacity(instances.len());
        for inst in instances {
            let Some(gold) = inst.gold_query.as_deref() else {
                log::warn!("pool instance {} has no gold query; skipped", inst.index);
                continue;
            };
            let schema = schemas
                .get(&inst.db_id)
                .ok_or_else(|| Error::Integrity(format!("pool instance {} names unknown db {}", inst.index, inst.db_id)))?;
            let difficulty = match classify_difficulty(gold) {
                Ok(d) => d,
                Err(e) => {
                    log::warn!("pool instance {}: {e}; skipped", inst.index);
                    continue;
                }
            };
            let masked = mask_for_fis(inst, schema)?;
            entries.push(PoolEntry {
                instance: inst.clone(),
                difficulty,
                question_embedding: embedder.embed(&inst.question)?,
                fis: FisEmbeddings::of(embedder, &masked)?,
                masked,
                embedder: embedder.name(),
            });
        }
        Ok(ExamplePool { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry indices per difficulty, in `Difficulty::ALL` order.
    pub fn buckets(&self) -> [Vec<usize>; 4] {
        let mut out: [Vec<usize>; 4] = Default::default();
        for (i, e) in self.entries.iter().enumerate() {
            let slot = Difficulty::ALL.iter().position(|d| *d == e.difficulty).unwrap_or(0);
            out[slot].push(i);
        }
        out
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("jsonl.tmp");
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        for e in &self.entries {
            let line = serde_json::to_string(e).map_err(|err| Error::parse("pool entry", err))?;
            writeln!(w, "{line}").map_err(|err| Error::io(&tmp, err))?;
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
        drop(w);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(
                serde_json::from_str(&line)
                    .map_err(|e| Error::parse(format!("{} line {}", path.display(), i + 1), e))?,
            );
        }
        Ok(ExamplePool { entries })
    }

    /// Loads a cached pool when it was built by the same embedder,
    /// otherwise builds it and refreshes the cache.
    pub fn cached(
        cache: &Path,
        instances: &[TaskInstance],
        schemas: &HashMap<String, DatabaseSchema>,
        embedder: &dyn Embedder,
    ) -> Result<Self> {
        if cache.exists() {
            let pool = Self::load_jsonl(cache)?;
            let name = embedder.name();
            if !pool.is_empty() && pool.entries.iter().all(|e| e.embedder == name) {
                return Ok(pool);
            }
            log::info!("{}: embedder changed; rebuilding pool", cache.display());
        }
        let pool = Self::build(instances, schemas, embedder)?;
        pool.save_jsonl(cache)?;
        Ok(pool)
    }
}
