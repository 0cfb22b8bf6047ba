use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::generate::{Generator, StrategyFailure};
use crate::correction::{generate_sandbox, self_correct_loop, SandboxRecord, TipsList};
use crate::ensemble::{refine, ArbitrationPolicy, DecisionMode};
use crate::error::{Error, Result};
use crate::eval::{aggregate, evaluate_instance, EvaluationRecord, RunReport};
use crate::llm::{
    estimate_tokens, CompletionBackend, Gateway, LiveBackend, LlmError, MockBackend, MockScript, ReplayBackend,
    TranscriptStore,
};
use crate::model::{load_instances, load_spider_dataset, Backend, CandidateQuery, DatabaseSchema, RunConfig, TaskInstance};
use crate::prompt::Templates;
use crate::selection::{CachedEmbedder, Embedder, ExamplePool, HashedEmbedder, LiveEmbedder};
use crate::sql::DatabasePool;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CASSETTE_FILE: &str = "cassette.jsonl";
pub const CANDIDATES_FILE: &str = "candidates.jsonl";
pub const SANDBOXES_FILE: &str = "sandboxes.jsonl";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";

/// A run-level failure, mapped to a process exit code by the CLI.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(Error),
    #[error("dataset error: {0}")]
    Dataset(Error),
    #[error(transparent)]
    Other(#[from] Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Dataset(_) => 3,
            RunError::Other(_) => 1,
        }
    }
}

/// Identity of a run: what went in and when it ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: RunConfig,
    pub dataset_fingerprint: String,
    pub cassette_fingerprint: String,
    pub started_at: u64,
    pub finished_at: Option<u64>,
    pub version: String,
}

/// The arbiter's decision, minus the chosen query itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSummary {
    pub mode: DecisionMode,
    pub rationale_text: String,
    pub fallback: bool,
}

/// Everything generated for one instance, one line of `candidates.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceCandidates {
    pub index: usize,
    pub db_id: String,
    pub initial: Vec<CandidateQuery>,
    pub corrected: Vec<CandidateQuery>,
    pub final_query: CandidateQuery,
    pub decision: Option<DecisionSummary>,
    #[serde(default)]
    pub strategy_failures: Vec<StrategyFailure>,
    #[serde(default)]
    pub correction_errors: Vec<String>,
    #[serde(default)]
    pub sandbox_error: Option<String>,
    /// The sandbox carried no machine-readable expected rows.
    #[serde(default)]
    pub degraded_check: bool,
}

/// An instance that could not be completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFailure {
    pub index: usize,
    pub db_id: String,
    pub error: String,
}

/// Run-level counters reported next to the scores.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub instances: usize,
    pub evaluated: usize,
    pub failed: usize,
    pub strategies: Vec<String>,
    pub ensemble_size: usize,
    pub self_correct: bool,
    pub final_stages: BTreeMap<String, usize>,
    pub degraded_checks: usize,
    pub sandbox_errors: usize,
    pub ensemble_fallbacks: usize,
    pub strategy_failures: usize,
    pub transcripts: usize,
    pub transcripts_by_tag: BTreeMap<String, usize>,
    pub mean_prompt_tokens: f64,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub report: RunReport,
    pub stats: RunStats,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
    pub summary: RunSummary,
}

impl RunOutcome {
    /// 0 on success, 4 when the failed fraction exceeds the threshold.
    pub fn exit_code(&self) -> i32 {
        let s = &self.summary.stats;
        if s.instances > 0 && s.failed as f64 / s.instances as f64 > self.manifest.config.failure_threshold {
            4
        } else {
            0
        }
    }
}

pub fn run_dir(config: &RunConfig) -> PathBuf {
    config.paths.output.join("runs").join(&config.name)
}

fn now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn sha256_files(paths: &[&Path]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        let bytes = std::fs::read(p).map_err(|e| Error::io(*p, e))?;
        h.update(Sha256::digest(&bytes));
    }
    Ok(hex::encode(h.finalize()))
}

/// Reads a JSONL artifact; a torn final line is dropped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(e) if i + 1 == lines.len() && !text.ends_with('\n') => {
                log::warn!("{}: ignoring torn final line: {e}", path.display())
            }
            Err(e) => return Err(Error::parse(format!("{} line {}", path.display(), i + 1), e)),
        }
    }
    Ok(out)
}

/// Opens an artifact for appending after dropping any torn tail.
fn open_append<T: Serialize + DeserializeOwned>(path: &Path) -> Result<File> {
    let existing: Vec<T> = read_jsonl(path)?;
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    for v in &existing {
        writeln!(f, "{}", to_line(v)?).map_err(|e| Error::io(path, e))?;
    }
    drop(f);
    OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))
}

fn to_line<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::parse("artifact", e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::parse(path.display().to_string(), e))?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text + "\n").map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Sink {
    candidates: File,
    sandboxes: File,
    records: File,
    failures: File,
    dir: PathBuf,
}

impl Sink {
    fn open(dir: &Path) -> Result<Self> {
        Ok(Sink {
            candidates: open_append::<InstanceCandidates>(&dir.join(CANDIDATES_FILE))?,
            sandboxes: open_append::<SandboxRecord>(&dir.join(SANDBOXES_FILE))?,
            records: open_append::<EvaluationRecord>(&dir.join(RECORDS_FILE))?,
            failures: open_append::<InstanceFailure>(&dir.join(FAILURES_FILE))?,
            dir: dir.to_path_buf(),
        })
    }

    fn append(file: &mut File, dir: &Path, line: String) -> Result<()> {
        file.write_all(format!("{line}\n").as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| Error::io(dir, e))
    }

    /// The record goes last: its presence marks the instance complete.
    fn done(&mut self, art: &Artifacts) -> Result<()> {
        if let Some(s) = &art.sandbox {
            Self::append(&mut self.sandboxes, &self.dir, to_line(s)?)?;
        }
        Self::append(&mut self.candidates, &self.dir, to_line(&art.candidates)?)?;
        Self::append(&mut self.records, &self.dir, to_line(&art.record)?)
    }

    fn failed(&mut self, f: &InstanceFailure) -> Result<()> {
        Self::append(&mut self.failures, &self.dir, to_line(f)?)
    }
}

struct Artifacts {
    candidates: InstanceCandidates,
    sandbox: Option<SandboxRecord>,
    record: EvaluationRecord,
}

/// Loaded inputs shared by all workers.
pub struct Workspace {
    pub config: RunConfig,
    pub schemas: HashMap<String, DatabaseSchema>,
    pub instances: Vec<TaskInstance>,
    pub pool: Option<ExamplePool>,
    pub templates: Templates,
    pub databases: DatabasePool,
    pub dataset_fingerprint: String,
}

impl Workspace {
    /// Loads schemas, instances (first `limit`), templates and, when a
    /// strategy needs shots, the example pool.
    pub fn load(config: &RunConfig, embedder: &dyn Embedder) -> Result<Self, RunError> {
        config.check().map_err(RunError::Config)?;
        let p = &config.paths;
        let (schema_list, mut instances) =
            load_spider_dataset(&p.tables, &p.instances).map_err(RunError::Dataset)?;
        if let Some(n) = config.limit {
            instances.truncate(n);
        }
        let mut fingerprinted = vec![p.tables.as_path(), p.instances.as_path()];
        let pool = if config.needs_pool() {
            let pool_path = p
                .pool
                .as_deref()
                .ok_or_else(|| RunError::Config(Error::Config("few-shot strategies need paths.pool".into())))?;
            fingerprinted.push(pool_path);
            let pool_instances = load_instances(pool_path, &schema_list).map_err(RunError::Dataset)?;
            let schemas: HashMap<_, _> = schema_list.iter().map(|s| (s.db_id.clone(), s.clone())).collect();
            let pool = match &p.pool_cache {
                Some(cache) => ExamplePool::cached(cache, &pool_instances, &schemas, embedder),
                None => ExamplePool::build(&pool_instances, &schemas, embedder),
            }
            .map_err(RunError::Dataset)?;
            if pool.len() < config.auto_candidates.max(1) {
                return Err(RunError::Dataset(Error::Integrity(format!(
                    "example pool has {} usable entries, fewer than auto_candidates {}",
                    pool.len(),
                    config.auto_candidates
                ))));
            }
            Some(pool)
        } else {
            None
        };
        let dataset_fingerprint = sha256_files(&fingerprinted).map_err(RunError::Dataset)?;
        let mut templates = Templates::builtin();
        if let Some(dir) = &p.templates {
            templates = templates.with_overrides(dir).map_err(RunError::Config)?;
        }
        Ok(Workspace {
            config: config.clone(),
            schemas: schema_list.into_iter().map(|s| (s.db_id.clone(), s)).collect(),
            instances,
            pool,
            templates,
            databases: DatabasePool::new(&p.databases),
            dataset_fingerprint,
        })
    }
}

fn config_err(e: LlmError) -> RunError {
    RunError::Config(Error::Config(e.to_string()))
}

/// Builds the configured backend and a fingerprint of what it answers from.
pub fn backend_for(config: &RunConfig) -> Result<(Box<dyn CompletionBackend>, String), RunError> {
    match config.backend {
        Backend::Mock => {
            let path = config
                .paths
                .mock_script
                .as_deref()
                .ok_or_else(|| RunError::Config(Error::Config("mock backend needs paths.mock_script".into())))?;
            let script = MockScript::load(path).map_err(config_err)?;
            let fp = sha256_files(&[path]).map_err(RunError::Config)?;
            Ok((Box::new(MockBackend::from_script(script)), format!("mock:{fp}")))
        }
        Backend::Replay => {
            let path = config
                .paths
                .cassette
                .as_deref()
                .ok_or_else(|| RunError::Config(Error::Config("replay backend needs paths.cassette".into())))?;
            let backend = ReplayBackend::open(path).map_err(config_err)?;
            let fp = sha256_files(&[path]).map_err(RunError::Config)?;
            Ok((Box::new(backend), format!("replay:{fp}")))
        }
        Backend::Live => {
            let backend = LiveBackend::new(config.live.clone()).map_err(config_err)?;
            Ok((Box::new(backend), format!("live:{}", config.live.model)))
        }
    }
}

/// Hashed embeddings unless a remote embedding model is configured. Remote
/// embeddings are cached in the run directory; replay reads the cache that
/// sits next to the cassette.
pub fn embedder_for(config: &RunConfig, dir: &Path) -> Result<Box<dyn Embedder>, RunError> {
    let Some(model) = &config.live.embedding_model else {
        return Ok(Box::new(HashedEmbedder::default()));
    };
    let name = format!("live-{model}");
    let (path, inner): (PathBuf, Option<Box<dyn Embedder>>) = match config.backend {
        Backend::Live => {
            let mut settings = config.live.clone();
            settings.model = model.clone();
            let backend = LiveBackend::new(settings).map_err(config_err)?;
            (dir.join(EMBEDDINGS_FILE), Some(Box::new(LiveEmbedder { backend, model: model.clone() })))
        }
        _ => {
            let cassette = config.paths.cassette.as_deref().unwrap_or(dir);
            (cassette.with_file_name(EMBEDDINGS_FILE), None)
        }
    };
    Ok(Box::new(CachedEmbedder::open(&path, name, inner).map_err(config_err)?))
}

/// Runs the pipeline with the configured backend.
pub fn run(config: &RunConfig) -> Result<RunOutcome, RunError> {
    let (backend, fingerprint) = backend_for(config)?;
    run_with_backend(config, backend, fingerprint)
}

/// Runs the pipeline with an explicit backend. Re-running into an existing
/// run directory resumes: completed instances are skipped and recorded
/// requests are answered from the run's cassette.
pub fn run_with_backend(
    config: &RunConfig,
    backend: Box<dyn CompletionBackend>,
    cassette_fingerprint: String,
) -> Result<RunOutcome, RunError> {
    config.check().map_err(RunError::Config)?;
    let dir = run_dir(config);
    std::fs::create_dir_all(&dir).map_err(|e| RunError::Other(Error::io(&dir, e)))?;
    let embedder = embedder_for(config, &dir)?;
    let ws = Workspace::load(config, embedder.as_ref())?;
    let store = TranscriptStore::open(&dir.join(CASSETTE_FILE)).map_err(|e| RunError::Other(e.into()))?;
    let gateway = Gateway::new(backend).with_store(store);

    let mut manifest = RunManifest {
        run_id: config.name.clone(),
        config: config.clone(),
        dataset_fingerprint: ws.dataset_fingerprint.clone(),
        cassette_fingerprint,
        started_at: now(),
        finished_at: None,
        version: format!("v{}", env!("CARGO_PKG_VERSION")),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;

    let done: BTreeSet<usize> = read_jsonl::<EvaluationRecord>(&dir.join(RECORDS_FILE))?
        .iter()
        .map(|r| r.index)
        .collect();
    let pending: Vec<&TaskInstance> = ws.instances.iter().filter(|i| !done.contains(&i.index)).collect();
    if !done.is_empty() {
        log::info!("resuming {}: {} done, {} pending", config.name, done.len(), pending.len());
    }
    let sink = Mutex::new(Sink::open(&dir)?);
    let generator = Generator {
        gateway: &gateway,
        templates: &ws.templates,
        pool: ws.pool.as_ref(),
        pool_schemas: &ws.schemas,
        embedder: embedder.as_ref(),
        max_ms_epochs: config.max_ms_epochs,
        auto_candidates: config.auto_candidates,
        seed: config.seed,
    };
    let next = AtomicUsize::new(0);
    let io_error: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..config.workers.min(pending.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(inst) = pending.get(i) else { break };
                let result = process(&ws, &generator, inst);
                let mut sink = sink.lock().expect("artifact sink poisoned");
                let written = match result {
                    Ok(art) => sink.done(&art),
                    Err(e) => {
                        log::warn!("instance {} failed: {e}", inst.index);
                        sink.failed(&InstanceFailure {
                            index: inst.index,
                            db_id: inst.db_id.clone(),
                            error: e.to_string(),
                        })
                    }
                };
                if let Err(e) = written {
                    io_error.lock().expect("poisoned").get_or_insert(e);
                    break;
                }
            });
        }
    });
    if let Some(e) = io_error.into_inner().expect("poisoned") {
        return Err(e.into());
    }

    let summary = summarize(&dir, &ws)?;
    write_json(&dir.join(REPORT_FILE), &summary)?;
    manifest.finished_at = Some(now());
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(RunOutcome { run_dir: dir, manifest, summary })
}

fn process(ws: &Workspace, generator: &Generator<'_>, inst: &TaskInstance) -> Result<Artifacts> {
    let config = &ws.config;
    let schema = ws
        .schemas
        .get(&inst.db_id)
        .ok_or_else(|| Error::Integrity(format!("no schema for {}", inst.db_id)))?;
    let (initial, strategy_failures) = generator.candidate_set(&config.strategies, inst, schema);
    if initial.is_empty() {
        return Err(Error::Integrity(format!(
            "every strategy failed: {}",
            strategy_failures.iter().map(|f| f.error.as_str()).collect::<Vec<_>>().join("; ")
        )));
    }

    let mut corrected = initial.clone();
    let mut sandbox_record = None;
    let mut sandbox_error = None;
    let mut degraded_check = false;
    let mut correction_errors = Vec::new();
    let wants_sc = |c: &CandidateQuery| {
        config
            .strategies
            .iter()
            .find(|s| s.id() == c.strategy_id)
            .is_none_or(|s| s.self_correct)
    };
    if config.self_correct && initial.iter().any(wants_sc) {
        match generate_sandbox(generator.gateway, &ws.templates, schema, &inst.question) {
            Ok(sandbox) => {
                degraded_check = sandbox.expected_rows.is_none();
                sandbox_record = Some(SandboxRecord::new(&inst.db_id, &inst.question, &sandbox));
                let tips = TipsList::standard();
                for c in corrected.iter_mut().filter(|c| wants_sc(c)) {
                    match self_correct_loop(
                        generator.gateway,
                        &ws.templates,
                        c,
                        schema,
                        &inst.question,
                        &sandbox,
                        &tips,
                        config.max_correction_rounds,
                    ) {
                        Ok(fixed) => *c = fixed,
                        Err(e) => correction_errors.push(format!("{}: {e}", c.strategy_id)),
                    }
                }
            }
            Err(e) => {
                log::warn!("instance {}: sandbox unavailable, skipping correction: {e}", inst.index);
                sandbox_error = Some(e.to_string());
            }
        }
    }

    let shown = if config.ensemble_after_correction { &corrected } else { &initial };
    let shown = &shown[..shown.len().min(config.ensemble_size)];
    let (final_query, decision) = if config.ensemble_size > 1 {
        let d = refine(generator.gateway, &ws.templates, shown, schema, &inst.question, ArbitrationPolicy::default())?;
        let summary = DecisionSummary {
            mode: d.mode,
            rationale_text: d.rationale_text,
            fallback: d.fallback,
        };
        (d.chosen, Some(summary))
    } else {
        (shown[0].clone(), None)
    };

    let record = ws
        .databases
        .with(&inst.db_id, |db| evaluate_instance(inst, &final_query.sql, db, schema))??;
    Ok(Artifacts {
        candidates: InstanceCandidates {
            index: inst.index,
            db_id: inst.db_id.clone(),
            initial,
            corrected,
            final_query,
            decision,
            strategy_failures,
            correction_errors,
            sandbox_error,
            degraded_check,
        },
        sandbox: sandbox_record,
        record,
    })
}

fn last_by_index<T>(items: Vec<T>, index: impl Fn(&T) -> usize) -> BTreeMap<usize, T> {
    items.into_iter().map(|t| (index(&t), t)).collect()
}

/// Aggregates the run directory's artifacts for the workspace's instances.
fn summarize(dir: &Path, ws: &Workspace) -> Result<RunSummary> {
    let wanted: BTreeSet<usize> = ws.instances.iter().map(|i| i.index).collect();
    let records = last_by_index(read_jsonl::<EvaluationRecord>(&dir.join(RECORDS_FILE))?, |r| r.index);
    let records: Vec<EvaluationRecord> = records.into_iter().filter(|(i, _)| wanted.contains(i)).map(|(_, r)| r).collect();
    let cands = last_by_index(read_jsonl::<InstanceCandidates>(&dir.join(CANDIDATES_FILE))?, |c| c.index);
    let failures = last_by_index(read_jsonl::<InstanceFailure>(&dir.join(FAILURES_FILE))?, |f| f.index);
    let evaluated: BTreeSet<usize> = records.iter().map(|r| r.index).collect();

    let mut stats = RunStats {
        instances: wanted.len(),
        evaluated: records.len(),
        failed: failures.keys().filter(|i| wanted.contains(i) && !evaluated.contains(i)).count(),
        strategies: ws.config.strategies.iter().map(|s| s.id()).collect(),
        ensemble_size: ws.config.ensemble_size,
        self_correct: ws.config.self_correct,
        ..RunStats::default()
    };
    for c in evaluated.iter().filter_map(|i| cands.get(i)) {
        let stage = serde_json::to_value(c.final_query.stage).map_err(|e| Error::parse("stage", e))?;
        *stats.final_stages.entry(stage.as_str().unwrap_or_default().to_string()).or_default() += 1;
        stats.degraded_checks += usize::from(c.degraded_check);
        stats.sandbox_errors += usize::from(c.sandbox_error.is_some());
        stats.ensemble_fallbacks += usize::from(c.decision.as_ref().is_some_and(|d| d.fallback));
        stats.strategy_failures += c.strategy_failures.len();
    }
    let transcripts = crate::llm::read_cassette(&dir.join(CASSETTE_FILE)).map_err(Error::from)?;
    stats.transcripts = transcripts.len();
    let mut tokens = 0usize;
    for t in &transcripts {
        *stats.transcripts_by_tag.entry(t.request.strategy_tag.clone()).or_default() += 1;
        tokens += t.request.messages.iter().map(|m| estimate_tokens(&m.content)).sum::<usize>();
    }
    if !transcripts.is_empty() {
        stats.mean_prompt_tokens = tokens as f64 / transcripts.len() as f64;
    }
    Ok(RunSummary {
        run_id: ws.config.name.clone(),
        report: aggregate(&records),
        stats,
    })
}

/// Prompts and replies behind one instance of a finished run.
pub fn inspect(dir: &Path, index: usize) -> Result<String> {
    let cands = last_by_index(read_jsonl::<InstanceCandidates>(&dir.join(CANDIDATES_FILE))?, |c| c.index);
    let Some(c) = cands.get(&index) else {
        let failures = last_by_index(read_jsonl::<InstanceFailure>(&dir.join(FAILURES_FILE))?, |f| f.index);
        return match failures.get(&index) {
            Some(f) => Ok(format!("instance {index} failed: {}\n", f.error)),
            None => Err(Error::Precondition(format!("instance {index} is not in {}", dir.display()))),
        };
    };
    let transcripts: HashMap<String, _> = crate::llm::read_cassette(&dir.join(CASSETTE_FILE))
        .map_err(Error::from)?
        .into_iter()
        .map(|t| (t.id.clone(), t))
        .collect();
    let mut out = format!("instance {index} ({})\n", c.db_id);
    let mut seen = BTreeSet::new();
    let groups = [("initial", &c.initial), ("corrected", &c.corrected)];
    for (label, list) in groups {
        for q in list.iter() {
            out.push_str(&format!("\n== {label} {} [{:?}] ==\n{}\n", q.strategy_id, q.stage, q.sql));
        }
    }
    out.push_str(&format!("\n== final {} ==\n{}\n", c.final_query.strategy_id, c.final_query.sql));
    let refs = c
        .corrected
        .iter()
        .chain(&c.initial)
        .chain(std::iter::once(&c.final_query))
        .flat_map(|q| q.transcript_refs.iter());
    for id in refs {
        if !seen.insert(id.clone()) {
            continue;
        }
        let Some(t) = transcripts.get(id) else { continue };
        out.push_str(&format!("\n--- transcript {} ({}) ---\n", &id[..id.len().min(12)], t.request.strategy_tag));
        for m in &t.request.messages {
            out.push_str(&format!("[{:?}]\n{}\n", m.role, m.content));
        }
        out.push_str(&format!("[reply]\n{}\n", t.response));
    }
    Ok(out)
}

/// Reads a predictions file: one query per line, aligned with the
/// instances. Anything after a tab (a trailing db id) is ignored.
pub fn read_predictions(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split('\t').next().unwrap_or_default().trim().to_string())
        .collect())
}

/// Scores pre-generated predictions against the configured instances.
pub fn evaluate_predictions(config: &RunConfig, predictions: &[String]) -> Result<(Vec<EvaluationRecord>, RunReport), RunError> {
    let p = &config.paths;
    let (schema_list, mut instances) = load_spider_dataset(&p.tables, &p.instances).map_err(RunError::Dataset)?;
    if let Some(n) = config.limit {
        instances.truncate(n);
    }
    let mut predictions = predictions.to_vec();
    while predictions.last().is_some_and(|l| l.is_empty()) && predictions.len() > instances.len() {
        predictions.pop();
    }
    if predictions.len() < instances.len() || (config.limit.is_none() && predictions.len() != instances.len()) {
        return Err(RunError::Dataset(Error::Integrity(format!(
            "{} predictions for {} instances",
            predictions.len(),
            instances.len()
        ))));
    }
    let schemas: HashMap<_, _> = schema_list.iter().map(|s| (s.db_id.as_str(), s)).collect();
    let dbs = DatabasePool::new(&p.databases);
    let mut records = Vec::with_capacity(instances.len());
    for (inst, pred) in instances.iter().zip(&predictions) {
        let schema = schemas[inst.db_id.as_str()];
        let rec = dbs
            .with(&inst.db_id, |db| evaluate_instance(inst, pred, db, schema))
            .map_err(|e| RunError::Dataset(e.into()))?
            .map_err(RunError::Dataset)?;
        records.push(rec);
    }
    let report = aggregate(&records);
    Ok((records, report))
}
