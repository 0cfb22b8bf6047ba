use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PromptStrategy;
use crate::error::{Error, Result};

pub const DEFAULT_MS_EPOCHS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Live,
    Replay,
    Mock,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "live" => Ok(Backend::Live),
            "replay" => Ok(Backend::Replay),
            "mock" => Ok(Backend::Mock),
            other => Err(Error::Config(format!("unknown backend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunPaths {
    /// Spider-format `tables.json` covering both the evaluated and pool databases.
    pub tables: PathBuf,
    /// Evaluated instances (`dev.json` layout).
    pub instances: PathBuf,
    /// Few-shot example pool (`train.json` layout).
    pub pool: Option<PathBuf>,
    /// Optional precomputed pool JSONL; written on first use when absent.
    pub pool_cache: Option<PathBuf>,
    /// Directory holding `<db_id>/<db_id>.sqlite`.
    pub databases: PathBuf,
    /// Root under which `runs/<id>/` directories are created.
    pub output: PathBuf,
    /// Cassette consulted by the replay backend.
    pub cassette: Option<PathBuf>,
    /// Scripted responses for the mock backend.
    pub mock_script: Option<PathBuf>,
    /// Directory of prompt template overrides.
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveSettings {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub embedding_model: Option<String>,
    pub requests_per_minute: Option<u32>,
    pub timeout_secs: u64,
}

impl Default for LiveSettings {
    fn default() -> Self {
        LiveSettings {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-3.5-turbo".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            embedding_model: None,
            requests_per_minute: None,
            timeout_secs: 120,
        }
    }
}

/// Declarative description of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub name: String,
    /// Candidate-generating strategies, by id, in candidate order.
    #[serde(with = "strategy_ids")]
    pub strategies: Vec<PromptStrategy>,
    /// How many leading candidates the arbiter sees; 1 disables arbitration.
    pub ensemble_size: usize,
    pub self_correct: bool,
    /// Feed self-corrected candidates to the arbiter (false shows the raw ones).
    pub ensemble_after_correction: bool,
    pub max_ms_epochs: usize,
    pub max_correction_rounds: usize,
    pub auto_candidates: usize,
    pub backend: Backend,
    pub seed: u64,
    pub limit: Option<usize>,
    pub workers: usize,
    /// Fraction of failed instances above which the run exits non-zero.
    pub failure_threshold: f64,
    pub paths: RunPaths,
    pub live: LiveSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "run".into(),
            strategies: crate::ensemble::default_strategies(),
            ensemble_size: 4,
            self_correct: true,
            ensemble_after_correction: true,
            max_ms_epochs: DEFAULT_MS_EPOCHS,
            max_correction_rounds: 1,
            auto_candidates: 12,
            backend: Backend::Mock,
            seed: 0,
            limit: None,
            workers: 4,
            failure_threshold: 0.5,
            paths: RunPaths::default(),
            live: LiveSettings::default(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML or JSON config. Relative paths resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        config.check()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        fix(&mut p.tables);
        fix(&mut p.instances);
        fix(&mut p.databases);
        fix(&mut p.output);
        for opt in [&mut p.pool, &mut p.pool_cache, &mut p.cassette, &mut p.mock_script, &mut p.templates] {
            if let Some(path) = opt {
                fix(path);
            }
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        for s in &self.strategies {
            s.check()?;
        }
        if !(1..=8).contains(&self.ensemble_size) {
            return Err(Error::Config(format!(
                "ensemble_size must be within 1..=8, got {}",
                self.ensemble_size
            )));
        }
        if self.ensemble_size > self.strategies.len() {
            return Err(Error::Config(format!(
                "ensemble_size {} exceeds the {} configured strategies",
                self.ensemble_size,
                self.strategies.len()
            )));
        }
        if self.max_ms_epochs == 0 {
            return Err(Error::Config("max_ms_epochs must be at least 1".into()));
        }
        if self.max_correction_rounds == 0 {
            return Err(Error::Config("max_correction_rounds must be at least 1".into()));
        }
        let max_shots = self.strategies.iter().map(|s| s.shots).max().unwrap_or(0);
        if self.auto_candidates < max_shots {
            return Err(Error::Config("auto_candidates must be at least the shot count".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn needs_pool(&self) -> bool {
        self.strategies.iter().any(|s| s.shots > 0)
    }
}

mod strategy_ids {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::PromptStrategy;

    pub fn serialize<S: Serializer>(v: &[PromptStrategy], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|p| p.id()).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<PromptStrategy>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|id| id.parse().map_err(serde::de::Error::custom))
            .collect()
    }
}
