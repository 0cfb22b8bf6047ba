use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PromptStrategy;

const SHIPPED: &str = include_str!("../../config/ensemble_settings.toml");

/// A numbered candidate composition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSetting {
    #[serde(rename = "id")]
    pub setting_id: u8,
    pub strategies: Vec<String>,
}

impl EnsembleSetting {
    pub fn strategies(&self) -> Result<Vec<PromptStrategy>> {
        self.strategies.iter().map(|s| s.parse()).collect()
    }
}

#[derive(Debug, Clone, Deserialize)]
struct DefaultEntry {
    strategies: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct SettingsFile {
    setting: Vec<EnsembleSetting>,
    default: DefaultEntry,
}

#[derive(Debug, Clone)]
pub struct EnsembleSettings {
    pub settings: Vec<EnsembleSetting>,
    pub default: Vec<String>,
}

impl EnsembleSettings {
    /// The table embedded in the library.
    pub fn shipped() -> Self {
        Self::parse(SHIPPED).expect("shipped ensemble settings are valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: SettingsFile = toml::from_str(text).map_err(|e| Error::parse("ensemble settings", e))?;
        let out = EnsembleSettings {
            settings: file.setting,
            default: file.default.strategies,
        };
        for (i, s) in out.settings.iter().enumerate() {
            if usize::from(s.setting_id) != i + 1 {
                return Err(Error::Config(format!("ensemble settings must be numbered 1..; entry {i} is {}", s.setting_id)));
            }
            if s.strategies.is_empty() || s.strategies.len() > 8 {
                return Err(Error::Config(format!("setting {} must list 1..=8 strategies", s.setting_id)));
            }
            s.strategies()?;
        }
        Ok(out)
    }

    pub fn get(&self, setting_id: u8) -> Option<&EnsembleSetting> {
        self.settings.iter().find(|s| s.setting_id == setting_id)
    }
}

/// The four-candidate composition used by default runs.
pub fn default_strategies() -> Vec<PromptStrategy> {
    EnsembleSettings::shipped()
        .default
        .iter()
        .map(|s| s.parse().expect("shipped default strategies parse"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_table_parses() {
        let s = EnsembleSettings::shipped();
        assert_eq!(s.settings.len(), 8);
        assert_eq!(s.get(1).unwrap().strategies, vec!["1-shot-ss-auto"]);
        assert_eq!(s.get(8).unwrap().strategies.len(), 8);
        let ids: Vec<String> = default_strategies().iter().map(|p| p.id()).collect();
        assert_eq!(ids, ["zero-shot-cr", "1-shot-ss-auto", "1-shot-ss-fis", "1-shot-ms-auto"]);
    }

    #[test]
    fn misnumbered_table_is_rejected() {
        let text = "[[setting]]\nid = 2\nstrategies = [\"zero-shot-cr\"]\n[default]\nstrategies = []\n";
        assert!(EnsembleSettings::parse(text).is_err());
    }
}
