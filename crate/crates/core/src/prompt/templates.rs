use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

macro_rules! builtin {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../templates/", $name, ".txt")))),*]
    };
}

const BUILTIN: &[(&str, &str)] = builtin!(
    "auto_select",
    "auto_select_strict",
    "ensemble",
    "ensemble_reformat",
    "instruction",
    "ms_first",
    "ms_next",
    "ms_reformat",
    "ms_valid",
    "objective",
    "revise",
    "sandbox",
    "sandbox_retry",
    "schema_explanation",
    "zero_shot_instructive",
    "zero_shot_step_by_step",
);

/// Prompt templates with `{{name}}` placeholders. Leading lines starting
/// with `## ` are template comments and never reach the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Templates {
    entries: BTreeMap<String, String>,
}

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Templates {
    pub fn builtin() -> Self {
        Templates {
            entries: BUILTIN.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    /// Replaces built-in templates with `<name>.txt` files found in `dir`.
    /// Unknown file names are rejected so typos do not go unnoticed.
    pub fn with_overrides(mut self, dir: &Path) -> Result<Self> {
        let listing = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in listing {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().is_none_or(|e| e != "txt") {
                continue;
            }
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            if !self.entries.contains_key(&name) {
                return Err(Error::Config(format!("unknown template override {}", path.display())));
            }
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            self.entries.insert(name, text);
        }
        Ok(self)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn raw(&self, name: &str) -> Result<&str> {
        self.entries
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("no template named {name}")))
    }

    /// Fills every placeholder; a placeholder without a value is an error.
    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> Result<String> {
        let raw = self.raw(name)?;
        let body: String = raw
            .lines()
            .skip_while(|l| l.starts_with("## "))
            .collect::<Vec<_>>()
            .join("\n");
        let mut out = String::with_capacity(body.len());
        let mut rest = body.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after
                .find("}}")
                .ok_or_else(|| Error::Config(format!("template {name}: unterminated placeholder")))?;
            let key = after[..end].trim();
            let value = vars
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Config(format!("template {name}: no value for {{{{{key}}}}}")))?;
            out.push_str(value);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out.trim_end().to_string())
    }
}
