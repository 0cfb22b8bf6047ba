use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    CodeRepresentation,
    CodeRepresentationWithSchemaExplanation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    None,
    Qts,
    Fis,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CotMode {
    None,
    Ss,
    Ms,
    ZeroShotStepByStep,
    ZeroShotInstructive,
}

/// One generation recipe: schema representation, number of shots, how the
/// shots are chosen and which chain-of-thought mode decorates them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptStrategy {
    pub representation: Representation,
    pub shots: usize,
    pub selection: Selection,
    pub cot: CotMode,
    #[serde(default = "default_true")]
    pub self_correct: bool,
}

fn default_true() -> bool {
    true
}

impl PromptStrategy {
    pub fn zero_shot() -> Self {
        PromptStrategy {
            representation: Representation::CodeRepresentation,
            shots: 0,
            selection: Selection::None,
            cot: CotMode::None,
            self_correct: true,
        }
    }

    pub fn few_shot(shots: usize, cot: CotMode, selection: Selection) -> Self {
        PromptStrategy {
            representation: Representation::CodeRepresentation,
            shots,
            selection,
            cot,
            self_correct: true,
        }
    }

    pub fn check(&self) -> Result<()> {
        if (self.shots == 0) != (self.selection == Selection::None) {
            return Err(Error::Config(format!(
                "strategy {}: shots = 0 exactly when selection = none",
                self.id()
            )));
        }
        if matches!(self.cot, CotMode::Ss | CotMode::Ms) && self.shots == 0 {
            return Err(Error::Config(format!(
                "strategy {}: SS/MS chain-of-thought needs at least one shot",
                self.id()
            )));
        }
        Ok(())
    }

    /// Stable identifier such as `zero-shot-cr` or `1-shot-ss-auto`. The
    /// self-correction flag is a run setting and is not part of the id.
    pub fn id(&self) -> String {
        let mut id = if self.shots == 0 {
            "zero-shot".to_string()
        } else {
            format!("{}-shot", self.shots)
        };
        match self.cot {
            CotMode::None => {}
            CotMode::Ss => id.push_str("-ss"),
            CotMode::Ms => id.push_str("-ms"),
            CotMode::ZeroShotStepByStep => id.push_str("-stepwise"),
            CotMode::ZeroShotInstructive => id.push_str("-instructive"),
        }
        match self.selection {
            Selection::None => {}
            Selection::Qts => id.push_str("-qts"),
            Selection::Fis => id.push_str("-fis"),
            Selection::Auto => id.push_str("-auto"),
        }
        if self.shots == 0 {
            id.push_str(match self.representation {
                Representation::CodeRepresentation => "-cr",
                Representation::CodeRepresentationWithSchemaExplanation => "-cr-explained",
            });
        } else if self.representation == Representation::CodeRepresentationWithSchemaExplanation {
            id.push_str("-explained");
        }
        id
    }
}

impl fmt::Display for PromptStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for PromptStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown strategy id {s:?}"));
        let mut parts = s.split('-').peekable();
        let shots = match (parts.next(), parts.next()) {
            (Some("zero"), Some("shot")) => 0,
            (Some(n), Some("shot")) => n.parse().map_err(|_| bad())?,
            _ => return Err(bad()),
        };
        let mut strategy = PromptStrategy {
            representation: Representation::CodeRepresentation,
            shots,
            selection: Selection::None,
            cot: CotMode::None,
            self_correct: true,
        };
        for part in parts {
            match part {
                "ss" => strategy.cot = CotMode::Ss,
                "ms" => strategy.cot = CotMode::Ms,
                "stepwise" => strategy.cot = CotMode::ZeroShotStepByStep,
                "instructive" => strategy.cot = CotMode::ZeroShotInstructive,
                "qts" => strategy.selection = Selection::Qts,
                "fis" => strategy.selection = Selection::Fis,
                "auto" => strategy.selection = Selection::Auto,
                "cr" => {}
                "explained" => {
                    strategy.representation =
                        Representation::CodeRepresentationWithSchemaExplanation
                }
                _ => return Err(bad()),
            }
        }
        strategy.check()?;
        Ok(strategy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for id in [
            "zero-shot-cr",
            "zero-shot-cr-explained",
            "zero-shot-stepwise-cr",
            "zero-shot-instructive-cr",
            "1-shot-ss-auto",
            "1-shot-ms-auto",
            "3-shot-ss-fis",
            "1-shot-qts",
        ] {
            let s: PromptStrategy = id.parse().unwrap();
            assert_eq!(s.id(), id);
        }
    }

    #[test]
    fn invariants_enforced() {
        assert!("zero-shot-ss-cr".parse::<PromptStrategy>().is_err());
        assert!("2-shot-ss".parse::<PromptStrategy>().is_err());
        let mut s = PromptStrategy::zero_shot();
        s.selection = Selection::Qts;
        assert!(s.check().is_err());
    }
}
