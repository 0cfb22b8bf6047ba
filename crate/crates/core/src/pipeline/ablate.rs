use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::{run_with_backend, RunError, RunOutcome};
use crate::error::Error;
use crate::llm::CompletionBackend;
use crate::model::{CotMode, PromptStrategy, RunConfig, Selection};

/// One row of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoSc,
    NoEnsemble,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Full, Ablation::NoSc, Ablation::NoEnsemble];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoSc => "no_sc",
            Ablation::NoEnsemble => "no_ensemble",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Full => "Full pipeline",
            Ablation::NoSc => "w/o SC",
            Ablation::NoEnsemble => "w/o Ensemble",
        }
    }
}

pub const SHOT_COUNTS: [usize; 2] = [1, 3];

/// Derives the run configuration for one cell of the matrix. Few-shot
/// strategies take the cell's shot count. Without the ensemble, the only
/// candidate is the (self-corrected) SS + Auto strategy.
pub fn ablation_config(base: &RunConfig, ablation: Ablation, shots: usize) -> RunConfig {
    let mut c = base.clone();
    c.name = format!("{}-{}-{}shot", base.name, ablation.as_str(), shots);
    c.auto_candidates = c.auto_candidates.max(shots);
    for s in &mut c.strategies {
        if s.shots > 0 {
            s.shots = shots;
        }
    }
    match ablation {
        Ablation::Full => {}
        Ablation::NoSc => c.self_correct = false,
        Ablation::NoEnsemble => {
            c.strategies = vec![PromptStrategy::few_shot(shots, CotMode::Ss, Selection::Auto)];
            c.ensemble_size = 1;
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub ablation: Ablation,
    pub shots: usize,
    pub run_id: String,
    pub overall_ea: f64,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationMatrix {
    pub cells: Vec<AblationCell>,
}

impl AblationMatrix {
    pub fn get(&self, ablation: Ablation, shots: usize) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.ablation == ablation && c.shots == shots)
    }

    /// One-shot EA with the change to three-shot in brackets, in percent.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Setting | EA, 1-shot (3-shot delta) |\n|---|---|\n");
        for a in Ablation::ALL {
            let one = self.get(a, 1).map(|c| c.overall_ea * 100.0);
            let three = self.get(a, 3).map(|c| c.overall_ea * 100.0);
            let cell = match (one, three) {
                (Some(o), Some(t)) => format!("{o:.1} ({:+.1})", t - o),
                (Some(o), None) => format!("{o:.1}"),
                _ => "n/a".into(),
            };
            out.push_str(&format!("| {} | {cell} |\n", a.label()));
        }
        out
    }
}

/// Runs every (ablation, shots) cell with a backend from `make_backend` and
/// writes `ablation.json` and `ablation.md` under `<output>/runs/<name>-ablation/`.
pub fn ablate(
    base: &RunConfig,
    mut make_backend: impl FnMut(&RunConfig) -> Result<(Box<dyn CompletionBackend>, String), RunError>,
) -> Result<(AblationMatrix, Vec<RunOutcome>, PathBuf), RunError> {
    let mut cells = Vec::new();
    let mut outcomes = Vec::new();
    for a in Ablation::ALL {
        for shots in SHOT_COUNTS {
            let config = ablation_config(base, a, shots);
            let (backend, fp) = make_backend(&config)?;
            let outcome = run_with_backend(&config, backend, fp)?;
            cells.push(AblationCell {
                ablation: a,
                shots,
                run_id: config.name.clone(),
                overall_ea: outcome.summary.report.overall_ea,
                failed: outcome.summary.stats.failed,
            });
            outcomes.push(outcome);
        }
    }
    let matrix = AblationMatrix { cells };
    let dir = base.paths.output.join("runs").join(format!("{}-ablation", base.name));
    write_matrix(&dir, &matrix).map_err(RunError::Other)?;
    Ok((matrix, outcomes, dir))
}

fn write_matrix(dir: &Path, matrix: &AblationMatrix) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(matrix).map_err(|e| Error::parse("ablation", e))?;
    let path = dir.join("ablation.json");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    let path = dir.join("ablation.md");
    std::fs::write(&path, matrix.to_markdown()).map_err(|e| Error::io(&path, e))
}
