//! End-to-end orchestration: candidate generation, self-correction,
//! ensemble refinement, evaluation and run persistence.

mod ablate;
mod generate;
mod run;

pub use ablate::{ablate, ablation_config, Ablation, AblationCell, AblationMatrix, SHOT_COUNTS};
pub use generate::{default_candidate_set, Generator, StrategyFailure};
pub use run::{
    backend_for, embedder_for, evaluate_predictions, inspect, read_jsonl, read_predictions, run, run_dir, run_with_backend,
    DecisionSummary, InstanceCandidates, InstanceFailure, RunError, RunManifest, RunOutcome, RunStats, RunSummary,
    Workspace, CANDIDATES_FILE, CASSETTE_FILE, EMBEDDINGS_FILE, FAILURES_FILE, MANIFEST_FILE, RECORDS_FILE, REPORT_FILE,
    SANDBOXES_FILE,
};
