use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use nl2sql_core::eval::write_error_csv;
use nl2sql_core::model::{load_schemas, Backend, RunConfig};
use nl2sql_core::pipeline::{
    ablate, backend_for, evaluate_predictions, inspect, read_predictions, run, run_dir, RunError,
};
use nl2sql_core::prompt::schema_ddl;

#[derive(Parser)]
#[command(name = "nl2sql", version, about = "Text-to-SQL prompting pipeline and evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunFlags {
    /// Run configuration (TOML or JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured backend: live, replay or mock.
    #[arg(long)]
    backend: Option<Backend>,
    #[arg(long)]
    seed: Option<u64>,
    /// Only the first n instances.
    #[arg(long)]
    limit: Option<usize>,
    /// Output root; runs go to <out>/runs/<name>.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunFlags {
    fn load(&self) -> Result<RunConfig, RunError> {
        let mut c = RunConfig::load(&self.config).map_err(RunError::Config)?;
        if let Some(b) = self.backend {
            c.backend = b;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if self.limit.is_some() {
            c.limit = self.limit;
        }
        if let Some(o) = &self.out {
            c.paths.output = o.clone();
        }
        c.check().map_err(RunError::Config)?;
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate, correct, ensemble and score every instance.
    Run(RunFlags),
    /// Run the full, no-correction and no-ensemble variants at one and three shots.
    Ablate(RunFlags),
    /// Score a predictions file (one query per line, aligned with the instances).
    Eval {
        #[command(flatten)]
        flags: RunFlags,
        #[arg(long)]
        predictions: PathBuf,
        /// Also write per-instance records as JSONL.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Also write the error distribution as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print candidates, prompts and replies for one instance of a run.
    Inspect {
        /// Run directory; defaults to the one named by --config.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        index: usize,
    },
    /// Print the DDL rendering of every schema in a tables file.
    SchemaDump {
        #[arg(long)]
        tables: PathBuf,
        /// Only this database.
        #[arg(long)]
        db_id: Option<String>,
        /// Emit the parsed schemas as JSON instead of DDL.
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let code = e.downcast_ref::<RunError>().map_or(1, RunError::exit_code);
            eprintln!("error: {e:#}");
            ExitCode::from(code as u8)
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<u8> {
    match command {
        Command::Run(flags) => {
            let config = flags.load()?;
            let outcome = run(&config)?;
            emit(&serde_json::to_string_pretty(&outcome.summary)?);
            eprintln!("run directory: {}", outcome.run_dir.display());
            Ok(outcome.exit_code() as u8)
        }
        Command::Ablate(flags) => {
            let config = flags.load()?;
            let (matrix, outcomes, dir) = ablate(&config, backend_for)?;
            emit(matrix.to_markdown().trim_end());
            eprintln!("ablation written to {}", dir.display());
            Ok(outcomes.iter().map(|o| o.exit_code() as u8).max().unwrap_or(0))
        }
        Command::Eval { flags, predictions, records, csv } => {
            let config = flags.load()?;
            let preds = read_predictions(&predictions)?;
            let (recs, report) = evaluate_predictions(&config, &preds)?;
            if let Some(path) = records {
                write_records(&path, &recs)?;
            }
            if let Some(path) = csv {
                write_error_csv(&path, &recs)?;
            }
            emit(&serde_json::to_string_pretty(&report)?);
            Ok(0)
        }
        Command::Inspect { run_dir: dir, config, out, index } => {
            let dir = match (dir, config) {
                (Some(d), _) => d,
                (None, Some(c)) => {
                    let mut c = RunConfig::load(&c).map_err(RunError::Config)?;
                    if let Some(o) = out {
                        c.paths.output = o;
                    }
                    run_dir(&c)
                }
                (None, None) => anyhow::bail!("inspect needs --run-dir or --config"),
            };
            emit(inspect(&dir, index)?.trim_end());
            Ok(0)
        }
        Command::SchemaDump { tables, db_id, json } => {
            let schemas = load_schemas(&tables).map_err(RunError::Dataset)?;
            let chosen: Vec<_> = schemas
                .iter()
                .filter(|s| db_id.as_ref().is_none_or(|id| &s.db_id == id))
                .collect();
            if chosen.is_empty() {
                anyhow::bail!("no schema matches in {}", tables.display());
            }
            if json {
                emit(&serde_json::to_string_pretty(&chosen)?);
            } else {
                let text: Vec<String> = chosen.iter().map(|s| format!("-- database: {}\n{}", s.db_id, schema_ddl(s))).collect();
                emit(&text.join("\n\n"));
            }
            Ok(0)
        }
    }
}

/// Prints to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn write_records(path: &Path, records: &[nl2sql_core::eval::EvaluationRecord]) -> anyhow::Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
