#![allow(dead_code)]

use std::path::{Path, PathBuf};

use nl2sql_core::model::RunConfig;

pub const TOY: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/toy");

/// Copies the toy corpus into `dir` and builds its SQLite database.
pub fn toy_workspace(dir: &Path) -> PathBuf {
    for f in ["tables.json", "dev.json", "train.json", "mock.json", "run.toml"] {
        std::fs::copy(Path::new(TOY).join(f), dir.join(f)).unwrap();
    }
    let db_dir = dir.join("databases/concert");
    std::fs::create_dir_all(&db_dir).unwrap();
    let db = db_dir.join("concert.sqlite");
    let _ = std::fs::remove_file(&db);
    let conn = rusqlite::Connection::open(db).unwrap();
    conn.execute_batch(&std::fs::read_to_string(Path::new(TOY).join("concert.sql")).unwrap())
        .unwrap();
    dir.join("run.toml")
}

pub fn toy_config(dir: &Path) -> RunConfig {
    RunConfig::load(&toy_workspace(dir)).unwrap()
}
