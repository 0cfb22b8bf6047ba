use std::path::Path;
use std::process::Command;

const TOY: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/toy");

fn toy(dir: &Path) {
    for f in ["tables.json", "dev.json", "train.json", "mock.json", "run.toml"] {
        std::fs::copy(Path::new(TOY).join(f), dir.join(f)).unwrap();
    }
    let db = dir.join("databases/concert");
    std::fs::create_dir_all(&db).unwrap();
    rusqlite::Connection::open(db.join("concert.sqlite"))
        .unwrap()
        .execute_batch(&std::fs::read_to_string(Path::new(TOY).join("concert.sql")).unwrap())
        .unwrap();
}

fn nl2sql(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_nl2sql"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .output()
        .unwrap();
    (out.status.code().unwrap(), String::from_utf8(out.stdout).unwrap())
}

#[derive(serde::Deserialize)]
struct Summary {
    report: Report,
}

#[derive(serde::Deserialize)]
struct Report {
    total: usize,
    overall_ea: f64,
}

#[test]
fn run_inspect_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let (code, out) = nl2sql(tmp.path(), &["run", "--config", "run.toml", "--limit", "5", "--out", "elsewhere", "--seed", "3"]);
    assert_eq!(code, 0);
    let s: Summary = serde_json::from_str(&out).unwrap();
    assert_eq!(s.report.total, 5);
    assert!(tmp.path().join("elsewhere/runs/toy/report.json").exists());

    let (code, out) = nl2sql(tmp.path(), &["inspect", "--run-dir", "elsewhere/runs/toy", "--index", "3"]);
    assert_eq!(code, 0);
    assert!(out.contains("== final"), "{out}");
    assert!(out.contains("--- transcript"), "{out}");

    let dev: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("dev.json")).unwrap()).unwrap();
    let preds: Vec<String> = dev.iter().map(|d| format!("{}\tconcert", d["query"].as_str().unwrap())).collect();
    std::fs::write(tmp.path().join("gold.txt"), preds.join("\n") + "\n").unwrap();
    let (code, out) = nl2sql(tmp.path(), &["eval", "--config", "run.toml", "--predictions", "gold.txt", "--csv", "err.csv"]);
    assert_eq!(code, 0);
    let r: Report = serde_json::from_str(&out).unwrap();
    assert_eq!((r.total, r.overall_ea), (10, 1.0));
    assert!(tmp.path().join("err.csv").exists());
}

#[test]
fn schema_dump_renders_ddl() {
    let (code, out) = nl2sql(Path::new(TOY), &["schema-dump", "--tables", "tables.json"]);
    assert_eq!(code, 0);
    assert!(out.contains("CREATE TABLE singer"));
    assert!(out.contains("CREATE TABLE song"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    std::fs::write(tmp.path().join("bad.toml"), "ensemble_size = 0\n").unwrap();
    assert_eq!(nl2sql(tmp.path(), &["run", "--config", "bad.toml"]).0, 2);
    let cfg = std::fs::read_to_string(tmp.path().join("run.toml")).unwrap().replace("dev.json", "nothing.json");
    std::fs::write(tmp.path().join("nodata.toml"), cfg).unwrap();
    assert_eq!(nl2sql(tmp.path(), &["run", "--config", "nodata.toml"]).0, 3);
    let preds = "SELECT 1\n";
    std::fs::write(tmp.path().join("short.txt"), preds).unwrap();
    assert_eq!(nl2sql(tmp.path(), &["eval", "--config", "run.toml", "--predictions", "short.txt"]).0, 3);
}
