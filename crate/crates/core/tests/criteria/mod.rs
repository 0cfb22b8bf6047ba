//! One check per acceptance criterion. Each returns a short detail line on
//! success and the reason on failure.

#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use nl2sql_core::correction::{parse_sandbox, self_correct_loop, TipsList, Verdict};
use nl2sql_core::cot::{run_ms_chain, Termination};
use nl2sql_core::ensemble::{refine, ArbitrationPolicy, DecisionMode, EnsembleSettings};
use nl2sql_core::eval::{component_match, execution_accuracy};
use nl2sql_core::llm::{estimate_tokens, Gateway};
use nl2sql_core::model::{load_instances, load_schemas, Backend, CandidateQuery, DatabaseSchema, Difficulty, Stage, TaskInstance};
use nl2sql_core::pipeline::{run, Generator, CASSETTE_FILE, REPORT_FILE};
use nl2sql_core::prompt::Templates;
use nl2sql_core::selection::{ExamplePool, HashedEmbedder};
use nl2sql_core::sql::{classify_difficulty, Database};

use crate::common;

pub type Check = Result<String, String>;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn concert_schema() -> DatabaseSchema {
    load_schemas(&Path::new(common::TOY).join("tables.json")).unwrap().remove(0)
}

#[derive(serde::Deserialize)]
struct Pair {
    gold: String,
    predicted: String,
    exec_match: bool,
    select: bool,
    #[serde(rename = "where")]
    where_: bool,
    group_by: bool,
    order_by: bool,
    keywords: bool,
}

pub fn metric_oracle() -> Check {
    let start = Instant::now();
    let text = std::fs::read_to_string(Path::new(FIXTURES).join("metric_pairs.json")).map_err(|e| e.to_string())?;
    let pairs: Vec<Pair> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let db = Database::from_script(include_str!("../fixtures/toy/concert.sql")).map_err(|e| e.to_string())?;
    let mut agree = 0;
    for p in &pairs {
        let ea = execution_accuracy(&p.gold, &p.predicted, &db).map_err(|e| e.to_string())?;
        let r = component_match(&p.gold, &p.predicted).map_err(|e| e.to_string())?;
        let got = [ea, r.select, r.where_, r.group_by, r.order_by, r.keywords];
        agree += usize::from(got == [p.exec_match, p.select, p.where_, p.group_by, p.order_by, p.keywords]);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(pairs.len() == 30 && agree == 30, format!("{agree}/{} pairs agree", pairs.len()))?;
    ensure(secs < 10.0, format!("took {secs:.1}s"))?;
    Ok(format!("30/30 pairs agree in {secs:.2}s"))
}

/// Difficulty counts from a full benchmark dev set when `SPIDER_DIR` points
/// at one, otherwise the labeled fixture.
pub fn difficulty_distribution() -> Check {
    if let Ok(dir) = std::env::var("SPIDER_DIR") {
        let dir = Path::new(&dir);
        let schemas = load_schemas(&dir.join("tables.json")).map_err(|e| e.to_string())?;
        let instances = load_instances(&dir.join("dev.json"), &schemas).map_err(|e| e.to_string())?;
        let mut counts: HashMap<Difficulty, i64> = HashMap::new();
        for i in &instances {
            let d = classify_difficulty(i.gold_query.as_deref().unwrap_or_default()).map_err(|e| e.to_string())?;
            *counts.entry(d).or_default() += 1;
        }
        let want = [(Difficulty::Easy, 248), (Difficulty::Medium, 446), (Difficulty::Hard, 174), (Difficulty::Extra, 166)];
        let off: i64 = want.iter().map(|(d, n)| (counts.get(d).copied().unwrap_or(0) - n).abs()).sum::<i64>() / 2;
        let got: Vec<i64> = want.iter().map(|(d, _)| counts.get(d).copied().unwrap_or(0)).collect();
        ensure(off <= 10, format!("counts {got:?}, {off} misclassified"))?;
        return Ok(format!("dev counts {got:?}, {off} misclassified"));
    }
    #[derive(serde::Deserialize)]
    struct Labeled {
        sql: String,
        label: Difficulty,
    }
    let text = std::fs::read_to_string(Path::new(FIXTURES).join("difficulty.json")).map_err(|e| e.to_string())?;
    let fixture: Vec<Labeled> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let right = fixture
        .iter()
        .filter(|f| classify_difficulty(&f.sql).ok() == Some(f.label))
        .count();
    ensure(fixture.len() >= 20 && right == fixture.len(), format!("{right}/{} labeled queries", fixture.len()))?;
    Ok(format!("dataset absent; labeled fixture {right}/{}", fixture.len()))
}

fn ms_chain_len(judge: impl Fn(usize) -> bool + Send + Sync + 'static) -> Result<(usize, Termination), String> {
    let asked = std::sync::atomic::AtomicUsize::new(0);
    let gw = Gateway::mock(move |r| {
        Some(match r.strategy_tag.as_str() {
            "ms-valid" => {
                let n = asked.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
                if judge(n) { "YES" } else { "NO" }.to_string()
            }
            _ => format!("SUBQUESTION: step {}\nSQL: SELECT name FROM singer LIMIT {}", r.messages.len(), r.prompt().len()),
        })
    });
    let chain = run_ms_chain(&gw, &Templates::builtin(), &concert_schema(), "Who are the oldest singers?", 5, "")
        .map_err(|e| e.to_string())?;
    Ok((chain.len(), chain.terminated_by))
}

pub fn ms_bounds() -> Check {
    let never = ms_chain_len(|_| false)?;
    let first = ms_chain_len(|_| true)?;
    let second = ms_chain_len(|n| n >= 2)?;
    ensure(
        never == (5, Termination::EpochCap) && first.0 == 1 && second.0 == 2,
        format!("lengths {} / {} / {}", never.0, first.0, second.0),
    )?;
    Ok("always-invalid 5, immediately-valid 1, valid at step 2 -> 2".into())
}

pub const SANDBOX_REPLY: &str = "\
INSERT INTO singer (singer_id, name, country, age) VALUES (1, 'Ann', 'France', 45);
INSERT INTO singer (singer_id, name, country, age) VALUES (2, 'Bob', 'France', 30);
INSERT INTO singer (singer_id, name, country, age) VALUES (3, 'Cid', 'Spain', 50);
INSERT INTO singer (singer_id, name, country, age) VALUES (4, 'Dee', 'Peru', 22);
INSERT INTO singer (singer_id, name, country, age) VALUES (5, 'Eve', 'Chile', 35);
INSERT INTO song (song_id, title, singer_id, sales) VALUES (1, 'A', 1, 1.0);
INSERT INTO song (song_id, title, singer_id, sales) VALUES (2, 'B', 2, 2.0);
INSERT INTO song (song_id, title, singer_id, sales) VALUES (3, 'C', 3, 3.0);
INSERT INTO song (song_id, title, singer_id, sales) VALUES (4, 'D', 1, 4.0);
INSERT INTO song (song_id, title, singer_id, sales) VALUES (5, 'E', 4, 5.0);

EXPECTED OUTCOME:
";

/// (question, expected rows, candidate, scripted fix, expected first verdict)
pub const SC_FIXTURES: [(&str, &str, &str, Option<&str>, Verdict); 6] = [
    ("Names of French singers?", r#"[["Ann"], ["Bob"]]"#, "SELECT name FROM singer WHERE country = 'France'", None, Verdict::Pass),
    ("How many singers are older than 40?", "[[2]]", "SELECT count(*) FROM singer WHERE age > 40", None, Verdict::Pass),
    ("Names of French singers?", r#"[["Ann"], ["Bob"]]"#, "SELEC name FROM singer WHERE country = 'France'", Some("SELECT name FROM singer WHERE country = 'France'"), Verdict::SyntaxError),
    ("Titles of songs by Ann?", r#"[["A"], ["D"]]"#, "SELECT title FROM song WHERE singer_id = (SELECT singer_id FROM singer WHERE name = 'Ann'", Some("SELECT title FROM song WHERE singer_id = (SELECT singer_id FROM singer WHERE name = 'Ann')"), Verdict::SyntaxError),
    ("Names of French singers?", r#"[["Ann"], ["Bob"]]"#, "SELECT name FROM singer WHERE country = 'Spain'", Some("SELECT name FROM singer WHERE country = 'France'"), Verdict::Mismatch),
    ("How many singers are older than 40?", "[[2]]", "SELECT count(*) FROM singer WHERE age >= 30", Some("SELECT count(*) FROM singer WHERE age > 40"), Verdict::Mismatch),
];

pub fn self_correction() -> Check {
    let schema = concert_schema();
    let templates = Templates::builtin();
    let tips = TipsList::standard();
    let mut revised_with_tips = 0;
    let mut flipped = 0;
    let mut identical = 0;
    for (question, expected, sql, fix, first) in SC_FIXTURES {
        let sandbox = parse_sandbox(&format!("{SANDBOX_REPLY}{expected}"), &schema)?;
        let fix_text = fix.map(str::to_string);
        let gw = Gateway::mock(move |r| (r.strategy_tag == "sc-revise").then(|| fix_text.clone().unwrap_or_default()));
        let candidate = CandidateQuery::new(sql, "1-shot-ss-auto");
        let out = self_correct_loop(&gw, &templates, &candidate, &schema, question, &sandbox, &tips, 1)
            .map_err(|e| e.to_string())?;
        let revisions: Vec<String> = gw
            .store()
            .all()
            .into_iter()
            .filter(|t| t.request.strategy_tag == "sc-revise")
            .map(|t| t.request.prompt().to_string())
            .collect();
        match first {
            Verdict::Pass => {
                ensure(revisions.is_empty(), format!("{sql}: passing candidate was revised"))?;
                ensure(out.sql.as_bytes() == sql.as_bytes() && out.stage == Stage::Initial, format!("{sql}: changed"))?;
                identical += 1;
            }
            _ => {
                ensure(revisions.len() == 1, format!("{sql}: {} revision prompts", revisions.len()))?;
                if first == Verdict::SyntaxError && tips.tips().iter().all(|t| revisions[0].contains(t.as_str())) {
                    revised_with_tips += 1;
                }
                if out.verdict.as_deref() == Some("pass") && out.stage == Stage::SelfCorrected {
                    flipped += 1;
                }
            }
        }
    }
    ensure(identical == 2 && revised_with_tips == 2 && flipped == 4, format!(
        "{identical}/2 identical, {revised_with_tips}/2 syntax revisions with all tips, {flipped}/4 flipped to pass"
    ))?;
    Ok("2 passes untouched, 2 syntax errors revised with all 7 tips, 4 scripted fixes pass".into())
}

pub fn ensemble_protocol() -> Check {
    let schema = concert_schema();
    let t = Templates::builtin();
    let cands: Vec<CandidateQuery> = [
        "SELECT name FROM singer",
        "SELECT name FROM singer WHERE age > 40",
        "SELECT name FROM singer WHERE country = 'France'",
        "SELECT count(*) FROM singer",
    ]
    .iter()
    .enumerate()
    .map(|(i, s)| CandidateQuery::new(*s, format!("s{i}")))
    .collect();
    let decide = |reply: &'static str| {
        let gw = Gateway::mock(move |_| Some(reply.to_string()));
        refine(&gw, &t, &cands, &schema, "French singers?", ArbitrationPolicy::default()).map_err(|e| e.to_string())
    };
    let three = decide("Candidate 3 filters correctly.\nCHOICE: 3")?;
    ensure(three.chosen.sql == cands[2].sql && three.mode == DecisionMode::SelectedExisting, "CHOICE: 3 not honored")?;
    let fresh = decide("CHOICE: NONE\nSQL: SELECT name FROM singer WHERE country = 'France' ORDER BY name")?;
    ensure(
        fresh.mode == DecisionMode::NewlyGenerated && fresh.chosen.sql.ends_with("ORDER BY name"),
        "CHOICE: NONE not honored",
    )?;
    let junk = decide("I like them all.")?;
    ensure(junk.fallback && junk.chosen.sql == cands[0].sql, "no fallback to candidate 1")?;
    Ok("CHOICE: 3 -> candidate 3; NONE -> newly generated; junk twice -> candidate 1 with fallback".into())
}

pub fn end_to_end() -> Check {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = common::toy_config(tmp.path());
    let mocked = run(&config).map_err(|e| e.to_string())?;
    let ea = mocked.summary.report.overall_ea;
    ensure(ea == 0.8, format!("mock EA {ea}"))?;
    let mut replay = config.clone();
    replay.backend = Backend::Replay;
    replay.paths.cassette = Some(mocked.run_dir.join(CASSETTE_FILE));
    let mut reports = Vec::new();
    for name in ["replay-1", "replay-2"] {
        replay.name = "replay".into();
        replay.paths.output = tmp.path().join(name);
        let out = run(&replay).map_err(|e| e.to_string())?;
        reports.push(std::fs::read(out.run_dir.join(REPORT_FILE)).map_err(|e| e.to_string())?);
    }
    ensure(reports[0] == reports[1], "replay reports differ")?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!("mock EA 0.8 (8/10); two replays byte-identical; {secs:.2}s"))
}

pub fn settings_fidelity() -> Check {
    const ONE: [&str; 3] = ["1-shot-ss-auto", "1-shot-ms-auto", "1-shot-ss-fis"];
    const ZERO: [&str; 2] = ["zero-shot-cr", "zero-shot-cr-explained"];
    let table: [Vec<&str>; 8] = [
        vec![ONE[0]],
        ONE[..2].to_vec(),
        ONE.to_vec(),
        [&ZERO[..1], &ONE[..]].concat(),
        [&ZERO[..], &ONE[..]].concat(),
        [&ZERO[..], &ONE[..], &["3-shot-ss-auto"]].concat(),
        [&ZERO[..], &ONE[..], &["3-shot-ss-auto", "3-shot-ms-auto"]].concat(),
        [&ZERO[..], &ONE[..], &["3-shot-ss-auto", "3-shot-ms-auto", "3-shot-ss-fis"]].concat(),
    ];
    let shipped = EnsembleSettings::shipped();
    ensure(shipped.settings.len() == 8, format!("{} settings", shipped.settings.len()))?;
    for (row, want) in table.iter().enumerate() {
        let got = &shipped.settings[row];
        let mut a: Vec<&str> = got.strategies.iter().map(String::as_str).collect();
        let mut b = want.clone();
        a.sort_unstable();
        b.sort_unstable();
        ensure(usize::from(got.setting_id) == row + 1 && a == b, format!("setting {} differs", row + 1))?;
    }
    Ok("8 settings match row for row; setting 4 = zero-shot CR + three one-shot CoT strategies".into())
}

const MEDIAN_SANDBOX: &str = "\
INSERT INTO stadium VALUES (1, 'Raith Rovers', 'Stark''s Park', 10104, 4812, 1294, 2106);
INSERT INTO stadium VALUES (2, 'Ayr United', 'Somerset Park', 11998, 2363, 1057, 1477);
INSERT INTO stadium VALUES (3, 'East Fife', 'Bayview Stadium', 2000, 1980, 533, 864);
INSERT INTO stadium VALUES (4, 'Queen''s Park', 'Hampden Park', 52500, 1763, 466, 730);
INSERT INTO stadium VALUES (5, 'Stirling Albion', 'Forthbank Stadium', 3808, 1125, 404, 642);
INSERT INTO singer VALUES (1, 'Joe Sharp', 'Netherlands', 'You', '1992', 52, 'F');
INSERT INTO singer VALUES (2, 'Timbaland', 'United States', 'Dangerous', '2008', 32, 'T');
INSERT INTO singer VALUES (3, 'Justin Brown', 'France', 'Hey Oh', '2013', 29, 'T');
INSERT INTO singer VALUES (4, 'Rose White', 'France', 'Sun', '2003', 41, 'F');
INSERT INTO singer VALUES (5, 'John Nizinik', 'France', 'Gentleman', '2014', 43, 'T');
INSERT INTO concert VALUES (1, 'Auditions', 'Free choice', '1', '2014');
INSERT INTO concert VALUES (2, 'Super bootcamp', 'Free choice 2', '2', '2014');
INSERT INTO concert VALUES (3, 'Home Visits', 'Bleeding Love', '2', '2015');
INSERT INTO concert VALUES (4, 'Week 1', 'Wide Awake', '4', '2014');
INSERT INTO concert VALUES (5, 'Week 2', 'Party All Night', '5', '2015');
INSERT INTO singer_in_concert VALUES (1, '2');
INSERT INTO singer_in_concert VALUES (1, '3');
INSERT INTO singer_in_concert VALUES (2, '4');
INSERT INTO singer_in_concert VALUES (3, '5');
INSERT INTO singer_in_concert VALUES (4, '1');

EXPECTED OUTCOME:
[\"Somerset Park\", 11998]
";

/// Estimated tokens of every prompt and reply one instance sends through
/// one-shot SS with model-chosen exemplars plus one self-correction round.
pub fn ss_sc_chain_tokens() -> Result<usize, String> {
    let dir = Path::new(FIXTURES).join("median");
    let schemas = load_schemas(&dir.join("tables.json")).map_err(|e| e.to_string())?;
    let schema = schemas[0].clone();
    let pool_instances = load_instances(&dir.join("train.json"), &schemas).map_err(|e| e.to_string())?;
    let schema_map: HashMap<String, DatabaseSchema> = HashMap::from([(schema.db_id.clone(), schema.clone())]);
    let embedder = HashedEmbedder::default();
    let pool = ExamplePool::build(&pool_instances, &schema_map, &embedder).map_err(|e| e.to_string())?;
    let wrong = "SELECT T2.location, T2.capacity FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id GROUP BY T2.stadium_id ORDER BY count(*) DESC LIMIT 1";
    let fixed = "SELECT T2.name, T2.capacity FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id WHERE T1.year > 2013 GROUP BY T2.stadium_id ORDER BY count(*) DESC LIMIT 1";
    let gw = Gateway::mock(move |r| {
        Some(match r.strategy_tag.as_str() {
            "auto-select" => "4".into(),
            "ss-objective" => "Find the stadium that hosted the most concerts since 2014 and report its name and capacity.".into(),
            "sc-sandbox" => MEDIAN_SANDBOX.into(),
            "sc-revise" => format!("```sql\n{fixed}\n```"),
            _ => format!("```sql\n{wrong}\n```"),
        })
    });
    let templates = Templates::builtin();
    let generator = Generator {
        gateway: &gw,
        templates: &templates,
        pool: Some(&pool),
        pool_schemas: &schema_map,
        embedder: &embedder,
        max_ms_epochs: 5,
        auto_candidates: 12,
        seed: 1,
    };
    let question = "What is the name and capacity of the stadium with the most concerts after 2013?";
    let target = TaskInstance::new(0, &schema.db_id, question);
    let strategy = "1-shot-ss-auto".parse().map_err(|e: nl2sql_core::Error| e.to_string())?;
    let candidate = generator.generate(&strategy, &target, &schema).map_err(|e| e.to_string())?;
    let sandbox = nl2sql_core::correction::generate_sandbox(&gw, &templates, &schema, question).map_err(|e| e.to_string())?;
    let out = self_correct_loop(&gw, &templates, &candidate, &schema, question, &sandbox, &TipsList::standard(), 1)
        .map_err(|e| e.to_string())?;
    ensure(out.verdict.as_deref() == Some("pass"), format!("chain did not self-correct: {:?}", out.verdict))?;
    Ok(gw
        .store()
        .all()
        .iter()
        .map(|t| t.request.messages.iter().map(|m| estimate_tokens(&m.content)).sum::<usize>() + estimate_tokens(&t.response))
        .sum())
}

pub fn token_budget() -> Check {
    let tokens = ss_sc_chain_tokens()?;
    ensure((1500..=4500).contains(&tokens), format!("{tokens} estimated tokens, outside 1500..=4500"))?;
    Ok(format!("{tokens} estimated tokens (band 1500..=4500)"))
}

pub const ALL: [(&str, fn() -> Check); 8] = [
    ("metric oracle suite", metric_oracle),
    ("difficulty distribution", difficulty_distribution),
    ("sub-question chain bounds", ms_bounds),
    ("self-correction contract", self_correction),
    ("ensemble protocol", ensemble_protocol),
    ("end-to-end determinism", end_to_end),
    ("ensemble-settings fidelity", settings_fidelity),
    ("token-budget sanity", token_budget),
];
