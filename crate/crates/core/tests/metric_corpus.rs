use nl2sql_core::eval::{component_match, execution_accuracy};
use nl2sql_core::sql::Database;

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
    note: String,
}

fn concert() -> Database {
    Database::from_script(include_str!("fixtures/toy/concert.sql")).unwrap()
}

#[test]
fn metrics_agree_with_hand_labels() {
    let pairs: Vec<Pair> = serde_json::from_str(include_str!("fixtures/metric_pairs.json")).unwrap();
    assert_eq!(pairs.len(), 30);
    let db = concert();
    let mut wrong = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let ea = execution_accuracy(&p.gold, &p.predicted, &db).unwrap();
        let r = component_match(&p.gold, &p.predicted).unwrap();
        let got = [ea, r.select, r.where_, r.group_by, r.order_by, r.keywords];
        let want = [p.exec_match, p.select, p.where_, p.group_by, p.order_by, p.keywords];
        if got != want {
            wrong.push(format!("#{i} ({}): got {got:?} want {want:?}", p.note));
        }
    }
    assert!(wrong.is_empty(), "{}", wrong.join("\n"));
}
