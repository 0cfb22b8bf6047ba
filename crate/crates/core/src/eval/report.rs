use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClauseReport, ErrorCategory};
use crate::error::{Error, Result};
use crate::model::Difficulty;

/// Outcome of scoring one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub index: usize,
    pub db_id: String,
    pub question: String,
    pub gold: String,
    pub predicted: String,
    pub exec_match: bool,
    pub clause_report: ClauseReport,
    pub difficulty: Difficulty,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_category: Option<ErrorCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_subtype: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Bucket {
    pub count: usize,
    pub correct: usize,
    pub ea: f64,
}

impl Bucket {
    fn add(&mut self, hit: bool) {
        self.count += 1;
        self.correct += usize::from(hit);
    }

    fn finish(&mut self) {
        self.ea = if self.count == 0 { 0.0 } else { self.correct as f64 / self.count as f64 };
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub total: usize,
    pub correct: usize,
    pub overall_ea: f64,
    pub per_difficulty: BTreeMap<Difficulty, Bucket>,
    pub per_database: BTreeMap<String, Bucket>,
    /// Clause matching accuracy overall (`all`) and per difficulty.
    pub clause_accuracy: BTreeMap<String, BTreeMap<String, f64>>,
    pub error_distribution: BTreeMap<ErrorCategory, usize>,
    pub error_by_difficulty: BTreeMap<Difficulty, BTreeMap<ErrorCategory, usize>>,
    /// Counts keyed `category/subtype`.
    pub error_subtypes: BTreeMap<String, usize>,
}

fn clause_rates<'a>(records: impl Iterator<Item = &'a EvaluationRecord> + Clone) -> BTreeMap<String, f64> {
    let n = records.clone().count();
    ClauseReport::CLAUSES
        .iter()
        .map(|c| {
            let hits = records.clone().filter(|r| r.clause_report.get(c)).count();
            (c.to_string(), if n == 0 { 0.0 } else { hits as f64 / n as f64 })
        })
        .collect()
}

/// Folds records into the report tables. Every difficulty level appears
/// even when empty.
pub fn aggregate(records: &[EvaluationRecord]) -> RunReport {
    let mut report = RunReport {
        per_difficulty: Difficulty::ALL.iter().map(|d| (*d, Bucket::default())).collect(),
        error_distribution: ErrorCategory::ALL.iter().map(|c| (*c, 0)).collect(),
        ..Default::default()
    };
    for r in records {
        report.total += 1;
        report.correct += usize::from(r.exec_match);
        report.per_difficulty.entry(r.difficulty).or_default().add(r.exec_match);
        report.per_database.entry(r.db_id.clone()).or_default().add(r.exec_match);
        if let Some(c) = r.error_category {
            *report.error_distribution.entry(c).or_default() += 1;
            *report.error_by_difficulty.entry(r.difficulty).or_default().entry(c).or_default() += 1;
            let sub = r.error_subtype.as_deref().unwrap_or("unclassified");
            *report.error_subtypes.entry(format!("{c}/{sub}")).or_default() += 1;
        }
    }
    report.overall_ea = if report.total == 0 { 0.0 } else { report.correct as f64 / report.total as f64 };
    report.per_difficulty.values_mut().for_each(Bucket::finish);
    report.per_database.values_mut().for_each(Bucket::finish);
    report.clause_accuracy.insert("all".into(), clause_rates(records.iter()));
    for d in Difficulty::ALL {
        report
            .clause_accuracy
            .insert(d.to_string(), clause_rates(records.iter().filter(move |r| r.difficulty == d)));
    }
    report
}

/// Error distribution as CSV: `difficulty,category,subtype,count`.
pub fn error_distribution_csv(records: &[EvaluationRecord]) -> Result<String> {
    let mut counts: BTreeMap<(Difficulty, ErrorCategory, String), usize> = BTreeMap::new();
    for r in records {
        if let Some(c) = r.error_category {
            let sub = r.error_subtype.clone().unwrap_or_else(|| "unclassified".into());
            *counts.entry((r.difficulty, c, sub)).or_default() += 1;
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::parse("error csv", e);
    w.write_record(["difficulty", "category", "subtype", "count"]).map_err(csv_err)?;
    for ((d, c, s), n) in counts {
        w.write_record([d.as_str(), c.as_str(), s.as_str(), &n.to_string()]).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::parse("error csv", e))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_error_csv(path: &Path, records: &[EvaluationRecord]) -> Result<()> {
    std::fs::write(path, error_distribution_csv(records)?).map_err(|e| Error::io(path, e))
}
