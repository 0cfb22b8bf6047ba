//! Spider-format ingestion. `tables.json` encodes columns and keys by
//! position; everything is normalized to named foreign-key pairs here.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{validate_schema, Column, DatabaseSchema, Difficulty, ForeignKey, TableDef, TaskInstance};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct SpiderTables {
    db_id: String,
    table_names_original: Vec<String>,
    #[serde(default)]
    table_names: Vec<String>,
    column_names_original: Vec<(i64, String)>,
    #[serde(default)]
    column_names: Vec<(i64, String)>,
    column_types: Vec<String>,
    #[serde(default)]
    primary_keys: Vec<Value>,
    #[serde(default)]
    foreign_keys: Vec<(usize, usize)>,
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}

fn convert_schema(raw: SpiderTables) -> Result<DatabaseSchema> {
    let ctx = format!("tables entry {}", raw.db_id);
    if raw.column_types.len() != raw.column_names_original.len() {
        return Err(Error::parse(ctx, "column_types and column_names_original differ in length"));
    }
    let mut tables: Vec<TableDef> = raw
        .table_names_original
        .iter()
        .map(|name| TableDef {
            name: name.clone(),
            columns: Vec::new(),
        })
        .collect();
    // global column index -> (table index, column index within table)
    let mut locate: HashMap<usize, (usize, usize)> = HashMap::new();
    for (global, ((table_idx, name), ty)) in raw
        .column_names_original
        .iter()
        .zip(&raw.column_types)
        .enumerate()
    {
        if *table_idx < 0 {
            continue; // the `*` pseudo-column
        }
        let t = *table_idx as usize;
        let table = tables
            .get_mut(t)
            .ok_or_else(|| Error::parse(&ctx, format!("column {name} names table index {t}")))?;
        locate.insert(global, (t, table.columns.len()));
        table.columns.push(Column {
            name: name.clone(),
            sql_type: ty.clone(),
            is_primary_key: false,
        });
    }
    let mut pk_indices = Vec::new();
    for pk in &raw.primary_keys {
        match pk {
            Value::Number(n) => pk_indices.push(n.as_u64().unwrap_or(u64::MAX) as usize),
            Value::Array(items) => {
                pk_indices.extend(items.iter().filter_map(Value::as_u64).map(|n| n as usize))
            }
            other => return Err(Error::parse(&ctx, format!("bad primary key entry {other}"))),
        }
    }
    for idx in pk_indices {
        let (t, c) = *locate
            .get(&idx)
            .ok_or_else(|| Error::parse(&ctx, format!("primary key column index {idx} out of range")))?;
        tables[t].columns[c].is_primary_key = true;
    }
    let mut foreign_keys = Vec::new();
    for (from, to) in &raw.foreign_keys {
        let (Some(&(ft, fc)), Some(&(tt, tc))) = (locate.get(from), locate.get(to)) else {
            return Err(Error::parse(&ctx, format!("foreign key [{from}, {to}] out of range")));
        };
        foreign_keys.push(ForeignKey {
            from_table: tables[ft].name.clone(),
            from_column: tables[ft].columns[fc].name.clone(),
            to_table: tables[tt].name.clone(),
            to_column: tables[tt].columns[tc].name.clone(),
        });
    }
    Ok(DatabaseSchema {
        db_id: raw.db_id,
        tables,
        foreign_keys,
    })
}

/// Parses a Spider `tables.json` document.
pub fn load_schemas(tables_path: &Path) -> Result<Vec<DatabaseSchema>> {
    let doc = read_json(tables_path)?;
    let entries = doc
        .as_array()
        .ok_or_else(|| Error::parse(tables_path.display().to_string(), "expected a JSON array"))?;
    entries
        .iter()
        .enumerate()
        .map(|(i, entry)| {
            let raw: SpiderTables = serde_json::from_value(entry.clone()).map_err(|e| {
                Error::parse(format!("{} record {i}", tables_path.display()), e)
            })?;
            let schema = convert_schema(raw)?;
            let violations = validate_schema(&schema);
            if !violations.is_empty() {
                return Err(Error::Integrity(format!(
                    "schema {}: {}",
                    schema.db_id,
                    violations.join("; ")
                )));
            }
            Ok(schema)
        })
        .collect()
}

#[derive(Deserialize)]
struct SpiderInstance {
    db_id: String,
    question: String,
    #[serde(default)]
    query: Option<String>,
    #[serde(default, alias = "hardness")]
    difficulty: Option<String>,
}

/// Parses a Spider instance file (`dev.json` / `train.json`) and checks
/// every `db_id` against the supplied schemas.
pub fn load_instances(instances_path: &Path, schemas: &[DatabaseSchema]) -> Result<Vec<TaskInstance>> {
    let doc = read_json(instances_path)?;
    let entries = doc
        .as_array()
        .ok_or_else(|| Error::parse(instances_path.display().to_string(), "expected a JSON array"))?;
    entries
        .iter()
        .enumerate()
        .map(|(index, entry)| {
            let ctx = format!("{} record {index}", instances_path.display());
            let raw: SpiderInstance =
                serde_json::from_value(entry.clone()).map_err(|e| Error::parse(&ctx, e))?;
            if raw.question.trim().is_empty() {
                return Err(Error::parse(&ctx, "empty question"));
            }
            if !schemas.iter().any(|s| s.db_id == raw.db_id) {
                return Err(Error::Integrity(format!(
                    "{ctx}: db_id {:?} has no schema",
                    raw.db_id
                )));
            }
            let difficulty = match raw.difficulty {
                Some(d) => Some(d.parse::<Difficulty>().map_err(|e| Error::parse(&ctx, e))?),
                None => None,
            };
            Ok(TaskInstance {
                index,
                question: raw.question,
                db_id: raw.db_id,
                gold_query: raw.query,
                difficulty,
            })
        })
        .collect()
}

pub fn load_spider_dataset(
    tables_path: &Path,
    instances_path: &Path,
) -> Result<(Vec<DatabaseSchema>, Vec<TaskInstance>)> {
    let schemas = load_schemas(tables_path)?;
    let instances = load_instances(instances_path, &schemas)?;
    Ok((schemas, instances))
}

/// Serializes schemas back into the Spider `tables.json` layout.
pub fn schemas_to_spider_json(schemas: &[DatabaseSchema]) -> Value {
    let entries: Vec<SpiderTables> = schemas
        .iter()
        .map(|schema| {
            let mut column_names = vec![(-1i64, "*".to_string())];
            let mut column_types = vec!["text".to_string()];
            let mut primary_keys = Vec::new();
            let mut index_of: HashMap<(String, String), usize> = HashMap::new();
            for (t, table) in schema.tables.iter().enumerate() {
                for col in &table.columns {
                    let idx = column_names.len();
                    index_of.insert((table.name.to_lowercase(), col.name.to_lowercase()), idx);
                    column_names.push((t as i64, col.name.clone()));
                    column_types.push(col.sql_type.clone());
                    if col.is_primary_key {
                        primary_keys.push(Value::from(idx));
                    }
                }
            }
            let key = |t: &str, c: &str| index_of[&(t.to_lowercase(), c.to_lowercase())];
            let foreign_keys = schema
                .foreign_keys
                .iter()
                .map(|fk| (key(&fk.from_table, &fk.from_column), key(&fk.to_table, &fk.to_column)))
                .collect();
            SpiderTables {
                db_id: schema.db_id.clone(),
                table_names_original: schema.tables.iter().map(|t| t.name.clone()).collect(),
                table_names: schema.tables.iter().map(|t| t.name.replace('_', " ")).collect(),
                column_names: column_names.iter().map(|(t, c)| (*t, c.replace('_', " "))).collect(),
                column_names_original: column_names,
                column_types,
                primary_keys,
                foreign_keys,
            }
        })
        .collect();
    serde_json::to_value(entries).expect("schema serialization is infallible")
}
