use serde::{Deserialize, Serialize};

use super::ident_eq;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    /// Source type string, kept verbatim.
    pub sql_type: String,
    #[serde(default)]
    pub is_primary_key: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<Column>,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| ident_eq(&c.name, name))
    }

    pub fn primary_key(&self) -> impl Iterator<Item = &Column> {
        self.columns.iter().filter(|c| c.is_primary_key)
    }
}

/// A foreign key `from_table.from_column -> to_table.to_column`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForeignKey {
    pub from_table: String,
    pub from_column: String,
    pub to_table: String,
    pub to_column: String,
}

impl ForeignKey {
    /// True if this key links the two column endpoints, in either direction.
    pub fn links(&self, a: (&str, &str), b: (&str, &str)) -> bool {
        let fwd = ident_eq(&self.from_table, a.0)
            && ident_eq(&self.from_column, a.1)
            && ident_eq(&self.to_table, b.0)
            && ident_eq(&self.to_column, b.1);
        let rev = ident_eq(&self.from_table, b.0)
            && ident_eq(&self.from_column, b.1)
            && ident_eq(&self.to_table, a.0)
            && ident_eq(&self.to_column, a.1);
        fwd || rev
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseSchema {
    pub db_id: String,
    pub tables: Vec<TableDef>,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKey>,
}

impl DatabaseSchema {
    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.iter().find(|t| ident_eq(&t.name, name))
    }

    pub fn has_column(&self, table: &str, column: &str) -> bool {
        self.table(table).is_some_and(|t| t.column(column).is_some())
    }

    /// Tables owning a column with this name.
    pub fn tables_with_column<'a>(&'a self, column: &'a str) -> impl Iterator<Item = &'a TableDef> {
        self.tables.iter().filter(move |t| t.column(column).is_some())
    }

    pub fn column_count(&self) -> usize {
        self.tables.iter().map(|t| t.columns.len()).sum()
    }

    /// Foreign keys whose child side is `table`.
    pub fn foreign_keys_from<'a>(&'a self, table: &'a str) -> impl Iterator<Item = &'a ForeignKey> {
        self.foreign_keys.iter().filter(move |fk| ident_eq(&fk.from_table, table))
    }

    /// True if two tables are linked by a foreign key in either direction.
    pub fn tables_linked(&self, a: &str, b: &str) -> bool {
        self.foreign_keys.iter().any(|fk| {
            (ident_eq(&fk.from_table, a) && ident_eq(&fk.to_table, b))
                || (ident_eq(&fk.from_table, b) && ident_eq(&fk.to_table, a))
        })
    }
}

/// Checks every structural invariant of a schema. An empty result means the
/// schema is valid.
pub fn validate_schema(schema: &DatabaseSchema) -> Vec<String> {
    let mut violations = Vec::new();
    if schema.tables.is_empty() {
        violations.push(format!("schema {} has no tables", schema.db_id));
    }
    for (i, table) in schema.tables.iter().enumerate() {
        if schema.tables[..i].iter().any(|t| ident_eq(&t.name, &table.name)) {
            violations.push(format!("duplicate table name {}", table.name));
        }
        if table.columns.is_empty() {
            violations.push(format!("table {} has no columns", table.name));
        }
        for (j, col) in table.columns.iter().enumerate() {
            if table.columns[..j].iter().any(|c| ident_eq(&c.name, &col.name)) {
                violations.push(format!("duplicate column {}.{}", table.name, col.name));
            }
        }
    }
    for fk in &schema.foreign_keys {
        let from_ok = schema.has_column(&fk.from_table, &fk.from_column);
        let to_ok = schema.has_column(&fk.to_table, &fk.to_column);
        if !from_ok || !to_ok {
            violations.push(format!(
                "foreign key {}.{} -> {}.{} references a missing {}",
                fk.from_table,
                fk.from_column,
                fk.to_table,
                fk.to_column,
                if from_ok { "target" } else { "source" }
            ));
        }
    }
    violations
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn col(name: &str, ty: &str, pk: bool) -> Column {
        Column {
            name: name.into(),
            sql_type: ty.into(),
            is_primary_key: pk,
        }
    }

    pub fn singer_schema() -> DatabaseSchema {
        DatabaseSchema {
            db_id: "singers".into(),
            tables: vec![
                TableDef {
                    name: "singer".into(),
                    columns: vec![
                        col("singer_id", "number", true),
                        col("name", "text", false),
                        col("country", "text", false),
                        col("age", "number", false),
                    ],
                },
                TableDef {
                    name: "song".into(),
                    columns: vec![
                        col("song_id", "number", true),
                        col("singer_id", "number", false),
                        col("title", "text", false),
                    ],
                },
            ],
            foreign_keys: vec![ForeignKey {
                from_table: "song".into(),
                from_column: "singer_id".into(),
                to_table: "singer".into(),
                to_column: "singer_id".into(),
            }],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn well_formed_schema_has_no_violations() {
        assert!(validate_schema(&singer_schema()).is_empty());
    }

    #[test]
    fn dangling_fk_column_is_reported() {
        let mut s = singer_schema();
        s.foreign_keys[0].to_column = "missing".into();
        let v = validate_schema(&s);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("song.singer_id -> singer.missing"), "{v:?}");
    }

    #[test]
    fn duplicate_table_names_differing_in_case() {
        let mut s = singer_schema();
        s.tables[1].name = "SINGER".into();
        s.foreign_keys.clear();
        let v = validate_schema(&s);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].contains("duplicate table"));
    }

    #[test]
    fn empty_table_and_duplicate_columns() {
        let mut s = singer_schema();
        s.tables[0].columns.push(col("NAME", "text", false));
        s.tables.push(TableDef {
            name: "empty".into(),
            columns: vec![],
        });
        assert_eq!(validate_schema(&s).len(), 2);
    }

    #[test]
    fn lookups_are_case_insensitive() {
        let s = singer_schema();
        assert!(s.has_column("SINGER", "Name"));
        assert!(s.tables_linked("Singer", "SONG"));
        assert!(s.foreign_keys[0].links(("singer", "SINGER_ID"), ("song", "singer_id")));
    }
}
