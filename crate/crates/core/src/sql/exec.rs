use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};

use super::normalize::has_top_level_order_by;
use super::{ResultSet, SqlError, SqlValue};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

/// A SQLite connection that only ever runs read-only statements.
pub struct Database {
    conn: Connection,
    timeout: Duration,
    label: String,
}

impl std::fmt::Debug for Database {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Database").field("label", &self.label).finish()
    }
}

fn db_err(e: rusqlite::Error) -> SqlError {
    SqlError::Database(e.to_string())
}

impl Database {
    /// Opens a database file read-only; the file is never modified.
    pub fn open_readonly(path: &Path) -> Result<Self, SqlError> {
        if !path.is_file() {
            return Err(SqlError::Database(format!("no database file at {}", path.display())));
        }
        let conn = Connection::open_with_flags(
            path,
            OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
        )
        .map_err(db_err)?;
        conn.pragma_update(None, "query_only", "ON").map_err(db_err)?;
        Ok(Database {
            conn,
            timeout: DEFAULT_TIMEOUT,
            label: path.display().to_string(),
        })
    }

    /// Builds a private in-memory database from a setup script (DDL and
    /// INSERTs), then locks it to read-only use.
    pub fn from_script(script: &str) -> Result<Self, SqlError> {
        let conn = Connection::open_in_memory().map_err(db_err)?;
        conn.execute_batch(script).map_err(db_err)?;
        conn.pragma_update(None, "query_only", "ON").map_err(db_err)?;
        Ok(Database {
            conn,
            timeout: DEFAULT_TIMEOUT,
            label: ":memory:".into(),
        })
    }

    pub fn in_memory() -> Result<Self, SqlError> {
        Self::from_script("")
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn execute(&self, sql: &str) -> Result<ResultSet, SqlError> {
        execute(sql, self)
    }
}

fn leading_keyword(sql: &str) -> String {
    let mut rest = sql.trim_start();
    loop {
        if let Some(r) = rest.strip_prefix("--") {
            rest = r.split_once('\n').map_or("", |(_, tail)| tail).trim_start();
        } else if let Some(r) = rest.strip_prefix("/*") {
            rest = r.split_once("*/").map_or("", |(_, tail)| tail).trim_start();
        } else if let Some(r) = rest.strip_prefix('(') {
            rest = r.trim_start();
        } else {
            break;
        }
    }
    rest.chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect::<String>()
        .to_ascii_uppercase()
}

fn convert(v: ValueRef<'_>) -> SqlValue {
    match v {
        ValueRef::Null => SqlValue::Null,
        ValueRef::Integer(i) => SqlValue::Integer(i),
        ValueRef::Real(r) => SqlValue::Real(r),
        ValueRef::Text(t) => SqlValue::Text(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(b) => SqlValue::Blob(b.to_vec()),
    }
}

/// Runs one read-only statement with the database's statement timeout.
pub fn execute(sql: &str, db: &Database) -> Result<ResultSet, SqlError> {
    let sql = sql.trim().trim_end_matches(';').trim();
    if sql.is_empty() {
        return Err(SqlError::Syntax("empty statement".into()));
    }
    let keyword = leading_keyword(sql);
    match keyword.as_str() {
        "SELECT" | "WITH" | "VALUES" => {}
        "INSERT" | "UPDATE" | "DELETE" | "DROP" | "CREATE" | "ALTER" | "REPLACE" | "ATTACH"
        | "DETACH" | "PRAGMA" | "VACUUM" | "REINDEX" | "ANALYZE" | "BEGIN" | "COMMIT"
        | "ROLLBACK" | "SAVEPOINT" | "RELEASE" | "UPSERT" | "TRUNCATE" => {
            return Err(SqlError::WriteRejected(format!("{keyword} statement")));
        }
        _ => return Err(SqlError::Syntax(format!("not a query: {keyword:?}"))),
    }
    let mut stmt = db.conn.prepare(sql).map_err(|e| SqlError::Syntax(e.to_string()))?;
    if !stmt.readonly() {
        return Err(SqlError::WriteRejected("statement modifies the database".into()));
    }
    let columns: Vec<String> = stmt.column_names().into_iter().map(str::to_string).collect();
    let width = columns.len();

    let deadline = Instant::now() + db.timeout;
    db.conn
        .progress_handler(1_000, Some(move || Instant::now() > deadline))
        .map_err(db_err)?;
    let collected = (|| {
        let mut rows = Vec::new();
        let mut cursor = stmt.query([])?;
        while let Some(row) = cursor.next()? {
            let mut out = Vec::with_capacity(width);
            for i in 0..width {
                out.push(convert(row.get_ref(i)?));
            }
            rows.push(out);
        }
        Ok::<_, rusqlite::Error>(rows)
    })();
    db.conn.progress_handler(0, None::<fn() -> bool>).map_err(db_err)?;

    let rows = collected.map_err(|e| match e {
        rusqlite::Error::SqliteFailure(err, _) if err.code == rusqlite::ErrorCode::OperationInterrupted => {
            SqlError::Timeout(db.timeout)
        }
        other => SqlError::Syntax(other.to_string()),
    })?;
    Ok(ResultSet::new(columns, rows, has_top_level_order_by(sql)))
}

/// Read-only connections to Spider-style database files
/// (`<dir>/<db_id>/<db_id>.sqlite`), reused across calls.
pub struct DatabasePool {
    dir: PathBuf,
    idle: Mutex<HashMap<String, Vec<Database>>>,
    timeout: Duration,
}

impl DatabasePool {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        DatabasePool {
            dir: dir.into(),
            idle: Mutex::new(HashMap::new()),
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn path_for(&self, db_id: &str) -> PathBuf {
        self.dir.join(db_id).join(format!("{db_id}.sqlite"))
    }

    /// Runs `f` with a connection to `db_id`, returning it to the pool afterwards.
    pub fn with<T>(&self, db_id: &str, f: impl FnOnce(&Database) -> T) -> Result<T, SqlError> {
        let pooled = self.idle.lock().unwrap().get_mut(db_id).and_then(Vec::pop);
        let db = match pooled {
            Some(db) => db,
            None => Database::open_readonly(&self.path_for(db_id))?.with_timeout(self.timeout),
        };
        let out = f(&db);
        self.idle.lock().unwrap().entry(db_id.to_string()).or_default().push(db);
        Ok(out)
    }
}
