//! Embedded relational store: typed rows, constraint enforcement, system
//! column maintenance, persistence, and plan execution.
//!
//! Readers take an `Arc<DataState>` snapshot; writers are serialized, build
//! the next state from the current one, append to the change log, then swap.

mod exec;
pub mod load;
pub mod plan;
mod rid;
mod value;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Duration, DurationRound, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};
use thiserror::Error;

pub use plan::*;
pub use rid::{decode_rid, encode_rid, is_valid_rid};
pub use value::Value;

use crate::model::{Catalog, Table, TableRef, RCB, RCT, RID, RMB, RMT};
use crate::policy::{element_rights, is_owner, row_predicate, ClientContext};
use crate::tags;

pub type Row = BTreeMap<String, Value>;

/// Input record: column name to JSON value.
pub type Record = Map<String, Json>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    NotNull,
    Unique,
    Fkey,
    FkeyRestrict,
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstraintKind::NotNull => "not_null",
            ConstraintKind::Unique => "unique",
            ConstraintKind::Fkey => "fkey",
            ConstraintKind::FkeyRestrict => "fkey_restrict",
        })
    }
}

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("{kind} violation on {location}: {message}")]
    Constraint {
        kind: ConstraintKind,
        location: String,
        message: String,
    },
    #[error("permission denied on {location}: {message}")]
    Rights { location: String, message: String },
    #[error("{0} not found")]
    NotFound(String),
    #[error("invalid value for {location}: {message}")]
    InvalidValue { location: String, message: String },
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("storage i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt data file {path}: {message}")]
    Corrupt { path: String, message: String },
}

impl StorageError {
    fn rights(location: impl fmt::Display, message: impl Into<String>) -> Self {
        StorageError::Rights {
            location: location.to_string(),
            message: message.into(),
        }
    }

    fn invalid(location: impl fmt::Display, message: impl Into<String>) -> Self {
        StorageError::InvalidValue {
            location: location.to_string(),
            message: message.into(),
        }
    }

    fn constraint(kind: ConstraintKind, location: impl fmt::Display, message: impl Into<String>) -> Self {
        StorageError::Constraint {
            kind,
            location: location.to_string(),
            message: message.into(),
        }
    }
}

/// Rows of one table keyed by RID, in insertion order.
#[derive(Debug, Clone, Default)]
pub struct TableData {
    pub rows: IndexMap<String, Row>,
}

/// One immutable data snapshot.
#[derive(Debug, Clone)]
pub struct DataState {
    tables: HashMap<TableRef, Arc<TableData>>,
    next_rid: u64,
    last_ts: Option<DateTime<Utc>>,
}

impl Default for DataState {
    fn default() -> Self {
        Self {
            tables: HashMap::new(),
            next_rid: 1,
            last_ts: None,
        }
    }
}

impl DataState {
    pub fn rows<'a>(&'a self, table: &TableRef) -> impl Iterator<Item = &'a Row> + 'a {
        self.tables
            .get(table)
            .into_iter()
            .flat_map(|t| t.rows.values())
    }

    pub fn get(&self, table: &TableRef, rid: &str) -> Option<&Row> {
        self.tables.get(table)?.rows.get(rid)
    }

    pub fn row_count(&self, table: &TableRef) -> usize {
        self.tables.get(table).map_or(0, |t| t.rows.len())
    }

    fn table_mut(&mut self, table: &TableRef) -> &mut TableData {
        Arc::make_mut(self.tables.entry(table.clone()).or_default())
    }

    /// Strictly increasing clock at microsecond precision.
    fn tick(&mut self) -> DateTime<Utc> {
        let now = Utc::now()
            .duration_trunc(Duration::microseconds(1))
            .unwrap_or_else(|_| Utc::now());
        let ts = match self.last_ts {
            Some(last) if now <= last => last + Duration::microseconds(1),
            _ => now,
        };
        self.last_ts = Some(ts);
        ts
    }

    fn mint_rid(&mut self) -> String {
        let rid = encode_rid(self.next_rid);
        self.next_rid += 1;
        rid
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum LogEntry {
    Put {
        table: String,
        rows: Vec<Record>,
        next_rid: u64,
    },
    Delete {
        table: String,
        rids: Vec<String>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotFile {
    next_rid: u64,
    tables: BTreeMap<String, Vec<Record>>,
}

const LOG_FILE: &str = "changes.log";
const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug)]
struct Journal {
    dir: PathBuf,
    file: File,
}

/// The store. Cheap to share behind an `Arc`.
#[derive(Debug)]
pub struct Database {
    state: RwLock<Arc<DataState>>,
    journal: Mutex<Option<Journal>>,
}

fn row_to_record(row: &Row) -> Record {
    row.iter().map(|(k, v)| (k.clone(), v.to_json())).collect()
}

fn record_to_row(table: &Table, record: &Record) -> Result<Row, String> {
    let mut row = Row::new();
    for (name, json) in record {
        // Columns dropped from the catalog since the row was written are skipped.
        if let Some(col) = table.column(name) {
            row.insert(name.clone(), Value::from_json(json, col.ty)?);
        }
    }
    Ok(row)
}

fn max_ts(row: &Row) -> Option<DateTime<Utc>> {
    match row.get(RMT) {
        Some(Value::Timestamp(ts)) => Some(*ts),
        _ => None,
    }
}

impl Database {
    pub fn in_memory() -> Self {
        Self {
            state: RwLock::new(Arc::new(DataState::default())),
            journal: Mutex::new(None),
        }
    }

    /// Opens (or creates) a data directory: loads the snapshot, replays the
    /// change log, and keeps the log open for appends.
    pub fn open(dir: impl AsRef<Path>, catalog: &Catalog) -> Result<Self, StorageError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut state = DataState::default();

        let snap_path = dir.join(SNAPSHOT_FILE);
        if snap_path.exists() {
            let corrupt = |message: String| StorageError::Corrupt {
                path: snap_path.display().to_string(),
                message,
            };
            let snap: SnapshotFile = serde_json::from_slice(&fs::read(&snap_path)?)
                .map_err(|e| corrupt(e.to_string()))?;
            state.next_rid = snap.next_rid;
            for (name, records) in &snap.tables {
                apply_put(&mut state, catalog, name, records).map_err(&corrupt)?;
            }
        }

        let log_path = dir.join(LOG_FILE);
        if log_path.exists() {
            let reader = BufReader::new(File::open(&log_path)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let corrupt = |message: String| StorageError::Corrupt {
                    path: format!("{}:{}", log_path.display(), n + 1),
                    message,
                };
                let entry: LogEntry = match serde_json::from_str(&line) {
                    Ok(e) => e,
                    // A torn final line from a crash mid-append is dropped.
                    Err(e) if e.is_eof() => break,
                    Err(e) => return Err(corrupt(e.to_string())),
                };
                match entry {
                    LogEntry::Put {
                        table,
                        rows,
                        next_rid,
                    } => {
                        apply_put(&mut state, catalog, &table, &rows).map_err(&corrupt)?;
                        state.next_rid = state.next_rid.max(next_rid);
                    }
                    LogEntry::Delete { table, rids } => {
                        if let Ok(t) = table.parse::<TableRef>() {
                            let data = state.table_mut(&t);
                            for rid in rids {
                                data.rows.shift_remove(&rid);
                            }
                        }
                    }
                }
            }
        }

        let file = OpenOptions::new().create(true).append(true).open(&log_path)?;
        Ok(Self {
            state: RwLock::new(Arc::new(state)),
            journal: Mutex::new(Some(Journal { dir, file })),
        })
    }

    /// The current data snapshot.
    pub fn snapshot(&self) -> Arc<DataState> {
        self.state.read().expect("state lock").clone()
    }

    /// Writes a full snapshot and truncates the change log.
    pub fn checkpoint(&self) -> Result<(), StorageError> {
        let mut journal = self.journal.lock().expect("journal lock");
        let Some(j) = journal.as_mut() else {
            return Ok(());
        };
        let state = self.snapshot();
        let snap = SnapshotFile {
            next_rid: state.next_rid,
            tables: state
                .tables
                .iter()
                .map(|(t, data)| (t.to_string(), data.rows.values().map(row_to_record).collect()))
                .collect(),
        };
        let tmp = j.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec(&snap).expect("snapshot serializes"))?;
        fs::rename(&tmp, j.dir.join(SNAPSHOT_FILE))?;
        j.file = File::create(j.dir.join(LOG_FILE))?;
        Ok(())
    }

    /// Runs `f` on a private copy of the state under the writer lock; on
    /// success the log entries are appended and the copy becomes current.
    fn write<T>(
        &self,
        f: impl FnOnce(&mut DataState) -> Result<(T, Vec<LogEntry>), StorageError>,
    ) -> Result<T, StorageError> {
        let mut journal = self.journal.lock().expect("journal lock");
        let mut next = (*self.snapshot()).clone();
        let (out, entries) = f(&mut next)?;
        if let Some(j) = journal.as_mut() {
            let mut buf = Vec::new();
            for e in &entries {
                serde_json::to_writer(&mut buf, e).expect("log entry serializes");
                buf.push(b'\n');
            }
            j.file.write_all(&buf)?;
            j.file.flush()?;
        }
        *self.state.write().expect("state lock") = Arc::new(next);
        Ok(out)
    }

    /// Inserts rows atomically, generating system columns.
    pub fn insert(
        &self,
        catalog: &Catalog,
        table: &TableRef,
        records: &[Record],
        client: &ClientContext,
    ) -> Result<Vec<Row>, StorageError> {
        let t = catalog
            .table(table)
            .ok_or_else(|| StorageError::NotFound(format!("table {table}")))?;
        let owner = is_owner(catalog, client);
        if !element_rights(catalog, t, None, client).insert {
            return Err(StorageError::rights(table, "insert not permitted"));
        }
        let mut typed = Vec::with_capacity(records.len());
        for record in records {
            let mut row = Row::new();
            for (name, json) in record {
                let col = t
                    .column(name)
                    .ok_or_else(|| StorageError::invalid(format!("{table}.{name}"), "no such column"))?;
                let loc = format!("{table}.{name}");
                if col.is_system {
                    return Err(StorageError::invalid(loc, "system columns are engine-managed"));
                }
                if !element_rights(catalog, t, Some(col), client).insert {
                    return Err(StorageError::rights(loc, "insert not permitted"));
                }
                let value = Value::from_json(json, col.ty).map_err(|m| StorageError::invalid(&loc, m))?;
                if !owner && tags::is_generated(t, col) && !value.is_null() {
                    return Err(StorageError::rights(loc, "column is generated"));
                }
                row.insert(name.clone(), value);
            }
            typed.push(row);
        }

        self.write(|state| {
            let ts = state.tick();
            let mut out = Vec::with_capacity(typed.len());
            for mut row in typed {
                let rid = state.mint_rid();
                for col in &t.columns {
                    row.entry(col.name.clone()).or_insert(Value::Null);
                }
                row.insert(RID.into(), Value::Text(rid.clone()));
                row.insert(RCT.into(), Value::Timestamp(ts));
                row.insert(RMT.into(), Value::Timestamp(ts));
                row.insert(RCB.into(), Value::Text(client.id.clone()));
                row.insert(RMB.into(), Value::Text(client.id.clone()));
                state.table_mut(table).rows.insert(rid, row.clone());
                out.push(row);
            }
            check_table(state, t)?;
            let entry = LogEntry::Put {
                table: table.to_string(),
                rows: out.iter().map(row_to_record).collect(),
                next_rid: state.next_rid,
            };
            Ok((out, vec![entry]))
        })
    }

    /// Applies one patch to every listed row.
    pub fn update(
        &self,
        catalog: &Catalog,
        table: &TableRef,
        rids: &[String],
        patch: &Record,
        client: &ClientContext,
    ) -> Result<Vec<Row>, StorageError> {
        let changes: Vec<(String, Record)> = rids.iter().map(|r| (r.clone(), patch.clone())).collect();
        self.update_rows(catalog, table, &changes, client)
    }

    /// Applies a per-row patch, atomically.
    pub fn update_rows(
        &self,
        catalog: &Catalog,
        table: &TableRef,
        changes: &[(String, Record)],
        client: &ClientContext,
    ) -> Result<Vec<Row>, StorageError> {
        let t = catalog
            .table(table)
            .ok_or_else(|| StorageError::NotFound(format!("table {table}")))?;
        let owner = is_owner(catalog, client);
        if !element_rights(catalog, t, None, client).update {
            return Err(StorageError::rights(table, "update not permitted"));
        }
        let mut typed = Vec::with_capacity(changes.len());
        for (rid, patch) in changes {
            let mut values = Row::new();
            for (name, json) in patch {
                let loc = format!("{table}.{name}");
                let col = t
                    .column(name)
                    .ok_or_else(|| StorageError::invalid(&loc, "no such column"))?;
                if col.is_system {
                    return Err(StorageError::invalid(loc, "system columns are engine-managed"));
                }
                if !element_rights(catalog, t, Some(col), client).update {
                    return Err(StorageError::rights(loc, "update not permitted"));
                }
                if !owner && tags::is_generated(t, col) {
                    return Err(StorageError::rights(loc, "column is generated"));
                }
                if !owner && tags::is_immutable(t, col) {
                    return Err(StorageError::rights(loc, "column is immutable"));
                }
                values.insert(name.clone(), Value::from_json(json, col.ty).map_err(|m| StorageError::invalid(&loc, m))?);
            }
            typed.push((rid.clone(), values));
        }
        let filter = row_predicate(catalog, t, client);

        self.write(|state| {
            let ts = state.tick();
            let mut out = Vec::with_capacity(typed.len());
            let data = state.table_mut(table);
            for (rid, values) in typed {
                let row = data
                    .rows
                    .get_mut(&rid)
                    .filter(|r| visible(filter.as_ref(), r))
                    .ok_or_else(|| StorageError::NotFound(format!("{table} row {rid}")))?;
                row.extend(values);
                row.insert(RMT.into(), Value::Timestamp(ts));
                row.insert(RMB.into(), Value::Text(client.id.clone()));
                out.push(row.clone());
            }
            check_table(state, t)?;
            check_inbound(catalog, state, t)?;
            let entry = LogEntry::Put {
                table: table.to_string(),
                rows: out.iter().map(row_to_record).collect(),
                next_rid: state.next_rid,
            };
            Ok((out, vec![entry]))
        })
    }

    /// Deletes rows with restrict semantics; returns the number removed.
    pub fn delete(
        &self,
        catalog: &Catalog,
        table: &TableRef,
        rids: &[String],
        client: &ClientContext,
    ) -> Result<usize, StorageError> {
        let t = catalog
            .table(table)
            .ok_or_else(|| StorageError::NotFound(format!("table {table}")))?;
        if !element_rights(catalog, t, None, client).delete {
            return Err(StorageError::rights(table, "delete not permitted"));
        }
        if rids.is_empty() {
            return Ok(0);
        }
        let filter = row_predicate(catalog, t, client);
        self.write(|state| {
            let data = state.table_mut(table);
            let mut removed = Vec::new();
            for rid in rids {
                if removed.contains(rid) {
                    continue;
                }
                if !data.rows.get(rid).is_some_and(|r| visible(filter.as_ref(), r)) {
                    return Err(StorageError::NotFound(format!("{table} row {rid}")));
                }
                data.rows.shift_remove(rid);
                removed.push(rid.clone());
            }
            check_inbound(catalog, state, t)?;
            let n = removed.len();
            Ok((
                n,
                vec![LogEntry::Delete {
                    table: table.to_string(),
                    rids: removed,
                }],
            ))
        })
    }

    /// Evaluates a plan against the current snapshot.
    pub fn execute(&self, catalog: &Catalog, plan: &QueryPlan) -> Result<ResultSet, StorageError> {
        self.snapshot().execute(catalog, plan)
    }
}

fn visible(filter: Option<&crate::policy::RowFilter>, row: &Row) -> bool {
    filter.is_none_or(|f| f.allows(|c| row.get(c).and_then(Value::as_text).map(str::to_string)))
}

fn apply_put(state: &mut DataState, catalog: &Catalog, table: &str, records: &[Record]) -> Result<(), String> {
    let tref: TableRef = table.parse().map_err(|e| format!("{e}"))?;
    // Tables dropped from the catalog are skipped.
    let Some(t) = catalog.table(&tref) else {
        return Ok(());
    };
    for record in records {
        let row = record_to_row(t, record)?;
        let rid = row
            .get(RID)
            .and_then(Value::as_text)
            .ok_or_else(|| format!("row in {table} without RID"))?
            .to_string();
        if let Some(n) = decode_rid(&rid) {
            state.next_rid = state.next_rid.max(n + 1);
        }
        if let Some(ts) = max_ts(&row) {
            state.last_ts = Some(state.last_ts.map_or(ts, |l| l.max(ts)));
        }
        state.table_mut(&tref).rows.insert(rid, row);
    }
    Ok(())
}

fn key_of<'a>(row: &'a Row, columns: &[String]) -> Option<Vec<&'a Value>> {
    columns
        .iter()
        .map(|c| row.get(c).filter(|v| !v.is_null()))
        .collect()
}

/// Not-null, uniqueness and outbound referential integrity for one table.
fn check_table(state: &DataState, t: &Table) -> Result<(), StorageError> {
    let tref = t.table_ref();
    for row in state.rows(&tref) {
        for col in t.columns.iter().filter(|c| !c.nullable) {
            if row.get(&col.name).is_none_or(Value::is_null) {
                return Err(StorageError::constraint(
                    ConstraintKind::NotNull,
                    format!("{tref}.{}", col.name),
                    "value required",
                ));
            }
        }
    }
    for key in &t.keys {
        let mut seen = HashSet::new();
        for row in state.rows(&tref) {
            if let Some(k) = key_of(row, &key.columns) {
                if !seen.insert(k.clone()) {
                    let shown: Vec<String> = k.iter().map(|v| v.to_string()).collect();
                    return Err(StorageError::constraint(
                        ConstraintKind::Unique,
                        format!("{tref} key {}", key.name),
                        format!("duplicate value ({})", shown.join(", ")),
                    ));
                }
            }
        }
    }
    for fk in &t.foreign_keys {
        let target = fk.to_table();
        let present: HashSet<Vec<&Value>> = state
            .rows(&target)
            .filter_map(|r| key_of(r, fk.to_columns()))
            .collect();
        for row in state.rows(&tref) {
            if let Some(k) = key_of(row, &fk.from_columns) {
                if !present.contains(&k) {
                    let shown: Vec<String> = k.iter().map(|v| v.to_string()).collect();
                    return Err(StorageError::constraint(
                        ConstraintKind::Fkey,
                        format!("{tref} foreign key {}", fk.name),
                        format!("no {target} row with ({})", shown.join(", ")),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Foreign keys from any table into `t` must still resolve.
fn check_inbound(catalog: &Catalog, state: &DataState, t: &Table) -> Result<(), StorageError> {
    let tref = t.table_ref();
    for fk in catalog.inbound_foreign_keys(&tref) {
        let present: HashSet<Vec<&Value>> = state
            .rows(&tref)
            .filter_map(|r| key_of(r, fk.to_columns()))
            .collect();
        let dangling = state
            .rows(&fk.from)
            .filter_map(|r| key_of(r, &fk.from_columns))
            .any(|k| !present.contains(&k));
        if dangling {
            return Err(StorageError::constraint(
                ConstraintKind::FkeyRestrict,
                format!("{tref}"),
                format!("rows are still referenced by {} ({})", fk.from, fk.name),
            ));
        }
    }
    Ok(())
}
