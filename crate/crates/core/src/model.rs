//! The relational catalog: schemas, tables, columns, keys, foreign keys,
//! annotation maps, ACLs and row policies.
//!
//! A [`Catalog`] is an immutable snapshot. Every change goes through
//! [`Catalog::apply`], which returns a new snapshot with a bumped version and
//! leaves the receiver untouched.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Annotation documents keyed by their full tag URI.
pub type AnnotationMap = BTreeMap<String, serde_json::Value>;

pub const RID: &str = "RID";
pub const RCT: &str = "RCT";
pub const RMT: &str = "RMT";
pub const RCB: &str = "RCB";
pub const RMB: &str = "RMB";

/// Engine-managed columns in injection order.
pub const SYSTEM_COLUMNS: [(&str, ScalarType); 5] = [
    (RID, ScalarType::Text),
    (RCT, ScalarType::Timestamp),
    (RMT, ScalarType::Timestamp),
    (RCB, ScalarType::Text),
    (RMB, ScalarType::Text),
];

pub fn is_system_column(name: &str) -> bool {
    SYSTEM_COLUMNS.iter().any(|(n, _)| *n == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarType {
    Text,
    Markdown,
    Int,
    Float,
    Boolean,
    Date,
    Timestamp,
}

impl ScalarType {
    pub fn is_textual(self) -> bool {
        matches!(self, ScalarType::Text | ScalarType::Markdown)
    }

    /// Types that support range filtering and min/max ordering semantics.
    pub fn is_ordinal(self) -> bool {
        matches!(
            self,
            ScalarType::Int | ScalarType::Float | ScalarType::Date | ScalarType::Timestamp
        )
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, ScalarType::Int | ScalarType::Float)
    }
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScalarType::Text => "text",
            ScalarType::Markdown => "markdown",
            ScalarType::Int => "int",
            ScalarType::Float => "float",
            ScalarType::Boolean => "boolean",
            ScalarType::Date => "date",
            ScalarType::Timestamp => "timestamp",
        };
        f.write_str(s)
    }
}

/// `schema:table` reference.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TableRef {
    pub schema: String,
    pub table: String,
}

impl TableRef {
    pub fn new(schema: impl Into<String>, table: impl Into<String>) -> Self {
        Self {
            schema: schema.into(),
            table: table.into(),
        }
    }
}

impl fmt::Display for TableRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.schema, self.table)
    }
}

impl FromStr for TableRef {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some((schema, table)) if !schema.is_empty() && !table.is_empty() => {
                Ok(TableRef::new(schema, table))
            }
            _ => Err(ModelError::InvalidReference(s.to_string())),
        }
    }
}

/// Foreign key constraint name: `[schema, constraint]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FkName(pub String, pub String);

impl FkName {
    pub fn new(schema: impl Into<String>, constraint: impl Into<String>) -> Self {
        FkName(schema.into(), constraint.into())
    }
}

impl fmt::Display for FkName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.0, self.1)
    }
}

/// Per-right role lists. `None` means "not set here, inherit".
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Acl {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enumerate: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub select: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insert: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delete: Option<Vec<String>>,
}

impl Acl {
    pub fn is_empty(&self) -> bool {
        self == &Acl::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowPredicateSpec {
    pub column: String,
    #[serde(rename = "in")]
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowRule {
    pub roles: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<RowPredicateSpec>,
}

/// Data-dependent row visibility rules for one table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowPolicy {
    #[serde(default)]
    pub rules: Vec<RowRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ScalarType,
    #[serde(default = "default_true")]
    pub nullable: bool,
    #[serde(skip)]
    pub is_system: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub annotations: AnnotationMap,
    #[serde(default, skip_serializing_if = "Acl::is_empty")]
    pub acls: Acl,
}

fn default_true() -> bool {
    true
}

impl Column {
    pub fn new(name: impl Into<String>, ty: ScalarType) -> Self {
        Self {
            name: name.into(),
            ty,
            nullable: true,
            is_system: false,
            comment: None,
            annotations: AnnotationMap::new(),
            acls: Acl::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Key {
    #[serde(default)]
    pub name: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FkTarget {
    pub schema: String,
    pub table: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForeignKey {
    pub name: FkName,
    /// Table holding the constraint; filled in at load time.
    #[serde(skip, default = "placeholder_ref")]
    pub from: TableRef,
    pub from_columns: Vec<String>,
    pub to: FkTarget,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub annotations: AnnotationMap,
}

fn placeholder_ref() -> TableRef {
    TableRef::new("", "")
}

impl ForeignKey {
    pub fn to_table(&self) -> TableRef {
        TableRef::new(&self.to.schema, &self.to.table)
    }

    pub fn to_columns(&self) -> &[String] {
        &self.to.columns
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Table {
    #[serde(skip)]
    pub schema: String,
    #[serde(skip)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    pub columns: Vec<Column>,
    #[serde(default)]
    pub keys: Vec<Key>,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKey>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub annotations: AnnotationMap,
    #[serde(default, skip_serializing_if = "Acl::is_empty")]
    pub acls: Acl,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_policy: Option<RowPolicy>,
}

impl Table {
    pub fn new(schema: impl Into<String>, name: impl Into<String>, columns: Vec<Column>) -> Self {
        Self {
            schema: schema.into(),
            name: name.into(),
            comment: None,
            columns,
            keys: Vec::new(),
            foreign_keys: Vec::new(),
            annotations: AnnotationMap::new(),
            acls: Acl::default(),
            row_policy: None,
        }
    }

    pub fn table_ref(&self) -> TableRef {
        TableRef::new(&self.schema, &self.name)
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_mut(&mut self, name: &str) -> Option<&mut Column> {
        self.columns.iter_mut().find(|c| c.name == name)
    }

    pub fn foreign_key(&self, name: &FkName) -> Option<&ForeignKey> {
        self.foreign_keys.iter().find(|fk| &fk.name == name)
    }

    /// True when `columns` (as a set) is exactly one of this table's keys.
    pub fn has_key(&self, columns: &[String]) -> bool {
        let wanted: BTreeSet<&str> = columns.iter().map(String::as_str).collect();
        self.keys.iter().any(|k| {
            let have: BTreeSet<&str> = k.columns.iter().map(String::as_str).collect();
            have == wanted
        })
    }

    /// A column that forms a key on its own.
    pub fn is_key_column(&self, column: &str) -> bool {
        self.keys
            .iter()
            .any(|k| k.columns.len() == 1 && k.columns[0] == column)
    }

    /// Shortest key; ties resolved by declaration order.
    pub fn shortest_key(&self) -> Option<&Key> {
        self.keys.iter().min_by_key(|k| k.columns.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    #[serde(skip)]
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub annotations: AnnotationMap,
    #[serde(default)]
    pub tables: IndexMap<String, Table>,
}

/// An immutable catalog snapshot.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    #[serde(default = "initial_version")]
    pub version: u64,
    /// Roles holding every right everywhere.
    #[serde(default)]
    pub owners: Vec<String>,
    /// Catalog-wide default rights; unset rights fall back to owners only.
    #[serde(default, skip_serializing_if = "Acl::is_empty")]
    pub acls: Acl,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub annotations: AnnotationMap,
    pub schemas: IndexMap<String, Schema>,
}

fn initial_version() -> u64 {
    1
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid identifier {0:?}")]
    InvalidIdentifier(String),
    #[error("invalid table reference {0:?}")]
    InvalidReference(String),
    #[error("duplicate {kind} {name:?}")]
    Duplicate { kind: &'static str, name: String },
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown column {column:?} in {table}")]
    UnknownColumn { table: String, column: String },
    #[error("unknown foreign key {0}")]
    UnknownForeignKey(String),
    #[error("key {key:?} on {table}: {reason}")]
    InvalidKey {
        table: String,
        key: String,
        reason: String,
    },
    #[error("foreign key {name}: {reason}")]
    InvalidForeignKey { name: String, reason: String },
    #[error("system column {column:?} in {table}: {reason}")]
    SystemColumn {
        table: String,
        column: String,
        reason: String,
    },
    #[error("policy on {table}: {reason}")]
    InvalidPolicy { table: String, reason: String },
    #[error("column {column:?} of {table} is referenced by {by}")]
    ColumnInUse {
        table: String,
        column: String,
        by: String,
    },
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("malformed catalog document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == ' ')
}

fn check_ident(s: &str) -> Result<(), ModelError> {
    if is_identifier(s) {
        Ok(())
    } else {
        Err(ModelError::InvalidIdentifier(s.to_string()))
    }
}

/// Parses a catalog document and checks every structural invariant.
pub fn parse_catalog(document: &[u8]) -> Result<Catalog, CatalogError> {
    let mut catalog: Catalog = serde_json::from_slice(document)?;
    catalog.normalize();
    catalog.validate()?;
    Ok(catalog)
}

impl Catalog {
    pub fn to_json_bytes(&self) -> Vec<u8> {
        // Serializing plain owned data cannot fail.
        serde_json::to_vec_pretty(self).expect("catalog serializes")
    }

    pub fn schema(&self, name: &str) -> Option<&Schema> {
        self.schemas.get(name)
    }

    pub fn table(&self, table: &TableRef) -> Option<&Table> {
        self.schemas.get(&table.schema)?.tables.get(&table.table)
    }

    pub fn table_mut(&mut self, table: &TableRef) -> Option<&mut Table> {
        self.schemas
            .get_mut(&table.schema)?
            .tables
            .get_mut(&table.table)
    }

    /// Tables in model order (schemas, then tables, as declared).
    pub fn tables(&self) -> impl Iterator<Item = &Table> {
        self.schemas.values().flat_map(|s| s.tables.values())
    }

    /// Foreign keys in model order.
    pub fn foreign_keys(&self) -> impl Iterator<Item = &ForeignKey> {
        self.tables().flat_map(|t| t.foreign_keys.iter())
    }

    pub fn foreign_key(&self, name: &FkName) -> Option<&ForeignKey> {
        self.foreign_keys().find(|fk| &fk.name == name)
    }

    /// Foreign keys referencing `table`, in model order.
    pub fn inbound_foreign_keys<'a>(
        &'a self,
        table: &'a TableRef,
    ) -> impl Iterator<Item = &'a ForeignKey> + 'a {
        self.foreign_keys()
            .filter(move |fk| fk.to.schema == table.schema && fk.to.table == table.table)
    }

    /// Fills in names derived from map keys and injects system columns and
    /// the RID key. Idempotent.
    fn normalize(&mut self) {
        for (schema_name, schema) in self.schemas.iter_mut() {
            schema.name = schema_name.clone();
            for (table_name, table) in schema.tables.iter_mut() {
                table.schema = schema_name.clone();
                table.name = table_name.clone();
                normalize_table(table);
            }
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        let mut fk_names = BTreeSet::new();
        for (schema_name, schema) in &self.schemas {
            check_ident(schema_name)?;
            for table in schema.tables.values() {
                validate_table(table)?;
                for fk in &table.foreign_keys {
                    if !fk_names.insert(fk.name.clone()) {
                        return Err(ModelError::Duplicate {
                            kind: "foreign key",
                            name: fk.name.to_string(),
                        });
                    }
                    self.validate_fkey(table, fk)?;
                }
            }
        }
        Ok(())
    }

    fn validate_fkey(&self, table: &Table, fk: &ForeignKey) -> Result<(), ModelError> {
        let err = |reason: String| ModelError::InvalidForeignKey {
            name: fk.name.to_string(),
            reason,
        };
        check_ident(&fk.name.0)?;
        check_ident(&fk.name.1)?;
        if fk.from_columns.is_empty() {
            return Err(err("no columns".into()));
        }
        if fk.from_columns.len() != fk.to.columns.len() {
            return Err(err(format!(
                "{} referencing columns but {} referenced columns",
                fk.from_columns.len(),
                fk.to.columns.len()
            )));
        }
        let target = self
            .table(&fk.to_table())
            .ok_or_else(|| err(format!("target table {} does not exist", fk.to_table())))?;
        if !target.has_key(&fk.to.columns) {
            return Err(err(format!(
                "referenced columns {:?} are not a key of {}",
                fk.to.columns,
                fk.to_table()
            )));
        }
        for (from, to) in fk.from_columns.iter().zip(&fk.to.columns) {
            let from_col = table.column(from).ok_or_else(|| ModelError::UnknownColumn {
                table: table.table_ref().to_string(),
                column: from.clone(),
            })?;
            let to_col = target.column(to).ok_or_else(|| ModelError::UnknownColumn {
                table: fk.to_table().to_string(),
                column: to.clone(),
            })?;
            if from_col.ty != to_col.ty {
                return Err(err(format!(
                    "column {from} is {} but {to} is {}",
                    from_col.ty, to_col.ty
                )));
            }
        }
        Ok(())
    }

    /// Applies one change, producing the next snapshot.
    pub fn apply(&self, change: &ModelChange) -> Result<Catalog, ModelError> {
        let mut next = self.clone();
        next.apply_in_place(change)?;
        next.normalize();
        next.validate()?;
        next.version = self.version + 1;
        Ok(next)
    }

    fn apply_in_place(&mut self, change: &ModelChange) -> Result<(), ModelError> {
        match change {
            ModelChange::AddTable { table, definition } => {
                check_ident(&table.schema)?;
                let schema = self
                    .schemas
                    .entry(table.schema.clone())
                    .or_insert_with(|| Schema {
                        name: table.schema.clone(),
                        annotations: AnnotationMap::new(),
                        tables: IndexMap::new(),
                    });
                if schema.tables.contains_key(&table.table) {
                    return Err(ModelError::Duplicate {
                        kind: "table",
                        name: table.to_string(),
                    });
                }
                schema.tables.insert(table.table.clone(), definition.clone());
            }
            ModelChange::AddColumn { table, column } => {
                let t = self.table_mut_or_err(table)?;
                if t.column(&column.name).is_some() {
                    return Err(ModelError::Duplicate {
                        kind: "column",
                        name: column.name.clone(),
                    });
                }
                t.columns.push(column.clone());
            }
            ModelChange::DropColumn { table, column } => {
                if is_system_column(column) {
                    return Err(ModelError::SystemColumn {
                        table: table.to_string(),
                        column: column.clone(),
                        reason: "system columns cannot be dropped".into(),
                    });
                }
                for fk in self.foreign_keys() {
                    let outbound = &fk.from == table && fk.from_columns.contains(column);
                    let inbound = fk.to_table() == *table && fk.to.columns.contains(column);
                    if outbound || inbound {
                        return Err(ModelError::ColumnInUse {
                            table: table.to_string(),
                            column: column.clone(),
                            by: format!("foreign key {}", fk.name),
                        });
                    }
                }
                let t = self.table_mut_or_err(table)?;
                if let Some(key) = t.keys.iter().find(|k| k.columns.contains(column)) {
                    return Err(ModelError::ColumnInUse {
                        table: table.to_string(),
                        column: column.clone(),
                        by: format!("key {}", key.name),
                    });
                }
                if let Some(policy) = &t.row_policy {
                    if policy
                        .rules
                        .iter()
                        .any(|r| r.predicate.as_ref().is_some_and(|p| &p.column == column))
                    {
                        return Err(ModelError::ColumnInUse {
                            table: table.to_string(),
                            column: column.clone(),
                            by: "row policy".into(),
                        });
                    }
                }
                let before = t.columns.len();
                t.columns.retain(|c| &c.name != column);
                if t.columns.len() == before {
                    return Err(ModelError::UnknownColumn {
                        table: table.to_string(),
                        column: column.clone(),
                    });
                }
            }
            ModelChange::AddFkey { table, fkey } => {
                let t = self.table_mut_or_err(table)?;
                t.foreign_keys.push(fkey.clone());
            }
            ModelChange::DropFkey { name } => {
                let mut found = false;
                for schema in self.schemas.values_mut() {
                    for t in schema.tables.values_mut() {
                        let before = t.foreign_keys.len();
                        t.foreign_keys.retain(|fk| &fk.name != name);
                        found |= t.foreign_keys.len() != before;
                    }
                }
                if !found {
                    return Err(ModelError::UnknownForeignKey(name.to_string()));
                }
            }
            ModelChange::SetAnnotation { target, tag, value } => {
                self.annotations_mut(target)?
                    .insert(tag.clone(), value.clone());
            }
            ModelChange::DeleteAnnotation { target, tag } => {
                self.annotations_mut(target)?.remove(tag);
            }
            ModelChange::SetAcl { target, acl } => match target {
                AclTarget::Catalog => self.acls = acl.clone(),
                AclTarget::Table { table } => self.table_mut_or_err(table)?.acls = acl.clone(),
                AclTarget::Column { table, column } => {
                    if acl.delete.is_some() {
                        return Err(ModelError::InvalidPolicy {
                            table: table.to_string(),
                            reason: "column ACLs cannot carry delete".into(),
                        });
                    }
                    let t = self.table_mut_or_err(table)?;
                    let name = t.table_ref().to_string();
                    t.column_mut(column)
                        .ok_or(ModelError::UnknownColumn {
                            table: name,
                            column: column.clone(),
                        })?
                        .acls = acl.clone();
                }
            },
            ModelChange::SetRowPolicy { table, policy } => {
                self.table_mut_or_err(table)?.row_policy = policy.clone();
            }
        }
        Ok(())
    }

    fn table_mut_or_err(&mut self, table: &TableRef) -> Result<&mut Table, ModelError> {
        self.table_mut(table)
            .ok_or_else(|| ModelError::UnknownTable(table.to_string()))
    }

    fn annotations_mut(&mut self, target: &AnnotationTarget) -> Result<&mut AnnotationMap, ModelError> {
        match target {
            AnnotationTarget::Catalog => Ok(&mut self.annotations),
            AnnotationTarget::Schema { schema } => self
                .schemas
                .get_mut(schema)
                .map(|s| &mut s.annotations)
                .ok_or_else(|| ModelError::UnknownTable(schema.clone())),
            AnnotationTarget::Table { table } => Ok(&mut self.table_mut_or_err(table)?.annotations),
            AnnotationTarget::Column { table, column } => {
                let t = self.table_mut_or_err(table)?;
                let name = t.table_ref().to_string();
                t.column_mut(column)
                    .map(|c| &mut c.annotations)
                    .ok_or(ModelError::UnknownColumn {
                        table: name,
                        column: column.clone(),
                    })
            }
            AnnotationTarget::ForeignKey { name } => self
                .schemas
                .values_mut()
                .flat_map(|s| s.tables.values_mut())
                .flat_map(|t| t.foreign_keys.iter_mut())
                .find(|fk| &fk.name == name)
                .map(|fk| &mut fk.annotations)
                .ok_or_else(|| ModelError::UnknownForeignKey(name.to_string())),
        }
    }
}

fn normalize_table(table: &mut Table) {
    for (name, ty) in SYSTEM_COLUMNS.iter().rev() {
        if table.column(name).is_none() {
            let mut col = Column::new(*name, *ty);
            col.nullable = false;
            table.columns.insert(0, col);
        }
    }
    for col in table.columns.iter_mut() {
        col.is_system = is_system_column(&col.name);
    }
    let table_ref = table.table_ref();
    for fk in table.foreign_keys.iter_mut() {
        fk.from = table_ref.clone();
    }
    for key in table.keys.iter_mut() {
        if key.name.is_empty() {
            key.name = format!("{}_{}_key", table.name, key.columns.join("_"));
        }
    }
    if !table.keys.iter().any(|k| k.columns == [RID]) {
        table.keys.push(Key {
            name: format!("{}_RIDkey1", table.name),
            columns: vec![RID.to_string()],
        });
    }
    if table.row_policy.as_ref().is_some_and(|p| p.rules.is_empty()) {
        table.row_policy = None;
    }
}

fn validate_table(table: &Table) -> Result<(), ModelError> {
    let tref = table.table_ref().to_string();
    check_ident(&table.name)?;
    let mut names = BTreeSet::new();
    for col in &table.columns {
        check_ident(&col.name)?;
        if !names.insert(col.name.as_str()) {
            return Err(ModelError::Duplicate {
                kind: "column",
                name: format!("{tref}.{}", col.name),
            });
        }
        if col.acls.delete.is_some() {
            return Err(ModelError::InvalidPolicy {
                table: tref.clone(),
                reason: format!("column {} ACL cannot carry delete", col.name),
            });
        }
    }
    for (name, ty) in SYSTEM_COLUMNS {
        let col = table.column(name).expect("system columns injected");
        if col.ty != ty || col.nullable {
            return Err(ModelError::SystemColumn {
                table: tref.clone(),
                column: name.to_string(),
                reason: format!("must be non-nullable {ty}"),
            });
        }
    }
    let mut key_names = BTreeSet::new();
    for key in &table.keys {
        check_ident(&key.name)?;
        if !key_names.insert(key.name.as_str()) {
            return Err(ModelError::Duplicate {
                kind: "key",
                name: key.name.clone(),
            });
        }
        if key.columns.is_empty() {
            return Err(ModelError::InvalidKey {
                table: tref.clone(),
                key: key.name.clone(),
                reason: "no columns".into(),
            });
        }
        for c in &key.columns {
            if table.column(c).is_none() {
                return Err(ModelError::InvalidKey {
                    table: tref.clone(),
                    key: key.name.clone(),
                    reason: format!("column {c:?} does not exist"),
                });
            }
        }
    }
    if let Some(policy) = &table.row_policy {
        for rule in &policy.rules {
            if let Some(pred) = &rule.predicate {
                match table.column(&pred.column) {
                    Some(c) if c.ty == ScalarType::Text => {}
                    Some(_) => {
                        return Err(ModelError::InvalidPolicy {
                            table: tref.clone(),
                            reason: format!("predicate column {} is not text", pred.column),
                        })
                    }
                    None => {
                        return Err(ModelError::InvalidPolicy {
                            table: tref.clone(),
                            reason: format!("predicate column {} does not exist", pred.column),
                        })
                    }
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AnnotationTarget {
    Catalog,
    Schema { schema: String },
    Table { table: TableRef },
    Column { table: TableRef, column: String },
    ForeignKey { name: FkName },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AclTarget {
    Catalog,
    Table { table: TableRef },
    Column { table: TableRef, column: String },
}

/// One model or annotation mutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum ModelChange {
    AddTable { table: TableRef, definition: Table },
    AddColumn { table: TableRef, column: Column },
    DropColumn { table: TableRef, column: String },
    AddFkey { table: TableRef, fkey: ForeignKey },
    DropFkey { name: FkName },
    SetAnnotation {
        target: AnnotationTarget,
        tag: String,
        value: serde_json::Value,
    },
    DeleteAnnotation { target: AnnotationTarget, tag: String },
    SetAcl { target: AclTarget, acl: Acl },
    SetRowPolicy {
        table: TableRef,
        policy: Option<RowPolicy>,
    },
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn doc(v: serde_json::Value) -> Vec<u8> {
        serde_json::to_vec(&v).unwrap()
    }

    fn study_experiment() -> Catalog {
        parse_catalog(&doc(json!({
            "schemas": {"RNASeq": {"tables": {
                "Study": {"columns": [{"name": "Title", "type": "text", "nullable": false}]},
                "Experiment": {
                    "columns": [{"name": "Study", "type": "text"}, {"name": "Experiment_Type", "type": "text"}],
                    "foreign_keys": [{
                        "name": ["RNASeq", "Experiment_Study_fkey"],
                        "from_columns": ["Study"],
                        "to": {"schema": "RNASeq", "table": "Study", "columns": ["RID"]}
                    }]
                }
            }}}
        })))
        .unwrap()
    }

    #[test]
    fn system_columns_are_injected_first() {
        let c = parse_catalog(&doc(json!({
            "schemas": {"S": {"tables": {"T": {"columns": [{"name": "Title", "type": "text"}]}}}}
        })))
        .unwrap();
        let t = c.table(&TableRef::new("S", "T")).unwrap();
        let names: Vec<_> = t.columns.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["RID", "RCT", "RMT", "RCB", "RMB", "Title"]);
        assert!(t.columns[..5].iter().all(|c| c.is_system && !c.nullable));
        assert!(t.has_key(&["RID".to_string()]));
    }

    #[test]
    fn fkey_resolves_to_target() {
        let c = study_experiment();
        let fk = c
            .foreign_key(&FkName::new("RNASeq", "Experiment_Study_fkey"))
            .unwrap();
        assert_eq!(fk.from, TableRef::new("RNASeq", "Experiment"));
        assert_eq!(fk.to_table(), TableRef::new("RNASeq", "Study"));
    }

    #[test]
    fn fkey_to_non_key_is_rejected() {
        let err = parse_catalog(&doc(json!({
            "schemas": {"S": {"tables": {
                "A": {"columns": [{"name": "Title", "type": "text"}]},
                "B": {"columns": [{"name": "A_Title", "type": "text"}],
                      "foreign_keys": [{"name": ["S", "B_A_fkey"], "from_columns": ["A_Title"],
                                        "to": {"schema": "S", "table": "A", "columns": ["Title"]}}]}
            }}}
        })))
        .unwrap_err();
        assert!(matches!(err, CatalogError::Model(ModelError::InvalidForeignKey { .. })));
    }

    #[test]
    fn dangling_and_duplicate_are_rejected() {
        let dangling = parse_catalog(&doc(json!({
            "schemas": {"S": {"tables": {
                "B": {"columns": [{"name": "X", "type": "text"}],
                      "foreign_keys": [{"name": ["S", "fk"], "from_columns": ["X"],
                                        "to": {"schema": "S", "table": "Nope", "columns": ["RID"]}}]}
            }}}
        })));
        assert!(matches!(dangling, Err(CatalogError::Model(_))));
        let dup = parse_catalog(&doc(json!({
            "schemas": {"S": {"tables": {"T": {"columns": [
                {"name": "X", "type": "text"}, {"name": "X", "type": "int"}
            ]}}}}
        })));
        assert!(matches!(dup, Err(CatalogError::Model(ModelError::Duplicate { .. }))));
        let missing_key_col = parse_catalog(&doc(json!({
            "schemas": {"S": {"tables": {"T": {"columns": [], "keys": [{"name": "k", "columns": ["Q"]}]}}}}
        })));
        assert!(matches!(missing_key_col, Err(CatalogError::Model(ModelError::InvalidKey { .. }))));
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(parse_catalog(b"{\"schemas\": "), Err(CatalogError::Parse(_))));
    }

    #[test]
    fn identifiers_allow_spaces_but_not_leading_digits() {
        assert!(is_identifier("Specimen Tissue"));
        assert!(is_identifier("_x1"));
        assert!(!is_identifier("1x"));
        assert!(!is_identifier("a-b"));
        assert!(!is_identifier(""));
    }

    #[test]
    fn set_annotation_bumps_version_and_keeps_input() {
        let c = study_experiment();
        let study = TableRef::new("RNASeq", "Study");
        let value = json!({"row_name": {"row_markdown_pattern": "{{{Title}}}"}});
        let next = c
            .apply(&ModelChange::SetAnnotation {
                target: AnnotationTarget::Table { table: study.clone() },
                tag: "tag:isrd.isi.edu,2016:table-display".into(),
                value: value.clone(),
            })
            .unwrap();
        assert_eq!(next.version, c.version + 1);
        assert_eq!(
            next.table(&study).unwrap().annotations["tag:isrd.isi.edu,2016:table-display"],
            value
        );
        assert!(c.table(&study).unwrap().annotations.is_empty());
    }

    #[test]
    fn add_column_appends_last() {
        let c = study_experiment();
        let study = TableRef::new("RNASeq", "Study");
        let next = c
            .apply(&ModelChange::AddColumn {
                table: study.clone(),
                column: Column::new("Cellbrowser_URL", ScalarType::Text),
            })
            .unwrap();
        assert_eq!(next.table(&study).unwrap().columns.last().unwrap().name, "Cellbrowser_URL");
    }

    #[test]
    fn drop_fkey_column_is_rejected() {
        let c = study_experiment();
        let err = c
            .apply(&ModelChange::DropColumn {
                table: TableRef::new("RNASeq", "Experiment"),
                column: "Study".into(),
            })
            .unwrap_err();
        assert!(matches!(err, ModelError::ColumnInUse { .. }));
        let ok = c
            .apply(&ModelChange::DropColumn {
                table: TableRef::new("RNASeq", "Experiment"),
                column: "Experiment_Type".into(),
            })
            .unwrap();
        assert_eq!(ok.version, 2);
    }

    #[test]
    fn row_policy_column_must_be_text() {
        let err = parse_catalog(&doc(json!({
            "schemas": {"S": {"tables": {"T": {
                "columns": [{"name": "N", "type": "int"}],
                "row_policy": {"rules": [{"roles": ["*"], "predicate": {"column": "N", "in": ["1"]}}]}
            }}}}
        })))
        .unwrap_err();
        assert!(matches!(err, CatalogError::Model(ModelError::InvalidPolicy { .. })));
    }

    #[test]
    fn round_trip_is_identity() {
        let c = study_experiment();
        let again = parse_catalog(&c.to_json_bytes()).unwrap();
        assert_eq!(c, again);
    }
}
