//! Annotation parsing, source resolution, and validation against a
//! role-based model. Invalid fragments are pruned one entry at a time and
//! reported as diagnostics; everything else is kept.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use indexmap::IndexMap;
use serde::Serialize;
use serde_json::Value as Json;

use crate::model::{Catalog, FkName, ScalarType, Table, TableRef, RID};
use crate::policy::RoleBasedModel;
use crate::render::Template;
use crate::storage::Aggregate;
use crate::tags;

/// Context names understood by the interpreter.
pub const CONTEXTS: [&str; 6] = ["*", "detailed", "compact", "entry", "filter", "row_name"];

pub type ContextMap<T> = BTreeMap<String, T>;

/// `*` or `name` or `name/sub`, lowercase words with underscores.
pub fn is_context_name(s: &str) -> bool {
    if s == "*" {
        return true;
    }
    let word = |w: &str| {
        let mut chars = w.chars();
        chars.next().is_some_and(|c| c.is_ascii_lowercase())
            && chars.all(|c| c.is_ascii_lowercase() || c == '_')
    };
    match s.split_once('/') {
        Some((a, b)) => word(a) && word(b),
        None => word(s),
    }
}

/// Lookup order: exact key, then parent (`entry/create` → `entry`), then `*`.
pub fn resolve_context<'a, T>(map: &'a ContextMap<T>, requested: &str) -> Option<&'a T> {
    if let Some(v) = map.get(requested) {
        return Some(v);
    }
    if let Some((parent, _)) = requested.split_once('/') {
        if let Some(v) = map.get(parent) {
            return Some(v);
        }
    }
    map.get("*")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Inbound,
    Outbound,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct FkHop {
    pub direction: Direction,
    pub fkey_name: FkName,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum SourcePath {
    Column(String),
    Path { hops: Vec<FkHop>, end: String },
}

/// A source as written: exactly one of a path or a sourcekey.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourceSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<SourcePath>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sourcekey: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<Aggregate>,
    /// `false` forces scalar mode on a key end column.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entity: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DisplaySpec {
    pub markdown_pattern: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PseudoColumnSpec {
    pub source: SourceSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub markdown_name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub display: Option<DisplaySpec>,
}

/// Parsed (not yet resolved) `source-definitions` payload.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SourceDefinitions {
    pub sources: IndexMap<String, PseudoColumnSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResolvedHop {
    pub direction: Direction,
    pub fkey_name: FkName,
    pub from_table: TableRef,
    pub to_table: TableRef,
    /// Join columns on `from_table`.
    pub from_columns: Vec<String>,
    /// Join columns on `to_table`, positionally matched.
    pub to_columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResolvedSource {
    pub base_table: TableRef,
    pub hops: Vec<ResolvedHop>,
    pub end_column: String,
    pub end_type: ScalarType,
    pub entity_mode: bool,
    pub aggregate: Option<Aggregate>,
    pub multivalued: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sourcekey: Option<String>,
}

impl ResolvedSource {
    pub fn end_table(&self) -> &TableRef {
        self.hops.last().map_or(&self.base_table, |h| &h.to_table)
    }

    /// Same join chain and end column, ignoring aggregate and naming.
    pub fn same_path(&self, other: &ResolvedSource) -> bool {
        self.base_table == other.base_table
            && self.end_column == other.end_column
            && self.hops.len() == other.hops.len()
            && self
                .hops
                .iter()
                .zip(&other.hops)
                .all(|(a, b)| a.direction == b.direction && a.fkey_name == b.fkey_name)
    }

    /// The written form of this source's path.
    pub fn path_json(&self) -> Json {
        if self.hops.is_empty() {
            return Json::from(self.end_column.clone());
        }
        let mut items: Vec<Json> = self
            .hops
            .iter()
            .map(|h| {
                let key = match h.direction {
                    Direction::Inbound => "inbound",
                    Direction::Outbound => "outbound",
                };
                serde_json::json!({ key: [h.fkey_name.0, h.fkey_name.1] })
            })
            .collect();
        items.push(Json::from(self.end_column.clone()));
        Json::Array(items)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct ResolutionError(pub String);

fn fkey_name_from(json: &Json) -> Result<FkName, String> {
    match json.as_array().map(Vec::as_slice) {
        Some([Json::String(s), Json::String(c)]) => Ok(FkName::new(s, c)),
        _ => Err(format!("foreign key name must be a [schema, constraint] pair, got {json}")),
    }
}

/// Parses a `source` value: a column name or `[hop..., end]`.
pub fn parse_source_path(json: &Json) -> Result<SourcePath, String> {
    match json {
        Json::String(s) => Ok(SourcePath::Column(s.clone())),
        Json::Array(items) => {
            let Some((last, hops)) = items.split_last() else {
                return Err("empty source path".into());
            };
            let end = last
                .as_str()
                .ok_or_else(|| format!("source path must end with a column name, got {last}"))?
                .to_string();
            if hops.is_empty() {
                return Ok(SourcePath::Column(end));
            }
            let hops = hops
                .iter()
                .map(|h| {
                    let obj = h
                        .as_object()
                        .filter(|o| o.len() == 1)
                        .ok_or_else(|| format!("hop must be {{\"inbound\"|\"outbound\": [schema, name]}}, got {h}"))?;
                    let (dir, name) = obj.iter().next().expect("one entry");
                    let direction = match dir.as_str() {
                        "inbound" => Direction::Inbound,
                        "outbound" => Direction::Outbound,
                        other => return Err(format!("unknown hop direction {other:?}")),
                    };
                    Ok(FkHop {
                        direction,
                        fkey_name: fkey_name_from(name)?,
                    })
                })
                .collect::<Result<_, _>>()?;
            Ok(SourcePath::Path { hops, end })
        }
        other => Err(format!("source must be a column name or a path, got {other}")),
    }
}

fn opt_string(obj: &serde_json::Map<String, Json>, key: &str) -> Result<Option<String>, String> {
    match obj.get(key) {
        None | Some(Json::Null) => Ok(None),
        Some(Json::String(s)) => Ok(Some(s.clone())),
        Some(other) => Err(format!("{key} must be text, got {other}")),
    }
}

fn parse_display(obj: &serde_json::Map<String, Json>) -> Result<Option<DisplaySpec>, String> {
    match obj.get("display") {
        None | Some(Json::Null) => Ok(None),
        Some(Json::Object(d)) => {
            let pattern = opt_string(d, "markdown_pattern")?
                .ok_or_else(|| "display requires markdown_pattern".to_string())?;
            Template::parse(&pattern).map_err(|e| format!("markdown_pattern: {e}"))?;
            Ok(Some(DisplaySpec {
                markdown_pattern: pattern,
            }))
        }
        Some(other) => Err(format!("display must be an object, got {other}")),
    }
}

/// Parses an object entry carrying `source` or `sourcekey` plus options.
pub fn parse_pseudo_column(json: &Json) -> Result<PseudoColumnSpec, String> {
    let obj = json
        .as_object()
        .ok_or_else(|| format!("expected an object, got {json}"))?;
    let path = obj.get("source").map(parse_source_path).transpose()?;
    let sourcekey = opt_string(obj, "sourcekey")?;
    match (&path, &sourcekey) {
        (Some(_), Some(_)) => return Err("source and sourcekey are mutually exclusive".into()),
        (None, None) => return Err("entry needs a source or a sourcekey".into()),
        _ => {}
    }
    let aggregate = match obj.get("aggregate") {
        None | Some(Json::Null) => None,
        Some(Json::String(s)) => {
            Some(Aggregate::parse(s).ok_or_else(|| format!("unknown aggregate {s:?}"))?)
        }
        Some(other) => return Err(format!("aggregate must be text, got {other}")),
    };
    let entity = match obj.get("entity") {
        None | Some(Json::Null) => None,
        Some(Json::Bool(b)) => Some(*b),
        Some(other) => return Err(format!("entity must be a boolean, got {other}")),
    };
    if aggregate.is_some() && !matches!(path, Some(SourcePath::Path { .. })) {
        return Err("aggregate requires a foreign key path".into());
    }
    Ok(PseudoColumnSpec {
        source: SourceSpec {
            path,
            sourcekey,
            aggregate,
            entity,
        },
        markdown_name: opt_string(obj, "markdown_name")?,
        comment: opt_string(obj, "comment")?,
        display: parse_display(obj)?,
    })
}

/// Walks `spec` from `base`. A sourcekey is looked up in `defs` (one level).
pub fn resolve_source(
    catalog: &Catalog,
    base: &TableRef,
    spec: &SourceSpec,
    defs: &SourceDefinitions,
) -> Result<ResolvedSource, ResolutionError> {
    let err = |m: String| ResolutionError(m);
    if let Some(key) = &spec.sourcekey {
        if spec.path.is_some() {
            return Err(err("source and sourcekey are mutually exclusive".into()));
        }
        let def = defs
            .sources
            .get(key)
            .ok_or_else(|| err(format!("unknown sourcekey {key:?}")))?;
        if def.source.sourcekey.is_some() {
            return Err(err(format!("sourcekey {key:?} refers to another sourcekey")));
        }
        let mut resolved = resolve_source(catalog, base, &def.source, defs)?;
        resolved.sourcekey = Some(key.clone());
        return Ok(resolved);
    }
    let path = spec
        .path
        .as_ref()
        .ok_or_else(|| err("source needs a column or a path".into()))?;
    let base_table = catalog
        .table(base)
        .ok_or_else(|| err(format!("unknown table {base}")))?;
    let (hop_specs, end): (&[FkHop], &str) = match path {
        SourcePath::Column(c) => (&[], c),
        SourcePath::Path { hops, end } => (hops, end),
    };
    if spec.aggregate.is_some() && hop_specs.is_empty() {
        return Err(err("aggregate requires a foreign key path".into()));
    }

    let mut current = base_table;
    let mut hops = Vec::with_capacity(hop_specs.len());
    for hop in hop_specs {
        let fk = catalog
            .foreign_key(&hop.fkey_name)
            .ok_or_else(|| err(format!("unknown foreign key {}", hop.fkey_name)))?;
        let here = current.table_ref();
        let (next, from_columns, to_columns) = match hop.direction {
            Direction::Outbound => {
                if fk.from != here {
                    return Err(err(format!(
                        "foreign key {} is not outbound from {here}",
                        hop.fkey_name
                    )));
                }
                (fk.to_table(), fk.from_columns.clone(), fk.to.columns.clone())
            }
            Direction::Inbound => {
                if fk.to_table() != here {
                    return Err(err(format!(
                        "foreign key {} is not inbound to {here}",
                        hop.fkey_name
                    )));
                }
                (fk.from.clone(), fk.to.columns.clone(), fk.from_columns.clone())
            }
        };
        current = catalog
            .table(&next)
            .ok_or_else(|| err(format!("unknown table {next}")))?;
        hops.push(ResolvedHop {
            direction: hop.direction,
            fkey_name: hop.fkey_name.clone(),
            from_table: here,
            to_table: next,
            from_columns,
            to_columns,
        });
    }
    let column = current
        .column(end)
        .ok_or_else(|| err(format!("unknown column {end} in {}", current.table_ref())))?;
    if spec.aggregate == Some(Aggregate::Sum) && !column.ty.is_numeric() {
        return Err(err(format!("sum over non-numeric column {end}")));
    }
    let entity_mode = !hops.is_empty()
        && current.is_key_column(end)
        && spec.entity != Some(false)
        && matches!(spec.aggregate, None | Some(Aggregate::ArrayD));
    Ok(ResolvedSource {
        base_table: base.clone(),
        multivalued: hops.iter().any(|h| h.direction == Direction::Inbound),
        hops,
        end_column: end.to_string(),
        end_type: column.ty,
        entity_mode,
        aggregate: spec.aggregate,
        sourcekey: None,
    })
}

/// Source of an outbound foreign key presented as one entity reference.
pub fn fkey_entity_source(catalog: &Catalog, base: &TableRef, name: &FkName) -> Result<ResolvedSource, ResolutionError> {
    let spec = SourceSpec {
        path: Some(SourcePath::Path {
            hops: vec![FkHop {
                direction: Direction::Outbound,
                fkey_name: name.clone(),
            }],
            end: RID.to_string(),
        }),
        sourcekey: None,
        aggregate: None,
        entity: None,
    };
    resolve_source(catalog, base, &spec, &SourceDefinitions::default())
}

/// Source of an inbound foreign key presented as a set of related entities.
pub fn inbound_entity_source(catalog: &Catalog, base: &TableRef, name: &FkName) -> Result<ResolvedSource, ResolutionError> {
    let spec = SourceSpec {
        path: Some(SourcePath::Path {
            hops: vec![FkHop {
                direction: Direction::Inbound,
                fkey_name: name.clone(),
            }],
            end: RID.to_string(),
        }),
        sourcekey: None,
        aggregate: None,
        entity: None,
    };
    resolve_source(catalog, base, &spec, &SourceDefinitions::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub table: Option<String>,
    pub tag: String,
    pub context: Option<String>,
    pub index: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Warning => "WARNING",
            Severity::Error => "ERROR",
        };
        let dash = |o: &Option<String>| o.clone().unwrap_or_else(|| "-".into());
        write!(
            f,
            "{level} table={} tag={} context={} idx={} msg={}",
            dash(&self.table),
            self.tag,
            dash(&self.context),
            self.index.map_or("-".to_string(), |i| i.to_string()),
            self.message
        )
    }
}

/// A property entry from a visible-columns list or a source definition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyDef {
    pub source: ResolvedSource,
    /// Set when the entry named an outbound foreign key.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fkey: Option<FkName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub markdown_name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub display: Option<DisplaySpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum UxMode {
    Choices,
    Ranges,
    Search,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeSpec {
    pub min: Option<Json>,
    pub max: Option<Json>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FacetDef {
    pub source: ResolvedSource,
    pub markdown_name: Option<String>,
    pub comment: Option<String>,
    pub ux_mode: Option<UxMode>,
    /// Preselected choices; text entries may be templates (picker filters).
    pub choices: Option<Vec<Json>>,
    pub ranges: Option<Vec<RangeSpec>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationshipDef {
    pub source: ResolvedSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fkey: Option<FkName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub markdown_name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub display: Option<DisplaySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SortSpec {
    pub column: String,
    pub descending: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TableDisplay {
    pub row_markdown_pattern: Option<String>,
    pub row_order: Option<Vec<SortSpec>>,
    pub page_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AssetMap {
    pub url: String,
    pub filename: Option<String>,
    pub byte_count: Option<String>,
    pub checksum: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct NameStyle {
    pub underline_space: Option<bool>,
    pub title_case: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DisplayAnnotation {
    pub name: Option<String>,
    pub markdown_name: Option<String>,
    pub comment: Option<String>,
    pub name_style: NameStyle,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ForeignKeyDisplay {
    pub to_name: Option<String>,
    pub from_name: Option<String>,
    pub selection_filter: Vec<FacetDef>,
}

/// Validated annotations of one table and its columns.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TableAnnotations {
    pub sources: IndexMap<String, PropertyDef>,
    pub visible_columns: ContextMap<Vec<PropertyDef>>,
    pub facets: Option<Vec<FacetDef>>,
    pub visible_foreign_keys: ContextMap<Vec<RelationshipDef>>,
    pub table_display: ContextMap<TableDisplay>,
    pub column_display: HashMap<String, ContextMap<DisplaySpec>>,
    pub assets: HashMap<String, AssetMap>,
    pub display: Option<DisplayAnnotation>,
    pub column_names: HashMap<String, DisplayAnnotation>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidatedAnnotations {
    pub tables: HashMap<TableRef, TableAnnotations>,
    pub foreign_keys: HashMap<FkName, ForeignKeyDisplay>,
    pub schema_names: HashMap<String, DisplayAnnotation>,
    pub catalog_name: Option<DisplayAnnotation>,
    /// The role-based catalog with invalid annotation fragments removed.
    pub pruned: Catalog,
}

impl ValidatedAnnotations {
    pub fn table(&self, table: &TableRef) -> Option<&TableAnnotations> {
        self.tables.get(table)
    }
}

/// Parses the raw source-definitions payload of a table.
pub fn parse_source_definitions(table: &Table) -> (SourceDefinitions, Vec<(Option<String>, String)>) {
    let mut defs = SourceDefinitions::default();
    let mut problems = Vec::new();
    let Some(raw) = table.annotations.get(tags::SOURCE_DEFINITIONS) else {
        return (defs, problems);
    };
    let Some(obj) = raw.as_object() else {
        problems.push((None, format!("expected an object, got {raw}")));
        return (defs, problems);
    };
    for key in obj.keys() {
        if !matches!(key.as_str(), "sources" | "columns" | "fkeys") {
            problems.push((None, format!("unknown key {key:?}")));
        }
    }
    match obj.get("sources") {
        None => {}
        Some(Json::Object(sources)) => {
            for (name, def) in sources {
                match parse_pseudo_column(def) {
                    Ok(spec) if spec.source.sourcekey.is_some() => {
                        problems.push((Some(name.clone()), "definitions may not use sourcekey".into()))
                    }
                    Ok(spec) => {
                        defs.sources.insert(name.clone(), spec);
                    }
                    Err(m) => problems.push((Some(name.clone()), m)),
                }
            }
        }
        Some(other) => problems.push((None, format!("sources must be an object, got {other}"))),
    }
    (defs, problems)
}

struct Validator<'a> {
    full: &'a Catalog,
    model: &'a Catalog,
    diagnostics: Vec<Diagnostic>,
}

/// Where a diagnostic points.
#[derive(Clone)]
struct Loc<'a> {
    table: Option<String>,
    tag: &'a str,
    context: Option<String>,
    index: Option<usize>,
}

impl<'a> Loc<'a> {
    fn table(t: &TableRef, tag: &'a str) -> Self {
        Self {
            table: Some(t.to_string()),
            tag,
            context: None,
            index: None,
        }
    }

    fn ctx(&self, context: &str) -> Self {
        Self {
            context: Some(context.to_string()),
            ..self.clone()
        }
    }

    fn idx(&self, index: usize) -> Self {
        Self {
            index: Some(index),
            ..self.clone()
        }
    }
}

impl Validator<'_> {
    fn emit(&mut self, loc: &Loc<'_>, severity: Severity, message: impl Into<String>) {
        self.diagnostics.push(Diagnostic {
            severity,
            table: loc.table.clone(),
            tag: loc.tag.to_string(),
            context: loc.context.clone(),
            index: loc.index,
            message: message.into(),
        });
    }

    /// Resolution failures against the client's model are warnings when the
    /// same reference resolves in the full catalog (the target is hidden).
    fn resolve(
        &mut self,
        loc: &Loc<'_>,
        base: &TableRef,
        spec: &SourceSpec,
        defs: &SourceDefinitions,
    ) -> Option<ResolvedSource> {
        match resolve_source(self.model, base, spec, defs) {
            Ok(r) => Some(r),
            Err(e) => {
                let hidden = resolve_source(self.full, base, spec, defs).is_ok();
                self.reject(loc, hidden, e.0);
                None
            }
        }
    }

    fn reject(&mut self, loc: &Loc<'_>, hidden: bool, message: String) {
        if hidden {
            self.emit(loc, Severity::Warning, format!("{message} (hidden for this client)"));
        } else {
            self.emit(loc, Severity::Error, message);
        }
    }

    fn fkey_entry(
        &mut self,
        loc: &Loc<'_>,
        base: &TableRef,
        name: &FkName,
        direction: Direction,
    ) -> Option<ResolvedSource> {
        let f = match direction {
            Direction::Outbound => fkey_entity_source,
            Direction::Inbound => inbound_entity_source,
        };
        match f(self.model, base, name) {
            Ok(r) => Some(r),
            Err(e) => {
                let hidden = f(self.full, base, name).is_ok();
                self.reject(loc, hidden, e.0);
                None
            }
        }
    }

    /// Splits a context map payload; bad context keys are dropped.
    fn contexts<'j>(&mut self, loc: &Loc<'_>, raw: &'j Json) -> Vec<(String, &'j Json)> {
        let Some(obj) = raw.as_object() else {
            self.emit(loc, Severity::Error, format!("expected a context map, got {raw}"));
            return Vec::new();
        };
        let mut out = Vec::new();
        for (ctx, payload) in obj {
            if !is_context_name(ctx) {
                self.emit(&loc.ctx(ctx), Severity::Error, format!("invalid context name {ctx:?}"));
                continue;
            }
            let base = ctx.split('/').next().unwrap_or(ctx);
            if !CONTEXTS.contains(&base) {
                self.emit(&loc.ctx(ctx), Severity::Warning, format!("unrecognized context {ctx:?}"));
            }
            out.push((ctx.clone(), payload));
        }
        out
    }

    fn property(
        &mut self,
        loc: &Loc<'_>,
        table: &Table,
        entry: &Json,
        defs: &SourceDefinitions,
    ) -> Option<PropertyDef> {
        let base = table.table_ref();
        match entry {
            Json::String(col) => {
                let spec = SourceSpec {
                    path: Some(SourcePath::Column(col.clone())),
                    sourcekey: None,
                    aggregate: None,
                    entity: None,
                };
                let source = self.resolve(loc, &base, &spec, defs)?;
                Some(PropertyDef {
                    source,
                    fkey: None,
                    markdown_name: None,
                    comment: None,
                    display: None,
                })
            }
            Json::Array(_) => {
                let name = match fkey_name_from(entry) {
                    Ok(n) => n,
                    Err(m) => {
                        self.emit(loc, Severity::Error, m);
                        return None;
                    }
                };
                let source = self.fkey_entry(loc, &base, &name, Direction::Outbound)?;
                Some(PropertyDef {
                    source,
                    fkey: Some(name),
                    markdown_name: None,
                    comment: None,
                    display: None,
                })
            }
            Json::Object(_) => {
                let spec = match parse_pseudo_column(entry) {
                    Ok(s) => s,
                    Err(m) => {
                        self.emit(loc, Severity::Error, m);
                        return None;
                    }
                };
                let source = self.resolve(loc, &base, &spec.source, defs)?;
                let def = spec.source.sourcekey.as_ref().and_then(|k| defs.sources.get(k));
                Some(PropertyDef {
                    source,
                    fkey: None,
                    markdown_name: spec
                        .markdown_name
                        .or_else(|| def.and_then(|d| d.markdown_name.clone())),
                    comment: spec.comment.or_else(|| def.and_then(|d| d.comment.clone())),
                    display: spec.display.or_else(|| def.and_then(|d| d.display.clone())),
                })
            }
            other => {
                self.emit(loc, Severity::Error, format!("unsupported entry {other}"));
                None
            }
        }
    }

    fn facet(
        &mut self,
        loc: &Loc<'_>,
        base: &TableRef,
        entry: &Json,
        defs: &SourceDefinitions,
    ) -> Option<FacetDef> {
        let fail = |v: &mut Self, m: String| {
            v.emit(loc, Severity::Error, m);
            None
        };
        let Some(obj) = entry.as_object() else {
            return fail(self, format!("facet must be an object, got {entry}"));
        };
        let spec = match parse_pseudo_column(entry) {
            Ok(s) => s,
            Err(m) => return fail(self, m),
        };
        let mut source = self.resolve(loc, base, &spec.source, defs)?;
        // Facets filter on raw values; aggregates do not apply.
        source.aggregate = None;
        if !source.hops.is_empty() && source.entity_mode != source.hops.is_empty() {
            let end = self.model.table(source.end_table());
            source.entity_mode = end.is_some_and(|t| t.is_key_column(&source.end_column))
                && spec.source.entity != Some(false);
        }
        let ux_mode = match obj.get("ux_mode").and_then(Json::as_str) {
            None => None,
            Some("choices") => Some(UxMode::Choices),
            Some("ranges") => Some(UxMode::Ranges),
            Some("search") => Some(UxMode::Search),
            Some(other) => return fail(self, format!("unknown ux_mode {other:?}")),
        };
        if ux_mode == Some(UxMode::Ranges) && !source.end_type.is_ordinal() {
            return fail(self, format!("ranges need a numeric or temporal column, {} is {}", source.end_column, source.end_type));
        }
        if ux_mode == Some(UxMode::Search) && !source.end_type.is_textual() {
            return fail(self, format!("search needs a text column, {} is {}", source.end_column, source.end_type));
        }
        let choices = match obj.get("choices") {
            None | Some(Json::Null) => None,
            Some(Json::Array(items)) => Some(items.clone()),
            Some(other) => return fail(self, format!("choices must be a list, got {other}")),
        };
        let ranges = match obj.get("ranges") {
            None | Some(Json::Null) => None,
            Some(Json::Array(items)) => {
                let mut out = Vec::new();
                for r in items {
                    let Some(o) = r.as_object() else {
                        return fail(self, format!("range must be an object, got {r}"));
                    };
                    out.push(RangeSpec {
                        min: o.get("min").filter(|v| !v.is_null()).cloned(),
                        max: o.get("max").filter(|v| !v.is_null()).cloned(),
                    });
                }
                Some(out)
            }
            Some(other) => return fail(self, format!("ranges must be a list, got {other}")),
        };
        Some(FacetDef {
            source,
            markdown_name: spec.markdown_name.or_else(|| {
                spec.source
                    .sourcekey
                    .as_ref()
                    .and_then(|k| defs.sources.get(k))
                    .and_then(|d| d.markdown_name.clone())
            }),
            comment: spec.comment,
            ux_mode,
            choices,
            ranges,
        })
    }

    fn relationship(
        &mut self,
        loc: &Loc<'_>,
        table: &Table,
        entry: &Json,
        defs: &SourceDefinitions,
    ) -> Option<RelationshipDef> {
        let base = table.table_ref();
        if entry.is_array() {
            let name = match fkey_name_from(entry) {
                Ok(n) => n,
                Err(m) => {
                    self.emit(loc, Severity::Error, m);
                    return None;
                }
            };
            let source = self.fkey_entry(loc, &base, &name, Direction::Inbound)?;
            return Some(RelationshipDef {
                source,
                fkey: Some(name),
                markdown_name: None,
                comment: None,
                display: None,
            });
        }
        let def = self.property(loc, table, entry, defs)?;
        if !def.source.entity_mode || !def.source.multivalued || def.source.aggregate.is_some() {
            self.emit(
                loc,
                Severity::Error,
                "relationship source must end at a related entity key through an inbound path",
            );
            return None;
        }
        Some(RelationshipDef {
            source: def.source,
            fkey: None,
            markdown_name: def.markdown_name,
            comment: def.comment,
            display: def.display,
        })
    }

    fn sort_spec(&mut self, loc: &Loc<'_>, table: &Table, raw: &Json) -> Option<Vec<SortSpec>> {
        let Some(items) = raw.as_array() else {
            self.emit(loc, Severity::Error, format!("row_order must be a list, got {raw}"));
            return None;
        };
        let mut out = Vec::new();
        for item in items {
            let (column, descending) = match item {
                Json::String(c) => (c.clone(), false),
                Json::Object(o) => match (o.get("column").and_then(Json::as_str), o.get("descending")) {
                    (Some(c), None | Some(Json::Null)) => (c.to_string(), false),
                    (Some(c), Some(Json::Bool(d))) => (c.to_string(), *d),
                    _ => {
                        self.emit(loc, Severity::Error, format!("bad row_order entry {item}"));
                        return None;
                    }
                },
                _ => {
                    self.emit(loc, Severity::Error, format!("bad row_order entry {item}"));
                    return None;
                }
            };
            if table.column(&column).is_none() {
                let hidden = self
                    .full
                    .table(&table.table_ref())
                    .is_some_and(|t| t.column(&column).is_some());
                self.reject(loc, hidden, format!("row_order column {column} does not exist"));
                return None;
            }
            out.push(SortSpec { column, descending });
        }
        Some(out)
    }

    fn display_annotation(&mut self, loc: &Loc<'_>, raw: &Json) -> Option<DisplayAnnotation> {
        let Some(obj) = raw.as_object() else {
            self.emit(loc, Severity::Error, format!("expected an object, got {raw}"));
            return None;
        };
        let text = |v: &mut Self, key: &str| match opt_string(obj, key) {
            Ok(s) => s,
            Err(m) => {
                v.emit(loc, Severity::Error, m);
                None
            }
        };
        let mut out = DisplayAnnotation {
            name: text(self, "name"),
            markdown_name: text(self, "markdown_name"),
            comment: text(self, "comment"),
            name_style: NameStyle::default(),
        };
        if let Some(style) = obj.get("name_style") {
            match style.as_object() {
                Some(s) => {
                    out.name_style.underline_space = s.get("underline_space").and_then(Json::as_bool);
                    out.name_style.title_case = s.get("title_case").and_then(Json::as_bool);
                }
                None => self.emit(loc, Severity::Error, "name_style must be an object"),
            }
        }
        Some(out)
    }
}

fn drop_entries(list: &mut Json, keep: &[bool]) {
    if let Json::Array(items) = list {
        let mut i = 0;
        items.retain(|_| {
            let k = keep.get(i).copied().unwrap_or(true);
            i += 1;
            k
        });
    }
}

/// Validates every annotation visible in `model`. `full` is the unpruned
/// catalog, used to tell hidden references (warnings) from dangling ones
/// (errors). Invalid list entries are dropped one by one.
pub fn validate_annotations(full: &Catalog, model: &RoleBasedModel) -> (ValidatedAnnotations, Vec<Diagnostic>) {
    let mut v = Validator {
        full,
        model: &model.catalog,
        diagnostics: Vec::new(),
    };
    let mut out = ValidatedAnnotations {
        pruned: model.catalog.clone(),
        ..Default::default()
    };

    let generic = |v: &mut Validator<'_>, loc: Loc<'_>, annotations: &BTreeMap<String, Json>, allowed: &[&str]| {
        for tag in annotations.keys() {
            if !tags::RECOGNIZED.contains(&tag.as_str()) {
                v.emit(&Loc { tag, ..loc.clone() }, Severity::Warning, "unrecognized annotation retained as is");
            } else if !allowed.contains(&tag.as_str()) {
                v.emit(&Loc { tag, ..loc.clone() }, Severity::Warning, "annotation does not apply to this element");
            }
        }
    };

    let cat_loc = Loc {
        table: None,
        tag: tags::DISPLAY,
        context: None,
        index: None,
    };
    generic(&mut v, cat_loc.clone(), &model.catalog.annotations, &[tags::DISPLAY, tags::GENERATED, tags::IMMUTABLE]);
    if let Some(raw) = model.catalog.annotations.get(tags::DISPLAY) {
        out.catalog_name = v.display_annotation(&cat_loc, raw);
    }
    for schema in model.catalog.schemas.values() {
        let loc = Loc {
            table: Some(schema.name.clone()),
            tag: tags::DISPLAY,
            context: None,
            index: None,
        };
        generic(&mut v, loc.clone(), &schema.annotations, &[tags::DISPLAY, tags::GENERATED, tags::IMMUTABLE]);
        if let Some(raw) = schema.annotations.get(tags::DISPLAY) {
            if let Some(d) = v.display_annotation(&loc, raw) {
                out.schema_names.insert(schema.name.clone(), d);
            }
        }
    }

    for table in model.catalog.tables() {
        let tref = table.table_ref();
        let mut ta = TableAnnotations::default();
        let mut pruned_annotations = table.annotations.clone();
        generic(
            &mut v,
            Loc::table(&tref, ""),
            &table.annotations,
            &[
                tags::VISIBLE_COLUMNS,
                tags::SOURCE_DEFINITIONS,
                tags::VISIBLE_FOREIGN_KEYS,
                tags::TABLE_DISPLAY,
                tags::DISPLAY,
                tags::GENERATED,
                tags::IMMUTABLE,
            ],
        );

        // Source definitions.
        let loc = Loc::table(&tref, tags::SOURCE_DEFINITIONS);
        let (mut defs, problems) = parse_source_definitions(table);
        for (name, m) in problems {
            let m = match name {
                Some(n) => format!("source {n:?}: {m}"),
                None => m,
            };
            v.emit(&loc, Severity::Error, m);
        }
        let mut bad_defs = Vec::new();
        for (name, spec) in &defs.sources {
            if let Some(source) = v.resolve(&loc, &tref, &spec.source, &SourceDefinitions::default()) {
                ta.sources.insert(
                    name.clone(),
                    PropertyDef {
                        source: ResolvedSource {
                            sourcekey: Some(name.clone()),
                            ..source
                        },
                        fkey: None,
                        markdown_name: spec.markdown_name.clone(),
                        comment: spec.comment.clone(),
                        display: spec.display.clone(),
                    },
                );
            } else {
                bad_defs.push(name.clone());
            }
        }
        if let Some(last) = v.diagnostics.last_mut() {
            if last.tag == tags::SOURCE_DEFINITIONS && last.message.starts_with("unknown") {
                // Keep the offending definition name visible in the message.
                if let Some(name) = bad_defs.last() {
                    if !last.message.contains(name.as_str()) {
                        last.message = format!("source {name:?}: {}", last.message);
                    }
                }
            }
        }
        // Pruned definitions still resolve in the full catalog, so references
        // to them classify as hidden rather than dangling.
        let full_defs = defs.clone();
        for name in &bad_defs {
            defs.sources.shift_remove(name);
        }
        if let Some(Json::Object(obj)) = pruned_annotations.get_mut(tags::SOURCE_DEFINITIONS) {
            if let Some(Json::Object(sources)) = obj.get_mut("sources") {
                sources.retain(|k, _| ta.sources.contains_key(k));
            }
        }

        // Visible columns.
        if let Some(raw) = table.annotations.get(tags::VISIBLE_COLUMNS) {
            let loc = Loc::table(&tref, tags::VISIBLE_COLUMNS);
            let mut pruned = serde_json::Map::new();
            for (ctx, payload) in v.contexts(&loc, raw) {
                let cloc = loc.ctx(&ctx);
                if ctx == "filter" {
                    let list = match payload {
                        Json::Object(o) => o.get("and"),
                        Json::Array(_) => Some(payload),
                        _ => None,
                    };
                    let Some(Json::Array(items)) = list else {
                        v.emit(&cloc, Severity::Error, "filter context must be {\"and\": [...]} or a list");
                        continue;
                    };
                    let mut facets = Vec::new();
                    let mut keep = Vec::new();
                    for (i, item) in items.iter().enumerate() {
                        let f = with_defs(&mut v, &defs, &full_defs, |v, d| v.facet(&cloc.idx(i), &tref, item, d));
                        keep.push(f.is_some());
                        facets.extend(f);
                    }
                    let mut kept = payload.clone();
                    match &mut kept {
                        Json::Object(o) => {
                            if let Some(list) = o.get_mut("and") {
                                drop_entries(list, &keep);
                            }
                        }
                        list => drop_entries(list, &keep),
                    }
                    pruned.insert(ctx.clone(), kept);
                    ta.facets = Some(facets);
                    continue;
                }
                let Json::Array(items) = payload else {
                    v.emit(&cloc, Severity::Error, format!("expected a list, got {payload}"));
                    continue;
                };
                let mut props = Vec::new();
                let mut keep = Vec::new();
                for (i, item) in items.iter().enumerate() {
                    let p = with_defs(&mut v, &defs, &full_defs, |v, d| v.property(&cloc.idx(i), table, item, d));
                    keep.push(p.is_some());
                    props.extend(p);
                }
                let mut kept = payload.clone();
                drop_entries(&mut kept, &keep);
                pruned.insert(ctx.clone(), kept);
                ta.visible_columns.insert(ctx, props);
            }
            pruned_annotations.insert(tags::VISIBLE_COLUMNS.into(), Json::Object(pruned));
        }

        // Visible foreign keys.
        if let Some(raw) = table.annotations.get(tags::VISIBLE_FOREIGN_KEYS) {
            let loc = Loc::table(&tref, tags::VISIBLE_FOREIGN_KEYS);
            let mut pruned = serde_json::Map::new();
            for (ctx, payload) in v.contexts(&loc, raw) {
                let cloc = loc.ctx(&ctx);
                let Json::Array(items) = payload else {
                    v.emit(&cloc, Severity::Error, format!("expected a list, got {payload}"));
                    continue;
                };
                let mut rels = Vec::new();
                let mut keep = Vec::new();
                for (i, item) in items.iter().enumerate() {
                    let r = with_defs(&mut v, &defs, &full_defs, |v, d| v.relationship(&cloc.idx(i), table, item, d));
                    keep.push(r.is_some());
                    rels.extend(r);
                }
                let mut kept = payload.clone();
                drop_entries(&mut kept, &keep);
                pruned.insert(ctx.clone(), kept);
                ta.visible_foreign_keys.insert(ctx, rels);
            }
            pruned_annotations.insert(tags::VISIBLE_FOREIGN_KEYS.into(), Json::Object(pruned));
        }

        // Table display.
        if let Some(raw) = table.annotations.get(tags::TABLE_DISPLAY) {
            let loc = Loc::table(&tref, tags::TABLE_DISPLAY);
            let mut pruned = serde_json::Map::new();
            for (ctx, payload) in v.contexts(&loc, raw) {
                let cloc = loc.ctx(&ctx);
                let Json::Object(obj) = payload else {
                    v.emit(&cloc, Severity::Error, format!("expected an object, got {payload}"));
                    continue;
                };
                let mut td = TableDisplay::default();
                let mut kept = obj.clone();
                for (key, value) in obj {
                    match key.as_str() {
                        "row_markdown_pattern" => match value.as_str().map(|s| (s, Template::parse(s))) {
                            Some((s, Ok(_))) => td.row_markdown_pattern = Some(s.to_string()),
                            Some((_, Err(e))) => {
                                v.emit(&cloc, Severity::Error, format!("row_markdown_pattern: {e}"));
                                kept.remove(key);
                            }
                            None => {
                                v.emit(&cloc, Severity::Error, "row_markdown_pattern must be text");
                                kept.remove(key);
                            }
                        },
                        "row_order" => match v.sort_spec(&cloc, table, value) {
                            Some(s) => td.row_order = Some(s),
                            None => {
                                kept.remove(key);
                            }
                        },
                        "page_size" => match value.as_u64() {
                            Some(n) => td.page_size = Some(n as usize),
                            None => {
                                v.emit(&cloc, Severity::Error, "page_size must be a non-negative integer");
                                kept.remove(key);
                            }
                        },
                        other => v.emit(&cloc, Severity::Warning, format!("unknown key {other:?}")),
                    }
                }
                pruned.insert(ctx.clone(), Json::Object(kept));
                ta.table_display.insert(ctx, td);
            }
            pruned_annotations.insert(tags::TABLE_DISPLAY.into(), Json::Object(pruned));
        }

        if let Some(raw) = table.annotations.get(tags::DISPLAY) {
            ta.display = v.display_annotation(&Loc::table(&tref, tags::DISPLAY), raw);
        }

        // Column annotations.
        let mut pruned_columns = Vec::new();
        for col in &table.columns {
            let mut col_annotations = col.annotations.clone();
            let cloc = |tag| Loc {
                table: Some(format!("{tref}.{}", col.name)),
                tag,
                context: None,
                index: None,
            };
            generic(
                &mut v,
                cloc(""),
                &col.annotations,
                &[tags::COLUMN_DISPLAY, tags::ASSET, tags::REQUIRED, tags::DISPLAY, tags::GENERATED, tags::IMMUTABLE],
            );
            if let Some(raw) = col.annotations.get(tags::COLUMN_DISPLAY) {
                let loc = cloc(tags::COLUMN_DISPLAY);
                let mut map = ContextMap::new();
                let mut pruned = serde_json::Map::new();
                for (ctx, payload) in v.contexts(&loc, raw) {
                    let ploc = loc.ctx(&ctx);
                    match payload.as_object().map(parse_display_object) {
                        Some(Ok(d)) => {
                            map.insert(ctx.clone(), d);
                            pruned.insert(ctx, payload.clone());
                        }
                        Some(Err(m)) => v.emit(&ploc, Severity::Error, m),
                        None => v.emit(&ploc, Severity::Error, format!("expected an object, got {payload}")),
                    }
                }
                col_annotations.insert(tags::COLUMN_DISPLAY.into(), Json::Object(pruned));
                ta.column_display.insert(col.name.clone(), map);
            }
            if let Some(raw) = col.annotations.get(tags::ASSET) {
                let loc = cloc(tags::ASSET);
                match raw.as_object() {
                    Some(obj) => {
                        let mut asset = AssetMap {
                            url: col.name.clone(),
                            filename: None,
                            byte_count: None,
                            checksum: None,
                        };
                        let mut kept = obj.clone();
                        for (key, value) in obj {
                            let slot = match key.as_str() {
                                "filename_column" => &mut asset.filename,
                                "byte_count_column" => &mut asset.byte_count,
                                "md5" | "sha256" => &mut asset.checksum,
                                other => {
                                    v.emit(&loc, Severity::Warning, format!("unknown key {other:?}"));
                                    continue;
                                }
                            };
                            match value.as_str() {
                                Some(c) if table.column(c).is_some() => *slot = Some(c.to_string()),
                                Some(c) => {
                                    let hidden = full
                                        .table(&tref)
                                        .is_some_and(|t| t.column(c).is_some());
                                    v.reject(&loc, hidden, format!("{key}: unknown column {c}"));
                                    kept.remove(key);
                                }
                                None => {
                                    v.emit(&loc, Severity::Error, format!("{key} must name a column"));
                                    kept.remove(key);
                                }
                            }
                        }
                        col_annotations.insert(tags::ASSET.into(), Json::Object(kept));
                        ta.assets.insert(col.name.clone(), asset);
                    }
                    None => v.emit(&loc, Severity::Error, format!("expected an object, got {raw}")),
                }
            }
            if let Some(raw) = col.annotations.get(tags::DISPLAY) {
                if let Some(d) = v.display_annotation(&cloc(tags::DISPLAY), raw) {
                    ta.column_names.insert(col.name.clone(), d);
                }
            }
            pruned_columns.push(col_annotations);
        }

        // Foreign keys held by this table.
        let mut pruned_fkeys = Vec::new();
        for fk in &table.foreign_keys {
            let mut fk_annotations = fk.annotations.clone();
            let loc = Loc {
                table: Some(tref.to_string()),
                tag: tags::FOREIGN_KEY,
                context: None,
                index: None,
            };
            generic(&mut v, Loc { tag: "", ..loc.clone() }, &fk.annotations, &[tags::FOREIGN_KEY]);
            if let Some(raw) = fk.annotations.get(tags::FOREIGN_KEY) {
                match raw.as_object() {
                    Some(obj) => {
                        let mut fd = ForeignKeyDisplay::default();
                        let mut kept = obj.clone();
                        for (key, value) in obj {
                            match key.as_str() {
                                "to_name" | "from_name" => match value.as_str() {
                                    Some(s) if key == "to_name" => fd.to_name = Some(s.to_string()),
                                    Some(s) => fd.from_name = Some(s.to_string()),
                                    None => {
                                        v.emit(&loc, Severity::Error, format!("{key} must be text"));
                                        kept.remove(key);
                                    }
                                },
                                "selection_filter" => {
                                    let Json::Array(items) = value else {
                                        v.emit(&loc, Severity::Error, "selection_filter must be a list");
                                        kept.remove(key);
                                        continue;
                                    };
                                    let target = fk.to_table();
                                    let target_defs = model
                                        .catalog
                                        .table(&target)
                                        .map(|t| parse_source_definitions(t).0)
                                        .unwrap_or_default();
                                    let mut keep = Vec::new();
                                    for (i, item) in items.iter().enumerate() {
                                        let f = v.facet(&loc.ctx("selection_filter").idx(i), &target, item, &target_defs);
                                        keep.push(f.is_some());
                                        fd.selection_filter.extend(f);
                                    }
                                    if let Some(list) = kept.get_mut(key) {
                                        drop_entries(list, &keep);
                                    }
                                }
                                other => v.emit(&loc, Severity::Warning, format!("unknown key {other:?}")),
                            }
                        }
                        fk_annotations.insert(tags::FOREIGN_KEY.into(), Json::Object(kept));
                        out.foreign_keys.insert(fk.name.clone(), fd);
                    }
                    None => v.emit(&loc, Severity::Error, format!("expected an object, got {raw}")),
                }
            }
            pruned_fkeys.push(fk_annotations);
        }

        if let Some(t) = out.pruned.table_mut(&tref) {
            t.annotations = pruned_annotations;
            for (col, ann) in t.columns.iter_mut().zip(pruned_columns) {
                col.annotations = ann;
            }
            for (fk, ann) in t.foreign_keys.iter_mut().zip(pruned_fkeys) {
                fk.annotations = ann;
            }
        }
        out.tables.insert(tref, ta);
    }

    (out, v.diagnostics)
}

/// Runs `f` against the client's definitions; when it fails only because a
/// definition was pruned, the resulting diagnostic is downgraded to a
/// warning.
fn with_defs<T>(
    v: &mut Validator<'_>,
    defs: &SourceDefinitions,
    full_defs: &SourceDefinitions,
    f: impl Fn(&mut Validator<'_>, &SourceDefinitions) -> Option<T>,
) -> Option<T> {
    let before = v.diagnostics.len();
    let out = f(v, defs);
    if out.is_none() && v.diagnostics.len() > before {
        let last = v.diagnostics.len() - 1;
        if v.diagnostics[last].severity == Severity::Error && defs.sources.len() != full_defs.sources.len() {
            // Re-run against the unpruned definitions to see whether only
            // the definition's visibility was at fault.
            let probe_len = v.diagnostics.len();
            let retry = {
                let model = v.model;
                v.model = v.full;
                let r = f(v, full_defs);
                v.model = model;
                r
            };
            v.diagnostics.truncate(probe_len);
            if retry.is_some() {
                let d = &mut v.diagnostics[last];
                d.severity = Severity::Warning;
                d.message = format!("{} (hidden for this client)", d.message);
            }
        }
    }
    out
}

fn parse_display_object(obj: &serde_json::Map<String, Json>) -> Result<DisplaySpec, String> {
    let pattern = opt_string(obj, "markdown_pattern")?
        .ok_or_else(|| "markdown_pattern is required".to_string())?;
    Template::parse(&pattern).map_err(|e| format!("markdown_pattern: {e}"))?;
    Ok(DisplaySpec {
        markdown_pattern: pattern,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_catalog;
    use crate::policy::{prune_model, ClientContext};
    use serde_json::json;

    fn map(entries: &[(&str, i32)]) -> ContextMap<i32> {
        entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn context_fallback_order() {
        let m = map(&[("entry", 1), ("*", 2)]);
        assert_eq!(resolve_context(&m, "entry/create"), Some(&1));
        assert_eq!(resolve_context(&m, "detailed"), Some(&2));
        assert_eq!(resolve_context(&map(&[("compact", 3)]), "filter"), None);
        assert_eq!(resolve_context(&map(&[("entry/edit", 4), ("entry", 5)]), "entry/edit"), Some(&4));
    }

    #[test]
    fn context_grammar() {
        for ok in ["*", "detailed", "entry/create", "compact/brief", "row_name"] {
            assert!(is_context_name(ok), "{ok}");
        }
        for bad in ["", "Entry", "a/b/c", "/x", "x/", "**"] {
            assert!(!is_context_name(bad), "{bad}");
        }
    }

    fn catalog() -> Catalog {
        let doc = json!({
            "owners": ["admin"],
            "acls": {"enumerate": ["*"], "select": ["*"]},
            "schemas": {"S": {"tables": {
                "A": {
                    "columns": [{"name": "Title", "type": "text"}, {"name": "Secret", "type": "text", "acls": {"select": ["curator"]}}],
                    "annotations": {
                        "tag:isrd.isi.edu,2019:source-definitions": {"sources": {
                            "bs": {"source": [{"inbound": ["S", "B_A_fkey"]}, "Label"], "aggregate": "array_d"},
                            "secret": {"source": "Secret"}
                        }},
                        "tag:isrd.isi.edu,2016:visible-columns": {
                            "compact": ["Title", {"sourcekey": "bs"}, {"sourcekey": "nope"}, "Secret", {"sourcekey": "secret"}]
                        }
                    }
                },
                "B": {
                    "columns": [{"name": "A", "type": "text"}, {"name": "Label", "type": "text"}],
                    "foreign_keys": [{"name": ["S", "B_A_fkey"], "from_columns": ["A"], "to": {"schema": "S", "table": "A", "columns": ["RID"]}}]
                }
            }}}
        });
        parse_catalog(doc.to_string().as_bytes()).unwrap()
    }

    #[test]
    fn resolves_paths_and_entity_mode() {
        let c = catalog();
        let base = TableRef::new("S", "A");
        let (defs, _) = parse_source_definitions(c.table(&base).unwrap());
        let spec = SourceSpec {
            path: None,
            sourcekey: Some("bs".into()),
            aggregate: None,
            entity: None,
        };
        let r = resolve_source(&c, &base, &spec, &defs).unwrap();
        assert_eq!(r.hops.len(), 1);
        assert!(r.multivalued);
        assert!(!r.entity_mode);
        assert_eq!(r.aggregate, Some(Aggregate::ArrayD));
        assert_eq!(r.hops[0].from_columns, vec!["RID".to_string()]);
        assert_eq!(r.hops[0].to_columns, vec!["A".to_string()]);

        let ent = inbound_entity_source(&c, &base, &FkName::new("S", "B_A_fkey")).unwrap();
        assert!(ent.entity_mode);

        let bare = SourceSpec {
            path: Some(SourcePath::Column("Title".into())),
            sourcekey: None,
            aggregate: None,
            entity: None,
        };
        let r = resolve_source(&c, &base, &bare, &defs).unwrap();
        assert!(r.hops.is_empty() && !r.entity_mode && !r.multivalued);

        let wrong_way = SourceSpec {
            path: Some(parse_source_path(&json!([{"outbound": ["S", "B_A_fkey"]}, "Label"])).unwrap()),
            sourcekey: None,
            aggregate: None,
            entity: None,
        };
        assert!(resolve_source(&c, &base, &wrong_way, &defs).is_err());
    }

    #[test]
    fn malformed_entries() {
        assert!(parse_pseudo_column(&json!({"source": "A", "aggregate": "cnt"})).is_err());
        assert!(parse_pseudo_column(&json!({"source": "A", "sourcekey": "k"})).is_err());
        assert!(parse_pseudo_column(&json!({"markdown_name": "x"})).is_err());
        assert!(parse_pseudo_column(&json!({"source": [{"sideways": ["S", "f"]}, "A"]})).is_err());
        assert!(parse_pseudo_column(&json!({"source": "A", "display": {"markdown_pattern": "{{#a}}"}})).is_err());
        assert!(parse_pseudo_column(&json!({"source": "A", "aggregate": "median"})).is_err());
    }

    #[test]
    fn hidden_references_warn_and_dangling_ones_fail() {
        let c = catalog();
        let curator = prune_model(&c, &ClientContext::new("c", ["curator"]));
        let (va, diags) = validate_annotations(&c, &curator);
        let errors: Vec<_> = diags.iter().filter(|d| d.severity == Severity::Error).collect();
        assert_eq!(errors.len(), 1, "{diags:?}");
        assert!(errors[0].message.contains("nope"));
        assert_eq!(errors[0].index, Some(2));
        let compact = &va.table(&TableRef::new("S", "A")).unwrap().visible_columns["compact"];
        assert_eq!(compact.len(), 4);

        let anon = prune_model(&c, &ClientContext::anonymous());
        let (va, diags) = validate_annotations(&c, &anon);
        let compact = &va.table(&TableRef::new("S", "A")).unwrap().visible_columns["compact"];
        assert_eq!(compact.len(), 2);
        let warnings = diags.iter().filter(|d| d.severity == Severity::Warning).count();
        let errors = diags.iter().filter(|d| d.severity == Severity::Error).count();
        assert_eq!(errors, 1, "{diags:?}");
        assert!(warnings >= 2, "{diags:?}");
        let raw = &va.pruned.table(&TableRef::new("S", "A")).unwrap().annotations[tags::VISIBLE_COLUMNS]["compact"];
        assert_eq!(raw.as_array().unwrap().len(), 2);
    }

    #[test]
    fn diagnostic_line_format() {
        let d = Diagnostic {
            severity: Severity::Error,
            table: Some("S:A".into()),
            tag: tags::VISIBLE_COLUMNS.into(),
            context: Some("compact".into()),
            index: Some(2),
            message: "unknown sourcekey \"nope\"".into(),
        };
        assert_eq!(
            d.to_string(),
            "ERROR table=S:A tag=tag:isrd.isi.edu,2016:visible-columns context=compact idx=2 msg=unknown sourcekey \"nope\""
        );
    }
}
