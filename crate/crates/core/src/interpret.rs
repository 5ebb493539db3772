//! Entity-relationship interpretation of a table for a presentation context:
//! properties, relationships, facets, row name and sort.

use serde::Serialize;
use serde_json::Value as Json;

use crate::annotation::{
    fkey_entity_source, inbound_entity_source, is_context_name, resolve_context, resolve_source, FkHop, SourcePath, SourceSpec, AssetMap, Direction, DisplayAnnotation, FacetDef,
    PropertyDef, RangeSpec, RelationshipDef, ResolvedSource, SortSpec, TableAnnotations, UxMode, ValidatedAnnotations,
};
use crate::model::{is_system_column, Column, FkName, Table, TableRef, RID, SYSTEM_COLUMNS};
use crate::policy::RoleBasedModel;
use crate::render::format_value;
use crate::storage::{Row, Value};
use crate::tags;

pub const ENTITY_PAGE_SIZE: usize = 25;
pub const RELATED_PAGE_SIZE: usize = 10;
pub const FACET_PAGE_SIZE: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("table {0} is not visible")]
    TableNotVisible(TableRef),
    #[error("invalid context {0:?}")]
    InvalidContext(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyKind {
    Scalar,
    EntityRef,
    Pseudo,
    Asset,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertySpec {
    /// Stable key for result rows: column name, fkey constraint name, or
    /// sourcekey.
    pub name: String,
    pub kind: PropertyKind,
    pub source: ResolvedSource,
    pub display_name: String,
    pub tooltip: Option<String>,
    pub input_disabled: bool,
    pub required: bool,
    pub display: Option<String>,
    pub asset_map: Option<AssetMap>,
}

impl PropertySpec {
    /// Base-table columns this property reads or writes directly.
    pub fn local_columns(&self) -> Vec<String> {
        match self.kind {
            PropertyKind::Scalar | PropertyKind::Asset => vec![self.source.end_column.clone()],
            PropertyKind::EntityRef => self.source.hops[0].from_columns.clone(),
            PropertyKind::Pseudo => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssociationSpec {
    pub table: TableRef,
    pub other_fkey: FkName,
    pub other_table: TableRef,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationshipSpec {
    pub name: String,
    pub via: ResolvedSource,
    pub association: Option<AssociationSpec>,
    pub tooltip: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FacetKind {
    Choice,
    Range,
    TextSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FacetSpec {
    pub source: ResolvedSource,
    pub display_name: String,
    pub kind: FacetKind,
    pub preselected: Option<Vec<Json>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preselected_ranges: Option<Vec<RangeSpec>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TablePlan {
    pub table: TableRef,
    pub context: String,
    pub display_name: String,
    pub properties: Vec<PropertySpec>,
    pub relationships: Vec<RelationshipSpec>,
    pub facets: Vec<FacetSpec>,
    pub row_name: String,
    pub sort: Vec<SortSpec>,
    pub page_size: usize,
}

fn is_entry(context: &str) -> bool {
    context == "entry" || context.starts_with("entry/")
}

fn style_chain<'a>(
    validated: &'a ValidatedAnnotations,
    table: &TableRef,
    column: Option<&str>,
) -> impl Iterator<Item = &'a DisplayAnnotation> {
    let ta = validated.table(table);
    let col = column.and_then(|c| ta.and_then(|t| t.column_names.get(c)));
    col.into_iter()
        .chain(ta.and_then(|t| t.display.as_ref()))
        .chain(validated.schema_names.get(&table.schema))
        .chain(validated.catalog_name.as_ref())
}

fn styled(raw: &str, validated: &ValidatedAnnotations, table: &TableRef, column: Option<&str>) -> String {
    let underline = style_chain(validated, table, column)
        .find_map(|d| d.name_style.underline_space)
        .unwrap_or(true);
    let title = style_chain(validated, table, column)
        .find_map(|d| d.name_style.title_case)
        .unwrap_or(false);
    let mut name = if underline { raw.replace('_', " ") } else { raw.to_string() };
    if title {
        name = name
            .split(' ')
            .map(|w| {
                let mut c = w.chars();
                match c.next() {
                    Some(f) => f.to_uppercase().chain(c).collect(),
                    None => String::new(),
                }
            })
            .collect::<Vec<String>>()
            .join(" ");
    }
    name
}

/// Display name of a table, or of one of its columns.
pub fn display_name(validated: &ValidatedAnnotations, table: &TableRef, column: Option<&str>) -> String {
    let own = match column {
        Some(c) => validated.table(table).and_then(|t| t.column_names.get(c)),
        None => validated.table(table).and_then(|t| t.display.as_ref()),
    };
    if let Some(name) = own.and_then(|d| d.markdown_name.clone().or_else(|| d.name.clone())) {
        return name;
    }
    styled(column.unwrap_or(&table.table), validated, table, column)
}

fn comment_of(validated: &ValidatedAnnotations, table: &Table, column: Option<&Column>) -> Option<String> {
    let ta = validated.table(&table.table_ref());
    match column {
        Some(c) => ta
            .and_then(|t| t.column_names.get(&c.name))
            .and_then(|d| d.comment.clone())
            .or_else(|| c.comment.clone()),
        None => ta
            .and_then(|t| t.display.as_ref())
            .and_then(|d| d.comment.clone())
            .or_else(|| table.comment.clone()),
    }
}

/// Row-name template: annotation, then a title/name/accession column, then
/// the shortest key.
pub fn row_name_template(table: &Table, validated: &ValidatedAnnotations) -> String {
    if let Some(pattern) = validated
        .table(&table.table_ref())
        .and_then(|t| resolve_context(&t.table_display, "row_name"))
        .and_then(|d| d.row_markdown_pattern.clone())
    {
        return pattern;
    }
    for wanted in ["title", "name", "accession_number"] {
        if let Some(c) = table.columns.iter().find(|c| c.name.eq_ignore_ascii_case(wanted)) {
            return format!("{{{{{{{}}}}}}}", c.name);
        }
    }
    let key = table
        .shortest_key()
        .map(|k| k.columns.clone())
        .unwrap_or_else(|| vec![RID.to_string()]);
    key.iter()
        .map(|c| format!("{{{{{{{c}}}}}}}"))
        .collect::<Vec<_>>()
        .join(":")
}

/// Template bindings for one row: formatted values under the column name,
/// raw JSON values under `_column`.
pub fn row_bindings(table: &Table, row: &Row) -> serde_json::Map<String, Json> {
    let mut out = serde_json::Map::new();
    for col in &table.columns {
        let v = row.get(&col.name).cloned().unwrap_or(Value::Null);
        let formatted = if v.is_null() {
            Json::Null
        } else {
            Json::from(format_value(&v, col.ty))
        };
        out.insert(col.name.clone(), formatted);
        out.insert(format!("_{}", col.name), v.to_json());
    }
    out
}

/// Property kind for a validated entry.
fn kind_of(def: &PropertyDef, ta: Option<&TableAnnotations>) -> PropertyKind {
    let s = &def.source;
    if s.hops.is_empty() {
        if ta.is_some_and(|t| t.assets.contains_key(&s.end_column)) {
            PropertyKind::Asset
        } else {
            PropertyKind::Scalar
        }
    } else if s.hops.len() == 1
        && s.hops[0].direction == Direction::Outbound
        && s.entity_mode
        && s.aggregate.is_none()
    {
        PropertyKind::EntityRef
    } else {
        PropertyKind::Pseudo
    }
}

struct Interpreter<'a> {
    model: &'a RoleBasedModel,
    validated: &'a ValidatedAnnotations,
    table: &'a Table,
    ta: Option<&'a TableAnnotations>,
    context: &'a str,
}

impl Interpreter<'_> {
    fn column_disabled(&self, column: &Column) -> bool {
        if !is_entry(self.context) {
            return true;
        }
        let tref = self.table.table_ref();
        let rights = self.model.column_rights(&tref, &column.name).unwrap_or_default();
        if is_system_column(&column.name) || tags::is_generated(self.table, column) {
            return true;
        }
        if self.context == "entry/edit" {
            !rights.update || tags::is_immutable(self.table, column)
        } else if self.context == "entry/create" || self.context == "entry" {
            !rights.insert
        } else {
            !(rights.insert || rights.update)
        }
    }

    fn column_required(&self, column: &Column) -> bool {
        !is_system_column(&column.name) && (!column.nullable || tags::is_required(column))
    }

    fn property(&self, def: &PropertyDef) -> PropertySpec {
        let kind = kind_of(def, self.ta);
        let tref = self.table.table_ref();
        let s = &def.source;
        let (name, fallback_name, tooltip, disabled, required) = match kind {
            PropertyKind::Scalar | PropertyKind::Asset => {
                let col = self.table.column(&s.end_column).expect("resolved against this model");
                (
                    col.name.clone(),
                    display_name(self.validated, &tref, Some(&col.name)),
                    comment_of(self.validated, self.table, Some(col)),
                    self.column_disabled(col),
                    self.column_required(col),
                )
            }
            PropertyKind::EntityRef => {
                let hop = &s.hops[0];
                let cols: Vec<&Column> = hop
                    .from_columns
                    .iter()
                    .filter_map(|c| self.table.column(c))
                    .collect();
                let fk_display = self.validated.foreign_keys.get(&hop.fkey_name);
                let target = &hop.to_table;
                (
                    hop.fkey_name.1.clone(),
                    fk_display
                        .and_then(|d| d.to_name.clone())
                        .unwrap_or_else(|| display_name(self.validated, target, None)),
                    self.model
                        .table(target)
                        .and_then(|t| comment_of(self.validated, t, None)),
                    cols.iter().any(|c| self.column_disabled(c)),
                    cols.iter().any(|c| self.column_required(c)),
                )
            }
            PropertyKind::Pseudo => {
                let name = s.sourcekey.clone().unwrap_or_else(|| pseudo_name(s));
                let fallback = if s.entity_mode {
                    display_name(self.validated, s.end_table(), None)
                } else {
                    display_name(self.validated, s.end_table(), Some(&s.end_column))
                };
                (name, fallback, None, true, false)
            }
        };
        let display = def.display.as_ref().map(|d| d.markdown_pattern.clone()).or_else(|| {
            if matches!(kind, PropertyKind::Scalar | PropertyKind::Asset) {
                self.ta
                    .and_then(|t| t.column_display.get(&s.end_column))
                    .and_then(|m| resolve_context(m, self.context))
                    .map(|d| d.markdown_pattern.clone())
            } else {
                None
            }
        });
        PropertySpec {
            name,
            kind,
            source: s.clone(),
            display_name: def.markdown_name.clone().unwrap_or(fallback_name),
            tooltip: def.comment.clone().or(tooltip),
            input_disabled: disabled,
            required,
            display,
            asset_map: if kind == PropertyKind::Asset {
                self.ta.and_then(|t| t.assets.get(&s.end_column).cloned())
            } else {
                None
            },
        }
    }

    /// All columns in model order, outbound fkeys folded into one entity
    /// reference at their first column, system columns last.
    fn heuristic_properties(&self) -> Vec<PropertyDef> {
        let tref = self.table.table_ref();
        let mut defs = Vec::new();
        let mut suppressed = std::collections::HashSet::new();
        let fkeys: Vec<_> = self
            .table
            .foreign_keys
            .iter()
            .filter(|fk| !fk.from_columns.iter().any(|c| is_system_column(c)))
            .collect();
        let bare = |c: &Column| PropertyDef {
            source: resolve_source(
                &self.model.catalog,
                &tref,
                &SourceSpec {
                    path: Some(SourcePath::Column(c.name.clone())),
                    sourcekey: None,
                    aggregate: None,
                    entity: None,
                },
                &Default::default(),
            )
            .expect("visible column resolves"),
            fkey: None,
            markdown_name: None,
            comment: None,
            display: None,
        };
        for col in self.table.columns.iter().filter(|c| !is_system_column(&c.name)) {
            if suppressed.contains(&col.name) {
                continue;
            }
            let starts: Vec<_> = fkeys
                .iter()
                .filter(|fk| fk.from_columns.first() == Some(&col.name))
                .collect();
            if starts.is_empty() {
                if fkeys.iter().any(|fk| fk.from_columns.contains(&col.name)) {
                    // A later constituent of a composite key, shown with it.
                    continue;
                }
                defs.push(bare(col));
                continue;
            }
            for fk in starts {
                if let Ok(source) = fkey_entity_source(&self.model.catalog, &tref, &fk.name) {
                    suppressed.extend(fk.from_columns.iter().cloned());
                    defs.push(PropertyDef {
                        source,
                        fkey: Some(fk.name.clone()),
                        markdown_name: None,
                        comment: None,
                        display: None,
                    });
                }
            }
        }
        if !is_entry(self.context) {
            for (name, _) in SYSTEM_COLUMNS {
                if let Some(c) = self.table.column(name) {
                    defs.push(bare(c));
                }
            }
        }
        defs
    }

    fn properties(&self) -> Vec<PropertySpec> {
        let annotated = self.ta.and_then(|t| resolve_context(&t.visible_columns, self.context));
        let defs = match annotated {
            Some(list) => list.clone(),
            None => self.heuristic_properties(),
        };
        let mut out: Vec<PropertySpec> = defs.iter().map(|d| self.property(d)).collect();
        if is_entry(self.context) {
            out.retain(|p| {
                p.kind != PropertyKind::Pseudo && !p.local_columns().iter().any(|c| is_system_column(c))
            });
        }
        out
    }

    fn association(&self, via: &ResolvedSource) -> Option<(AssociationSpec, ResolvedSource)> {
        if via.hops.len() != 1 || via.hops[0].direction != Direction::Inbound {
            return None;
        }
        let middle = self.model.table(&via.hops[0].to_table)?;
        let payload: Vec<&str> = middle
            .columns
            .iter()
            .filter(|c| !is_system_column(&c.name))
            .map(|c| c.name.as_str())
            .collect();
        if middle.foreign_keys.len() != 2 {
            return None;
        }
        let mut covered: Vec<&str> = middle
            .foreign_keys
            .iter()
            .flat_map(|fk| fk.from_columns.iter().map(String::as_str))
            .collect();
        covered.sort_unstable();
        covered.dedup();
        let mut sorted = payload.clone();
        sorted.sort_unstable();
        if covered != sorted {
            return None;
        }
        let other = middle
            .foreign_keys
            .iter()
            .find(|fk| fk.name != via.hops[0].fkey_name)?;
        let mut extended = resolve_source(
            &self.model.catalog,
            &via.base_table,
            &SourceSpec {
                path: Some(SourcePath::Path {
                    hops: vec![
                        FkHop {
                            direction: Direction::Inbound,
                            fkey_name: via.hops[0].fkey_name.clone(),
                        },
                        FkHop {
                            direction: Direction::Outbound,
                            fkey_name: other.name.clone(),
                        },
                    ],
                    end: RID.to_string(),
                }),
                sourcekey: None,
                aggregate: None,
                entity: None,
            },
            &Default::default(),
        )
        .ok()?;
        extended.sourcekey = via.sourcekey.clone();
        Some((
            AssociationSpec {
                table: middle.table_ref(),
                other_fkey: other.name.clone(),
                other_table: other.to_table(),
            },
            extended,
        ))
    }

    fn relationship(&self, def: &RelationshipDef) -> RelationshipSpec {
        let assoc = self.association(&def.source);
        let first = &def.source.hops[0];
        let fk_name = self
            .validated
            .foreign_keys
            .get(&first.fkey_name)
            .and_then(|d| d.from_name.clone());
        let (via, association) = match assoc {
            Some((a, v)) => (v, Some(a)),
            None => (def.source.clone(), None),
        };
        let heuristic = display_name(self.validated, via.end_table(), None);
        RelationshipSpec {
            name: def.markdown_name.clone().or(fk_name).unwrap_or(heuristic),
            via,
            association,
            tooltip: def.comment.clone(),
        }
    }

    fn relationships(&self) -> Vec<RelationshipSpec> {
        let tref = self.table.table_ref();
        let defs: Vec<RelationshipDef> = match self
            .ta
            .and_then(|t| resolve_context(&t.visible_foreign_keys, "detailed"))
        {
            Some(list) => list.clone(),
            None => self
                .model
                .catalog
                .inbound_foreign_keys(&tref)
                .filter_map(|fk| {
                    inbound_entity_source(&self.model.catalog, &tref, &fk.name)
                        .ok()
                        .map(|source| RelationshipDef {
                            source,
                            fkey: Some(fk.name.clone()),
                            markdown_name: None,
                            comment: None,
                            display: None,
                        })
                })
                .collect(),
        };
        defs.iter().map(|d| self.relationship(d)).collect()
    }

    fn facet(&self, def: &FacetDef) -> FacetSpec {
        let s = &def.source;
        let kind = match def.ux_mode {
            Some(UxMode::Ranges) => FacetKind::Range,
            Some(UxMode::Search) => FacetKind::TextSearch,
            Some(UxMode::Choices) => FacetKind::Choice,
            None if s.entity_mode => FacetKind::Choice,
            None if s.end_type.is_ordinal() => FacetKind::Range,
            None => FacetKind::Choice,
        };
        let fallback = if s.entity_mode {
            display_name(self.validated, s.end_table(), None)
        } else {
            display_name(self.validated, s.end_table(), Some(&s.end_column))
        };
        FacetSpec {
            source: s.clone(),
            display_name: def.markdown_name.clone().unwrap_or(fallback),
            kind,
            preselected: def.choices.clone(),
            preselected_ranges: def.ranges.clone(),
        }
    }

    fn default_facets(&self) -> Vec<FacetSpec> {
        let detailed = Interpreter {
            context: "detailed",
            ..*self
        };
        let mut out: Vec<FacetSpec> = Vec::new();
        let mut push = |mut source: ResolvedSource, display_name: String| {
            source.aggregate = None;
            if source.hops.is_empty() && is_system_column(&source.end_column) {
                return;
            }
            if out.iter().any(|f| f.source.same_path(&source)) {
                return;
            }
            let kind = if source.entity_mode || !source.end_type.is_ordinal() {
                FacetKind::Choice
            } else {
                FacetKind::Range
            };
            out.push(FacetSpec {
                source,
                display_name,
                kind,
                preselected: None,
                preselected_ranges: None,
            });
        };
        for p in detailed.properties() {
            let mut source = p.source.clone();
            if !source.hops.is_empty() && source.aggregate.is_some() {
                // An aggregate over a key becomes an entity facet once the
                // aggregate is dropped.
                source.entity_mode = self
                    .model
                    .table(source.end_table())
                    .is_some_and(|t| t.is_key_column(&source.end_column));
            }
            push(source, p.display_name);
        }
        for r in detailed.relationships() {
            push(r.via, r.name);
        }
        out
    }

    fn facets(&self) -> Vec<FacetSpec> {
        match self.ta.and_then(|t| t.facets.as_ref()) {
            Some(list) => list.iter().map(|f| self.facet(f)).collect(),
            None => self.default_facets(),
        }
    }

    fn sort(&self) -> Vec<SortSpec> {
        if let Some(order) = self
            .ta
            .and_then(|t| resolve_context(&t.table_display, self.context))
            .and_then(|d| d.row_order.clone())
        {
            return order;
        }
        let key = self
            .table
            .shortest_key()
            .map(|k| k.columns.clone())
            .unwrap_or_else(|| vec![RID.to_string()]);
        key.into_iter()
            .map(|column| SortSpec {
                column,
                descending: false,
            })
            .collect()
    }

    fn page_size(&self) -> usize {
        self.ta
            .and_then(|t| resolve_context(&t.table_display, self.context))
            .and_then(|d| d.page_size)
            .unwrap_or(match self.context {
                "compact/brief" => RELATED_PAGE_SIZE,
                "filter" => FACET_PAGE_SIZE,
                _ => ENTITY_PAGE_SIZE,
            })
    }
}

/// Stable name for a pseudo-column without a sourcekey.
pub fn pseudo_name(source: &ResolvedSource) -> String {
    let mut parts: Vec<String> = source.hops.iter().map(|h| h.fkey_name.1.clone()).collect();
    parts.push(source.end_column.clone());
    if let Some(a) = source.aggregate {
        parts.push(a.to_string());
    }
    parts.join(".")
}

/// Presentation plan for `table` in `context`.
pub fn plan(
    table: &TableRef,
    context: &str,
    model: &RoleBasedModel,
    validated: &ValidatedAnnotations,
) -> Result<TablePlan, PlanError> {
    if !is_context_name(context) || context == "*" {
        return Err(PlanError::InvalidContext(context.to_string()));
    }
    let t = model
        .table(table)
        .ok_or_else(|| PlanError::TableNotVisible(table.clone()))?;
    let interp = Interpreter {
        model,
        validated,
        table: t,
        ta: validated.table(table),
        context,
    };
    let properties = if context == "filter" {
        Vec::new()
    } else {
        interp.properties()
    };
    Ok(TablePlan {
        table: table.clone(),
        context: context.to_string(),
        display_name: display_name(validated, table, None),
        properties,
        relationships: if context == "detailed" {
            interp.relationships()
        } else {
            Vec::new()
        },
        facets: if context == "filter" { interp.facets() } else { Vec::new() },
        row_name: row_name_template(t, validated),
        sort: interp.sort(),
        page_size: interp.page_size(),
    })
}
