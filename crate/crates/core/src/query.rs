//! Compiles presentation requests into storage query plans. Every table
//! instance a plan touches carries the client's row predicate.

use serde_json::Value as Json;

use crate::annotation::{resolve_source, FacetDef, ResolvedSource, SortSpec, SourcePath, SourceSpec, ValidatedAnnotations};
use crate::interpret::{plan as table_plan, FacetKind, PlanError, PropertyKind, PropertySpec, RelationshipSpec, FACET_PAGE_SIZE, RELATED_PAGE_SIZE};
use crate::model::{FkName, TableRef, RID};
use crate::policy::RoleBasedModel;
use crate::render::render_template;
use crate::storage::{
    ColumnRef, Grouping, Join, JoinKind, Page, Predicate, Projection, QueryPlan, SortKey, Value,
};

/// One facet's selection.
#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    /// Any of the values; `Value::Null` selects the "No value" bucket.
    Choices(Vec<Value>),
    Range { min: Option<Value>, max: Option<Value> },
    Search(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FacetFilter {
    pub source: ResolvedSource,
    pub selection: Selection,
}

fn invalid(m: impl Into<String>) -> PlanError {
    PlanError::Invalid(m.into())
}

fn to_value(json: &Json, source: &ResolvedSource) -> Result<Value, PlanError> {
    if json.is_null() {
        return Ok(Value::Null);
    }
    Value::from_json(json, source.end_type).map_err(|e| invalid(format!("{}: {e}", source.end_column)))
}

/// Parses the `filters` wire format and checks every entry against the
/// table's filter plan.
pub fn parse_filters(
    model: &RoleBasedModel,
    validated: &ValidatedAnnotations,
    table: &TableRef,
    wire: &Json,
) -> Result<Vec<FacetFilter>, PlanError> {
    let items = match wire {
        Json::Null => return Ok(Vec::new()),
        Json::Array(items) => items,
        other => return Err(invalid(format!("filters must be a list, got {other}"))),
    };
    let facets = table_plan(table, "filter", model, validated)?.facets;
    let t = model
        .table(table)
        .ok_or_else(|| PlanError::TableNotVisible(table.clone()))?;
    let (defs, _) = crate::annotation::parse_source_definitions(t);
    let mut out = Vec::new();
    for item in items {
        let obj = item
            .as_object()
            .ok_or_else(|| invalid(format!("filter must be an object, got {item}")))?;
        let spec = SourceSpec {
            path: obj
                .get("source")
                .map(crate::annotation::parse_source_path)
                .transpose()
                .map_err(invalid)?,
            sourcekey: obj.get("sourcekey").and_then(Json::as_str).map(str::to_string),
            aggregate: None,
            entity: None,
        };
        let source = resolve_source(&model.catalog, table, &spec, &defs)
            .map_err(|e| invalid(format!("unknown facet source: {e}")))?;
        let facet = facets
            .iter()
            .find(|f| f.source.same_path(&source))
            .ok_or_else(|| invalid(format!("unknown facet source {}", source.path_json())))?;
        let source = facet.source.clone();
        let selection = if let Some(choices) = obj.get("choices") {
            let list = choices
                .as_array()
                .ok_or_else(|| invalid("choices must be a list"))?;
            Selection::Choices(list.iter().map(|c| to_value(c, &source)).collect::<Result<_, _>>()?)
        } else if let Some(range) = obj.get("range") {
            let bound = |k: &str| -> Result<Option<Value>, PlanError> {
                match range.get(k) {
                    None | Some(Json::Null) => Ok(None),
                    Some(v) => to_value(v, &source).map(Some),
                }
            };
            if facet.kind != FacetKind::Range && !source.end_type.is_ordinal() {
                return Err(invalid(format!("{} does not support ranges", source.end_column)));
            }
            Selection::Range {
                min: bound("min")?,
                max: bound("max")?,
            }
        } else if let Some(text) = obj.get("search").and_then(Json::as_str) {
            Selection::Search(text.to_string())
        } else {
            return Err(invalid("filter needs choices, range or search"));
        };
        out.push(FacetFilter { source, selection });
    }
    Ok(out)
}

/// Appends one join per hop starting at instance 0; returns the end instance.
fn add_chain(model: &RoleBasedModel, plan: &mut QueryPlan, source: &ResolvedSource, kind: JoinKind) -> usize {
    let mut parent = 0;
    for hop in &source.hops {
        plan.joins.push(Join {
            parent,
            table: hop.to_table.clone(),
            left_columns: hop.from_columns.clone(),
            right_columns: hop.to_columns.clone(),
            kind,
            row_filter: model.row_predicate(&hop.to_table),
            via: Some(hop.fkey_name.clone()),
        });
        parent = plan.joins.len();
    }
    parent
}

fn visible_columns(model: &RoleBasedModel, table: &TableRef) -> Vec<String> {
    model
        .table(table)
        .map(|t| t.columns.iter().map(|c| c.name.clone()).collect())
        .unwrap_or_default()
}

fn base_plan(model: &RoleBasedModel, table: &TableRef, projection: Projection) -> QueryPlan {
    let mut plan = QueryPlan::new(table.clone(), projection);
    plan.base_filter = model.row_predicate(table);
    plan
}

fn apply_filter(model: &RoleBasedModel, plan: &mut QueryPlan, filter: &FacetFilter) {
    let kind = match &filter.selection {
        Selection::Choices(values) if values.iter().any(Value::is_null) => JoinKind::LeftOuter,
        _ => JoinKind::Inner,
    };
    let predicate = |end| {
        let column = ColumnRef::new(end, filter.source.end_column.clone());
        match &filter.selection {
            Selection::Choices(values) => Predicate::In(column, values.clone()),
            Selection::Range { min, max } => Predicate::Between {
                column,
                min: min.clone(),
                max: max.clone(),
            },
            Selection::Search(text) => Predicate::Ilike(column, text.trim().to_string()),
        }
    };
    match &filter.selection {
        Selection::Choices(values) if values.is_empty() => return,
        Selection::Search(text) if text.trim().is_empty() => return,
        _ => {}
    }
    let end = add_chain(model, plan, &filter.source, kind);
    plan.predicates.push(predicate(end));
}

fn search_predicate(model: &RoleBasedModel, table: &TableRef, text: &str) -> Option<Predicate> {
    let needle = text.trim();
    if needle.is_empty() {
        return None;
    }
    let t = model.table(table)?;
    let terms: Vec<Predicate> = t
        .columns
        .iter()
        .filter(|c| c.ty.is_textual())
        .map(|c| Predicate::Ilike(ColumnRef::base(c.name.clone()), needle.to_string()))
        .collect();
    Some(Predicate::Any(terms))
}

fn sort_keys(
    model: &RoleBasedModel,
    table: &TableRef,
    instance: usize,
    sort: &[SortSpec],
) -> Result<Vec<SortKey>, PlanError> {
    let t = model
        .table(table)
        .ok_or_else(|| PlanError::TableNotVisible(table.clone()))?;
    let mut keys = Vec::new();
    for s in sort {
        if t.column(&s.column).is_none() {
            return Err(invalid(format!("cannot sort on unknown column {}", s.column)));
        }
        keys.push(SortKey {
            column: ColumnRef::new(instance, s.column.clone()),
            descending: s.descending,
        });
    }
    if !sort.iter().any(|s| s.column == RID) {
        keys.push(SortKey {
            column: ColumnRef::new(instance, RID),
            descending: false,
        });
    }
    Ok(keys)
}

/// Entity search over `table`: facet filters, free-text search, sort and
/// paging. `sort` defaults to the compact plan's sort.
pub fn compile_entity_set(
    model: &RoleBasedModel,
    validated: &ValidatedAnnotations,
    table: &TableRef,
    filters: &[FacetFilter],
    search_text: Option<&str>,
    sort: Option<&[SortSpec]>,
    page: Page,
) -> Result<QueryPlan, PlanError> {
    let columns = visible_columns(model, table);
    if columns.is_empty() {
        return Err(PlanError::TableNotVisible(table.clone()));
    }
    let mut plan = base_plan(model, table, Projection::Entity { instance: 0, columns });
    for f in filters {
        apply_filter(model, &mut plan, f);
    }
    if let Some(p) = search_text.and_then(|s| search_predicate(model, table, s)) {
        plan.predicates.push(p);
    }
    let default_sort;
    let sort = match sort {
        Some(s) => s,
        None => {
            default_sort = table_plan(table, "compact", model, validated)?.sort;
            &default_sort
        }
    };
    plan.sort = sort_keys(model, table, 0, sort)?;
    plan.page = page;
    Ok(plan)
}

/// Plans for one record: the base row, one per non-local property, and one
/// per relationship.
#[derive(Debug, Clone)]
pub struct RecordPlans {
    pub core: QueryPlan,
    pub properties: Vec<(PropertySpec, QueryPlan)>,
    pub relationships: Vec<(RelationshipSpec, QueryPlan)>,
}

impl RecordPlans {
    pub fn len(&self) -> usize {
        1 + self.properties.len() + self.relationships.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Values of a non-local property for a set of base entities.
///
/// Aggregates yield `{RID, value}` per base entity (present even when no
/// related row exists). Other sources yield rows tagged with `$base`, the
/// base RID: entity-mode sources carry the related row's columns, scalar
/// ones a single `value`.
pub fn compile_property(model: &RoleBasedModel, source: &ResolvedSource, base_rids: &[String]) -> QueryPlan {
    let rid_filter = Predicate::In(
        ColumnRef::base(RID),
        base_rids.iter().map(|r| Value::Text(r.clone())).collect(),
    );
    if let Some(function) = source.aggregate {
        let mut plan = base_plan(model, &source.base_table, Projection::Columns(Vec::new()));
        let end = add_chain(model, &mut plan, source, JoinKind::LeftOuter);
        plan.projection = Projection::Aggregate {
            target: ColumnRef::new(end, source.end_column.clone()),
            function,
            group: Grouping::BaseRid,
        };
        plan.predicates.push(rid_filter);
        plan.sort = vec![SortKey {
            column: ColumnRef::base(RID),
            descending: false,
        }];
        return plan;
    }
    let mut plan = base_plan(model, &source.base_table, Projection::Columns(Vec::new()));
    let end = add_chain(model, &mut plan, source, JoinKind::Inner);
    let mut cols = vec![("$base".to_string(), ColumnRef::base(RID))];
    if source.entity_mode {
        for c in visible_columns(model, source.end_table()) {
            cols.push((c.clone(), ColumnRef::new(end, c)));
        }
    } else {
        cols.push(("value".to_string(), ColumnRef::new(end, source.end_column.clone())));
    }
    plan.projection = Projection::Columns(cols);
    plan.predicates.push(rid_filter);
    plan.sort = vec![
        SortKey {
            column: ColumnRef::base(RID),
            descending: false,
        },
        SortKey {
            column: ColumnRef::new(end, if source.entity_mode { RID.to_string() } else { source.end_column.clone() }),
            descending: false,
        },
    ];
    plan
}

/// Related entities reached from one focal row.
pub fn compile_related(
    model: &RoleBasedModel,
    validated: &ValidatedAnnotations,
    via: &ResolvedSource,
    rid: &str,
    page: Page,
) -> Result<QueryPlan, PlanError> {
    let target = via.end_table().clone();
    let mut plan = base_plan(model, &via.base_table, Projection::Columns(Vec::new()));
    let end = add_chain(model, &mut plan, via, JoinKind::Inner);
    plan.projection = Projection::Entity {
        instance: end,
        columns: visible_columns(model, &target),
    };
    plan.predicates
        .push(Predicate::Eq(ColumnRef::base(RID), Value::Text(rid.to_string())));
    let sort = table_plan(&target, "compact/brief", model, validated)?.sort;
    plan.sort = sort_keys(model, &target, end, &sort)?;
    plan.page = page;
    Ok(plan)
}

pub fn compile_record(
    model: &RoleBasedModel,
    validated: &ValidatedAnnotations,
    table: &TableRef,
    rid: &str,
) -> Result<RecordPlans, PlanError> {
    if !crate::storage::is_valid_rid(rid) {
        return Err(invalid(format!("malformed RID {rid:?}")));
    }
    let detailed = table_plan(table, "detailed", model, validated)?;
    let mut core = base_plan(
        model,
        table,
        Projection::Entity {
            instance: 0,
            columns: visible_columns(model, table),
        },
    );
    core.predicates
        .push(Predicate::Eq(ColumnRef::base(RID), Value::Text(rid.to_string())));
    let rids = [rid.to_string()];
    let properties = detailed
        .properties
        .into_iter()
        .filter(|p| matches!(p.kind, PropertyKind::Pseudo | PropertyKind::EntityRef))
        .map(|p| {
            let plan = compile_property(model, &p.source, &rids);
            (p, plan)
        })
        .collect();
    let relationships = detailed
        .relationships
        .into_iter()
        .map(|r| {
            compile_related(model, validated, &r.via, rid, Page::first(RELATED_PAGE_SIZE)).map(|plan| (r, plan))
        })
        .collect::<Result<_, _>>()?;
    Ok(RecordPlans {
        core,
        properties,
        relationships,
    })
}

/// Distinct values of `facet` with counts of matching base entities, under
/// every other facet's selection.
pub fn compile_facet_values(
    model: &RoleBasedModel,
    validated: &ValidatedAnnotations,
    table: &TableRef,
    facet: &ResolvedSource,
    other_filters: &[FacetFilter],
    search_text: Option<&str>,
    page: Option<Page>,
) -> Result<QueryPlan, PlanError> {
    let facets = table_plan(table, "filter", model, validated)?.facets;
    if !facets.iter().any(|f| f.source.same_path(facet)) {
        return Err(invalid(format!("unknown facet source {}", facet.path_json())));
    }
    let others: Vec<FacetFilter> = other_filters
        .iter()
        .filter(|f| !f.source.same_path(facet))
        .cloned()
        .collect();
    let mut plan = compile_entity_set(model, validated, table, &others, search_text, Some(&[]), Page::default())?;
    let end = add_chain(model, &mut plan, facet, JoinKind::LeftOuter);
    plan.projection = Projection::ValueCounts {
        target: ColumnRef::new(end, facet.end_column.clone()),
    };
    plan.sort.clear();
    plan.page = page.unwrap_or(Page::first(FACET_PAGE_SIZE));
    Ok(plan)
}

/// Candidate rows for an outbound foreign key, narrowed by the key's
/// selection filter. Text choices are templates over `form`; a choice that
/// renders empty is dropped, and a filter left with no choices is skipped.
pub fn compile_picker(
    model: &RoleBasedModel,
    validated: &ValidatedAnnotations,
    fkey: &FkName,
    form: &serde_json::Map<String, Json>,
    search_text: Option<&str>,
    page: Page,
) -> Result<QueryPlan, PlanError> {
    let fk = model
        .catalog
        .foreign_key(fkey)
        .ok_or_else(|| invalid(format!("unknown foreign key {fkey}")))?;
    let target = fk.to_table();
    let bindings = Json::Object(form.clone());
    let mut filters = Vec::new();
    let selection = validated
        .foreign_keys
        .get(fkey)
        .map(|d| d.selection_filter.as_slice())
        .unwrap_or_default();
    for def in selection {
        if let Some(f) = picker_filter(def, &bindings)? {
            filters.push(f);
        }
    }
    compile_entity_set(model, validated, &target, &filters, search_text, None, page)
}

fn picker_filter(def: &FacetDef, bindings: &Json) -> Result<Option<FacetFilter>, PlanError> {
    let render = |v: &Json| -> Result<Option<Json>, PlanError> {
        match v {
            Json::String(s) => {
                let out = render_template(s, bindings).map_err(|e| invalid(e.to_string()))?;
                Ok((!out.is_empty()).then_some(Json::from(out)))
            }
            other => Ok(Some(other.clone())),
        }
    };
    if let Some(choices) = &def.choices {
        let mut values = Vec::new();
        for c in choices {
            if let Some(j) = render(c)? {
                values.push(to_value(&j, &def.source)?);
            }
        }
        if values.is_empty() {
            return Ok(None);
        }
        return Ok(Some(FacetFilter {
            source: def.source.clone(),
            selection: Selection::Choices(values),
        }));
    }
    if let Some(range) = def.ranges.as_ref().and_then(|r| r.first()) {
        let bound = |b: &Option<Json>| -> Result<Option<Value>, PlanError> {
            match b {
                None => Ok(None),
                Some(j) => render(j)?.map(|j| to_value(&j, &def.source)).transpose(),
            }
        };
        let (min, max) = (bound(&range.min)?, bound(&range.max)?);
        if min.is_none() && max.is_none() {
            return Ok(None);
        }
        return Ok(Some(FacetFilter {
            source: def.source.clone(),
            selection: Selection::Range { min, max },
        }));
    }
    Ok(None)
}

/// A bare-column source on `table`, for callers building filters by hand.
pub fn column_source(model: &RoleBasedModel, table: &TableRef, column: &str) -> Result<ResolvedSource, PlanError> {
    let spec = SourceSpec {
        path: Some(SourcePath::Column(column.to_string())),
        sourcekey: None,
        aggregate: None,
        entity: None,
    };
    resolve_source(&model.catalog, table, &spec, &Default::default()).map_err(|e| invalid(e.0))
}
