use std::path::PathBuf;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json as JsonBody;
use serde::Deserialize;
use serde_json::{json, Map, Value as Json};
use sha2::{Digest, Sha256};

use modeladapt_core::annotation::SortSpec;
use modeladapt_core::interpret::{plan, FacetKind, TablePlan};
use modeladapt_core::model::{FkName, Table, TableRef, RID};
use modeladapt_core::query::{
    compile_entity_set, compile_facet_values, compile_picker, compile_record, parse_filters,
};
use modeladapt_core::render::format_value;
use modeladapt_core::storage::{Page, QueryPlan, Record, Row, Value};

use crate::error::ApiError;
use crate::identity::Client;
use crate::present::{entity_json, present_properties, row_name, visible_values};
use crate::state::{AppState, RequestView};

type ApiResult<T> = Result<T, ApiError>;

const MAX_PAGE: usize = 1000;

fn table_ref(schema: String, table: String) -> TableRef {
    TableRef::new(schema, table)
}

fn visible_table<'a>(view: &'a RequestView, t: &TableRef) -> ApiResult<&'a Table> {
    view.model
        .table(t)
        .ok_or_else(|| ApiError::not_found(format!("table {t} not found")).at(t.to_string()))
}

fn storage(view: &RequestView) -> impl Fn(modeladapt_core::storage::StorageError) -> ApiError + '_ {
    move |e| ApiError::storage(e, view.model.client.is_anonymous())
}

pub async fn get_model(State(state): State<AppState>, Client(client): Client) -> ApiResult<JsonBody<Json>> {
    let view = state.view(&client);
    let rights: Map<String, Json> = view
        .model
        .rights
        .iter()
        .map(|(t, r)| (t.to_string(), json!(r)))
        .collect();
    let mut rights: Vec<(String, Json)> = rights.into_iter().collect();
    rights.sort_by(|a, b| a.0.cmp(&b.0));
    let mut catalog = view.annotations.pruned.clone();
    if !view.model.is_owner() {
        // Policies can name columns the client cannot see.
        for schema in catalog.schemas.values_mut() {
            for table in schema.tables.values_mut() {
                table.row_policy = None;
            }
        }
    }
    Ok(JsonBody(json!({
        "version": view.model.version(),
        "client": view.model.client,
        "owner": view.model.is_owner(),
        "catalog": catalog,
        "rights": rights.into_iter().collect::<Map<_, _>>(),
    })))
}

pub async fn get_diagnostics(State(state): State<AppState>, Client(client): Client) -> JsonBody<Json> {
    let view = state.view(&client);
    let list: Vec<Json> = view
        .diagnostics
        .iter()
        .map(|d| {
            let mut v = json!(d);
            v["line"] = Json::from(d.to_string());
            v
        })
        .collect();
    JsonBody(Json::Array(list))
}

#[derive(Deserialize)]
pub struct PlanQuery {
    context: Option<String>,
}

pub async fn get_plan(
    State(state): State<AppState>,
    Client(client): Client,
    Path((schema, table)): Path<(String, String)>,
    Query(q): Query<PlanQuery>,
) -> ApiResult<JsonBody<TablePlan>> {
    let view = state.view(&client);
    let t = table_ref(schema, table);
    let context = q.context.as_deref().unwrap_or("compact");
    Ok(JsonBody(plan(&t, context, &view.model, &view.annotations)?))
}

#[derive(Deserialize, Default)]
pub struct EntityQuery {
    filters: Option<String>,
    q: Option<String>,
    sort: Option<String>,
    limit: Option<usize>,
    offset: Option<usize>,
}

fn parse_json_param(raw: Option<&str>, name: &str) -> ApiResult<Json> {
    match raw {
        None => Ok(Json::Null),
        Some(s) if s.trim().is_empty() => Ok(Json::Null),
        Some(s) => serde_json::from_str(s).map_err(|e| ApiError::bad_request(format!("{name}: {e}"))),
    }
}

/// `col` or `col:desc`, comma separated.
fn parse_sort(raw: &str) -> ApiResult<Vec<SortSpec>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let (column, dir) = s.split_once(':').unwrap_or((s, "asc"));
            let descending = match dir {
                "asc" => false,
                "desc" => true,
                other => return Err(ApiError::bad_request(format!("unknown sort direction {other:?}"))),
            };
            Ok(SortSpec {
                column: column.to_string(),
                descending,
            })
        })
        .collect()
}

fn page_of(q: &EntityQuery, default: usize) -> Page {
    Page {
        limit: Some(q.limit.unwrap_or(default).min(MAX_PAGE)),
        offset: q.offset.unwrap_or(0),
    }
}

/// Executes an entity-set plan and renders each row with the compact
/// properties.
fn entity_page(view: &RequestView, t: &TableRef, query: &QueryPlan, page: Page) -> ApiResult<Json> {
    let table = visible_table(view, t)?;
    let rs = view.data.execute(&view.model.catalog, query).map_err(storage(view))?;
    let compact = plan(t, "compact", &view.model, &view.annotations)?;
    let props = present_properties(view, table, &compact.properties, &rs.rows).map_err(storage(view))?;
    let rows: Vec<Json> = rs
        .rows
        .iter()
        .zip(props)
        .map(|(row, props)| {
            let mut doc = entity_json(view, table, row);
            doc["properties"] = Json::Array(props);
            doc
        })
        .collect();
    Ok(json!({
        "table": t.to_string(),
        "total": rs.total,
        "offset": page.offset,
        "limit": page.limit,
        "columns": compact.properties.iter().map(|p| json!({
            "name": p.name, "display_name": p.display_name, "kind": p.kind
        })).collect::<Vec<_>>(),
        "rows": rows,
    }))
}

pub async fn get_entities(
    State(state): State<AppState>,
    Client(client): Client,
    Path((schema, table)): Path<(String, String)>,
    Query(q): Query<EntityQuery>,
) -> ApiResult<JsonBody<Json>> {
    let view = state.view(&client);
    let t = table_ref(schema, table);
    visible_table(&view, &t)?;
    let filters = parse_filters(&view.model, &view.annotations, &t, &parse_json_param(q.filters.as_deref(), "filters")?)?;
    let sort = q.sort.as_deref().map(parse_sort).transpose()?;
    let compact = plan(&t, "compact", &view.model, &view.annotations)?;
    let page = page_of(&q, compact.page_size);
    let query = compile_entity_set(&view.model, &view.annotations, &t, &filters, q.q.as_deref(), sort.as_deref(), page)?;
    Ok(JsonBody(entity_page(&view, &t, &query, page)?))
}

pub async fn get_record(
    State(state): State<AppState>,
    Client(client): Client,
    Path((schema, table, rid)): Path<(String, String, String)>,
) -> ApiResult<JsonBody<Json>> {
    let view = state.view(&client);
    let t = table_ref(schema, table);
    let table = visible_table(&view, &t)?;
    let plans = compile_record(&view.model, &view.annotations, &t, &rid)
        .map_err(|_| ApiError::not_found(format!("{t} row {rid} not found")))?;
    let core = view.data.execute(&view.model.catalog, &plans.core).map_err(storage(&view))?;
    let row = core
        .rows
        .into_iter()
        .next()
        .ok_or_else(|| ApiError::not_found(format!("{t} row {rid} not found")).at(format!("{t}/{rid}")))?;
    let detailed = plan(&t, "detailed", &view.model, &view.annotations)?;
    let props = present_properties(&view, table, &detailed.properties, std::slice::from_ref(&row))
        .map_err(storage(&view))?
        .pop()
        .unwrap_or_default();
    let properties: Vec<Json> = detailed
        .properties
        .iter()
        .zip(props)
        .map(|(spec, mut doc)| {
            doc["display_name"] = Json::from(spec.display_name.clone());
            doc["kind"] = json!(spec.kind);
            doc["tooltip"] = json!(spec.tooltip);
            doc
        })
        .collect();
    let mut relationships = Vec::new();
    for (spec, query) in &plans.relationships {
        let target = spec.via.end_table();
        let rs = view.data.execute(&view.model.catalog, query).map_err(storage(&view))?;
        let tt = visible_table(&view, target)?;
        relationships.push(json!({
            "name": spec.name,
            "table": target.to_string(),
            "association": spec.association,
            "via": spec.via,
            "total": rs.total,
            "rows": rs.rows.iter().map(|r| entity_json(&view, tt, r)).collect::<Vec<_>>(),
        }));
    }
    let mut doc = entity_json(&view, table, &row);
    doc["table"] = Json::from(t.to_string());
    doc["rights"] = json!(view.model.table_rights(&t));
    doc["properties"] = Json::Array(properties);
    doc["relationships"] = Json::Array(relationships);
    Ok(JsonBody(doc))
}

fn records(body: Json) -> ApiResult<Vec<Record>> {
    let items = match body {
        Json::Array(items) => items,
        obj @ Json::Object(_) => vec![obj],
        other => return Err(ApiError::bad_request(format!("expected an object or a list, got {other}"))),
    };
    items
        .into_iter()
        .map(|i| match i {
            Json::Object(m) => Ok(m),
            other => Err(ApiError::bad_request(format!("expected an object, got {other}"))),
        })
        .collect()
}

fn mutation_result(view: &RequestView, t: &TableRef, rows: &[Row]) -> Json {
    // Rows are filtered through the client's model, never the raw table.
    let cols: Vec<Json> = match view.model.table(t) {
        Some(table) => rows.iter().map(|r| Json::Object(visible_values(table, r))).collect(),
        None => Vec::new(),
    };
    json!({"table": t.to_string(), "rows": cols})
}

pub async fn post_entities(
    State(state): State<AppState>,
    Client(client): Client,
    Path((schema, table)): Path<(String, String)>,
    JsonBody(body): JsonBody<Json>,
) -> ApiResult<Response> {
    let view = state.view(&client);
    let t = table_ref(schema, table);
    visible_table(&view, &t)?;
    let rows = state
        .db()
        .insert(&view.catalog, &t, &records(body)?, &client)
        .map_err(storage(&view))?;
    Ok((StatusCode::CREATED, JsonBody(mutation_result(&view, &t, &rows))).into_response())
}

pub async fn put_entities(
    State(state): State<AppState>,
    Client(client): Client,
    Path((schema, table)): Path<(String, String)>,
    JsonBody(body): JsonBody<Json>,
) -> ApiResult<JsonBody<Json>> {
    let view = state.view(&client);
    let t = table_ref(schema, table);
    visible_table(&view, &t)?;
    let mut changes = Vec::new();
    for mut rec in records(body)? {
        let rid = match rec.remove(RID) {
            Some(Json::String(r)) => r,
            _ => return Err(ApiError::bad_request("each update needs a RID").at(t.to_string())),
        };
        changes.push((rid, rec));
    }
    let rows = state
        .db()
        .update_rows(&view.catalog, &t, &changes, &client)
        .map_err(storage(&view))?;
    Ok(JsonBody(mutation_result(&view, &t, &rows)))
}

#[derive(Deserialize)]
pub struct DeleteQuery {
    rid: Option<String>,
}

pub async fn delete_entities(
    State(state): State<AppState>,
    Client(client): Client,
    Path((schema, table)): Path<(String, String)>,
    Query(q): Query<DeleteQuery>,
) -> ApiResult<JsonBody<Json>> {
    let view = state.view(&client);
    let t = table_ref(schema, table);
    visible_table(&view, &t)?;
    let rids: Vec<String> = q
        .rid
        .as_deref()
        .unwrap_or("")
        .split(',')
        .map(str::trim)
        .filter(|r| !r.is_empty())
        .map(str::to_string)
        .collect();
    if rids.is_empty() {
        return Err(ApiError::bad_request("rid is required"));
    }
    let n = state
        .db()
        .delete(&view.catalog, &t, &rids, &client)
        .map_err(storage(&view))?;
    Ok(JsonBody(json!({"table": t.to_string(), "deleted": n})))
}

/// Deletes every row matching the facet filters and search text.
pub async fn delete_attribute(
    State(state): State<AppState>,
    Client(client): Client,
    Path((schema, table)): Path<(String, String)>,
    Query(q): Query<EntityQuery>,
) -> ApiResult<JsonBody<Json>> {
    let view = state.view(&client);
    let t = table_ref(schema, table);
    visible_table(&view, &t)?;
    let filters = parse_filters(&view.model, &view.annotations, &t, &parse_json_param(q.filters.as_deref(), "filters")?)?;
    let mut query = compile_entity_set(&view.model, &view.annotations, &t, &filters, q.q.as_deref(), Some(&[]), Page::default())?;
    query.projection = modeladapt_core::storage::Projection::Entity {
        instance: 0,
        columns: vec![RID.to_string()],
    };
    let rs = view.data.execute(&view.model.catalog, &query).map_err(storage(&view))?;
    let rids: Vec<String> = rs
        .rows
        .iter()
        .filter_map(|r| r.get(RID).and_then(Value::as_text).map(str::to_string))
        .collect();
    let n = state
        .db()
        .delete(&view.catalog, &t, &rids, &client)
        .map_err(storage(&view))?;
    Ok(JsonBody(json!({"table": t.to_string(), "deleted": n})))
}

pub async fn get_facet_values(
    State(state): State<AppState>,
    Client(client): Client,
    Path((schema, table, index)): Path<(String, String, usize)>,
    Query(q): Query<EntityQuery>,
) -> ApiResult<JsonBody<Json>> {
    let view = state.view(&client);
    let t = table_ref(schema, table);
    visible_table(&view, &t)?;
    let facets = plan(&t, "filter", &view.model, &view.annotations)?.facets;
    let facet = facets
        .get(index)
        .ok_or_else(|| ApiError::not_found(format!("facet {index} not found")).at(t.to_string()))?;
    let filters = parse_filters(&view.model, &view.annotations, &t, &parse_json_param(q.filters.as_deref(), "filters")?)?;
    let page = page_of(&q, modeladapt_core::interpret::FACET_PAGE_SIZE);
    let query = compile_facet_values(&view.model, &view.annotations, &t, &facet.source, &filters, q.q.as_deref(), Some(page))?;
    let rs = view.data.execute(&view.model.catalog, &query).map_err(storage(&view))?;
    let end = view.model.table(facet.source.end_table());
    let values: Vec<Json> = rs
        .rows
        .iter()
        .map(|r| {
            let v = r.get("value").cloned().unwrap_or(Value::Null);
            let label = match (facet.source.entity_mode, v.as_text(), end) {
                (true, Some(key), Some(et)) => view
                    .data
                    .rows(facet.source.end_table())
                    .find(|row| row.get(&facet.source.end_column) == Some(&v))
                    .map(|row| row_name(&view, et, row))
                    .unwrap_or_else(|| key.to_string()),
                (_, _, _) if v.is_null() => "No value".to_string(),
                _ => format_value(&v, facet.source.end_type),
            };
            json!({
                "value": v.to_json(),
                "label": label,
                "count": r.get("count").map(Value::to_json),
            })
        })
        .collect();
    Ok(JsonBody(json!({
        "facet": index,
        "display_name": facet.display_name,
        "kind": facet.kind,
        "range": facet.kind == FacetKind::Range,
        "total": rs.total,
        "values": values,
    })))
}

#[derive(Deserialize)]
pub struct PickerQuery {
    form: Option<String>,
    q: Option<String>,
    limit: Option<usize>,
    offset: Option<usize>,
}

pub async fn get_picker(
    State(state): State<AppState>,
    Client(client): Client,
    Path((schema, constraint)): Path<(String, String)>,
    Query(q): Query<PickerQuery>,
) -> ApiResult<JsonBody<Json>> {
    let view = state.view(&client);
    let name = FkName::new(schema, constraint);
    let fk = view
        .model
        .catalog
        .foreign_key(&name)
        .ok_or_else(|| ApiError::not_found(format!("foreign key {name} not found")))?;
    let target = fk.to_table();
    let form = match parse_json_param(q.form.as_deref(), "form")? {
        Json::Null => Map::new(),
        Json::Object(m) => m,
        other => return Err(ApiError::bad_request(format!("form must be an object, got {other}"))),
    };
    let page = Page {
        limit: Some(q.limit.unwrap_or(modeladapt_core::interpret::ENTITY_PAGE_SIZE).min(MAX_PAGE)),
        offset: q.offset.unwrap_or(0),
    };
    let query = compile_picker(&view.model, &view.annotations, &name, &form, q.q.as_deref(), page)?;
    Ok(JsonBody(entity_page(&view, &target, &query, page)?))
}

fn asset_path(state: &AppState, digest: &str) -> ApiResult<PathBuf> {
    let dir = state
        .0
        .assets_dir
        .as_ref()
        .ok_or_else(|| ApiError::not_found("asset storage is not configured"))?;
    if digest.len() != 64 || !digest.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()) {
        return Err(ApiError::not_found(format!("asset {digest} not found")));
    }
    Ok(dir.join(digest))
}

pub async fn get_asset(State(state): State<AppState>, Path(digest): Path<String>) -> ApiResult<Response> {
    let path = asset_path(&state, &digest)?;
    match tokio::fs::read(&path).await {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response()),
        Err(_) => Err(ApiError::not_found(format!("asset {digest} not found"))),
    }
}

/// Stores an upload under its SHA-256 digest.
pub async fn put_asset(
    State(state): State<AppState>,
    Client(client): Client,
    body: Bytes,
) -> ApiResult<Response> {
    if client.is_anonymous() {
        return Err(ApiError::unauthorized("uploads require an identity"));
    }
    let digest = hex::encode(Sha256::digest(&body));
    let path = asset_path(&state, &digest)?;
    if let Some(dir) = path.parent() {
        tokio::fs::create_dir_all(dir)
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    }
    tokio::fs::write(&path, &body)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    Ok((
        StatusCode::CREATED,
        JsonBody(json!({"url": format!("/assets/{digest}"), "sha256": digest, "byte_count": body.len()})),
    )
        .into_response())
}
