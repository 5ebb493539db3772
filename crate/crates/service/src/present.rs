//! Turns stored rows into response documents: raw values, formatted text,
//! rendered markdown and HTML per property.

use std::collections::HashMap;

use serde_json::{json, Map, Value as Json};

use modeladapt_core::interpret::{row_bindings, row_name_template, PropertyKind, PropertySpec};
use modeladapt_core::model::{ScalarType, Table, TableRef, RID};
use modeladapt_core::query::compile_property;
use modeladapt_core::render::{escape_markdown, format_value, markdown_to_html, render_template};
use modeladapt_core::storage::{Aggregate, Row, StorageError, Value};

use crate::state::RequestView;

pub fn record_link(table: &TableRef, rid: &str) -> String {
    format!("#/record/{}:{}/{}", table.schema, table.table, rid)
}

fn rid_of(row: &Row) -> String {
    row.get(RID).and_then(Value::as_text).unwrap_or_default().to_string()
}

/// Raw JSON values of the columns `table` (a role-pruned table) exposes.
pub fn visible_values(table: &Table, row: &Row) -> Map<String, Json> {
    table
        .columns
        .iter()
        .map(|c| (c.name.clone(), row.get(&c.name).map(Value::to_json).unwrap_or(Json::Null)))
        .collect()
}

pub fn row_name(view: &RequestView, table: &Table, row: &Row) -> String {
    let template = row_name_template(table, &view.annotations);
    render_template(&template, &Json::Object(row_bindings(table, row))).unwrap_or_else(|_| rid_of(row))
}

/// `{RID, values, formatted, row_name}` for one row.
pub fn entity_json(view: &RequestView, table: &Table, row: &Row) -> Json {
    let formatted: Map<String, Json> = table
        .columns
        .iter()
        .map(|c| {
            let v = row.get(&c.name).cloned().unwrap_or(Value::Null);
            (c.name.clone(), Json::from(format_value(&v, c.ty)))
        })
        .collect();
    json!({
        "RID": rid_of(row),
        "values": visible_values(table, row),
        "formatted": formatted,
        "row_name": row_name(view, table, row),
    })
}

/// Values fetched for one non-local property, keyed by base RID.
enum Fetched {
    Aggregate(HashMap<String, Value>),
    Entities(HashMap<String, Vec<Row>>),
    Values(HashMap<String, Vec<Value>>),
}

fn fetch(view: &RequestView, prop: &PropertySpec, rids: &[String]) -> Result<Fetched, StorageError> {
    let plan = compile_property(&view.model, &prop.source, rids);
    let rs = view.data.execute(&view.model.catalog, &plan)?;
    if prop.source.aggregate.is_some() {
        return Ok(Fetched::Aggregate(
            rs.rows
                .into_iter()
                .map(|mut r| (rid_of(&r), r.remove("value").unwrap_or(Value::Null)))
                .collect(),
        ));
    }
    let base = |r: &Row| r.get("$base").and_then(Value::as_text).unwrap_or_default().to_string();
    if prop.source.entity_mode {
        let mut out: HashMap<String, Vec<Row>> = HashMap::new();
        for mut r in rs.rows {
            let b = base(&r);
            r.remove("$base");
            let list = out.entry(b).or_default();
            if !list.iter().any(|x| rid_of(x) == rid_of(&r)) {
                list.push(r);
            }
        }
        return Ok(Fetched::Entities(out));
    }
    let mut out: HashMap<String, Vec<Value>> = HashMap::new();
    for r in rs.rows {
        let v = r.get("value").cloned().unwrap_or(Value::Null);
        let list = out.entry(base(&r)).or_default();
        if !v.is_null() && !list.contains(&v) {
            list.push(v);
        }
    }
    Ok(Fetched::Values(out))
}

fn bullets(items: &[String]) -> String {
    items.iter().map(|i| format!("- {i}\n")).collect()
}

struct Cell {
    value: Json,
    /// Formatted text, or a list of formatted texts for multi-valued cells.
    formatted: Json,
    markdown: String,
}

fn scalar_cell(v: &Value, ty: ScalarType) -> Cell {
    let text = format_value(v, ty);
    let markdown = match (v, ty) {
        (Value::Null, _) => String::new(),
        (_, ScalarType::Markdown) => text.clone(),
        _ => escape_markdown(&text),
    };
    Cell {
        value: v.to_json(),
        formatted: Json::from(text),
        markdown,
    }
}

fn entities_cell(view: &RequestView, table: &TableRef, rows: &[Row], single: bool) -> Cell {
    let Some(t) = view.model.table(table) else {
        return Cell {
            value: Json::Null,
            formatted: Json::Null,
            markdown: String::new(),
        };
    };
    let names: Vec<String> = rows.iter().map(|r| row_name(view, t, r)).collect();
    let links: Vec<String> = rows
        .iter()
        .zip(&names)
        .map(|(r, n)| format!("[{n}]({})", record_link(table, &rid_of(r))))
        .collect();
    let refs: Vec<Json> = rows
        .iter()
        .zip(&names)
        .map(|(r, n)| json!({"RID": rid_of(r), "row_name": n, "values": visible_values(t, r)}))
        .collect();
    if single {
        Cell {
            value: refs.into_iter().next().unwrap_or(Json::Null),
            formatted: Json::from(names.into_iter().next().unwrap_or_default()),
            markdown: links.into_iter().next().unwrap_or_default(),
        }
    } else {
        Cell {
            value: Json::Array(refs),
            formatted: Json::from(names),
            markdown: bullets(&links),
        }
    }
}

fn values_cell(values: &[Value], ty: ScalarType, single: bool) -> Cell {
    if single {
        return scalar_cell(values.first().unwrap_or(&Value::Null), ty);
    }
    let texts: Vec<String> = values.iter().map(|v| format_value(v, ty)).collect();
    Cell {
        value: Json::Array(values.iter().map(Value::to_json).collect()),
        markdown: bullets(&texts.iter().map(|t| escape_markdown(t)).collect::<Vec<_>>()),
        formatted: Json::from(texts),
    }
}

fn aggregate_cell(view: &RequestView, prop: &PropertySpec, v: &Value) -> Cell {
    let s = &prop.source;
    match (s.aggregate, v) {
        (Some(Aggregate::ArrayD), Value::List(items)) if s.entity_mode => {
            // The aggregate yields end key values, not RIDs.
            let rows: Vec<Row> = items
                .iter()
                .filter_map(|key| {
                    view.data
                        .rows(s.end_table())
                        .find(|r| r.get(&s.end_column) == Some(key))
                        .cloned()
                })
                .collect();
            entities_cell(view, s.end_table(), &rows, false)
        }
        (Some(Aggregate::ArrayD), Value::List(items)) => values_cell(items, s.end_type, false),
        (Some(Aggregate::Cnt | Aggregate::CntD), v) => scalar_cell(v, ScalarType::Int),
        (Some(Aggregate::Sum), v @ Value::Float(_)) => scalar_cell(v, ScalarType::Float),
        (_, v) => scalar_cell(v, s.end_type),
    }
}

fn asset_cell(prop: &PropertySpec, row: &Row) -> Cell {
    let url = row.get(&prop.source.end_column).cloned().unwrap_or(Value::Null);
    let mut cell = scalar_cell(&url, ScalarType::Text);
    if let (Some(map), Some(u)) = (&prop.asset_map, url.as_text()) {
        let label = map
            .filename
            .as_ref()
            .and_then(|f| row.get(f))
            .and_then(Value::as_text)
            .unwrap_or(u);
        cell.markdown = format!("[{}]({u})", escape_markdown(label));
    }
    cell
}

/// Per-row property documents, in the order of `props`. Non-local
/// properties are fetched with one plan each for all `rows`.
pub fn present_properties(
    view: &RequestView,
    table: &Table,
    props: &[PropertySpec],
    rows: &[Row],
) -> Result<Vec<Vec<Json>>, StorageError> {
    let rids: Vec<String> = rows.iter().map(rid_of).collect();
    let mut fetched: Vec<Option<Fetched>> = Vec::with_capacity(props.len());
    for p in props {
        fetched.push(match p.kind {
            PropertyKind::Scalar | PropertyKind::Asset => None,
            _ if rows.is_empty() => None,
            _ => Some(fetch(view, p, &rids)?),
        });
    }

    let mut out = Vec::with_capacity(rows.len());
    for (row, rid) in rows.iter().zip(&rids) {
        let cells: Vec<Cell> = props
            .iter()
            .zip(&fetched)
            .map(|(p, f)| {
                let s = &p.source;
                match (p.kind, f) {
                    (PropertyKind::Asset, _) => asset_cell(p, row),
                    (PropertyKind::Scalar, _) | (_, None) => {
                        scalar_cell(row.get(&s.end_column).unwrap_or(&Value::Null), s.end_type)
                    }
                    (_, Some(Fetched::Aggregate(m))) => aggregate_cell(view, p, m.get(rid).unwrap_or(&Value::Null)),
                    (_, Some(Fetched::Entities(m))) => {
                        let rows = m.get(rid).map(Vec::as_slice).unwrap_or_default();
                        entities_cell(view, s.end_table(), rows, !s.multivalued)
                    }
                    (_, Some(Fetched::Values(m))) => {
                        values_cell(m.get(rid).map(Vec::as_slice).unwrap_or_default(), s.end_type, !s.multivalued)
                    }
                }
            })
            .collect();

        let mut bindings = row_bindings(table, row);
        for (p, c) in props.iter().zip(&cells) {
            if let Some(key) = &p.source.sourcekey {
                bindings.insert(format!("${key}"), c.formatted.clone());
            }
        }
        let docs = props
            .iter()
            .zip(cells)
            .map(|(p, c)| {
                let markdown = match &p.display {
                    Some(pattern) => {
                        let mut b = bindings.clone();
                        b.insert("$self".into(), c.formatted.clone());
                        render_template(pattern, &Json::Object(b)).unwrap_or_default()
                    }
                    None => c.markdown,
                };
                json!({
                    "name": p.name,
                    "value": c.value,
                    "formatted": c.formatted,
                    "markdown": markdown,
                    "html": markdown_to_html(&markdown),
                })
            })
            .collect();
        out.push(docs);
    }
    Ok(out)
}
