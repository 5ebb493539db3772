//! Plan evaluation: hash joins over filtered instances, predicate filtering,
//! then projection, sort and paging.

use std::collections::{BTreeSet, HashMap, HashSet};

use indexmap::IndexMap;

use super::plan::{
    Aggregate, ColumnRef, Grouping, JoinKind, Predicate, Projection, QueryPlan, ResultSet, SortKey,
};
use super::{DataState, Row, StorageError, Value};
use crate::model::{Catalog, ScalarType, RID};
use crate::policy::RowFilter;

type Tuple<'a> = Vec<Option<&'a Row>>;

fn passes(filter: Option<&RowFilter>, row: &Row) -> bool {
    match filter {
        None => true,
        Some(f) => f.allows(|col| row.get(col).and_then(Value::as_text).map(str::to_string)),
    }
}

fn cell<'a>(tuple: &Tuple<'a>, col: &ColumnRef) -> &'a Value {
    static NULL: Value = Value::Null;
    tuple[col.instance]
        .and_then(|row| row.get(&col.column))
        .unwrap_or(&NULL)
}

pub(crate) fn eval(pred: &Predicate, tuple: &Tuple<'_>) -> bool {
    match pred {
        Predicate::Eq(c, v) => {
            let x = cell(tuple, c);
            !x.is_null() && x == v
        }
        Predicate::In(c, vs) => vs.contains(cell(tuple, c)),
        Predicate::Between { column, min, max } => {
            let x = cell(tuple, column);
            !x.is_null()
                && min.as_ref().is_none_or(|m| x >= m)
                && max.as_ref().is_none_or(|m| x <= m)
        }
        Predicate::Ilike(c, needle) => match cell(tuple, c) {
            Value::Text(s) => s.to_lowercase().contains(&needle.to_lowercase()),
            _ => false,
        },
        Predicate::Any(ps) => ps.iter().any(|p| eval(p, tuple)),
    }
}

fn validate(plan: &QueryPlan, catalog: &Catalog) -> Result<Vec<ScalarTypes>, StorageError> {
    let mut types = Vec::with_capacity(plan.instance_count());
    for (instance, table, _) in plan.instance_filters() {
        let t = catalog
            .table(table)
            .ok_or_else(|| StorageError::Plan(format!("unknown table {table}")))?;
        types.push(t.columns.iter().map(|c| (c.name.clone(), c.ty)).collect::<HashMap<_, _>>());
        if instance > 0 {
            let join = &plan.joins[instance - 1];
            if join.parent >= instance {
                return Err(StorageError::Plan(format!(
                    "join {instance} attaches to later instance {}",
                    join.parent
                )));
            }
            if join.left_columns.is_empty() || join.left_columns.len() != join.right_columns.len() {
                return Err(StorageError::Plan(format!("join {instance} has mismatched columns")));
            }
        }
    }
    let check = |c: &ColumnRef| -> Result<ScalarType, StorageError> {
        types
            .get(c.instance)
            .and_then(|m| m.get(&c.column))
            .copied()
            .ok_or_else(|| StorageError::Plan(format!("unknown column {}.{}", c.instance, c.column)))
    };
    for (instance, join) in plan.joins.iter().enumerate() {
        for c in &join.left_columns {
            check(&ColumnRef::new(join.parent, c))?;
        }
        for c in &join.right_columns {
            check(&ColumnRef::new(instance + 1, c))?;
        }
    }
    for p in &plan.predicates {
        for c in p.columns() {
            check(c)?;
        }
    }
    for k in &plan.sort {
        check(&k.column)?;
    }
    match &plan.projection {
        Projection::Entity { instance, columns } => {
            for c in columns {
                check(&ColumnRef::new(*instance, c))?;
            }
            if plan.sort.iter().any(|k| k.column.instance != *instance) {
                return Err(StorageError::Plan("entity sort keys must be on the projected instance".into()));
            }
        }
        Projection::Columns(cols) => {
            for (_, c) in cols {
                check(c)?;
            }
        }
        Projection::Aggregate { target, function, .. } => {
            let ty = check(target)?;
            if *function == Aggregate::Sum && !ty.is_numeric() {
                return Err(StorageError::Plan(format!("sum over non-numeric column {}", target.column)));
            }
        }
        Projection::ValueCounts { target } => {
            check(target)?;
        }
    }
    Ok(types)
}

type ScalarTypes = HashMap<String, ScalarType>;

impl DataState {
    /// Evaluates `plan` against this snapshot.
    pub fn execute(&self, catalog: &Catalog, plan: &QueryPlan) -> Result<ResultSet, StorageError> {
        validate(plan, catalog)?;
        let tuples = self.tuples(plan);
        let tuples: Vec<Tuple<'_>> = tuples
            .into_iter()
            .filter(|t| plan.predicates.iter().all(|p| eval(p, t)))
            .collect();
        Ok(project(plan, tuples))
    }

    fn tuples<'a>(&'a self, plan: &QueryPlan) -> Vec<Tuple<'a>> {
        let width = plan.instance_count();
        let mut tuples: Vec<Tuple<'a>> = self
            .rows(&plan.base)
            .filter(|r| passes(plan.base_filter.as_ref(), r))
            .map(|r| {
                let mut t = vec![None; width];
                t[0] = Some(r);
                t
            })
            .collect();

        for (i, join) in plan.joins.iter().enumerate() {
            let instance = i + 1;
            let mut index: HashMap<Vec<&'a Value>, Vec<&'a Row>> = HashMap::new();
            for row in self.rows(&join.table).filter(|r| passes(join.row_filter.as_ref(), r)) {
                let key: Option<Vec<&Value>> = join
                    .right_columns
                    .iter()
                    .map(|c| row.get(c).filter(|v| !v.is_null()))
                    .collect();
                if let Some(key) = key {
                    index.entry(key).or_default().push(row);
                }
            }
            let mut next = Vec::with_capacity(tuples.len());
            for tuple in tuples {
                let matches = tuple[join.parent].and_then(|parent| {
                    let key: Option<Vec<&Value>> = join
                        .left_columns
                        .iter()
                        .map(|c| parent.get(c).filter(|v| !v.is_null()))
                        .collect();
                    key.and_then(|k| index.get(&k))
                });
                match (matches, join.kind) {
                    (Some(rows), _) => {
                        for row in rows {
                            let mut t = tuple.clone();
                            t[instance] = Some(row);
                            next.push(t);
                        }
                    }
                    (None, JoinKind::LeftOuter) => next.push(tuple),
                    (None, JoinKind::Inner) => {}
                }
            }
            tuples = next;
        }
        tuples
    }
}

fn compare_by(keys: &[SortKey], a: &Tuple<'_>, b: &Tuple<'_>) -> std::cmp::Ordering {
    for k in keys {
        let (x, y) = (cell(a, &k.column), cell(b, &k.column));
        // Nulls last in both directions.
        let ord = match (x.is_null(), y.is_null()) {
            (true, true) => std::cmp::Ordering::Equal,
            (true, false) => std::cmp::Ordering::Greater,
            (false, true) => std::cmp::Ordering::Less,
            _ if k.descending => y.cmp(x),
            _ => x.cmp(y),
        };
        if ord != std::cmp::Ordering::Equal {
            return ord;
        }
    }
    std::cmp::Ordering::Equal
}

fn page<T>(items: Vec<T>, plan: &QueryPlan) -> Vec<T> {
    let iter = items.into_iter().skip(plan.page.offset);
    match plan.page.limit {
        Some(limit) => iter.take(limit).collect(),
        None => iter.collect(),
    }
}

fn rid_of(tuple: &Tuple<'_>, instance: usize) -> Option<String> {
    tuple[instance]
        .and_then(|r| r.get(RID))
        .and_then(Value::as_text)
        .map(str::to_string)
}

pub(crate) fn aggregate(function: Aggregate, values: Vec<Value>) -> Value {
    let present: Vec<Value> = values.into_iter().filter(|v| !v.is_null()).collect();
    match function {
        Aggregate::ArrayD => {
            let distinct: BTreeSet<Value> = present.into_iter().collect();
            Value::List(distinct.into_iter().collect())
        }
        Aggregate::CntD => Value::Int(present.iter().collect::<HashSet<_>>().len() as i64),
        Aggregate::Cnt => Value::Int(present.len() as i64),
        Aggregate::Min => present.into_iter().min().unwrap_or(Value::Null),
        Aggregate::Max => present.into_iter().max().unwrap_or(Value::Null),
        Aggregate::Sum => {
            if present.is_empty() {
                return Value::Null;
            }
            if present.iter().all(|v| matches!(v, Value::Int(_))) {
                Value::Int(
                    present
                        .iter()
                        .map(|v| if let Value::Int(i) = v { *i } else { 0 })
                        .fold(0i64, i64::saturating_add),
                )
            } else {
                Value::Float(
                    present
                        .iter()
                        .map(|v| match v {
                            Value::Int(i) => *i as f64,
                            Value::Float(f) => *f,
                            _ => 0.0,
                        })
                        .sum(),
                )
            }
        }
    }
}

fn project(plan: &QueryPlan, mut tuples: Vec<Tuple<'_>>) -> ResultSet {
    match &plan.projection {
        Projection::Entity { instance, columns } => {
            let mut seen = HashSet::new();
            tuples.retain(|t| rid_of(t, *instance).is_some_and(|rid| seen.insert(rid)));
            tuples.sort_by(|a, b| compare_by(&plan.sort, a, b));
            let total = tuples.len();
            let rows = page(tuples, plan)
                .into_iter()
                .map(|t| {
                    let row = t[*instance].expect("entity rows are present");
                    columns
                        .iter()
                        .map(|c| (c.clone(), row.get(c).cloned().unwrap_or(Value::Null)))
                        .collect()
                })
                .collect();
            ResultSet {
                rows,
                total: Some(total),
            }
        }
        Projection::Columns(cols) => {
            tuples.sort_by(|a, b| compare_by(&plan.sort, a, b));
            let total = tuples.len();
            let rows = page(tuples, plan)
                .into_iter()
                .map(|t| {
                    cols.iter()
                        .map(|(alias, c)| (alias.clone(), cell(&t, c).clone()))
                        .collect()
                })
                .collect();
            ResultSet {
                rows,
                total: Some(total),
            }
        }
        Projection::Aggregate {
            target,
            function,
            group,
        } => match group {
            Grouping::Global => {
                let values = tuples.iter().map(|t| cell(t, target).clone()).collect();
                let row = Row::from([("value".to_string(), aggregate(*function, values))]);
                ResultSet {
                    rows: page(vec![row], plan),
                    total: Some(1),
                }
            }
            Grouping::BaseRid => {
                tuples.sort_by(|a, b| compare_by(&plan.sort, a, b));
                let mut groups: IndexMap<String, Vec<Value>> = IndexMap::new();
                for t in &tuples {
                    if let Some(rid) = rid_of(t, 0) {
                        groups.entry(rid).or_default().push(cell(t, target).clone());
                    }
                }
                let total = groups.len();
                let rows = groups
                    .into_iter()
                    .map(|(rid, values)| {
                        Row::from([
                            (RID.to_string(), Value::Text(rid)),
                            ("value".to_string(), aggregate(*function, values)),
                        ])
                    })
                    .collect();
                ResultSet {
                    rows: page(rows, plan),
                    total: Some(total),
                }
            }
        },
        Projection::ValueCounts { target } => {
            let mut counts: HashMap<Value, HashSet<String>> = HashMap::new();
            for t in &tuples {
                if let Some(rid) = rid_of(t, 0) {
                    counts.entry(cell(t, target).clone()).or_default().insert(rid);
                }
            }
            let mut entries: Vec<(Value, usize)> =
                counts.into_iter().map(|(v, rids)| (v, rids.len())).collect();
            entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            let total = entries.len();
            let rows = page(entries, plan)
                .into_iter()
                .map(|(v, n)| {
                    Row::from([
                        ("value".to_string(), v),
                        ("count".to_string(), Value::Int(n as i64)),
                    ])
                })
                .collect();
            ResultSet {
                rows,
                total: Some(total),
            }
        }
    }
}
